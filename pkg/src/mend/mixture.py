"""Two-regime latent mixture of regressions, fitted by EM with the time
labels masked, plus the distilled representations used by the fast
change-point statistics.

The mixture models the outcome given covariates alone.  Masking the labels
is the point: the fitted components depend only on (y, x), so they can be
frozen and reused across every label resample of the randomization test.

Component regressions are lasso fits (gaussian family) with the penalty
fixed at the pooled-fit cross-validated choice for the whole EM run
(re-tuning per iteration is slow and breaks the ascent property), or
ridge-penalized logistic fits (bernoulli family).  The observed-data
log-likelihood trace is kept nondecreasing by construction: an iteration
that fails to improve it stops the run at the previous iterate, which can
happen near a fixed point because the M-step optimizes the penalized
objective.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit

from .dataset import LabeledDataset
from .errors import AllRestartsDegenerate, TooFewRows
from .glm import LinearFit, fit_lasso, fit_logistic

PI_CLAMP = 1e-4
VAR_FLOOR = 1e-8
_PROB_EPS = 1e-12
_WEIGHT_FLOOR = 1e-12


@dataclass(frozen=True)
class MixtureFit:
    """EM output: two regime regressions, mixing weight, responsibilities.

    ``resp[i]`` is the posterior probability that row i belongs to regime 0;
    ``pi`` is the (scalar) prior weight of regime 0, clamped to
    [1e-4, 1 - 1e-4].  ``sigma0_sq``/``sigma1_sq`` are gaussian-family only.
    """

    fit0: LinearFit
    fit1: LinearFit
    sigma0_sq: float | None
    sigma1_sq: float | None
    pi: float
    resp: np.ndarray
    loglik_trace: np.ndarray
    family: str


@dataclass(frozen=True)
class Distillation:
    """Low-dimensional representation carrying the frozen component means.

    kind="mean" keeps only the two conditional-mean columns; kind="repr"
    additionally selects the union of each component's top_k features by
    standardized coefficient magnitude (0-based indices).
    """

    kind: str
    m0: np.ndarray
    m1: np.ndarray
    selected: tuple[int, ...]
    top_k: int


def _log_density(y, mean, sigma_sq, family):
    if family == "gaussian":
        return -0.5 * (np.log(2.0 * np.pi * sigma_sq) + (y - mean) ** 2 / sigma_sq)
    m = np.clip(mean, _PROB_EPS, 1.0 - _PROB_EPS)
    return y * np.log(m) + (1.0 - y) * np.log1p(-m)


def _params_loglik(y, m0, m1, s0, s1, pi, family) -> float:
    l0 = np.log(pi) + _log_density(y, m0, s0, family)
    l1 = np.log1p(-pi) + _log_density(y, m1, s1, family)
    return float(np.logaddexp(l0, l1).sum())


def mixture_loglik(fit: MixtureFit, ds: LabeledDataset) -> float:
    """Observed-data log-likelihood of a (possibly modified) mixture fit."""
    m0 = fit.fit0.predict_mean(ds.x)
    m1 = fit.fit1.predict_mean(ds.x)
    return _params_loglik(
        ds.y, m0, m1, fit.sigma0_sq, fit.sigma1_sq, fit.pi, fit.family
    )


def swap_components(fit: MixtureFit) -> MixtureFit:
    """The equivalent parameterization with the regime roles exchanged."""
    return replace(
        fit,
        fit0=fit.fit1,
        fit1=fit.fit0,
        sigma0_sq=fit.sigma1_sq,
        sigma1_sq=fit.sigma0_sq,
        pi=1.0 - fit.pi,
        resp=1.0 - fit.resp,
    )


class _EmState:
    __slots__ = ("fit0", "fit1", "s0", "s1", "pi", "m0", "m1")

    def __init__(self, fit0, fit1, s0, s1, pi, x):
        self.fit0, self.fit1, self.s0, self.s1, self.pi = fit0, fit1, s0, s1, pi
        self.m0 = fit0.predict_mean(x)
        self.m1 = fit1.predict_mean(x)

    def loglik(self, y, family):
        return _params_loglik(y, self.m0, self.m1, self.s0, self.s1, self.pi, family)

    def resp(self, y, family):
        l0 = np.log(self.pi) + _log_density(y, self.m0, self.s0, family)
        l1 = np.log1p(-self.pi) + _log_density(y, self.m1, self.s1, family)
        return expit(l0 - l1)


def _m_step(ds, resp, lam_pool, logistic_ridge, warm) -> _EmState:
    y, x = ds.y, ds.x
    w0 = np.maximum(resp, _WEIGHT_FLOOR)
    w1 = np.maximum(1.0 - resp, _WEIGHT_FLOOR)
    # normalize to mean one so the fixed penalty level means the same thing
    # for both components (and constant responsibilities yield identical fits)
    w0 = w0 / w0.mean()
    w1 = w1 / w1.mean()
    if ds.family == "gaussian":
        fit0 = fit_lasso(x, y, weights=w0, lam=lam_pool,
                         warm_start=None if warm is None else warm.fit0.coef)
        fit1 = fit_lasso(x, y, weights=w1, lam=lam_pool,
                         warm_start=None if warm is None else warm.fit1.coef)
        r0 = y - fit0.predict_mean(x)
        r1 = y - fit1.predict_mean(x)
        s0 = max(float(w0 @ r0**2 / w0.sum()), VAR_FLOOR)
        s1 = max(float(w1 @ r1**2 / w1.sum()), VAR_FLOOR)
    else:
        fit0 = fit_logistic(x, y, weights=w0, ridge=logistic_ridge)
        fit1 = fit_logistic(x, y, weights=w1, ridge=logistic_ridge)
        s0 = s1 = None
    pi = float(np.clip(resp.mean(), PI_CLAMP, 1.0 - PI_CLAMP))
    return _EmState(fit0, fit1, s0, s1, pi, x)


def _is_degenerate(state: _EmState) -> bool:
    at_bound = state.pi <= PI_CLAMP or state.pi >= 1.0 - PI_CLAMP
    if not at_bound:
        return False
    same = (
        abs(state.fit0.intercept - state.fit1.intercept) <= 1e-10
        and float(np.abs(state.fit0.coef - state.fit1.coef).max(initial=0.0)) <= 1e-10
    )
    if state.s0 is not None:
        same = same and abs(state.s0 - state.s1) <= 1e-10
    return same


def fit_lmm(
    ds: LabeledDataset,
    restarts: int = 5,
    max_iter: int = 200,
    tol: float = 1e-6,
    rng: np.random.Generator | None = None,
    logistic_ridge: float = 1e-3,
) -> MixtureFit:
    """Fit the two-regime mixture of Y given X by EM, labels masked.

    The first restart splits responsibilities by the sign of the residuals
    from a pooled fit (targets mean-shift alternatives); the remaining
    restarts draw responsibilities i.i.d. uniform(0.2, 0.8).  The best
    restart by final log-likelihood wins.  Time labels are never read.
    """
    if ds.n < 20:
        raise TooFewRows(f"mixture fit needs at least 20 rows, got {ds.n}")
    if restarts < 1 or max_iter < 1:
        raise ValueError("restarts and max_iter must be positive")
    if rng is None:
        rng = np.random.default_rng(0)
    streams = rng.spawn(restarts)

    y, x = ds.y, ds.x
    if ds.family == "gaussian":
        pooled = fit_lasso(x, y, lam="cv", rng=streams[0])
        lam_pool = pooled.lam
    else:
        pooled = fit_logistic(x, y, ridge=logistic_ridge)
        lam_pool = None
    pooled_resid = y - pooled.predict_mean(x)

    best = None
    best_ll = -np.inf
    all_degenerate = True
    for s in range(restarts):
        if s == 0:
            # split by residual sign, softly: hard 0/1 responsibilities make
            # the first M-step fits see only half the rows
            resp = np.where(pooled_resid <= 0.0, 0.9, 0.1)
        else:
            resp = streams[s].uniform(0.2, 0.8, size=ds.n)
        state = _m_step(ds, resp, lam_pool, logistic_ridge, None)
        ll = state.loglik(y, ds.family)
        trace = [ll]
        for _ in range(max_iter - 1):
            resp_new = state.resp(y, ds.family)
            cand = _m_step(ds, resp_new, lam_pool, logistic_ridge, state)
            ll_new = cand.loglik(y, ds.family)
            if ll_new < ll:
                break  # penalized M-step stopped helping; keep the last iterate
            state = cand
            trace.append(ll_new)
            if ll_new - ll <= tol * (1.0 + abs(ll_new)):
                ll = ll_new
                break
            ll = ll_new
        degenerate = _is_degenerate(state)
        all_degenerate = all_degenerate and degenerate
        if not degenerate and ll > best_ll:
            best_ll = ll
            best = (state, np.asarray(trace))
    if best is None:
        if all_degenerate:
            raise AllRestartsDegenerate(
                "every EM restart collapsed to a clamped, identical-component fit"
            )
        raise AllRestartsDegenerate("no usable EM restart")  # pragma: no cover
    state, trace = best
    return MixtureFit(
        fit0=state.fit0,
        fit1=state.fit1,
        sigma0_sq=state.s0,
        sigma1_sq=state.s1,
        pi=state.pi,
        resp=state.resp(y, ds.family),
        loglik_trace=trace,
        family=ds.family,
    )


def em_one_iteration(state_fit: MixtureFit, ds: LabeledDataset) -> MixtureFit:
    """One E+M update from an arbitrary mixture state (ascent-property tests)."""
    st = _EmState(
        state_fit.fit0, state_fit.fit1, state_fit.sigma0_sq, state_fit.sigma1_sq,
        state_fit.pi, ds.x,
    )
    resp = st.resp(ds.y, ds.family)
    lam_pool = state_fit.fit0.lam if ds.family == "gaussian" else None
    ridge = state_fit.fit0.lam if ds.family == "bernoulli" else 1e-3
    new = _m_step(ds, resp, lam_pool, ridge, st)
    return MixtureFit(
        fit0=new.fit0, fit1=new.fit1, sigma0_sq=new.s0, sigma1_sq=new.s1,
        pi=new.pi, resp=resp, loglik_trace=np.zeros(0), family=ds.family,
    )


# ---------------------------------------------------------------------------
# Distillation
# ---------------------------------------------------------------------------


def distill_mean(fit: MixtureFit, ds: LabeledDataset) -> Distillation:
    """The mean-only representation: the two component conditional means."""
    return Distillation(
        kind="mean",
        m0=fit.fit0.predict_mean(ds.x),
        m1=fit.fit1.predict_mean(ds.x),
        selected=(),
        top_k=0,
    )


def _top_k_indices(fit: LinearFit, k: int) -> np.ndarray:
    mags = np.abs(fit.coef_standardized())
    order = np.lexsort((np.arange(mags.size), -mags))
    return order[:k]


def distill_repr(fit: MixtureFit, ds: LabeledDataset, top_k: int) -> Distillation:
    """Mean columns plus the union of each component's top_k features.

    Feature importance is the coefficient magnitude on the standardized
    scale; ties break toward the lower index.
    """
    if not 1 <= top_k <= ds.p:
        raise ValueError(f"top_k must be in 1..{ds.p}")
    sel0 = _top_k_indices(fit.fit0, top_k)
    sel1 = _top_k_indices(fit.fit1, top_k)
    selected = tuple(sorted(set(sel0.tolist()) | set(sel1.tolist())))
    base = distill_mean(fit, ds)
    return Distillation(
        kind="repr", m0=base.m0, m1=base.m1, selected=selected, top_k=top_k
    )


# -- JSON export/import (coefficients, mixing weight, variances) ------------


def _fit_to_json(fit: LinearFit) -> dict:
    return {
        "intercept": fit.intercept,
        "coef": fit.coef.tolist(),
        "lam": fit.lam,
        "family": fit.family,
        "scale": None if fit.scale is None else fit.scale.tolist(),
        "dropped": list(fit.dropped),
    }


def _fit_from_json(obj: dict) -> LinearFit:
    return LinearFit(
        intercept=float(obj["intercept"]),
        coef=np.asarray(obj["coef"], dtype=float),
        lam=float(obj["lam"]),
        family=obj["family"],
        scale=None if obj.get("scale") is None else np.asarray(obj["scale"], float),
        dropped=tuple(obj.get("dropped", ())),
    )


def mixture_to_json(fit: MixtureFit) -> dict:
    return {
        "schema_version": 1,
        "family": fit.family,
        "pi": fit.pi,
        "sigma0_sq": fit.sigma0_sq,
        "sigma1_sq": fit.sigma1_sq,
        "fit0": _fit_to_json(fit.fit0),
        "fit1": _fit_to_json(fit.fit1),
    }


def mixture_from_json(obj: dict) -> MixtureFit:
    """Rebuild an exported mixture; responsibilities and the trace are not
    part of the export and come back empty."""
    return MixtureFit(
        fit0=_fit_from_json(obj["fit0"]),
        fit1=_fit_from_json(obj["fit1"]),
        sigma0_sq=None if obj["sigma0_sq"] is None else float(obj["sigma0_sq"]),
        sigma1_sq=None if obj["sigma1_sq"] is None else float(obj["sigma1_sq"]),
        pi=float(obj["pi"]),
        resp=np.zeros(0),
        loglik_trace=np.zeros(0),
        family=obj["family"],
    )


def save_mixture(fit: MixtureFit, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(mixture_to_json(fit), fh, indent=2)


def load_mixture(path) -> MixtureFit:
    with open(path, encoding="utf-8") as fh:
        return mixture_from_json(json.load(fh))
