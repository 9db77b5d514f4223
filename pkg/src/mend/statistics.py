"""Concrete change-point statistics.

Four statistics share one shape: given a dataset and a label vector
(observed or resampled), return ``(value, tau_hat, profile)`` where
``profile[tau-1]`` measures divergence between the pre/post segments at
candidate change point tau, the value is the profile maximum, and tau_hat
is the smallest maximizer.  Candidate points whose segments fall below the
minimum size are inadmissible (profile entry -inf); if no candidate is
admissible the statistic raises ``SkipStatistic``.

- ``mend_statistic``: refit a model on each side of every tau and average
  the squared difference of the two fits' predictions over all n rows.
- ``lad_mean_statistic``: contrast the mixing coefficients that blend two
  frozen component means on each side of tau; computed with per-label
  prefix sums, so one resample costs O(n + T).
- ``lad_repr_statistic``: the refit statistic on the distilled design
  (component means plus selected raw features), ridge least squares.
- ``ols_cusum``: classical baseline, partial sums of pooled OLS residuals
  at the block boundaries against the Brownian-bridge supremum law.

Statistic names for selection by callers: "mend", "mend-lad-mean",
"mend-lad-repr", "ols-cusum".
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import LabeledDataset
from .errors import (
    Separation,
    SingularDesign,
    SkipStatistic,
    TooFewRows,
)
from .glm import fit_lasso, fit_logistic, fit_ols_ridge
from .mixture import Distillation
from .rngs import substream

STATISTIC_NAMES = ("mend", "mend-lad-mean", "mend-lad-repr", "ols-cusum")

BERNOULLI_REFIT_RIDGE = 1e-3
LAD_REPR_RIDGE_DEFAULT = 1e-3
LAD_REPR_MIN_SEGMENT = 10


@dataclass(frozen=True)
class MendConfig:
    """Configuration of the refit statistic.

    fitter: "lasso_cv", "lasso_fixed" (uses ``lam``) or "ols_ridge"
    (uses ``ridge``); bernoulli outcomes always refit by ridge logistic
    regression and the divergence is taken on predicted probabilities.
    """

    fitter: str = "lasso_cv"
    lam: float = 0.0
    ridge: float = 0.0
    min_segment: int = 10
    divergence: str = "mean_squared_diff"
    cv_seed: int = 0

    def __post_init__(self):
        if self.fitter not in ("lasso_cv", "lasso_fixed", "ols_ridge"):
            raise ValueError(f"unknown fitter {self.fitter!r}")
        if self.divergence != "mean_squared_diff":
            raise ValueError(f"unknown divergence {self.divergence!r}")
        if self.min_segment < 5:
            raise ValueError("min_segment must be >= 5 for refit statistics")


@dataclass(frozen=True)
class LadMeanConfig:
    """Configuration of the mixing-coefficient statistic.

    ``lambda_reg`` is the small quadratic regularizer that keeps the mixing
    coefficient defined even when the two component means coincide;
    ``min_segment`` defaults to 1 because the regularized coefficient is
    defined for any non-empty segment.
    """

    lambda_reg: float = 1.0
    min_segment: int = 1

    def __post_init__(self):
        if not self.lambda_reg > 0:
            raise ValueError("lambda_reg must be positive")
        if self.min_segment < 1:
            raise ValueError("min_segment must be >= 1")


def _label_counts(labels: np.ndarray, t_max: int, n: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ValueError("labels must have one entry per row")
    if labels.min() < 1 or labels.max() > t_max:
        raise ValueError("label outside 1..t_max")
    return np.bincount(labels, minlength=t_max + 1)[1:]


def _finish_profile(profile: np.ndarray):
    if not np.isfinite(profile).any():
        raise SkipStatistic("no admissible candidate change point")
    tau_hat = int(np.argmax(profile)) + 1  # first maximizer = smallest tau
    return float(profile[tau_hat - 1]), tau_hat, profile


# ---------------------------------------------------------------------------
# Refit divergence (shared by mend and mend-lad-repr)
# ---------------------------------------------------------------------------


def _segment_fitter(cfg: MendConfig, family: str):
    if family == "bernoulli":
        ridge = cfg.ridge if cfg.fitter == "ols_ridge" else BERNOULLI_REFIT_RIDGE
        ridge = max(ridge, BERNOULLI_REFIT_RIDGE)
        return lambda xs, ys: fit_logistic(xs, ys, ridge=ridge)
    if cfg.fitter == "lasso_cv":
        # fold assignment must be a pure function of the inputs so the
        # statistic stays deterministic inside the CRT
        return lambda xs, ys: fit_lasso(
            xs, ys, lam="cv", rng=substream(cfg.cv_seed, xs.shape[0])
        )
    if cfg.fitter == "lasso_fixed":
        return lambda xs, ys: fit_lasso(xs, ys, lam=cfg.lam)
    return lambda xs, ys: fit_ols_ridge(xs, ys, ridge=cfg.ridge)


def _refit_profile(x, y, labels, t_max, min_segment, fit_segment):
    x = np.ascontiguousarray(x)
    n = x.shape[0]
    counts = _label_counts(labels, t_max, n)
    pre_counts = np.cumsum(counts)[: t_max - 1]
    profile = np.full(t_max - 1, -np.inf)
    for ti in range(t_max - 1):
        n_pre = int(pre_counts[ti])
        if n_pre < min_segment or n - n_pre < min_segment:
            continue
        pre = labels <= ti + 1
        try:
            f_pre = fit_segment(x[pre], y[pre])
            f_post = fit_segment(x[~pre], y[~pre])
        except (SingularDesign, Separation, TooFewRows):
            continue  # unusable segment split: treat this tau as inadmissible
        diff = f_pre.predict_mean(x) - f_post.predict_mean(x)
        profile[ti] = float(diff @ diff) / n
    return _finish_profile(profile)


def mend_statistic(ds: LabeledDataset, labels: np.ndarray, cfg: MendConfig):
    """Max-over-tau mean squared divergence between per-segment refits.

    Both segment models are refit for every candidate tau and every label
    vector; the divergence is evaluated on all n rows.
    """
    fit_segment = _segment_fitter(cfg, ds.family)
    return _refit_profile(ds.x, ds.y, labels, ds.t_max, cfg.min_segment, fit_segment)


def lad_repr_statistic(
    ds: LabeledDataset,
    labels: np.ndarray,
    d: Distillation,
    ridge: float = LAD_REPR_RIDGE_DEFAULT,
    min_segment: int = LAD_REPR_MIN_SEGMENT,
):
    """The refit statistic on the distilled design: frozen component means
    plus the selected raw features, refit by ridge least squares."""
    if d.kind != "repr":
        raise ValueError("lad_repr_statistic needs a kind='repr' distillation")
    cols = [d.m0, d.m1]
    if d.selected:
        cols.append(ds.x[:, list(d.selected)])
    design = np.column_stack(cols)
    fit_segment = lambda xs, ys: fit_ols_ridge(xs, ys, ridge=ridge)
    return _refit_profile(design, ds.y, labels, ds.t_max, min_segment, fit_segment)


# ---------------------------------------------------------------------------
# Mixing-coefficient contrast (mend-lad-mean)
# ---------------------------------------------------------------------------


def lad_mixing_coefficient(y_seg, m0_seg, m1_seg, lambda_reg: float) -> float:
    """Exact minimizer of the regularized blend of two component means.

    Minimizes ``sum_i (y_i - a*m0_i - (1-a)*m1_i)^2 + lambda*(a - 0.5)^2``;
    the closed form is ``(sum_i d_i*(y_i - m1_i) + lambda/2) /
    (sum_i d_i^2 + lambda)`` with ``d = m0 - m1``.  Any positive lambda
    makes the minimizer unique, including when m0 and m1 coincide (the
    objective then depends on ``a`` only through the penalty and the
    coefficient is exactly 0.5).
    """
    y = np.asarray(y_seg, dtype=float)
    m0 = np.asarray(m0_seg, dtype=float)
    m1 = np.asarray(m1_seg, dtype=float)
    if not lambda_reg > 0:
        raise ValueError("lambda_reg must be positive")
    d = m0 - m1
    return float((d @ (y - m1) + 0.5 * lambda_reg) / (d @ d + lambda_reg))


def lad_mean_statistic(
    ds: LabeledDataset, labels: np.ndarray, d: Distillation, cfg: LadMeanConfig
):
    """Max-over-tau contrast of pre/post mixing coefficients.

    Computed from per-label prefix sums in O(n + T) per label vector.  The
    coefficients are centered at 0.5 before differencing, which makes the
    profile bit-exactly invariant under exchanging the two components.
    """
    if d.kind != "mean":
        raise ValueError("lad_mean_statistic needs a kind='mean' distillation")
    n = ds.n
    counts = _label_counts(labels, ds.t_max, n)
    diff = d.m0 - d.m1
    centered = ds.y - 0.5 * (d.m0 + d.m1)
    num_t = np.bincount(labels, weights=diff * centered, minlength=ds.t_max + 1)[1:]
    den_t = np.bincount(labels, weights=diff * diff, minlength=ds.t_max + 1)[1:]

    pre_n = np.cumsum(counts)[:-1]
    pre_num = np.cumsum(num_t)[:-1]
    pre_den = np.cumsum(den_t)[:-1]
    tot_num = num_t.sum()
    tot_den = den_t.sum()

    lam = cfg.lambda_reg
    c_pre = pre_num / (pre_den + lam)
    c_post = (tot_num - pre_num) / ((tot_den - pre_den) + lam)
    profile = np.abs(c_pre - c_post)
    admissible = (pre_n >= cfg.min_segment) & ((n - pre_n) >= cfg.min_segment)
    profile = np.where(admissible, profile, -np.inf)
    return _finish_profile(profile)


# ---------------------------------------------------------------------------
# OLS-CUSUM baseline (not CRT-based; asymptotic p-value)
# ---------------------------------------------------------------------------


def brownian_bridge_sup_tail(c: float, terms: int = 100) -> float:
    """P(sup |B(t)| > c) for a Brownian bridge, truncated alternating series."""
    if c <= 1e-8:
        return 1.0
    j = np.arange(1, terms + 1)
    s = 2.0 * np.sum((-1.0) ** (j + 1) * np.exp(-2.0 * j**2 * c**2))
    return float(min(max(s, 0.0), 1.0))


def ols_cusum(ds: LabeledDataset):
    """Scaled residual partial sums at block boundaries; returns
    ``(statistic, tau_hat, p_value)``.

    The pooled model is OLS with intercept; partial sums are evaluated only
    at the label boundaries because within-label ordering is arbitrary.
    """
    if ds.family != "gaussian":
        raise ValueError("ols-cusum is defined for the gaussian family")
    n, p = ds.n, ds.p
    if n <= p + 2:
        raise TooFewRows(f"ols-cusum needs n > p + 2 (n={n}, p={p})")
    a = np.column_stack([np.ones(n), ds.x])
    coef, _, rank, _ = np.linalg.lstsq(a, ds.y, rcond=None)
    if rank < p + 1:
        raise SingularDesign("pooled design is rank-deficient")
    resid = ds.y - a @ coef
    rss = float(resid @ resid)
    sigma = np.sqrt(rss / (n - p - 1))
    block_sums = np.bincount(ds.r, weights=resid, minlength=ds.t_max + 1)[1:]
    partial = np.cumsum(block_sums)[: ds.t_max - 1]
    # an (all but) exact fit carries no drift evidence; the floor is relative
    # so float-noise residuals from exactly linear data count as zero
    if not np.isfinite(sigma) or sigma <= 1e-10 * max(1.0, float(np.std(ds.y))):
        return 0.0, 1, 1.0
    scaled = np.abs(partial) / (sigma * np.sqrt(n))
    tau_hat = int(np.argmax(scaled)) + 1
    stat = float(scaled[tau_hat - 1])
    return stat, tau_hat, brownian_bridge_sup_tail(stat)
