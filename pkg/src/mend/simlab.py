"""Simulation lab: scenario generators, replicated experiments, metrics.

Three synthetic scenarios share a layout of T time points with n_per_t
labeled rows each, a change point after label tau_true, and an extra pool
of outcome-unlabeled rows for learning the time-label model:

- scenario "s1": linear outcome plus a quadratic term of strength delta
  that is *common to all time points* (a pure null with model
  misspecification and covariate drift), p = 20;
- scenario "s2": nonlinear transformed design, covariate shift at t = 6,
  coefficient change of strength delta after tau_true, p = 5;
- scenario "s3": high-dimensional linear model with a sparse coefficient
  change of strength delta after tau_true, p = 100;
- scenario "pseudo": fixed drifting covariates with binary outcomes drawn
  from one logistic model for every time point (no change point).

Replication j of an experiment consumes only substreams derived from
``(seed, j+1)``, so reports are identical for any worker count.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from .crt import run_crt
from .dataset import LabeledDataset, UnlabeledDataset
from .errors import DataError
from .mixture import distill_mean, distill_repr, fit_lmm
from .rngs import derive_seed, substream
from .rx import TimeLabelModel, learn_rx
from .statistics import (
    LadMeanConfig,
    MendConfig,
    STATISTIC_NAMES,
    lad_mean_statistic,
    lad_repr_statistic,
    mend_statistic,
    ols_cusum,
)

SCENARIOS = ("s1", "s2", "s3", "pseudo")
_DEFAULT_P = {"s1": 20, "s2": 5, "s3": 100, "pseudo": 12}

_ALPHA_HEAD = np.array([0.5, -0.5, 0.5, 0.5, -0.5])
_BETA_HEAD = np.full(5, 0.05)
_EFFECTIVE = 5
_AR_RHO = 0.5


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str
    p: int
    delta: float = 0.0
    t_max: int = 10
    tau_true: int = 7
    n_per_t: int = 100
    unlabeled_extra: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise DataError(f"unknown scenario {self.scenario!r}")
        if min(self.p, self.t_max, self.tau_true, self.n_per_t) < 1:
            raise DataError("scenario parameters must be positive")
        if self.unlabeled_extra < 0:
            raise DataError("unlabeled_extra must be nonnegative")
        if not self.tau_true < self.t_max:
            raise DataError("tau_true must be smaller than t_max")


def make_config(scenario: str, **overrides) -> ScenarioConfig:
    """Scenario config with the scenario's default dimension filled in."""
    p = overrides.pop("p", _DEFAULT_P.get(scenario))
    if scenario == "pseudo":
        overrides.setdefault("t_max", 9)
        overrides.setdefault("tau_true", 7)
    return ScenarioConfig(scenario=scenario, p=p, **overrides)


def _ar_chol(k: int) -> np.ndarray:
    idx = np.arange(k)
    sigma = _AR_RHO ** np.abs(idx[:, None] - idx[None, :])
    return np.linalg.cholesky(sigma)


def _balanced_labels(total: int, t_max: int) -> np.ndarray:
    base = np.repeat(np.arange(1, t_max + 1), total // t_max)
    rem = total - base.size
    return np.concatenate([base, np.arange(1, rem + 1)]) if rem else base


def _block_covariates(rng, labels, p, mean_of_t):
    """First 5 columns correlated with time-varying mean, the rest iid N(0,1)."""
    n = labels.size
    chol = _ar_chol(_EFFECTIVE)
    x_eff = rng.standard_normal((n, _EFFECTIVE)) @ chol.T
    x_eff += mean_of_t(labels)[:, None]
    if p > _EFFECTIVE:
        return np.column_stack([x_eff, rng.standard_normal((n, p - _EFFECTIVE))])
    return x_eff


def gen_scenario1(cfg: ScenarioConfig, rng: np.random.Generator):
    """Null with covariate drift: y is linear plus a common quadratic term."""
    if cfg.p != 20:
        raise DataError("scenario s1 uses p = 20")
    r_lab, r_unl = rng.spawn(2)
    alpha = np.concatenate([_ALPHA_HEAD, np.zeros(cfg.p - _EFFECTIVE)])
    mean_fn = lambda t: 0.2 * t.astype(float)

    labels = np.repeat(np.arange(1, cfg.t_max + 1), cfg.n_per_t)
    x = _block_covariates(r_lab, labels, cfg.p, mean_fn)
    y = x @ alpha + cfg.delta * x[:, 0] ** 2 + r_lab.standard_normal(labels.size)
    labeled = LabeledDataset(y, x, labels, cfg.t_max, "gaussian")

    labels_u = _balanced_labels(cfg.unlabeled_extra, cfg.t_max)
    x_u = _block_covariates(r_unl, labels_u, cfg.p, mean_fn)
    return labeled, UnlabeledDataset(x_u, labels_u)


def _s2_features(x: np.ndarray) -> np.ndarray:
    return np.column_stack(
        [np.sin(x[:, 0]), x[:, 1] ** 3, x[:, 2] ** 2, x[:, 3], x[:, 4] ** 2]
    )


def gen_scenario2(cfg: ScenarioConfig, rng: np.random.Generator):
    """Nonlinear outcome with covariate shift at t = 6 and a coefficient
    change of strength delta after tau_true."""
    if cfg.p != 5:
        raise DataError("scenario s2 uses p = 5")
    r_lab, r_unl = rng.spawn(2)
    mean_fn = lambda t: np.where(t <= 5, 0.0, 0.2 * t.astype(float))

    labels = np.repeat(np.arange(1, cfg.t_max + 1), cfg.n_per_t)
    x = _block_covariates(r_lab, labels, cfg.p, mean_fn)
    s = _s2_features(x)
    post = labels > cfg.tau_true
    eps = r_lab.standard_normal(labels.size)
    y = s @ _ALPHA_HEAD + eps
    y[post] = s[post] @ (_ALPHA_HEAD + cfg.delta * _BETA_HEAD) + eps[post]
    labeled = LabeledDataset(y, x, labels, cfg.t_max, "gaussian")

    labels_u = _balanced_labels(cfg.unlabeled_extra, cfg.t_max)
    x_u = _block_covariates(r_unl, labels_u, cfg.p, mean_fn)
    return labeled, UnlabeledDataset(x_u, labels_u)


def gen_scenario3(cfg: ScenarioConfig, rng: np.random.Generator):
    """High-dimensional linear model with a sparse coefficient change."""
    if cfg.p != 100:
        raise DataError("scenario s3 uses p = 100")
    r_lab, r_unl = rng.spawn(2)
    alpha = np.concatenate([_ALPHA_HEAD, np.zeros(cfg.p - _EFFECTIVE)])
    beta = np.concatenate([_BETA_HEAD, np.zeros(cfg.p - _EFFECTIVE)])
    mean_fn = lambda t: 0.2 * t.astype(float)

    labels = np.repeat(np.arange(1, cfg.t_max + 1), cfg.n_per_t)
    x = _block_covariates(r_lab, labels, cfg.p, mean_fn)
    post = labels > cfg.tau_true
    coef = np.where(post[:, None], (alpha + cfg.delta * beta)[None, :], alpha[None, :])
    y = (x * coef).sum(axis=1) + r_lab.standard_normal(labels.size)
    labeled = LabeledDataset(y, x, labels, cfg.t_max, "gaussian")

    labels_u = _balanced_labels(cfg.unlabeled_extra, cfg.t_max)
    x_u = _block_covariates(r_unl, labels_u, cfg.p, mean_fn)
    return labeled, UnlabeledDataset(x_u, labels_u)


def gen_pseudo(
    covariates: UnlabeledDataset, eta: np.ndarray, rng: np.random.Generator
) -> LabeledDataset:
    """Binary outcomes from one logistic model applied to every time block.

    ``eta`` is (intercept, slopes) of length p + 1; the same coefficient
    vector is used for all time labels, so the generated data carry no
    change point by construction.
    """
    eta = np.asarray(eta, dtype=float).reshape(-1)
    if eta.size != covariates.p + 1:
        raise DataError(f"eta must have length p + 1 = {covariates.p + 1}")
    probs = expit(eta[0] + covariates.x @ eta[1:])
    y = (rng.random(covariates.n) < probs).astype(float)
    t_max = int(covariates.r.max())
    return LabeledDataset(y, covariates.x, covariates.r, t_max, "bernoulli")


@dataclass(frozen=True)
class PseudoEnvironment:
    """Fixed covariates, label pool, outcome coefficients, and the time-label
    model for pseudo-outcome experiments (shared across replications)."""

    covariates: UnlabeledDataset
    pool: UnlabeledDataset | None
    eta: np.ndarray
    rx: TimeLabelModel


def gen_pseudo_environment(cfg: ScenarioConfig, rng: np.random.Generator) -> PseudoEnvironment:
    """Synthetic stand-in for a fixed observational covariate table: a few
    slowly drifting correlated features, the rest stationary noise."""
    r_cov, r_pool = rng.spawn(2)
    drift = 4
    chol = _ar_chol(drift)

    def draw(gen, labels):
        n = labels.size
        x_d = gen.standard_normal((n, drift)) @ chol.T + 0.1 * labels[:, None]
        x_rest = gen.standard_normal((n, cfg.p - drift))
        return np.column_stack([x_d, x_rest])

    labels = np.repeat(np.arange(1, cfg.t_max + 1), cfg.n_per_t)
    cov = UnlabeledDataset(draw(r_cov, labels), labels)
    labels_pool = _balanced_labels(cfg.unlabeled_extra, cfg.t_max)
    pool = UnlabeledDataset(draw(r_pool, labels_pool), labels_pool)

    eta = np.zeros(cfg.p + 1)
    eta[0] = -0.2
    pattern = np.array([0.4, -0.4, 0.3, -0.3, 0.25, -0.25])
    eta[1 : 1 + min(cfg.p, pattern.size)] = pattern[: min(cfg.p, pattern.size)]
    # labeled rows double as covariate evidence for p(R|X), like reusing a
    # fixed observed table; outcomes never enter this fit
    rx = learn_rx_from_pool(cov, pool, cfg.t_max)
    return PseudoEnvironment(covariates=cov, pool=pool, eta=eta, rx=rx)


def learn_rx_from_pool(
    cov: UnlabeledDataset,
    pool: UnlabeledDataset | None,
    t_max: int,
    ridge: float = 1e-4,
) -> TimeLabelModel:
    """Fit the time-label model from covariates/labels alone."""
    from .glm import fit_multinomial

    if pool is not None:
        x = np.vstack([cov.x, pool.x])
        r = np.concatenate([cov.r, pool.r])
    else:
        x, r = cov.x, cov.r
    fit = fit_multinomial(x, r, ridge=ridge)
    return TimeLabelModel(fit=fit, t_max=t_max)


_GENERATORS = {"s1": gen_scenario1, "s2": gen_scenario2, "s3": gen_scenario3}


# ---------------------------------------------------------------------------
# Method assembly and the experiment driver
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MethodParams:
    """Tunable knobs of the statistical pipeline (defaults as documented on
    the underlying functions)."""

    restarts: int = 5
    max_iter: int = 200
    tol: float = 1e-6
    top_k: int = 5
    lambda_reg: float = 1.0
    min_segment: int | None = None
    fitter: str = "lasso_cv"
    lam: float = 0.0
    ridge: float = 0.0
    repr_ridge: float = 1e-3
    rx_ridge: float = 1e-4
    cv_seed: int = 0


def _lad_mean_fn(ds, labels, ctx):
    d, cfg = ctx
    return lad_mean_statistic(ds, labels, d, cfg)


def _lad_repr_fn(ds, labels, ctx):
    d, ridge, min_segment = ctx
    return lad_repr_statistic(ds, labels, d, ridge, min_segment)


def prepare_statistic(method: str, ds: LabeledDataset, rng, params: MethodParams):
    """Build the (statistic, frozen context) pair for a named method.

    For the distilled methods this fits the label-masked mixture once; the
    resulting representation is the context reused across all resamples.
    """
    if method == "mend":
        cfg = MendConfig(
            fitter=params.fitter,
            lam=params.lam,
            ridge=params.ridge,
            min_segment=params.min_segment or 10,
            cv_seed=params.cv_seed,
        )
        return mend_statistic, cfg
    if method in ("mend-lad-mean", "mend-lad-repr"):
        mf = fit_lmm(
            ds, restarts=params.restarts, max_iter=params.max_iter,
            tol=params.tol, rng=rng,
        )
        if method == "mend-lad-mean":
            cfg = LadMeanConfig(
                lambda_reg=params.lambda_reg, min_segment=params.min_segment or 1
            )
            return _lad_mean_fn, (distill_mean(mf, ds), cfg)
        d = distill_repr(mf, ds, top_k=params.top_k)
        return _lad_repr_fn, (d, params.repr_ridge, params.min_segment or 10)
    raise ValueError(f"unknown method {method!r}")


@dataclass(frozen=True)
class ExperimentReport:
    method: str
    scenario: str
    replications: int
    rejection_rate: float
    localization_accuracy: float | None
    mean_runtime_ms: float
    per_replication: list = field(default_factory=list)
    k: int = 0
    alpha: float = 0.05
    seed: int = 0
    tau_true: int | None = None

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "method": self.method,
            "scenario": self.scenario,
            "replications": self.replications,
            "rejection_rate": self.rejection_rate,
            "localization_accuracy": self.localization_accuracy,
            "mean_runtime_ms": self.mean_runtime_ms,
            "k": self.k,
            "alpha": self.alpha,
            "seed": self.seed,
            "tau_true": self.tau_true,
            "per_replication": self.per_replication,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    def write_csv(self, path) -> None:
        import csv

        cols = ["rep", "p_value", "s_obs", "tau_hat", "reject", "k_effective",
                "runtime_ms"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
            writer.writeheader()
            for row in self.per_replication:
                writer.writerow(row)


def _generate(cfg: ScenarioConfig, rng, env: PseudoEnvironment | None):
    if cfg.scenario == "pseudo":
        ds = gen_pseudo(env.covariates, env.eta, rng)
        return ds, None
    return _GENERATORS[cfg.scenario](cfg, rng)


def _replication(args) -> dict:
    cfg, method, j, k, alpha, seed, params, env = args
    t0 = time.perf_counter()
    data_rng = substream(seed, j + 1, 0)
    ds, unlabeled = _generate(cfg, data_rng, env)
    if method == "ols-cusum":
        s, tau, p = ols_cusum(ds)
        out = {
            "rep": j, "p_value": p, "s_obs": s, "tau_hat": tau,
            "reject": bool(p <= alpha), "k_effective": 0,
        }
    else:
        rx = env.rx if env is not None else learn_rx(ds, unlabeled, params.rx_ridge)
        if callable(method):
            stat_fn, ctx, name = method, None, "custom"
        else:
            stat_fn, ctx = prepare_statistic(
                method, ds, substream(seed, j + 1, 1), params
            )
            name = method
        res = run_crt(
            ds, rx, stat_fn, ctx, k=k, alpha=alpha,
            seed=derive_seed(seed, j + 1, 2), method=name,
        )
        out = {
            "rep": j, "p_value": res.p_value, "s_obs": res.s_obs,
            "tau_hat": res.tau_hat.tau, "reject": res.reject,
            "k_effective": res.k_effective,
        }
    out["runtime_ms"] = int(round((time.perf_counter() - t0) * 1000.0))
    return out


def run_experiment(
    cfg: ScenarioConfig,
    method,
    reps: int,
    k: int = 199,
    alpha: float = 0.05,
    seed: int = 0,
    workers: int = 1,
    params: MethodParams | None = None,
    loc_rejected_only: bool = False,
    env: PseudoEnvironment | None = None,
) -> ExperimentReport:
    """Run independent replications and aggregate the headline metrics.

    ``method`` is one of the registered statistic names, or a raw statistic
    callable (used with an empty context).  Localization accuracy is the
    fraction of *all* replications whose tau_hat equals the configured true
    change point; pass ``loc_rejected_only=True`` to restrict the
    denominator to rejections.  For the pseudo scenario the fixed
    environment (covariates, eta, time-label model) is generated once from
    the substream ``(seed, 0)`` unless one is supplied.
    """
    if reps < 1:
        raise DataError("reps must be positive")
    if isinstance(method, str) and method not in STATISTIC_NAMES:
        raise DataError(f"unknown method {method!r}")
    params = params or MethodParams()
    if cfg.scenario == "pseudo" and env is None:
        env = gen_pseudo_environment(cfg, substream(seed, 0))
    args = [(cfg, method, j, k, alpha, seed, params, env) for j in range(reps)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_replication, args, chunksize=1))
    else:
        rows = [_replication(a) for a in args]
    rows.sort(key=lambda r: r["rep"])

    rejections = [r for r in rows if r["reject"]]
    rejection_rate = len(rejections) / reps
    if cfg.scenario == "pseudo":
        loc = None
    else:
        pool_rows = rejections if loc_rejected_only else rows
        hits = sum(1 for r in pool_rows if r["tau_hat"] == cfg.tau_true)
        loc = hits / len(pool_rows) if pool_rows else 0.0
    mean_rt = float(np.mean([r["runtime_ms"] for r in rows]))
    return ExperimentReport(
        method=method if isinstance(method, str) else "custom",
        scenario=cfg.scenario,
        replications=reps,
        rejection_rate=rejection_rate,
        localization_accuracy=loc,
        mean_runtime_ms=mean_rt,
        per_replication=rows,
        k=k,
        alpha=alpha,
        seed=seed,
        tau_true=None if cfg.scenario == "pseudo" else cfg.tau_true,
    )


def runtime_comparison(
    cfg: ScenarioConfig | None = None,
    k: int = 99,
    alpha: float = 0.05,
    seed: int = 0,
    params: MethodParams | None = None,
) -> dict:
    """Time the refit statistic against the distilled statistic on one
    dataset (same resamples, same worker count) and report the ratio."""
    cfg = cfg or make_config("s3", delta=3.0)
    params = params or MethodParams()
    ds, unlabeled = _generate(cfg, substream(seed, 0, 0), None)
    rx = learn_rx(ds, unlabeled, params.rx_ridge)

    t0 = time.perf_counter()
    stat_fn, ctx = prepare_statistic("mend", ds, substream(seed, 0, 1), params)
    res_mend = run_crt(ds, rx, stat_fn, ctx, k=k, alpha=alpha,
                       seed=derive_seed(seed, 0, 2), method="mend")
    mend_s = time.perf_counter() - t0

    t0 = time.perf_counter()
    stat_fn, ctx = prepare_statistic(
        "mend-lad-mean", ds, substream(seed, 0, 3), params
    )
    res_lad = run_crt(ds, rx, stat_fn, ctx, k=k, alpha=alpha,
                      seed=derive_seed(seed, 0, 2), method="mend-lad-mean")
    lad_s = time.perf_counter() - t0

    return {
        "schema_version": 1,
        "scenario": cfg.scenario,
        "k": k,
        "mend_seconds": mend_s,
        "mend_lad_mean_seconds": lad_s,
        "speedup_ratio": mend_s / lad_s,
        "mend_p_value": res_mend.p_value,
        "mend_lad_mean_p_value": res_lad.p_value,
    }
