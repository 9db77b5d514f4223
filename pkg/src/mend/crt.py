"""Generic conditional randomization test over time labels.

The engine resamples label vectors from a time-label model, recomputes a
pluggable statistic on each counterfeit label vector with a frozen context,
and ranks the observed statistic among the resampled ones:

    p = (1 + #{k : s_k >= s_obs}) / (k_effective + 1)

Ties count toward the numerator.  A statistic may declare a resample
unusable by raising ``SkipStatistic``; skipped resamples shrink
``k_effective`` rather than contribute fabricated values, and the run
aborts with ``TooManySkips`` if more than 20% of resamples skip.

Resample k always draws its labels from the substream ``(seed, k)``, so
results are bit-identical regardless of worker count or scheduling.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from .dataset import CandidateTau, LabeledDataset
from .errors import TooManySkips, SkipStatistic
from .rngs import substream
from .rx import TimeLabelModel, sample_labels

# A statistic maps (dataset, labels, frozen context) to
# (statistic value, tau_hat, per-tau divergence profile of length T-1).
StatisticFn = Callable[[LabeledDataset, np.ndarray, Any], "tuple[float, int, np.ndarray]"]

DEFAULT_K = 199
MAX_SKIP_FRACTION = 0.2


@dataclass(frozen=True)
class TestResult:
    """Outcome of one randomization test run."""

    method: str
    s_obs: float
    s_resampled: np.ndarray
    p_value: float
    tau_hat: CandidateTau
    profile: np.ndarray
    k: int
    k_effective: int
    seed: int
    alpha: float
    reject: bool
    runtime_ms: int

    def to_dict(self) -> dict:
        def clean(v: float):
            return float(v) if np.isfinite(v) else None

        return {
            "schema_version": 1,
            "method": self.method,
            "s_obs": clean(self.s_obs),
            "s_resampled": [clean(v) for v in self.s_resampled],
            "p_value": self.p_value,
            "tau_hat": self.tau_hat.tau,
            "profile": [clean(v) for v in self.profile],
            "k": self.k,
            "k_effective": self.k_effective,
            "seed": self.seed,
            "alpha": self.alpha,
            "reject": self.reject,
            "runtime_ms": self.runtime_ms,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def min_feasible_k(alpha: float) -> int:
    """Smallest K for which rejection at level alpha is possible at all."""
    return int(np.ceil(1.0 / alpha)) - 1


def run_crt(
    ds: LabeledDataset,
    rx: TimeLabelModel,
    stat: StatisticFn,
    context: Any = None,
    k: int = DEFAULT_K,
    alpha: float = 0.05,
    seed: int = 0,
    workers: int = 1,
    method: str = "custom",
) -> TestResult:
    """Run the randomization test and return the rank-based p-value.

    The context is shared read-only across all evaluations: for the
    distilled statistics it carries the pre-fitted representation (never
    refit per resample); for refit-based statistics it is configuration
    only and refitting happens inside the statistic.
    """
    if k < 1:
        raise ValueError("k must be positive")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    t0 = time.perf_counter()
    s_obs, tau_obs, profile = stat(ds, ds.r, context)
    if not np.isfinite(s_obs):
        raise ValueError("statistic returned a non-finite value on observed labels")

    def one(kk: int) -> float | None:
        labels = sample_labels(rx, ds.x, substream(seed, kk))
        try:
            s, _, _ = stat(ds, labels, context)
        except SkipStatistic:
            return None
        return float(s)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            raw = list(pool.map(one, range(1, k + 1)))
    else:
        raw = [one(kk) for kk in range(1, k + 1)]

    vals = [v for v in raw if v is not None]
    n_skip = k - len(vals)
    if n_skip > MAX_SKIP_FRACTION * k:
        raise TooManySkips(
            f"{n_skip}/{k} resamples skipped; the time-label model looks pathological"
        )
    s_res = np.asarray(vals, dtype=float)
    k_eff = s_res.size
    p_value = (1.0 + int((s_res >= s_obs).sum())) / (k_eff + 1.0)
    runtime_ms = int(round((time.perf_counter() - t0) * 1000.0))
    return TestResult(
        method=method,
        s_obs=float(s_obs),
        s_resampled=s_res,
        p_value=p_value,
        tau_hat=CandidateTau(int(tau_obs)),
        profile=np.asarray(profile, dtype=float),
        k=k,
        k_effective=k_eff,
        seed=int(seed),
        alpha=float(alpha),
        reject=bool(p_value <= alpha),
        runtime_ms=runtime_ms,
    )


def localize(result: TestResult) -> CandidateTau:
    """Smallest tau attaining the maximum of the observed divergence profile."""
    profile = np.asarray(result.profile)
    if profile.size == 0 or not np.isfinite(profile).any():
        raise ValueError("profile carries no finite entries to localize from")
    return CandidateTau(int(np.argmax(profile)) + 1)
