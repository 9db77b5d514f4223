"""The time-label model p(R | X): learning, prediction, and label resampling.

The conditional law of the time label given covariates is what the
randomization test conditions on.  It is learned by pooling the labeled
rows with any outcome-unlabeled rows (both carry covariates and labels;
outcomes are never used), and sampled from to build counterfeit label
vectors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .dataset import LabeledDataset, UnlabeledDataset
from .errors import DataError, LabelOutOfRange, TooFewRows
from .glm import MultinomialFit, fit_multinomial

RX_RIDGE_DEFAULT = 1e-4


@dataclass(frozen=True)
class TimeLabelModel:
    """A fitted conditional law of the time label given covariates."""

    fit: MultinomialFit
    t_max: int

    @property
    def p(self) -> int:
        return self.fit.weights.shape[1] - 1


def learn_rx(
    labeled: LabeledDataset,
    unlabeled: UnlabeledDataset | None = None,
    ridge: float = RX_RIDGE_DEFAULT,
) -> TimeLabelModel:
    """Fit p(R | X) on the pooled labeled + unlabeled covariates and labels.

    Outcomes are never read; "unlabeled" rows lack y, not r.  The small
    default ridge guards against quasi-separation so the fit cannot fail
    mid-test.
    """
    x, r = labeled.x, labeled.r
    if unlabeled is not None:
        if unlabeled.p != labeled.p:
            raise DataError(
                f"unlabeled column count {unlabeled.p} != labeled {labeled.p}"
            )
        if unlabeled.r.size and unlabeled.r.max() > labeled.t_max:
            raise LabelOutOfRange(
                f"unlabeled label {int(unlabeled.r.max())} exceeds t_max={labeled.t_max}"
            )
        x = np.vstack([x, unlabeled.x])
        r = np.concatenate([r, unlabeled.r])
    if x.shape[0] < labeled.t_max:
        raise TooFewRows("fewer pooled rows than time points")
    fit = fit_multinomial(x, r, ridge=ridge)
    if fit.t_max < labeled.t_max:
        # trailing labels absent from the pool: give them zero score rows
        pad = np.zeros((labeled.t_max - fit.t_max, fit.weights.shape[1]))
        fit = MultinomialFit(np.vstack([fit.weights, pad]), fit.ridge)
    return TimeLabelModel(fit=fit, t_max=labeled.t_max)


def class_probs(model: TimeLabelModel, x: np.ndarray) -> np.ndarray:
    """Label probabilities at one covariate vector (or rows of a matrix)."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return model.fit.predict_proba(x[None, :])[0]
    return model.fit.predict_proba(x)


def sample_labels(
    model: TimeLabelModel, x: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Draw one label per row from the model's categorical law at that row.

    Inverse-CDF with a single uniform variate per row, so the draw is
    reproducible across platforms given the generator state.
    """
    probs = class_probs(model, np.atleast_2d(x))
    cum = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0])
    labels = 1 + (u[:, None] >= cum).sum(axis=1)
    return np.minimum(labels, model.t_max).astype(np.int64)


# -- JSON export/import so a learned model can be reused across runs --------


def model_to_json(model: TimeLabelModel) -> dict:
    return {
        "schema_version": 1,
        "t_max": model.t_max,
        "ridge": model.fit.ridge,
        "weights": model.fit.weights.tolist(),
    }


def model_from_json(obj: dict) -> TimeLabelModel:
    w = np.asarray(obj["weights"], dtype=float)
    if w.ndim != 2 or w.shape[0] != obj["t_max"]:
        raise DataError("malformed time-label model JSON")
    return TimeLabelModel(
        fit=MultinomialFit(w, float(obj.get("ridge", 0.0))), t_max=int(obj["t_max"])
    )


def save_model(model: TimeLabelModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_json(model), fh, indent=2)


def load_model(path) -> TimeLabelModel:
    with open(path, encoding="utf-8") as fh:
        return model_from_json(json.load(fh))
