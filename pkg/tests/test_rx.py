import json

import numpy as np
import pytest
from scipy.stats import chisquare

from mend.dataset import LabeledDataset, UnlabeledDataset
from mend.errors import DataError, LabelOutOfRange
from mend.glm import MultinomialFit
from mend.rngs import substream
from mend.rx import (
    TimeLabelModel,
    class_probs,
    learn_rx,
    load_model,
    model_from_json,
    model_to_json,
    sample_labels,
    save_model,
)


def _model(weights):
    w = np.asarray(weights, dtype=float)
    return TimeLabelModel(fit=MultinomialFit(w, 0.0), t_max=w.shape[0])


def _labeled(x, r, t_max):
    return LabeledDataset(np.zeros(len(r)), x, r, t_max)


class TestLearnRx:
    def test_independent_labels_give_flat_model(self):
        # covariates carry no label information: slopes must stay near zero
        norms = []
        for rep in range(200):
            rng = np.random.default_rng(rep)
            n = 2000
            x = rng.normal(size=(n, 3))
            r = 1 + (rng.random(n) < 0.5).astype(int)
            r[:2] = [1, 2]
            model = learn_rx(_labeled(x, r, 2), ridge=1e-4)
            norms.append(float(np.linalg.norm(model.fit.weights[1, 1:])))
        assert max(norms) <= 0.2

    def test_unlabeled_rows_shrink_coefficient_error(self):
        # scenario-1 covariate law: the true log-odds are linear with known
        # weights (equal-covariance gaussian blocks), so coefficient error
        # against the analytic truth is measurable
        from mend.simlab import gen_scenario1, make_config

        chol = None
        idx = np.arange(5)
        sigma = 0.5 ** np.abs(idx[:, None] - idx[None, :])
        sig_inv = np.linalg.inv(sigma)

        def true_weights(t_max, p):
            w = np.zeros((t_max, p + 1))
            mu1 = 0.2 * 1 * np.ones(5)
            for t in range(2, t_max + 1):
                mut = 0.2 * t * np.ones(5)
                w[t - 1, 1:6] = sig_inv @ (mut - mu1)
                w[t - 1, 0] = -0.5 * (mut @ sig_inv @ mut - mu1 @ sig_inv @ mu1)
            return w

        cfg = make_config("s1", delta=0.0, n_per_t=30, unlabeled_extra=1000)
        truth = true_weights(cfg.t_max, cfg.p)
        err_with, err_without = [], []
        for rep in range(50):
            labeled, unlabeled = gen_scenario1(cfg, substream(1000 + rep))
            m_semi = learn_rx(labeled, unlabeled)
            m_lab = learn_rx(labeled, None)
            err_with.append(np.mean((m_semi.fit.weights - truth) ** 2))
            err_without.append(np.mean((m_lab.fit.weights - truth) ** 2))
        assert np.mean(err_with) < np.mean(err_without)

    def test_degenerate_covariates_recover_frequencies(self):
        r = np.concatenate([np.full(30, 1), np.full(60, 2), np.full(10, 3)])
        with pytest.warns(Warning):
            model = learn_rx(_labeled(np.zeros((100, 2)), r, 3), ridge=0.0)
        probs = class_probs(model, np.zeros(2))
        assert np.allclose(probs, [0.3, 0.6, 0.1], atol=1e-6)

    def test_unlabeled_column_mismatch(self):
        ds = _labeled(np.random.default_rng(0).normal(size=(20, 3)),
                      np.tile([1, 2], 10), 2)
        bad = UnlabeledDataset(np.zeros((5, 2)), np.ones(5, dtype=int))
        with pytest.raises(DataError):
            learn_rx(ds, bad)

    def test_unlabeled_label_beyond_t_max(self):
        ds = _labeled(np.random.default_rng(0).normal(size=(20, 2)),
                      np.tile([1, 2], 10), 2)
        bad = UnlabeledDataset(np.zeros((5, 2)), np.full(5, 3))
        with pytest.raises(LabelOutOfRange):
            learn_rx(ds, bad)


class TestClassProbs:
    def test_zero_scores_uniform(self):
        model = _model(np.zeros((4, 3)))
        assert np.allclose(class_probs(model, np.ones(2)), 0.25, atol=1e-14)

    def test_shift_invariance(self):
        rng = np.random.default_rng(5)
        w = rng.normal(size=(3, 4))
        shifted = w.copy()
        shifted[:, 0] += 17.0  # same constant added to every class score
        x = rng.normal(size=(10, 3))
        p1 = class_probs(_model(w), x)
        p2 = class_probs(_model(shifted), x)
        assert np.abs(p1 - p2).max() <= 1e-12

    def test_binary_log3_closed_form(self):
        w = np.zeros((2, 1))
        w[1, 0] = -np.log(3.0)
        probs = class_probs(_model(w), np.zeros(0).reshape(0))
        assert np.allclose(probs, [0.75, 0.25], atol=1e-12)

    def test_sums_to_one(self):
        rng = np.random.default_rng(1)
        model = _model(rng.normal(size=(5, 4)) * 3)
        probs = class_probs(model, rng.normal(size=(20, 3)))
        assert np.abs(probs.sum(axis=1) - 1.0).max() <= 1e-12
        assert probs.min() > 0.0


class TestSampleLabels:
    def test_law_of_large_numbers(self):
        model = _model(np.zeros((2, 2)))  # probabilities (0.5, 0.5)
        x = np.zeros((100_000, 1))
        labels = sample_labels(model, x, substream(77))
        freq = np.mean(labels == 1)
        assert abs(freq - 0.5) <= 0.01

    def test_forced_label(self):
        w = np.zeros((3, 2))
        w[1:, 0] = -1000.0  # classes 2,3 impossible
        labels = sample_labels(_model(w), np.zeros((500, 1)), substream(1))
        assert np.all(labels == 1)

    def test_deterministic_given_stream(self):
        rng = np.random.default_rng(9)
        model = _model(rng.normal(size=(4, 3)))
        x = rng.normal(size=(200, 2))
        l1 = sample_labels(model, x, substream(42, 3))
        l2 = sample_labels(model, x, substream(42, 3))
        assert np.array_equal(l1, l2)

    def test_marginals_match_class_probs(self):
        w = np.zeros((3, 1))
        w[1, 0] = np.log(2.0)
        w[2, 0] = np.log(3.0)  # probabilities (1/6, 2/6, 3/6)
        model = _model(w)
        labels = sample_labels(model, np.zeros((100_000, 0)), substream(8))
        counts = np.bincount(labels, minlength=4)[1:]
        stat = chisquare(counts, f_exp=np.array([1, 2, 3]) / 6 * 100_000)
        assert stat.pvalue > 0.001


class TestModelJson:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(3)
        model = _model(rng.normal(size=(4, 5)))
        path = tmp_path / "m.json"
        save_model(model, path)
        back = load_model(path)
        x = rng.normal(size=(10, 4))
        assert np.array_equal(class_probs(model, x), class_probs(back, x))
        obj = json.loads(path.read_text())
        assert obj["schema_version"] == 1

    def test_malformed_rejected(self):
        with pytest.raises(DataError):
            model_from_json({"t_max": 3, "weights": [[0.0, 0.0]]})

    def test_json_keys(self):
        model = _model(np.zeros((2, 2)))
        obj = model_to_json(model)
        assert set(obj) == {"schema_version", "t_max", "ridge", "weights"}
