import json
import subprocess
import sys

import numpy as np
import pytest

from mend.cli import main
from mend.dataset import write_labeled_csv, write_unlabeled_csv
from mend.rngs import substream
from mend.simlab import gen_scenario3, make_config


@pytest.fixture(scope="module")
def s3_files(tmp_path_factory):
    """One strong-signal scenario-3 dataset written to CSV."""
    root = tmp_path_factory.mktemp("s3data")
    cfg = make_config("s3", delta=5.0)
    ds, unl = gen_scenario3(cfg, substream(31))
    labeled = root / "labeled.csv"
    unlabeled = root / "unlabeled.csv"
    write_labeled_csv(ds, labeled)
    write_unlabeled_csv(unl, unlabeled)
    return labeled, unlabeled


class TestDetect:
    def test_strong_signal_rejects_and_localizes(self, s3_files, tmp_path, capsys):
        labeled, unlabeled = s3_files
        out = tmp_path / "res.json"
        code = main([
            "detect", "--data", str(labeled), "--unlabeled", str(unlabeled),
            "--method", "mend-lad-mean", "--k", "99", "--alpha", "0.05",
            "--seed", "11", "--restarts", "2", "--out", str(out),
            "--workers", "1",
        ])
        assert code == 0
        obj = json.loads(out.read_text())
        assert obj["schema_version"] == 1
        assert obj["reject"] is True
        assert obj["tau_hat"] == 7
        line = capsys.readouterr().out.strip()
        assert "p_value=" in line and "tau_hat=7" in line

    def test_missing_r_column_exits_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("y,x1\n1.0,2.0\n")
        code = main(["detect", "--data", str(bad), "--out", str(tmp_path / "o.json")])
        assert code == 2
        assert "MissingColumn: r" in capsys.readouterr().err

    def test_infeasible_k_warns(self, s3_files, tmp_path, capsys):
        labeled, unlabeled = s3_files
        code = main([
            "detect", "--data", str(labeled), "--unlabeled", str(unlabeled),
            "--method", "mend-lad-mean", "--k", "10", "--alpha", "0.05",
            "--seed", "1", "--restarts", "1",
            "--out", str(tmp_path / "r.json"), "--workers", "1",
        ])
        assert code == 0
        assert "cannot reject" in capsys.readouterr().err

    def test_rx_model_roundtrip(self, s3_files, tmp_path, capsys):
        labeled, unlabeled = s3_files
        model = tmp_path / "model.json"
        assert main([
            "export-model", "--data", str(labeled), "--unlabeled", str(unlabeled),
            "--out", str(model),
        ]) == 0
        obj = json.loads(model.read_text())
        assert obj["t_max"] == 10 and obj["schema_version"] == 1
        out = tmp_path / "res.json"
        code = main([
            "detect", "--data", str(labeled), "--rx-model", str(model),
            "--method", "mend-lad-mean", "--k", "29", "--seed", "2",
            "--restarts", "1", "--out", str(out), "--workers", "1",
        ])
        assert code == 0

    def test_ols_cusum_method(self, s3_files, tmp_path, capsys):
        labeled, _ = s3_files
        out = tmp_path / "cusum.json"
        code = main(["detect", "--data", str(labeled), "--method", "ols-cusum",
                     "--out", str(out)])
        assert code == 0
        obj = json.loads(out.read_text())
        assert obj["method"] == "ols-cusum"

    def test_unknown_method_exits_2(self, s3_files, tmp_path, capsys):
        labeled, _ = s3_files
        code = main(["detect", "--data", str(labeled), "--method", "kcd",
                     "--out", str(tmp_path / "x.json")])
        assert code == 2

    def test_smoke_over_20_seeds(self, tmp_path):
        # end-to-end: strong scenario-3 signal must reject on >= 18/20 seeds
        from mend.dataset import load_labeled_csv, load_unlabeled_csv
        from mend.crt import run_crt
        from mend.rngs import derive_seed
        from mend.rx import learn_rx
        from mend.simlab import MethodParams, prepare_statistic

        cfg = make_config("s3", delta=5.0)
        rejected = 0
        for seed in range(20):
            ds, unl = gen_scenario3(cfg, substream(600 + seed))
            rx = learn_rx(ds, unl)
            stat_fn, ctx = prepare_statistic(
                "mend-lad-mean", ds, substream(seed, 1), MethodParams(restarts=2)
            )
            res = run_crt(ds, rx, stat_fn, ctx, k=99, alpha=0.05,
                          seed=derive_seed(seed, 2), method="mend-lad-mean")
            rejected += res.reject
        assert rejected >= 18


class TestConfigFile:
    def test_file_values_and_flag_override(self, s3_files, tmp_path, capsys):
        labeled, unlabeled = s3_files
        cfg_file = tmp_path / "run.cfg"
        out = tmp_path / "out.json"
        cfg_file.write_text(
            "method = mend-lad-mean\n"
            "k = 29\n"
            "seed = 5  # seeds the resampling streams\n"
            "restarts = 1\n"
            "workers = 1\n"
            f"data = {labeled}\n"
            f"unlabeled = {unlabeled}\n"
            f"out = {out}\n"
        )
        code = main(["detect", "--config", str(cfg_file), "--k", "19"])
        assert code == 0
        obj = json.loads(out.read_text())
        assert obj["k"] == 19  # flag overrides file
        assert obj["seed"] == 5  # file value used

    def test_unknown_key_rejected(self, tmp_path, capsys):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text("bogus = 1\n")
        code = main(["detect", "--config", str(cfg_file)])
        assert code == 2

    def test_missing_required_reported(self, capsys):
        code = main(["detect"])
        assert code == 2
        assert "--data" in capsys.readouterr().err


class TestSimulate:
    def test_small_preset_run(self, tmp_path, capsys):
        out = tmp_path / "sim"
        code = main([
            "simulate", "--preset", "s2-null", "--reps", "3", "--k", "19",
            "--seed", "3", "--workers", "1", "--restarts", "1",
            "--out", str(out),
        ])
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        assert report["replications"] == 3
        assert (out / "report.csv").exists()

    def test_zero_reps_exits_2(self, tmp_path, capsys):
        code = main(["simulate", "--preset", "s2-null", "--reps", "0",
                     "--out", str(tmp_path / "x")])
        assert code == 2

    def test_unknown_preset_exits_2(self, tmp_path, capsys):
        code = main(["simulate", "--preset", "s9-power",
                     "--out", str(tmp_path / "x")])
        assert code == 2


class TestPseudoSim:
    def test_covariates_without_outcome(self, tmp_path, capsys):
        rng = substream(40)
        from mend.dataset import UnlabeledDataset

        cov = UnlabeledDataset(
            rng.normal(size=(180, 3)), np.repeat(np.arange(1, 4), 60)
        )
        path = tmp_path / "cov.csv"
        write_unlabeled_csv(cov, path)
        out = tmp_path / "ps"
        code = main([
            "pseudo-sim", "--covariates", str(path), "--reps", "2",
            "--k", "19", "--seed", "1", "--workers", "1", "--restarts", "1",
            "--out", str(out),
        ])
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        assert report["replications"] == 2
        assert report["localization_accuracy"] is None


class TestEntryPoint:
    def test_module_invocation(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("y,x1\n1.0,2.0\n")
        proc = subprocess.run(
            [sys.executable, "-m", "mend.cli", "detect", "--data", str(bad)],
            capture_output=True, text=True, timeout=120,
        )
        assert proc.returncode == 2
        assert "MissingColumn" in proc.stderr
