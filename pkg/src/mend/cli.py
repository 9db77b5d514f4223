"""Command-line front end.

Commands
--------
detect        run a change-point test on a labeled CSV
simulate      run a named simulation preset and write a report
pseudo-sim    pseudo-outcome validity study over fixed covariates
export-model  learn p(R|X) from a CSV and save it as JSON

Structured results go to files; standard output carries a one-line human
summary.  Every flag has a config-file equivalent (``--config``, flat
``key = value`` lines, flag names with dashes or underscores); explicit
flags override file values.  Exit codes: 0 success, 2 data/config error,
3 statistical abort (the test could not be carried out).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .crt import min_feasible_k, run_crt
from .dataset import load_labeled_csv, load_unlabeled_csv
from .errors import DataError, FitError, MendError, SkipStatistic, TooManySkips
from .glm import fit_logistic
from .rngs import derive_seed, substream
from .rx import learn_rx, load_model, save_model
from .simlab import (
    MethodParams,
    PseudoEnvironment,
    learn_rx_from_pool,
    make_config,
    prepare_statistic,
    run_experiment,
    runtime_comparison,
)
from .statistics import STATISTIC_NAMES, ols_cusum

EXIT_OK = 0
EXIT_DATA = 2
EXIT_STAT = 3

_COMMON = {
    "k": (int, 199),
    "alpha": (float, 0.05),
    "seed": (int, 0),
    "workers": (int, 0),  # 0 -> machine parallelism
    "restarts": (int, 5),
    "top_k": (int, 5),
    "lambda_reg": (float, 1.0),
    "min_segment": (int, -1),  # -1 -> per-method default
    "fitter": (str, "lasso_cv"),
    "lam": (float, 0.0),
    "ridge": (float, 0.0),
    "repr_ridge": (float, 1e-3),
    "rx_ridge": (float, 1e-4),
}

_SPECS = {
    "detect": {
        "data": (str, None),
        "unlabeled": (str, ""),
        "rx_model": (str, ""),
        "method": (str, "mend-lad-mean"),
        "family": (str, "gaussian"),
        "y_col": (str, "y"),
        "r_col": (str, "r"),
        "out": (str, "result.json"),
        **_COMMON,
    },
    "simulate": {
        "preset": (str, None),
        "reps": (int, 200),
        "out": (str, "simout"),
        **_COMMON,
    },
    "pseudo-sim": {
        "covariates": (str, None),
        "reps": (int, 500),
        "out": (str, "pseudout"),
        "r_col": (str, "r"),
        "y_col": (str, "y"),
        **_COMMON,
    },
    "export-model": {
        "data": (str, None),
        "unlabeled": (str, ""),
        "out": (str, "model.json"),
        "r_col": (str, "r"),
        "y_col": (str, "y"),
        "rx_ridge": (float, 1e-4),
    },
}

PRESETS = {
    "s1-null": ("s1", 0.0, "mend-lad-mean"),
    "s2-null": ("s2", 0.0, "mend-lad-mean"),
    "s2-power": ("s2", 3.0, "mend-lad-mean"),
    "s2-cusum-null": ("s2", 0.0, "ols-cusum"),
    "s3-null": ("s3", 0.0, "mend-lad-mean"),
    "s3-power": ("s3", 3.0, "mend-lad-mean"),
    "s3-power-repr": ("s3", 3.0, "mend-lad-repr"),
    "pseudo-null": ("pseudo", 0.0, "mend-lad-mean"),
}
RUNTIME_PRESETS = ("paper-s3-runtime", "s3-runtime")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mend", description="Change-point testing for conditional outcome models"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd, spec in _SPECS.items():
        sp = sub.add_parser(cmd)
        sp.add_argument("--config", type=str, default=None,
                        help="flat key=value file; flags override file values")
        for name, (typ, _default) in spec.items():
            sp.add_argument(f"--{name.replace('_', '-')}", type=typ, default=None)
    return parser


def _load_config_file(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataError(f"{path}:{lineno}: expected key = value")
            key, val = line.split("=", 1)
            out[key.strip().replace("-", "_")] = val.strip()
    return out


def _merge_options(args: argparse.Namespace) -> dict:
    spec = _SPECS[args.command]
    filevals = _load_config_file(args.config) if args.config else {}
    unknown = set(filevals) - set(spec)
    if unknown:
        raise DataError(f"unknown config key(s): {sorted(unknown)}")
    opts = {}
    for name, (typ, default) in spec.items():
        v = getattr(args, name, None)
        if v is None and name in filevals:
            v = typ(filevals[name])
        if v is None:
            v = default
        opts[name] = v
    missing = [n for n, v in opts.items() if v is None]
    if missing:
        raise DataError(f"missing required option(s): --{missing[0].replace('_', '-')}")
    return opts


def _method_params(opts: dict) -> MethodParams:
    return MethodParams(
        restarts=opts["restarts"],
        top_k=opts["top_k"],
        lambda_reg=opts["lambda_reg"],
        min_segment=None if opts["min_segment"] < 0 else opts["min_segment"],
        fitter=opts["fitter"],
        lam=opts["lam"],
        ridge=opts["ridge"],
        repr_ridge=opts["repr_ridge"],
        rx_ridge=opts["rx_ridge"],
    )


def _workers(opts: dict) -> int:
    return opts["workers"] if opts["workers"] > 0 else (os.cpu_count() or 1)


def _validate_common(opts: dict):
    if not 0.0 < opts["alpha"] < 1.0:
        raise DataError("alpha must be in (0, 1)")
    if opts["k"] < 1:
        raise DataError("k must be positive")


def _write_json(path, obj: dict):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def cmd_detect(opts: dict) -> int:
    _validate_common(opts)
    if opts["method"] not in STATISTIC_NAMES:
        raise DataError(f"unknown method {opts['method']!r}")
    ds = load_labeled_csv(
        opts["data"], y_col=opts["y_col"], r_col=opts["r_col"], family=opts["family"]
    )
    unlabeled = (
        load_unlabeled_csv(opts["unlabeled"], r_col=opts["r_col"], y_col=opts["y_col"])
        if opts["unlabeled"]
        else None
    )
    alpha, k, seed = opts["alpha"], opts["k"], opts["seed"]
    if opts["method"] == "ols-cusum":
        s, tau, p = ols_cusum(ds)
        out = {
            "schema_version": 1, "method": "ols-cusum", "s_obs": s,
            "p_value": p, "tau_hat": tau, "k": 0, "k_effective": 0,
            "seed": seed, "alpha": alpha, "reject": bool(p <= alpha),
        }
        _write_json(opts["out"], out)
        print(f"p_value={p:.6g} tau_hat={tau} reject={p <= alpha}")
        return EXIT_OK

    if k < min_feasible_k(alpha):
        print(
            f"warning: k={k} cannot reject at alpha={alpha} "
            f"(minimum p-value 1/{k + 1} > {alpha}); use k >= {min_feasible_k(alpha)}",
            file=sys.stderr,
        )
    rx = load_model(opts["rx_model"]) if opts["rx_model"] else learn_rx(
        ds, unlabeled, ridge=opts["rx_ridge"]
    )
    if rx.p != ds.p:
        raise DataError(f"rx model expects {rx.p} features, data has {ds.p}")
    # resample substreams occupy paths (seed, 1..k); the mixture restarts get
    # a reserved high path so the user seed can flow to run_crt unchanged
    stat_fn, ctx = prepare_statistic(
        opts["method"], ds, substream(seed, 2**31 + 1), _method_params(opts)
    )
    res = run_crt(
        ds, rx, stat_fn, ctx, k=k, alpha=alpha, seed=seed,
        workers=_workers(opts), method=opts["method"],
    )
    _write_json(opts["out"], res.to_dict())
    print(
        f"p_value={res.p_value:.6g} tau_hat={res.tau_hat.tau} reject={res.reject}"
    )
    return EXIT_OK


def cmd_simulate(opts: dict) -> int:
    _validate_common(opts)
    preset = opts["preset"]
    os.makedirs(opts["out"], exist_ok=True)
    if preset in RUNTIME_PRESETS:
        result = runtime_comparison(
            k=min(opts["k"], 99), alpha=opts["alpha"], seed=opts["seed"],
            params=_method_params(opts),
        )
        _write_json(os.path.join(opts["out"], "runtime.json"), result)
        print(
            f"mend={result['mend_seconds']:.2f}s "
            f"mend-lad-mean={result['mend_lad_mean_seconds']:.2f}s "
            f"speedup={result['speedup_ratio']:.1f}x"
        )
        return EXIT_OK
    if preset not in PRESETS:
        raise DataError(f"unknown preset {preset!r}")
    scenario, delta, method = PRESETS[preset]
    cfg = make_config(scenario, delta=delta, seed=opts["seed"])
    report = run_experiment(
        cfg, method, reps=opts["reps"], k=opts["k"], alpha=opts["alpha"],
        seed=opts["seed"], workers=_workers(opts), params=_method_params(opts),
    )
    _write_json(os.path.join(opts["out"], "report.json"), report.to_dict())
    report.write_csv(os.path.join(opts["out"], "report.csv"))
    loc = "n/a" if report.localization_accuracy is None else (
        f"{report.localization_accuracy:.3f}"
    )
    print(
        f"preset={preset} reps={report.replications} "
        f"rejection_rate={report.rejection_rate:.3f} localization={loc}"
    )
    return EXIT_OK


def cmd_pseudo_sim(opts: dict) -> int:
    _validate_common(opts)
    if opts["reps"] < 1:
        raise DataError("reps must be positive")
    try:
        labeled = load_labeled_csv(
            opts["covariates"], y_col=opts["y_col"], r_col=opts["r_col"],
            family="bernoulli",
        )
        eta_fit = fit_logistic(labeled.x, labeled.y, ridge=1e-3)
        eta = np.concatenate([[eta_fit.intercept], eta_fit.coef])
        cov_x, cov_r = labeled.x, labeled.r
    except DataError:
        cov = load_unlabeled_csv(opts["covariates"], r_col=opts["r_col"],
                                 y_col=opts["y_col"])
        cov_x, cov_r = cov.x, cov.r
        rng = substream(opts["seed"], 7)
        eta = rng.normal(scale=0.3, size=cov.p + 1)
    from .dataset import UnlabeledDataset

    cov = UnlabeledDataset(cov_x, cov_r)
    t_max = int(cov.r.max())
    env = PseudoEnvironment(
        covariates=cov, pool=None, eta=eta,
        rx=learn_rx_from_pool(cov, None, t_max, ridge=opts["rx_ridge"]),
    )
    cfg = make_config(
        "pseudo", p=cov.p, t_max=t_max, tau_true=1, n_per_t=1, unlabeled_extra=0
    )
    os.makedirs(opts["out"], exist_ok=True)
    report = run_experiment(
        cfg, "mend-lad-mean", reps=opts["reps"], k=opts["k"], alpha=opts["alpha"],
        seed=opts["seed"], workers=_workers(opts), params=_method_params(opts),
        env=env,
    )
    _write_json(os.path.join(opts["out"], "report.json"), report.to_dict())
    report.write_csv(os.path.join(opts["out"], "report.csv"))
    print(
        f"pseudo reps={report.replications} rejection_rate={report.rejection_rate:.3f}"
    )
    return EXIT_OK


def cmd_export_model(opts: dict) -> int:
    cov = load_unlabeled_csv(opts["data"], r_col=opts["r_col"], y_col=opts["y_col"])
    pool = (
        load_unlabeled_csv(opts["unlabeled"], r_col=opts["r_col"], y_col=opts["y_col"])
        if opts["unlabeled"]
        else None
    )
    t_max = int(max(cov.r.max(), pool.r.max() if pool is not None else 0))
    model = learn_rx_from_pool(cov, pool, t_max, ridge=opts["rx_ridge"])
    save_model(model, opts["out"])
    print(f"model written to {opts['out']} (T={model.t_max}, p={model.p})")
    return EXIT_OK


_HANDLERS = {
    "detect": cmd_detect,
    "simulate": cmd_simulate,
    "pseudo-sim": cmd_pseudo_sim,
    "export-model": cmd_export_model,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        opts = _merge_options(args)
        return _HANDLERS[args.command](opts)
    except (DataError, FitError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TooManySkips, SkipStatistic) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_STAT
    except FileNotFoundError as exc:
        print(f"FileNotFound: {exc}", file=sys.stderr)
        return EXIT_DATA
    except MendError as exc:  # pragma: no cover - safety net
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
