"""Command-line interface.

Subcommands mirror the offline/online phase split:

    offline    train on planned inputs, build + save a derivative bundle
    correct    apply input-error corrections from a saved bundle
    simulate   Monte Carlo replication studies (1-d / 2-d presets)
    bench      wall-clock comparison of retraining vs. online correction
    audit      finite-difference check of the derivative tensors
    report     turn prediction files into tidy plot CSV (x, mean, band)

Configuration is a single JSON document (--config) optionally seeded
from a named preset (--preset); individual flags override both. Exit
codes: 0 success, 2 validation, 3 stale or mismatched artifacts, 4 I/O,
5 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import os
import sys
import time
import warnings

import numpy as np

from .bundle_io import load_bundle, save_bundle
from .correction import DeltaBoundWarning, correct
from .derivatives import build_bundle
from .errors import (DimensionError, FormatError, GpDeltaError, IoError,
                     NotPositiveDefinite, StaleBundle)
from .fd import (fd_cov_hessian_diag, fd_cov_jacobian, fd_mean_hessian_diag,
                 fd_mean_hessian_full, fd_mean_jacobian, relative_error)
from .gp import inputs_digest, train
from .kernel import KernelParams
from .simulate import (PRESETS, SCORE_FIELDS, TIMING_FIELDS, _field_from_config,
                       _resolve_planned, _resolve_queries, normalize_config,
                       preset_config, run_1d_replication, run_2d_replication,
                       run_timing_bench)
from .version import __version__

__all__ = ["main"]

AUDIT_TOL_JACOBIAN = 1e-4
AUDIT_TOL_HESSIAN = 1e-3


# ---------------------------------------------------------------------------
# config plumbing

def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _load_json(path: str):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path} is not valid JSON: {exc}") from exc


def _resolve_config(args) -> dict:
    cfg: dict = {}
    if getattr(args, "preset", None):
        cfg = preset_config(args.preset)
    if getattr(args, "config", None):
        doc = _load_json(args.config)
        if not isinstance(doc, dict):
            raise FormatError(f"{args.config} must hold a JSON object")
        cfg = _deep_merge(cfg, doc)
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "trials", None) is not None:
        cfg["trials"] = args.trials
    if getattr(args, "mode", None):
        cfg["mode"] = args.mode.replace("-", "_")
    return normalize_config(cfg)


def _resolve_training(cfg: dict, rng: np.random.Generator):
    """Planned inputs and their measurements from config.

    Explicit cfg["measurements"] wins; otherwise values are sampled from
    the configured field at the planned locations plus Gaussian noise
    drawn from rng (one draw — keep the order stable for reproducibility).
    """
    planned = _resolve_planned(cfg["planned"])
    given = cfg.get("measurements")
    if given is not None:
        values = given["values"] if isinstance(given, dict) else given
        Z = np.asarray(values, dtype=float).ravel()
        if Z.shape[0] != planned.shape[0]:
            raise DimensionError(
                f"{Z.shape[0]} measurements for {planned.shape[0]} planned inputs")
    else:
        fieldspec = _field_from_config(cfg["field"])
        Z = fieldspec.evaluate(planned)
        if cfg["measurement_noise_std"] > 0:
            Z = Z + rng.normal(0.0, cfg["measurement_noise_std"], planned.shape[0])
    return planned, Z


# ---------------------------------------------------------------------------
# output plumbing

def _write_json(path: str, payload: dict) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _write_csv(path: str, fieldnames: list[str], rows: list[dict],
               provenance: dict) -> None:
    """RFC-4180-style table prefixed with '# key: value' provenance lines."""
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            for key, value in provenance.items():
                fh.write(f"# {key}: {value}\n")
            writer = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _provenance(config: dict) -> dict:
    return {"software_version": __version__,
            "config": json.dumps(config, sort_keys=True, separators=(",", ":"))}


def _prediction_payload(meta, mode: str, queries: np.ndarray,
                        mean: np.ndarray, cov: np.ndarray) -> dict:
    return {
        "schema_version": 1,
        "software_version": __version__,
        "config": {
            "kernel": {"amplitude": meta.amplitude, "length_scale": meta.length_scale,
                       "noise_std": meta.noise_std, "jitter": meta.jitter},
            "n": meta.n, "t": meta.t, "p": meta.p, "mode": mode,
            "planned_inputs_hash": meta.planned_inputs_hash,
            "measurements_hash": meta.measurements_hash,
        },
        "queries": queries.tolist(),
        "prediction": {"mean": mean.tolist(), "covariance": cov.tolist()},
    }


# ---------------------------------------------------------------------------
# subcommands

def cmd_offline(args) -> int:
    cfg = _resolve_config(args)
    rng = np.random.default_rng(cfg["seed"])
    planned, Z = _resolve_training(cfg, rng)
    queries = _resolve_queries(cfg["queries"], rng, planned.shape[1])
    params = KernelParams(**cfg["kernel"])

    gp = train(params, planned, Z)
    t0 = time.perf_counter()
    bundle = build_bundle(gp, queries,
                          include_full_mean_hessian=(cfg["mode"] == "full_hessian"))
    build_s = time.perf_counter() - t0
    save_bundle(bundle, args.out)

    meta = bundle.meta
    print(f"bundle: {args.out}  n={meta.n} t={meta.t} p={meta.p} "
          f"full_hessian={bundle.has_full_hessian}")
    print(f"build: {build_s:.3f} s  size: {os.path.getsize(args.out)} bytes")
    if args.pred_out:
        pred = gp.predict_full(queries)
        _write_json(args.pred_out, _prediction_payload(
            meta, cfg["mode"], queries, pred.mean, pred.covariance))
        print(f"prediction: {args.pred_out}")
    return 0


def _load_deltas(args, cfg) -> np.ndarray:
    if getattr(args, "deltas", None):
        doc = _load_json(args.deltas)
        values = doc.get("deltas") if isinstance(doc, dict) else doc
    else:
        values = cfg.get("deltas")
    if values is None:
        raise ValueError("no deltas supplied: use --deltas FILE or a config 'deltas' key")
    return np.asarray(values, dtype=float)


def cmd_correct(args) -> int:
    cfg = _resolve_config(args)
    bundle = load_bundle(args.bundle)
    meta = bundle.meta

    kernel_cfg = KernelParams(**cfg["kernel"])
    bundle_params = KernelParams(meta.amplitude, meta.length_scale,
                                 meta.noise_std, meta.jitter)
    if kernel_cfg != bundle_params:
        raise StaleBundle(
            f"bundle was built with kernel {bundle_params}, config says {kernel_cfg}")

    rng = np.random.default_rng(cfg["seed"])
    planned, Z = _resolve_training(cfg, rng)
    gp = train(bundle_params, planned, Z)
    if gp.digest_ != meta.planned_inputs_hash:
        raise StaleBundle("bundle was built for different planned inputs")
    if inputs_digest(Z[:, None]) != meta.measurements_hash:
        raise StaleBundle("bundle was built for different measurements")

    deltas = _load_deltas(args, cfg)
    prediction = gp.predict_full(bundle.queries)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", DeltaBoundWarning)
        corrected = correct(prediction, bundle, deltas, mode=cfg["mode"])
    _write_json(args.out, _prediction_payload(
        meta, cfg["mode"], bundle.queries, corrected.mean, corrected.covariance))

    print(f"corrected: {args.out}  mode={cfg['mode']}  t={meta.t}")
    for w in caught:
        if issubclass(w.category, DeltaBoundWarning):
            print(f"warning: {w.message}")
    return 0


def cmd_simulate(args) -> int:
    cfg = _resolve_config(args)
    runner = run_1d_replication if cfg["experiment"] == "1d" else run_2d_replication
    report = runner(cfg)

    agg = report.aggregates
    if report.trials:
        print(f"trials: {agg['n_trials']}  skipped: {len(report.skipped)}")
        print(f"mean improvement: {agg['improvement_pct']['mean']:.2f} %  "
              f"median: {agg['improvement_pct']['median']:.2f} %  "
              f"improved in {100 * agg['frac_improved']:.1f} % of trials")
    else:
        print(f"trials: 0  skipped: {len(report.skipped)}")

    if args.out:
        if args.format == "json":
            _write_json(args.out, report.to_dict())
        else:
            fields = ["seed", *SCORE_FIELDS, *TIMING_FIELDS]
            rows = [{k: getattr(tr, k) for k in fields} for tr in report.trials]
            prov = _provenance(report.config_echo)
            prov["aggregates"] = json.dumps(agg, sort_keys=True, separators=(",", ":"))
            _write_csv(args.out, fields, rows, prov)
        print(f"report: {args.out}")
    return 0


def _int_list(text: str) -> list[int]:
    return [int(part) for part in text.split(",") if part.strip()]


def cmd_bench(args) -> int:
    cfg: dict = {}
    if args.config:
        doc = _load_json(args.config)
        if not isinstance(doc, dict):
            raise FormatError(f"{args.config} must hold a JSON object")
        cfg = doc
    if args.n:
        cfg["n_list"] = _int_list(args.n)
    if args.t:
        cfg["t_list"] = _int_list(args.t)
    if args.repeats is not None:
        cfg["repeats"] = args.repeats
    if args.seed is not None:
        cfg["seed"] = args.seed

    table = run_timing_bench(cfg)
    for row in table["rows"]:
        print(f"n={row['n']:>5} t={row['t']:>5}  retrain {row['t_retrain_s'] * 1e3:8.3f} ms  "
              f"online {row['t_online_correct_s'] * 1e6:8.2f} us  "
              f"speedup {row['speedup_online']:.1f}x")
    if table["slopes"]:
        s = table["slopes"]
        print(f"log-log slopes vs n (t={s['t_fixed']}): retrain {s['retrain_vs_n']:.2f}, "
              f"online correct {s['online_correct_vs_n']:.2f}, "
              f"full correct {s['full_correct_vs_n']:.2f}")

    if args.out:
        if args.format == "json":
            _write_json(args.out, table)
        else:
            fields = list(table["rows"][0].keys())
            prov = _provenance(table["config"])
            prov["slopes"] = json.dumps(table["slopes"], sort_keys=True,
                                        separators=(",", ":"))
            _write_csv(args.out, fields, table["rows"], prov)
        print(f"table: {args.out}")
    return 0


def _audit_instance(rng: np.random.Generator, n: int, p: int, t: int,
                    params: KernelParams):
    """Random well-separated instance so finite differences stay stable."""
    span = 2.0 * params.length_scale * max(1.0, n ** (1.0 / p))
    for _ in range(100):
        X = rng.uniform(0.0, span, (n, p))
        if n == 1:
            break
        diff = X[:, None, :] - X[None, :, :]
        dist = np.sqrt((diff ** 2).sum(-1))
        np.fill_diagonal(dist, np.inf)
        if dist.min() > 0.05 * params.length_scale:
            break
    y = rng.normal(size=n)
    queries = rng.uniform(0.0, span, (t, p))
    return X, y, queries


def cmd_audit(args) -> int:
    params = KernelParams(amplitude=1.0, length_scale=0.5, noise_std=0.05)
    rng = np.random.default_rng(args.seed)
    X, y, queries = _audit_instance(rng, args.n, args.p, args.t, params)
    gp = train(params, X, y)
    mode = (args.mode or "paper-diag").replace("-", "_")
    bundle = build_bundle(gp, queries,
                          include_full_mean_hessian=(mode == "full_hessian"))

    checks = [
        ("mean_jacobian", bundle.mean.jacobian,
         fd_mean_jacobian(params, X, y, queries), AUDIT_TOL_JACOBIAN),
        ("cov_jacobian", bundle.cov.jacobian,
         fd_cov_jacobian(params, X, y, queries), AUDIT_TOL_JACOBIAN),
        ("mean_hessian_diag", bundle.mean.hessian_diag,
         fd_mean_hessian_diag(params, X, y, queries), AUDIT_TOL_HESSIAN),
        ("cov_hessian_diag", bundle.cov.hessian_diag,
         fd_cov_hessian_diag(params, X, y, queries), AUDIT_TOL_HESSIAN),
    ]
    if mode == "full_hessian":
        checks.append(("mean_hessian_full", bundle.mean.hessian_full,
                       fd_mean_hessian_full(params, X, y, queries),
                       AUDIT_TOL_HESSIAN))

    results = []
    for name, analytic, reference, tol in checks:
        err = relative_error(analytic, reference)
        ok = err < tol
        results.append({"family": name, "max_rel_err": err, "tol": tol,
                        "pass": bool(ok)})
        print(f"{name}: max_rel_err {err:.3e}  tol {tol:.0e}  "
              f"{'PASS' if ok else 'FAIL'}")
    all_ok = all(r["pass"] for r in results)
    print("AUDIT", "PASS" if all_ok else "FAIL")

    if args.out:
        _write_json(args.out, {
            "schema_version": 1, "software_version": __version__,
            "config": {"n": args.n, "p": args.p, "t": args.t, "seed": args.seed,
                       "mode": mode},
            "results": results, "pass": all_ok,
        })
    return 0 if all_ok else 5


def cmd_report(args) -> int:
    labels = args.series.split(",") if args.series else None
    if labels is not None and len(labels) != len(args.predictions):
        raise ValueError(
            f"{len(labels)} series labels for {len(args.predictions)} prediction files")
    rows = []
    sources = []
    for idx, path in enumerate(args.predictions):
        doc = _load_json(path)
        try:
            mean = np.asarray(doc["prediction"]["mean"], dtype=float)
            cov = np.asarray(doc["prediction"]["covariance"], dtype=float)
            queries = np.asarray(doc["queries"], dtype=float)
        except (KeyError, TypeError) as exc:
            raise FormatError(f"{path} is not a prediction file: {exc}") from exc
        sd = np.sqrt(np.maximum(np.diag(cov), 0.0))
        label = labels[idx] if labels else os.path.splitext(os.path.basename(path))[0]
        x = queries[:, 0] if queries.ndim == 2 and queries.shape[1] == 1 \
            else np.arange(mean.shape[0], dtype=float)
        for e in np.argsort(x, kind="stable"):
            rows.append({"x": float(x[e]), "mean": float(mean[e]),
                         "lower": float(mean[e] - 1.96 * sd[e]),
                         "upper": float(mean[e] + 1.96 * sd[e]),
                         "series": label})
        sources.append({"path": path, "series": label,
                        "software_version": doc.get("software_version")})

    _write_csv(args.out, ["x", "mean", "lower", "upper", "series"], rows,
               _provenance({"sources": sources}))
    print(f"plot data: {args.out}  rows: {len(rows)}")
    return 0


# ---------------------------------------------------------------------------
# parser / dispatch

def _add_common(sub, *, preset=False, trials=False, mode=False, seed=False,
                fmt=False, config=False, out_required=None):
    if config:
        sub.add_argument("--config", metavar="PATH", help="JSON config document")
    if preset:
        sub.add_argument("--preset", choices=sorted(PRESETS),
                         help="named base configuration")
    if seed:
        sub.add_argument("--seed", type=int, help="base RNG seed (non-negative)")
    if mode:
        sub.add_argument("--mode", choices=["paper-diag", "full-hessian"],
                         help="correction mode")
    if trials:
        sub.add_argument("--trials", type=int, help="number of Monte Carlo trials")
    if out_required is not None:
        sub.add_argument("--out", metavar="PATH", required=out_required,
                         help="output file path")
    if fmt:
        sub.add_argument("--format", choices=["csv", "json"], default="json",
                         help="output file format (default json)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gpdelta",
        description="GP regression with retroactive correction of training-input errors")
    parser.add_argument("--version", action="version", version=f"gpdelta {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    sp = subs.add_parser("offline", help="build and save a derivative bundle")
    _add_common(sp, config=True, preset=True, seed=True, mode=True, out_required=True)
    sp.add_argument("--pred-out", metavar="PATH",
                    help="also write the uncorrected prediction as JSON")
    sp.set_defaults(func=cmd_offline)

    sp = subs.add_parser("correct", help="apply corrections from a saved bundle")
    _add_common(sp, config=True, preset=True, seed=True, mode=True, out_required=True)
    sp.add_argument("--bundle", metavar="PATH", required=True,
                    help="derivative bundle written by 'offline'")
    sp.add_argument("--deltas", metavar="PATH",
                    help="JSON file with per-point input errors")
    sp.set_defaults(func=cmd_correct)

    sp = subs.add_parser("simulate", help="run a Monte Carlo replication study")
    _add_common(sp, config=True, preset=True, seed=True, mode=True, trials=True,
                fmt=True, out_required=False)
    sp.set_defaults(func=cmd_simulate)

    sp = subs.add_parser("bench", help="time retraining against online correction")
    _add_common(sp, config=True, seed=True, fmt=True, out_required=False)
    sp.add_argument("--n", metavar="LIST", help="training sizes, e.g. 100,200,400")
    sp.add_argument("--t", metavar="LIST", help="query counts, e.g. 100")
    sp.add_argument("--repeats", type=int, help="timing repetitions per cell")
    sp.set_defaults(func=cmd_bench)

    sp = subs.add_parser("audit", help="finite-difference check of the tensors")
    sp.add_argument("--n", type=int, default=11, help="training points (default 11)")
    sp.add_argument("--p", type=int, default=1, help="input dimension (default 1)")
    sp.add_argument("--t", type=int, default=5, help="query points (default 5)")
    sp.add_argument("--seed", type=int, default=1, help="RNG seed (default 1)")
    sp.add_argument("--mode", choices=["paper-diag", "full-hessian"],
                    help="also audit the full mean Hessian")
    sp.add_argument("--out", metavar="PATH", help="optional JSON report path")
    sp.set_defaults(func=cmd_audit)

    sp = subs.add_parser("report", help="prediction files to tidy plot CSV")
    sp.add_argument("predictions", nargs="+", metavar="PREDICTION",
                    help="prediction JSON files (from offline/correct)")
    sp.add_argument("--series", metavar="LABELS",
                    help="comma-separated series labels (default: file names)")
    sp.add_argument("--out", metavar="PATH", required=True, help="CSV output path")
    sp.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except StaleBundle as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except IoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except (NotPositiveDefinite, FloatingPointError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return 5
    except (GpDeltaError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
