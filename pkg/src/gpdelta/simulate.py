"""Monte Carlo studies of the input-error correction on synthetic fields.

Each trial draws per-point location errors, measures a scalar field at
the displaced (actual) locations, and trains two reference models:

* corrupted GP -- trained on the planned locations with those
  measurements (the model an agent would build unknowingly);
* perfect GP   -- trained on the actual locations with the same
  measurements (the unattainable target).

The correction is applied to the corrupted model's predictions using a
bundle built at the planned locations and the known per-point steps
(actual - planned, optionally scaled by a knowledge factor). Errors of
the corrupted and corrected predictions are scored against the perfect
model over a query set; improvement_pct = 100 * (MAE_corrupted -
MAE_corrected) / MAE_corrupted.

Trial k draws all randomness from SeedSequence(base_seed, spawn_key=(k,)),
so any trial is reproducible in isolation and results do not depend on
execution order or thread count (GPDELTA_THREADS caps worker threads).
Wall-clock timings are inherently non-deterministic and are kept in a
separate report section so the rest of the report is byte-reproducible.
"""

from __future__ import annotations

import copy
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .correction import OnlineCorrector, correct
from .derivatives import build_bundle
from .errors import GpDeltaError, ResourceLimit
from .gp import as_points, train
from .kernel import KernelParams
from .version import __version__

__all__ = [
    "FieldSpec", "PerturbationModel", "TrialResult", "ExperimentReport",
    "run_1d_replication", "run_2d_replication", "run_timing_bench",
    "PRESETS", "preset_config", "normalize_config",
]

FIELD_KINDS = ("sine_1d", "sine_cosine_2d", "user_grid")
PERTURBATION_KINDS = ("uniform_interval", "gaussian", "constant_offset", "zero")

BENCH_MAX_N = 4000
BENCH_MAX_T = 2000


# ---------------------------------------------------------------------------
# scalar fields

@dataclass
class FieldSpec:
    """Scalar field h: R^p -> R sampled as ground truth.

    kinds: sine_1d       h(x) = sin(2*pi*x) on [0, 1]
           sine_cosine_2d h(x, y) = sin(2*pi*x) * cos(2*pi*y) on [0, 1]^2
           user_grid     linear interpolation of (points, values) samples
    """

    kind: str
    points: np.ndarray | None = None
    values: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in FIELD_KINDS:
            raise ValueError(f"field kind must be one of {FIELD_KINDS}, got {self.kind!r}")
        if self.kind == "user_grid":
            if self.points is None or self.values is None:
                raise ValueError("user_grid field needs sample points and values")
            self.points = as_points(self.points)
            self.values = np.asarray(self.values, dtype=float).ravel()
            if self.values.shape[0] != self.points.shape[0]:
                raise ValueError("user_grid points and values disagree in length")

    @property
    def dim(self) -> int:
        if self.kind == "sine_1d":
            return 1
        if self.kind == "sine_cosine_2d":
            return 2
        return self.points.shape[1]

    def evaluate(self, X) -> np.ndarray:
        X = as_points(X)
        if X.shape[1] != self.dim:
            raise ValueError(f"field expects {self.dim}-d inputs, got {X.shape[1]}-d")
        if self.kind == "sine_1d":
            return np.sin(2.0 * np.pi * X[:, 0])
        if self.kind == "sine_cosine_2d":
            return np.sin(2.0 * np.pi * X[:, 0]) * np.cos(2.0 * np.pi * X[:, 1])
        if self.dim == 1:
            order = np.argsort(self.points[:, 0])
            return np.interp(X[:, 0], self.points[order, 0], self.values[order])
        from scipy.interpolate import griddata
        out = griddata(self.points, self.values, X, method="linear")
        hole = np.isnan(out)
        if hole.any():
            out[hole] = griddata(self.points, self.values, X[hole], method="nearest")
        return out


# ---------------------------------------------------------------------------
# location-error models

@dataclass
class PerturbationModel:
    """Per-point location error draw; actual location = planned - draw.

    kinds: uniform_interval  entries ~ U[low, high]
           gaussian          entries ~ N(0, std^2)
           constant_offset   fixed vector, identical for every point
           zero              no error (convenience alias)

    affected_coords lists zero-based coordinates that receive the error;
    None means all. For constant_offset the offset vector length must
    match the number of affected coordinates.
    """

    kind: str
    low: float = 0.0
    high: float = 0.0
    std: float = 0.0
    offset: np.ndarray | None = None
    affected_coords: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.kind not in PERTURBATION_KINDS:
            raise ValueError(
                f"perturbation kind must be one of {PERTURBATION_KINDS}, got {self.kind!r}")
        if self.kind == "uniform_interval" and not self.low <= self.high:
            raise ValueError(f"interval bounds out of order: [{self.low}, {self.high}]")
        if self.kind == "gaussian" and self.std < 0:
            raise ValueError(f"std must be non-negative, got {self.std}")
        if self.offset is not None:
            self.offset = np.asarray(self.offset, dtype=float).ravel()
        if self.affected_coords is not None:
            self.affected_coords = tuple(int(c) for c in self.affected_coords)

    def _coords(self, p: int) -> tuple[int, ...]:
        coords = self.affected_coords
        if coords is None:
            return tuple(range(p))
        if any(not 0 <= c < p for c in coords):
            raise ValueError(f"affected_coords {coords} out of range for p={p}")
        return coords

    def sample(self, rng: np.random.Generator, n: int, p: int) -> np.ndarray:
        """Draw one (n, p) error matrix; unaffected coordinates stay zero."""
        coords = self._coords(p)
        draw = np.zeros((n, p))
        if self.kind == "zero" or not coords:
            return draw
        if self.kind == "uniform_interval":
            draw[:, coords] = rng.uniform(self.low, self.high, (n, len(coords)))
        elif self.kind == "gaussian":
            draw[:, coords] = rng.normal(0.0, self.std, (n, len(coords)))
        else:
            if self.offset is None or self.offset.shape[0] != len(coords):
                raise ValueError(
                    f"constant_offset needs an offset of length {len(coords)}")
            draw[:, coords] = self.offset
        return draw


# ---------------------------------------------------------------------------
# per-trial record and report

@dataclass
class TrialResult:
    """Error and timing scores of one Monte Carlo trial.

    improvement_pct = 100*(mae_corrupted - mae_corrected)/mae_corrupted
    when mae_corrupted > 0, else 0. seed is the trial's spawn key k;
    reproduce with SeedSequence(base_seed, spawn_key=(seed,)).
    """

    mae_corrupted: float
    mae_corrected: float
    cov_err_corrupted: float
    cov_err_corrected: float
    improvement_pct: float
    t_retrain_s: float
    t_correct_s: float
    seed: int


TIMING_FIELDS = ("t_retrain_s", "t_correct_s")
SCORE_FIELDS = ("mae_corrupted", "mae_corrected", "cov_err_corrupted",
                "cov_err_corrected", "improvement_pct")


@dataclass
class ExperimentReport:
    """Full study record: trials, aggregates, config echo, and version.

    to_dict() separates wall-clock data under a "timings" key; the rest
    of the dictionary is byte-reproducible for a fixed config and seed.
    """

    trials: list[TrialResult]
    aggregates: dict
    timing_aggregates: dict
    skipped: list[dict]
    config_echo: dict
    software_version: str = __version__

    def to_dict(self) -> dict:
        rows = []
        timing_rows = []
        for tr in self.trials:
            d = asdict(tr)
            timing_rows.append({"seed": tr.seed,
                                **{k: d.pop(k) for k in TIMING_FIELDS}})
            rows.append(d)
        return {
            "schema_version": 1,
            "software_version": self.software_version,
            "config": self.config_echo,
            "n_trials": len(self.trials),
            "n_skipped": len(self.skipped),
            "skipped_trials": self.skipped,
            "trials": rows,
            "aggregates": self.aggregates,
            "timings": {
                "note": "wall-clock seconds; non-deterministic across runs",
                "per_trial": timing_rows,
                "aggregates": self.timing_aggregates,
            },
        }

    def deterministic_dict(self) -> dict:
        d = self.to_dict()
        d.pop("timings")
        return d


def _column_stats(values: np.ndarray) -> dict:
    return {
        "mean": float(np.mean(values)),
        "median": float(np.median(values)),
        "p05": float(np.quantile(values, 0.05)),
        "p95": float(np.quantile(values, 0.95)),
    }


def _aggregate(trials: list[TrialResult]) -> tuple[dict, dict]:
    if not trials:
        return {"n_trials": 0}, {}
    agg = {"n_trials": len(trials)}
    for name in SCORE_FIELDS:
        col = np.array([getattr(tr, name) for tr in trials])
        agg[name] = _column_stats(col)
    imp = np.array([tr.improvement_pct for tr in trials])
    agg["frac_improved"] = float(np.mean(imp > 0.0))
    timing = {}
    for name in TIMING_FIELDS:
        col = np.array([getattr(tr, name) for tr in trials])
        timing[name] = _column_stats(col)
    return agg, timing


# ---------------------------------------------------------------------------
# configuration

PRESETS: dict[str, dict] = {
    # 1D study: n = 11 planned grid on [0, 1], per-point errors ~ U[0, 0.03]
    # subtracted from the planned locations, noisy measurements, 100
    # random uniform queries per trial, perfectly known steps.
    "paper-1d": {
        "experiment": "1d",
        "field": {"kind": "sine_1d"},
        "kernel": {"amplitude": 0.1, "length_scale": 0.2,
                   "noise_std": 0.01, "jitter": 1e-10},
        "planned": {"kind": "grid", "low": 0.0, "high": 1.0, "num": 11},
        "queries": {"kind": "uniform", "low": 0.0, "high": 1.0, "num": 100},
        "perturbation": {"kind": "uniform_interval", "low": 0.0, "high": 0.03},
        "measurement_noise_std": 0.01,
        "knowledge": 1.0,
        "trials": 1000,
        "seed": 0,
        "mode": "paper_diag",
    },
    # Same study with a unit-amplitude kernel for sensitivity checks.
    "paper-1d-amp1": {},
    # 2D study: 11x11 planned grid on [0, 1]^2, constant offset 0.1 on the
    # x-coordinate, fixed 10x10 query grid, noise redrawn per trial.
    "paper-2d": {
        "experiment": "2d",
        "field": {"kind": "sine_cosine_2d"},
        "kernel": {"amplitude": 0.1, "length_scale": 0.2,
                   "noise_std": 0.01, "jitter": 1e-10},
        "planned": {"kind": "grid", "low": [0.0, 0.0], "high": [1.0, 1.0],
                    "num": [11, 11]},
        "queries": {"kind": "grid", "low": [0.0, 0.0], "high": [1.0, 1.0],
                    "num": [10, 10]},
        "perturbation": {"kind": "constant_offset", "offset": [0.1],
                         "affected_coords": [0]},
        "measurement_noise_std": 0.01,
        "knowledge": 1.0,
        "trials": 1000,
        "seed": 0,
        "mode": "paper_diag",
    },
}
PRESETS["paper-1d-amp1"] = copy.deepcopy(PRESETS["paper-1d"])
PRESETS["paper-1d-amp1"]["kernel"]["amplitude"] = 1.0


def preset_config(name: str) -> dict:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return copy.deepcopy(PRESETS[name])


def normalize_config(config: dict) -> dict:
    """Fill defaults and validate an experiment config; returns a new dict."""
    cfg = copy.deepcopy(PRESETS["paper-1d"])
    cfg.update(copy.deepcopy(config))
    if cfg["experiment"] not in ("1d", "2d"):
        raise ValueError(f"experiment must be '1d' or '2d', got {cfg['experiment']!r}")
    if cfg["mode"] not in ("paper_diag", "full_hessian"):
        raise ValueError(f"mode must be paper_diag or full_hessian, got {cfg['mode']!r}")
    trials = int(cfg["trials"])
    if trials <= 0:
        raise ValueError(f"trials must be positive, got {trials}")
    cfg["trials"] = trials
    cfg["seed"] = int(cfg["seed"])
    if cfg["seed"] < 0:
        raise ValueError("seed must be a non-negative integer")
    if not 0.0 <= float(cfg["knowledge"]) <= 1.0:
        raise ValueError(f"knowledge factor must lie in [0, 1], got {cfg['knowledge']}")
    cfg["knowledge"] = float(cfg["knowledge"])
    if float(cfg["measurement_noise_std"]) < 0:
        raise ValueError("measurement_noise_std must be non-negative")
    cfg["measurement_noise_std"] = float(cfg["measurement_noise_std"])
    # construct domain objects once to surface validation errors early
    _field_from_config(cfg["field"])
    _model_from_config(cfg["perturbation"])
    KernelParams(**cfg["kernel"])
    _resolve_planned(cfg["planned"])
    return cfg


def _field_from_config(spec: dict) -> FieldSpec:
    spec = dict(spec)
    return FieldSpec(kind=spec.pop("kind"), **spec)


def _model_from_config(spec: dict) -> PerturbationModel:
    return PerturbationModel(**spec)


def _grid_points(low, high, num) -> np.ndarray:
    low = np.atleast_1d(np.asarray(low, dtype=float))
    high = np.atleast_1d(np.asarray(high, dtype=float))
    num = np.atleast_1d(np.asarray(num, dtype=int))
    if not (low.shape == high.shape == num.shape):
        raise ValueError("grid low/high/num must have matching lengths")
    axes = [np.linspace(lo, hi, k) for lo, hi, k in zip(low, high, num)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def _resolve_planned(spec: dict) -> np.ndarray:
    if spec["kind"] == "grid":
        return _grid_points(spec["low"], spec["high"], spec["num"])
    if spec["kind"] == "explicit":
        return as_points(spec["points"])
    raise ValueError(f"planned locations kind must be grid|explicit, got {spec['kind']!r}")


def _resolve_queries(spec: dict, rng: np.random.Generator, p: int) -> np.ndarray:
    if spec["kind"] == "grid":
        return _grid_points(spec["low"], spec["high"], spec["num"])
    if spec["kind"] == "explicit":
        return as_points(spec["points"])
    if spec["kind"] == "uniform":
        low = np.broadcast_to(np.atleast_1d(np.asarray(spec["low"], dtype=float)), (p,))
        high = np.broadcast_to(np.atleast_1d(np.asarray(spec["high"], dtype=float)), (p,))
        return rng.uniform(low, high, (int(spec["num"]), p))
    raise ValueError(f"query kind must be grid|explicit|uniform, got {spec['kind']!r}")


# ---------------------------------------------------------------------------
# replication driver

def _run_trial(k: int, cfg: dict, planned: np.ndarray, fieldspec: FieldSpec,
               model: PerturbationModel, params: KernelParams) -> TrialResult:
    """One Monte Carlo trial; RNG consumption order is fixed as
    (location errors, measurement noise, queries) and must not change,
    or reports stop being reproducible."""
    rng = np.random.default_rng(np.random.SeedSequence(cfg["seed"], spawn_key=(k,)))
    n, p = planned.shape

    draw = model.sample(rng, n, p)
    actual = planned - draw
    measurements = fieldspec.evaluate(actual)
    if cfg["measurement_noise_std"] > 0:
        measurements = measurements + rng.normal(0.0, cfg["measurement_noise_std"], n)
    queries = _resolve_queries(cfg["queries"], rng, p)

    corrupted = train(params, planned, measurements)
    pred_corrupted = corrupted.predict_full(queries)

    t0 = time.perf_counter()
    perfect = train(params, actual, measurements)
    pred_perfect = perfect.predict_full(queries)
    t_retrain = time.perf_counter() - t0

    bundle = build_bundle(corrupted, queries,
                          include_full_mean_hessian=(cfg["mode"] == "full_hessian"))
    step = cfg["knowledge"] * (actual - planned)
    t0 = time.perf_counter()
    corrected = correct(pred_corrupted, bundle, step, mode=cfg["mode"])
    t_correct = time.perf_counter() - t0

    mae_corrupted = float(np.mean(np.abs(pred_corrupted.mean - pred_perfect.mean)))
    mae_corrected = float(np.mean(np.abs(corrected.mean - pred_perfect.mean)))
    cov_err_corrupted = float(np.max(np.abs(pred_corrupted.covariance
                                            - pred_perfect.covariance)))
    cov_err_corrected = float(np.max(np.abs(corrected.covariance
                                            - pred_perfect.covariance)))
    if mae_corrupted > 0.0:
        improvement = 100.0 * (mae_corrupted - mae_corrected) / mae_corrupted
    else:
        improvement = 0.0
    return TrialResult(mae_corrupted, mae_corrected, cov_err_corrupted,
                       cov_err_corrected, improvement, t_retrain, t_correct, k)


def _thread_count() -> int:
    raw = os.environ.get("GPDELTA_THREADS", "1")
    try:
        threads = int(raw)
    except ValueError:
        raise ValueError(f"GPDELTA_THREADS must be an integer, got {raw!r}") from None
    return max(1, threads)


def _run_replication(config: dict, expected_dim: int) -> ExperimentReport:
    cfg = normalize_config(config)
    planned = _resolve_planned(cfg["planned"])
    fieldspec = _field_from_config(cfg["field"])
    model = _model_from_config(cfg["perturbation"])
    params = KernelParams(**cfg["kernel"])
    if planned.shape[1] != expected_dim or fieldspec.dim != expected_dim:
        raise ValueError(
            f"configured locations/field are {planned.shape[1]}-d/{fieldspec.dim}-d, "
            f"expected {expected_dim}-d")

    def job(k: int):
        try:
            return k, _run_trial(k, cfg, planned, fieldspec, model, params), None
        except (GpDeltaError, FloatingPointError) as exc:
            return k, None, f"{type(exc).__name__}: {exc}"

    threads = _thread_count()
    indices = range(cfg["trials"])
    if threads == 1:
        outcomes = [job(k) for k in indices]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(job, indices))

    outcomes.sort(key=lambda item: item[0])
    trials = [tr for _, tr, err in outcomes if err is None]
    skipped = [{"trial": k, "error": err} for k, _, err in outcomes if err is not None]
    aggregates, timing_aggregates = _aggregate(trials)
    return ExperimentReport(trials=trials, aggregates=aggregates,
                            timing_aggregates=timing_aggregates, skipped=skipped,
                            config_echo=cfg)


def run_1d_replication(config: dict) -> ExperimentReport:
    """Monte Carlo study on the 1-d sine field (see module docstring)."""
    return _run_replication(config, expected_dim=1)


def run_2d_replication(config: dict) -> ExperimentReport:
    """Monte Carlo study on the 2-d sine*cosine field."""
    return _run_replication(config, expected_dim=2)


# ---------------------------------------------------------------------------
# timing bench

def _median_time(fn, repeats: int) -> float:
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return float(np.median(samples))


def _median_time_batched(fn, repeats: int, inner: int) -> float:
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        for _ in range(inner):
            fn()
        samples.append((time.perf_counter() - t0) / inner)
    return float(np.median(samples))


def _loglog_slope(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2 or (y <= 0).any():
        return float("nan")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def run_timing_bench(config: dict) -> dict:
    """Wall-clock comparison of retraining against the online correction.

    For each (n, t): median time of (a) full retrain + predict at the
    displaced inputs, (b) one online corrected mean/variance update from
    a prebuilt bundle, and (c) a full corrected-covariance update. The
    offline bundle build is reported separately -- it is a precomputation,
    not part of the online cost. Log-log slopes of each timing against n
    summarize the growth rates. All numbers are hardware-dependent.
    """
    cfg = {"n_list": [100, 200, 400], "t_list": [100], "repeats": 9,
           "seed": 0, "kernel": {"amplitude": 1.0, "length_scale": 0.1,
                                 "noise_std": 0.1, "jitter": 1e-10}}
    cfg.update(copy.deepcopy(config or {}))
    n_list = [int(n) for n in cfg["n_list"]]
    t_list = [int(t) for t in cfg["t_list"]]
    repeats = int(cfg["repeats"])
    if min(n_list) < 1 or min(t_list) < 1 or repeats < 1:
        raise ValueError("n_list, t_list and repeats must be positive")
    if max(n_list) > BENCH_MAX_N or max(t_list) > BENCH_MAX_T:
        raise ResourceLimit(
            f"bench sizes capped at n<={BENCH_MAX_N}, t<={BENCH_MAX_T}")
    params = KernelParams(**cfg["kernel"])
    rng = np.random.default_rng(cfg["seed"])

    rows = []
    for n in n_list:
        X = np.linspace(0.0, 1.0, n)[:, None]
        y = np.sin(2.0 * np.pi * X[:, 0]) + rng.normal(0.0, params.noise_std, n)
        gp = train(params, X, y)
        deltas = rng.uniform(-0.2, 0.2, (n, 1)) / n
        for t in t_list:
            queries = rng.uniform(0.0, 1.0, (t, 1))
            pred = gp.predict_full(queries)
            t_build = _median_time(lambda: build_bundle(gp, queries),
                                   max(1, repeats // 3))
            bundle = build_bundle(gp, queries)
            online = OnlineCorrector(pred, bundle)
            X_actual = X + deltas

            def retrain():
                train(params, X_actual, y).predict_full(queries)

            inner = max(1, int(math.ceil(2e-3 / max(online_probe(online, deltas), 1e-7))))
            t_retrain = _median_time(retrain, repeats)
            t_online = _median_time_batched(lambda: online.apply(deltas), repeats, inner)
            t_full = _median_time(lambda: correct(pred, bundle, deltas), repeats)
            rows.append({
                "n": n, "t": t,
                "t_retrain_s": t_retrain,
                "t_online_correct_s": t_online,
                "t_full_correct_s": t_full,
                "t_offline_build_s": t_build,
                "speedup_online": t_retrain / t_online,
                "speedup_full_cov": t_retrain / t_full,
            })

    slopes = {}
    if len(n_list) >= 2 and t_list:
        t0 = t_list[0]
        sub = [r for r in rows if r["t"] == t0]
        ns = [r["n"] for r in sub]
        slopes = {
            "t_fixed": t0,
            "retrain_vs_n": _loglog_slope(ns, [r["t_retrain_s"] for r in sub]),
            "online_correct_vs_n": _loglog_slope(ns, [r["t_online_correct_s"] for r in sub]),
            "full_correct_vs_n": _loglog_slope(ns, [r["t_full_correct_s"] for r in sub]),
        }
    return {
        "schema_version": 1,
        "software_version": __version__,
        "config": cfg,
        "rows": rows,
        "slopes": slopes,
        "notes": [
            "online correction updates the corrected mean and per-query "
            "variance from a prebuilt bundle; the offline build is excluded.",
            "timings are medians of wall-clock seconds on the current host.",
        ],
    }


def online_probe(online: OnlineCorrector, deltas) -> float:
    """Rough single-shot estimate of one online apply, for batching."""
    t0 = time.perf_counter()
    online.apply(deltas)
    return time.perf_counter() - t0
