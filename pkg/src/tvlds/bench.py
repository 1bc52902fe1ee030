"""Monte Carlo harness: paired trials over a grid of trajectory lengths.

For every ``(T, trial)`` one trajectory is simulated with seed
``base_seed + trial`` and handed to every requested estimator.  Errors are
aggregated per ``(estimator, T)`` into medians and 90th percentiles, and the
log-log slope of median error against ``T`` is fitted per estimator.

Config schema (JSON object, unknown keys rejected)::

    {
      "params": {"A": [[...]], "sigma_w": [[...]], "sigma_eps": 0.5},
      "t_grid": [4096, 8192, ...],          # strictly ascending, required
      "trials": 32,
      "base_seed": 0,
      "estimators": ["cm"],                 # cm, cm_intercept, em, full_state
      "delta": 0.1,
      "gamma": null,                        # set to attach theoretical bounds
      "c_convention": 1.0,
      "output_dir": "bench_out",
      "record_timing": false,               # wall_time_ms is blank when false
      "em_max_iters": 500,
      "em_tol": 1e-6
    }
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .baseline import ols_full_state
from .cm import estimate_cm
from .em import DEFAULT_MAX_ITERS, DEFAULT_TOL, em_fit
from .errors import DomainError, TvldsError, ValidationError
from .model import (
    SystemParams,
    lyapunov_solve,
    spectral_radius,
    theoretical_bound,
    validate_params,
)
from .simulate import simulate_trajectory

ESTIMATORS = ("cm", "cm_intercept", "em", "full_state")
TRIALS_COLUMNS = (
    "estimator", "T", "trial", "seed", "traj_hash", "err_A", "err_sigma",
    "err_cross", "wall_time_ms", "status",
)
SUMMARY_COLUMNS = ("estimator", "T", "n_ok", "median_err_A", "q90_err_A", "bound_A", "coverage")
BOUNDED_ESTIMATORS = ("cm",)


class ConfigError(ValidationError):
    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    params: SystemParams
    t_grid: tuple
    trials: int = 32
    base_seed: int = 0
    estimators: tuple = ("cm",)
    delta: float = 0.1
    gamma: Optional[float] = None
    c_convention: float = 1.0
    output_dir: str = "bench_out"
    record_timing: bool = False
    em_max_iters: int = DEFAULT_MAX_ITERS
    em_tol: float = DEFAULT_TOL

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "t_grid": list(self.t_grid),
            "trials": self.trials,
            "base_seed": self.base_seed,
            "estimators": list(self.estimators),
            "delta": self.delta,
            "gamma": self.gamma,
            "c_convention": self.c_convention,
            "output_dir": self.output_dir,
            "record_timing": self.record_timing,
            "em_max_iters": self.em_max_iters,
            "em_tol": self.em_tol,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def __eq__(self, other):
        if not isinstance(other, ExperimentConfig):
            return NotImplemented
        return self.to_dict() == other.to_dict()


@dataclass
class TrialRecord:
    estimator: str
    T: int
    trial: int
    seed: int
    traj_hash: str
    err_A: Optional[float] = None
    err_sigma: Optional[float] = None
    err_cross: Optional[float] = None
    wall_time_ms: Optional[float] = None
    status: str = "ok"


@dataclass
class RateSummary:
    estimator: str
    slope: float
    intercept: float
    per_T_median: dict
    per_T_quantile_90: dict
    bound_per_T: Optional[dict] = None
    n_ok: dict = field(default_factory=dict)
    coverage: Optional[dict] = None

    def to_dict(self) -> dict:
        keyed = lambda m: None if m is None else {str(k): v for k, v in m.items()}
        return {
            "estimator": self.estimator,
            "slope": None if math.isnan(self.slope) else self.slope,
            "intercept": None if math.isnan(self.intercept) else self.intercept,
            "per_T_median": keyed(self.per_T_median),
            "per_T_quantile_90": keyed(self.per_T_quantile_90),
            "bound_per_T": keyed(self.bound_per_T),
            "n_ok": keyed(self.n_ok),
            "coverage": keyed(self.coverage),
        }


# --------------------------------------------------------------------------
# config parsing

_DEFAULTS = {
    "trials": 32,
    "base_seed": 0,
    "estimators": ["cm"],
    "delta": 0.1,
    "gamma": None,
    "c_convention": 1.0,
    "output_dir": "bench_out",
    "record_timing": False,
    "em_max_iters": DEFAULT_MAX_ITERS,
    "em_tol": DEFAULT_TOL,
}
_REQUIRED = ("params", "t_grid")


def _matrix(value, path):
    try:
        M = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(path, "expected a numeric matrix")
    if M.ndim == 0:
        M = M.reshape(1, 1)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ConfigError(path, f"expected a square matrix, got shape {M.shape}")
    return M


def _number(value, path, kind=float):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    if kind is int:
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return int(value)
    if not math.isfinite(value):
        raise ConfigError(path, f"expected a finite number, got {value!r}")
    return float(value)


def parse_params(raw, path="params") -> SystemParams:
    if not isinstance(raw, dict):
        raise ConfigError(path, "expected an object")
    unknown = set(raw) - {"A", "sigma_w", "sigma_eps"}
    if unknown:
        raise ConfigError(path, f"unknown keys {sorted(unknown)}")
    for key in ("A", "sigma_w", "sigma_eps"):
        if key not in raw:
            raise ConfigError(f"{path}.{key}", "missing")
    A = _matrix(raw["A"], f"{path}.A")
    W = _matrix(raw["sigma_w"], f"{path}.sigma_w")
    if W.shape != A.shape:
        raise ConfigError(f"{path}.sigma_w", f"shape {W.shape} does not match A {A.shape}")
    params = SystemParams(A, W, _number(raw["sigma_eps"], f"{path}.sigma_eps"))
    try:
        params = validate_params(params)
    except ValidationError as exc:
        raise ConfigError(path, str(exc))
    rho = spectral_radius(params.A)
    if rho >= 1.0:
        raise ConfigError(f"{path}.A", f"spectral radius {rho:.6g} >= 1")
    return params


def parse_config(text) -> ExperimentConfig:
    """Parse and validate a JSON experiment config (bytes or str)."""
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("$", f"malformed JSON: {exc}")
    if not isinstance(raw, dict):
        raise ConfigError("$", "top level must be an object")
    unknown = set(raw) - set(_REQUIRED) - set(_DEFAULTS)
    if unknown:
        raise ConfigError("$", f"unknown keys {sorted(unknown)}")
    for key in _REQUIRED:
        if key not in raw:
            raise ConfigError(key, "missing")
    merged = {**_DEFAULTS, **raw}

    params = parse_params(merged["params"])

    grid = merged["t_grid"]
    if not isinstance(grid, list) or not grid:
        raise ConfigError("t_grid", "expected a nonempty list of positive integers")
    t_grid = tuple(_number(v, f"t_grid[{i}]", int) for i, v in enumerate(grid))
    if any(t < 1 for t in t_grid):
        raise ConfigError("t_grid", "entries must be positive")
    if any(b <= a for a, b in zip(t_grid, t_grid[1:])):
        raise ConfigError("t_grid", f"must be strictly ascending, got {list(t_grid)}")

    trials = _number(merged["trials"], "trials", int)
    if trials < 1:
        raise ConfigError("trials", f"must be >= 1, got {trials}")
    base_seed = _number(merged["base_seed"], "base_seed", int)
    if base_seed < 0:
        raise ConfigError("base_seed", "must be nonnegative")

    ests = merged["estimators"]
    if not isinstance(ests, list) or not ests:
        raise ConfigError("estimators", "expected a nonempty list")
    for i, e in enumerate(ests):
        if e not in ESTIMATORS:
            raise ConfigError(f"estimators[{i}]", f"unknown estimator {e!r}; choose from {ESTIMATORS}")
    if len(set(ests)) != len(ests):
        raise ConfigError("estimators", "duplicate entries")

    delta = _number(merged["delta"], "delta")
    if not 0.0 < delta < 1.0:
        raise ConfigError("delta", f"must lie in (0, 1), got {delta}")
    gamma = merged["gamma"]
    if gamma is not None:
        gamma = _number(gamma, "gamma")
        rho = spectral_radius(params.A)
        if not rho < gamma < 1.0:
            raise ConfigError("gamma", f"must satisfy rho(A)={rho:.6g} < gamma < 1, got {gamma}")
    c = _number(merged["c_convention"], "c_convention")
    if not c > 0:
        raise ConfigError("c_convention", "must be positive")
    out = merged["output_dir"]
    if not isinstance(out, str) or not out:
        raise ConfigError("output_dir", "expected a nonempty string")
    timing = merged["record_timing"]
    if not isinstance(timing, bool):
        raise ConfigError("record_timing", "expected a boolean")
    em_iters = _number(merged["em_max_iters"], "em_max_iters", int)
    if em_iters < 0:
        raise ConfigError("em_max_iters", "must be >= 0")
    em_tol = _number(merged["em_tol"], "em_tol")

    return ExperimentConfig(
        params=params, t_grid=t_grid, trials=trials, base_seed=base_seed,
        estimators=tuple(ests), delta=delta, gamma=gamma, c_convention=c,
        output_dir=out, record_timing=timing, em_max_iters=em_iters, em_tol=em_tol,
    )


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_bytes())


# --------------------------------------------------------------------------
# running

def _run_estimator(name, traj, cfg, truth):
    p = cfg.params
    if name == "cm":
        est = estimate_cm(traj, sigma_eps_known=p.sigma_eps)
    elif name == "cm_intercept":
        est = estimate_cm(traj, sigma_eps_known=None)
    elif name == "em":
        fit = em_fit(traj, p.sigma_w, p.sigma_eps, max_iters=cfg.em_max_iters, tol=cfg.em_tol)
        return float(np.linalg.norm(fit.a_hat - p.A)), None, None
    elif name == "full_state":
        a = ols_full_state(traj.betas)
        return float(np.linalg.norm(a - p.A)), None, None
    else:
        raise ValueError(name)
    sigma_inf, cross = truth
    return (
        float(np.linalg.norm(est.a_hat - p.A)),
        float(np.linalg.norm(est.sigma_hat - sigma_inf)),
        float(np.linalg.norm(est.m_hat - cross)),
    )


def run_cell(cfg: ExperimentConfig, T: int, trial: int) -> list:
    """All estimators on the shared trajectory for one ``(T, trial)``."""
    seed = cfg.base_seed + trial
    keep = "full_state" in cfg.estimators
    traj = simulate_trajectory(cfg.params, T, seed, keep_states=keep)
    sigma_inf = lyapunov_solve(cfg.params.A, cfg.params.sigma_w).sigma_inf
    truth = (sigma_inf, cfg.params.A @ sigma_inf)
    h = traj.digest()
    records = []
    for name in cfg.estimators:
        rec = TrialRecord(estimator=name, T=T, trial=trial, seed=seed, traj_hash=h)
        start = time.perf_counter()
        try:
            with np.errstate(divide="raise", over="raise", invalid="raise"):
                errs = _run_estimator(name, traj, cfg, truth)
            if not all(e is None or math.isfinite(e) for e in errs):
                rec.status = "error:NonFinite"
            else:
                rec.err_A, rec.err_sigma, rec.err_cross = errs
        except (TvldsError, np.linalg.LinAlgError, FloatingPointError) as exc:
            rec.status = f"error:{type(exc).__name__}"
        if cfg.record_timing:
            rec.wall_time_ms = (time.perf_counter() - start) * 1e3
        records.append(rec)
    return records


def _cell_task(args):
    cfg, T, trial = args
    return run_cell(cfg, T, trial)


def fit_rate_slope(per_T_median: dict):
    """Least-squares line through ``(log2 T, log2 median)``; returns ``(slope, intercept)``."""
    items = sorted(per_T_median.items())
    if len({T for T, _ in items}) < 2:
        raise DomainError("need at least two distinct T values to fit a slope")
    for T, m in items:
        if not (m > 0 and math.isfinite(m)) or T <= 0:
            raise DomainError(f"medians and T must be positive, got T={T}, median={m}")
    x = np.log2(np.array([T for T, _ in items], dtype=float))
    y = np.log2(np.array([m for _, m in items], dtype=float))
    xc = x - x.mean()
    slope = float((xc @ (y - y.mean())) / (xc @ xc))
    return slope, float(y.mean() - slope * x.mean())


def summarize(records, cfg: ExperimentConfig) -> list:
    bounds = None
    if cfg.gamma is not None:
        stat = lyapunov_solve(cfg.params.A, cfg.params.sigma_w)
        bounds = {
            T: theoretical_bound(cfg.params, stat, T, cfg.delta, cfg.gamma, cfg.c_convention).bound_A
            for T in cfg.t_grid
        }
    summaries = []
    for name in cfg.estimators:
        med, q90, n_ok, cov = {}, {}, {}, {}
        for T in cfg.t_grid:
            errs = np.array([r.err_A for r in records
                             if r.estimator == name and r.T == T and r.status == "ok"])
            n_ok[T] = int(errs.size)
            if errs.size == 0:
                continue
            med[T] = float(np.median(errs))
            q90[T] = float(np.quantile(errs, 0.9))
            if bounds is not None and name in BOUNDED_ESTIMATORS:
                cov[T] = float(np.mean(errs <= bounds[T]))
        try:
            slope, icpt = fit_rate_slope(med)
        except DomainError:
            slope, icpt = math.nan, math.nan
        attach = bounds is not None and name in BOUNDED_ESTIMATORS
        summaries.append(RateSummary(
            estimator=name, slope=slope, intercept=icpt, per_T_median=med,
            per_T_quantile_90=q90, bound_per_T=dict(bounds) if attach else None,
            n_ok=n_ok, coverage=cov if attach else None,
        ))
    return summaries


def run_experiment(cfg: ExperimentConfig, workers: int = 1):
    """Run every ``(T, trial)`` cell and aggregate.

    ``workers > 1`` distributes cells over a process pool; the result does not
    depend on scheduling because records are sorted by key before folding.
    """
    cells = [(cfg, T, i) for T in cfg.t_grid for i in range(cfg.trials)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_cell_task, cells, chunksize=max(1, len(cells) // (4 * workers))))
    else:
        chunks = [_cell_task(c) for c in cells]
    order = {name: k for k, name in enumerate(cfg.estimators)}
    records = sorted(
        (r for chunk in chunks for r in chunk),
        key=lambda r: (order[r.estimator], r.T, r.trial),
    )
    return records, summarize(records, cfg)


# --------------------------------------------------------------------------
# output

def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if math.isnan(v) else format(v, ".17g")
    return str(v)


def trials_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRIALS_COLUMNS)
    for r in records:
        w.writerow([_fmt(getattr(r, c)) for c in TRIALS_COLUMNS])
    return buf.getvalue()


def summary_csv(summaries, cfg: ExperimentConfig) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for s in summaries:
        for T in cfg.t_grid:
            w.writerow([
                s.estimator, T, s.n_ok.get(T, 0),
                _fmt(s.per_T_median.get(T)),
                _fmt(s.per_T_quantile_90.get(T)),
                _fmt(s.bound_per_T.get(T) if s.bound_per_T else None),
                _fmt(s.coverage.get(T) if s.coverage else None),
            ])
    return buf.getvalue()


def read_summary_medians(path) -> dict:
    """``{estimator: {T: median}}`` from a summary.csv, skipping degenerate cells."""
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["median_err_A"]:
                out.setdefault(row["estimator"], {})[int(row["T"])] = float(row["median_err_A"])
    return out


def _atomic_write(path: Path, text: str):
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_outputs(records, summaries, cfg: ExperimentConfig, output_dir=None) -> Path:
    """Write trials.csv, summary.csv, rates.json and config.echo.json."""
    out = Path(output_dir if output_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rates = {s.estimator: s.to_dict() for s in summaries}
    _atomic_write(out / "trials.csv", trials_csv(records))
    _atomic_write(out / "summary.csv", summary_csv(summaries, cfg))
    _atomic_write(out / "rates.json", json.dumps(rates, indent=2) + "\n")
    _atomic_write(out / "config.echo.json", cfg.to_json() + "\n")
    return out
