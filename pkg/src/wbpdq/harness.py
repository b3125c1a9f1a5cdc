"""Seeded experiment pipeline: instance generation, trials, sweeps, output.

Per-trial randomness comes from ``numpy.random.SeedSequence([seed, m, trial])``
so the same signal, matrix and prior support are shared by every exponent p
in a sweep (paired comparison). The derived 63-bit integer is reported as
``seed_used``; ``numpy.random.default_rng(seed_used)`` regenerates the trial.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import os
import statistics
import time
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Union

import numpy as np
from threadpoolctl import threadpool_limits

from ._version import __version__
from .model import (
    Quantizer,
    SensingMatrix,
    Signal,
    WeightVector,
    make_weights,
    quantize,
    snr_db,
)
from .prox import TubeProjectionConfig
from .solver import SolverConfig, solve_bp, solve_bpdq

__all__ = [
    "ConfigError",
    "FormatError",
    "ExperimentConfig",
    "Instance",
    "TrialResult",
    "ExperimentTable",
    "CSV_COLUMNS",
    "derive_seed",
    "generate_instance",
    "run_trial",
    "run_experiment",
    "emit_results",
    "read_results_csv",
    "parse_config",
    "load_config",
    "read_matrix",
    "write_matrix",
    "read_vector",
    "write_vector",
]

CSV_COLUMNS = (
    "trial_id", "p", "m", "k", "n", "theta", "rho_prior", "alpha_overlap",
    "epsilon", "snr_db", "iterations", "converged", "feasibility_gap",
    "seed_used", "wall_time_seconds",
)


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


class FormatError(ValueError):
    """Malformed matrix, vector or results file."""


def _half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class ExperimentConfig:
    """Sweep definition.

    ``m`` is one count or a list of counts; ``m_over_k`` (if given) replaces
    it by ``[r * k for r in m_over_k]``. ``mode`` selects quantized decoding
    (``solve_bpdq`` with automatic epsilon) or noiseless weighted basis
    pursuit, where ``p_list`` is ignored and rows carry ``p = 2``.
    ``weighted = False`` uses all-ones weights. ``record_timing = False``
    writes zero wall times so that outputs are byte-reproducible.
    """

    n: int = 1024
    k: int = 16
    m: Union[int, tuple] = 256
    p_list: tuple = (2.0, 10.0, math.inf)
    theta: float = 0.5
    rho_prior: float = 1.0
    alpha_overlap: float = 0.5
    bin_divisor: float = 40.0
    trials: int = 50
    max_iters: int = 800
    seed: int = 0
    mode: str = "quantized"
    weighted: bool = True
    gamma: float = 0.1
    relaxation: float = 1.0
    fp_tol: Optional[float] = None
    epsilon_slack: float = 1.1
    tube_method: str = "iterative_dual"
    record_timing: bool = True
    threads: int = 1
    m_over_k: Optional[tuple] = None

    def __post_init__(self):
        def fail(msg):
            raise ConfigError(msg)

        if self.m_over_k is not None:
            ratios = tuple(float(r) for r in _as_tuple(self.m_over_k))
            ms = tuple(_half_up(r * self.k) for r in ratios)
            object.__setattr__(self, "m_over_k", ratios)
            object.__setattr__(self, "m", ms if len(ms) > 1 else ms[0])
        ms = self.m_values
        p_list = tuple(float(p) for p in _as_tuple(self.p_list))
        object.__setattr__(self, "p_list", p_list)
        if isinstance(self.m, (list, tuple)):
            object.__setattr__(self, "m", tuple(int(v) for v in self.m))
        if self.n < 1 or self.k < 1:
            fail("n and k must be positive")
        for m in ms:
            if not self.k <= m <= self.n:
                fail(f"need k <= m <= n, got k={self.k}, m={m}, n={self.n}")
        if not p_list:
            fail("p_list is empty")
        for p in p_list:
            if not p >= 2:
                fail(f"exponents must be >= 2, got {p}")
        if not 0 < self.theta < 1:
            fail("theta must lie in (0, 1)")
        if self.rho_prior < 0 or self.alpha_overlap < 0 or self.alpha_overlap > 1:
            fail("rho_prior must be >= 0 and alpha_overlap in [0, 1]")
        if self.alpha_overlap * self.rho_prior > 1 + 1e-12:
            fail("alpha_overlap * rho_prior must not exceed 1")
        n1, n2 = self.prior_counts
        if n2 > self.n - self.k:
            fail("prior support does not fit outside the true support")
        if n1 > self.k:
            fail("overlap exceeds the sparsity")
        if not self.bin_divisor > 0:
            fail("bin_divisor must be positive")
        if self.trials < 1 or self.max_iters < 1:
            fail("trials and max_iters must be >= 1")
        if self.mode not in ("quantized", "noiseless"):
            fail("mode must be 'quantized' or 'noiseless'")
        if self.tube_method not in ("iterative_dual", "tight_frame"):
            fail("tube_method must be 'iterative_dual' or 'tight_frame'")
        if self.threads < 1:
            fail("threads must be >= 1")
        try:
            self.solver_config(self.p_list[0])
        except ValueError as exc:
            fail(str(exc))

    @property
    def m_values(self) -> tuple:
        return tuple(int(v) for v in _as_tuple(self.m))

    @property
    def prior_counts(self):
        """``(|T_1|, |T_2|)``: prior indices inside and outside the true support."""
        total = _half_up(self.rho_prior * self.k)
        inside = _half_up(self.alpha_overlap * self.rho_prior * self.k)
        return inside, total - inside

    def solver_config(self, p: float) -> SolverConfig:
        return SolverConfig(p=p, epsilon="auto", gamma=self.gamma,
                            relaxation=self.relaxation, max_iters=self.max_iters,
                            fp_tol=self.fp_tol, epsilon_slack=self.epsilon_slack)

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = [_json_number(x) for x in v]
            else:
                v = _json_number(v)
            out[f.name] = v
        return out


def _as_tuple(v) -> tuple:
    if isinstance(v, (list, tuple)):
        return tuple(v)
    return (v,)


def _json_number(v):
    if isinstance(v, float) and not math.isfinite(v):
        return "inf" if v > 0 else ("-inf" if v < 0 else "nan")
    return v


# --- config files ----------------------------------------------------------

def _parse_bool(s):
    low = s.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_float(s):
    return float(s)  # accepts 'inf'


def _parse_list(conv):
    def parse(s):
        items = [t for t in s.replace(",", " ").split() if t]
        if not items:
            raise ValueError("empty list")
        vals = tuple(conv(t) for t in items)
        return vals
    return parse


def _parse_optional_float(s):
    return None if s.lower() in ("none", "default") else float(s)


def _parse_m(s):
    vals = _parse_list(int)(s)
    return vals if len(vals) > 1 else vals[0]


_PARSERS = {
    "n": int, "k": int, "m": _parse_m, "p_list": _parse_list(_parse_float),
    "theta": float, "rho_prior": float, "alpha_overlap": float,
    "bin_divisor": float, "trials": int, "max_iters": int, "seed": int,
    "mode": str, "weighted": _parse_bool, "gamma": float, "relaxation": float,
    "fp_tol": _parse_optional_float, "epsilon_slack": float, "tube_method": str,
    "record_timing": _parse_bool, "threads": int,
    "m_over_k": _parse_list(float),
}


def parse_config(text: str, **overrides) -> ExperimentConfig:
    """Parse flat ``key = value`` lines; ``#`` starts a comment.

    Unknown or repeated keys and unparsable values raise :class:`ConfigError`.
    """
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, val = (t.strip() for t in line.split("=", 1))
        if key not in _PARSERS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = _PARSERS[key](val)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from None
    if "m" in values and "m_over_k" in values:
        raise ConfigError("give either m or m_over_k, not both")
    values.update(overrides)
    return ExperimentConfig(**values)


def load_config(path, **overrides) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), **overrides)


# --- matrix and vector files -----------------------------------------------

def read_matrix(path) -> np.ndarray:
    """Read a dense text matrix whose first line is ``rows cols``."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise FormatError(f"{path}: first line must be 'rows cols'")
        try:
            rows, cols = int(header[0]), int(header[1])
        except ValueError:
            raise FormatError(f"{path}: bad header {header}") from None
        try:
            data = np.array(fh.read().split(), dtype=float)
        except ValueError as exc:
            raise FormatError(f"{path}: {exc}") from None
    if rows < 0 or cols < 0 or data.size != rows * cols:
        raise FormatError(f"{path}: expected {rows}x{cols} values, found {data.size}")
    return data.reshape(rows, cols)


def read_vector(path) -> np.ndarray:
    """Read a ``rows 1`` or ``1 cols`` matrix file as a flat vector."""
    a = read_matrix(path)
    if 1 not in a.shape:
        raise FormatError(f"{path}: expected a single row or column, got {a.shape}")
    return a.ravel()


def write_matrix(path, a) -> None:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    buf = io.StringIO()
    buf.write(f"{a.shape[0]} {a.shape[1]}\n")
    for row in a:
        buf.write(" ".join(repr(float(v)) for v in row) + "\n")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(buf.getvalue())


def write_vector(path, v) -> None:
    v = np.asarray(v, dtype=float).ravel()
    write_matrix(path, v[:, None])


# --- instances and trials --------------------------------------------------

@dataclass(frozen=True)
class Instance:
    """One generated trial; unpacks as ``(signal, matrix, weights, quantizer, y_q)``."""

    signal: Signal
    matrix: SensingMatrix
    weights: WeightVector
    quantizer: Quantizer
    y_q: np.ndarray
    trial_id: int = 0
    seed_used: int = 0
    prior_support: frozenset = field(default_factory=frozenset)

    def __iter__(self):
        return iter((self.signal, self.matrix, self.weights, self.quantizer, self.y_q))

    @property
    def m(self) -> int:
        return self.matrix.m


def derive_seed(seed: int, m: int, trial_id: int) -> int:
    ss = np.random.SeedSequence([int(seed), int(m), int(trial_id)])
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def generate_instance(cfg: ExperimentConfig, trial_id: int, m: Optional[int] = None) -> Instance:
    """Draw the signal, Gaussian matrix, prior support and quantized data.

    Draw order: true support, its Gaussian values, the ``m x n`` standard
    Gaussian matrix, then the prior indices inside and outside the support.
    """
    if m is None:
        ms = cfg.m_values
        if len(ms) != 1:
            raise ConfigError("config sweeps several m values; pass m explicitly")
        m = ms[0]
    if not cfg.k <= m <= cfg.n:
        raise ConfigError(f"need k <= m <= n, got m={m}")
    seed_used = derive_seed(cfg.seed, m, trial_id)
    rng = np.random.default_rng(seed_used)
    n, k = cfg.n, cfg.k
    support = np.sort(rng.choice(n, size=k, replace=False))
    x = np.zeros(n)
    x[support] = rng.standard_normal(k)
    phi = rng.standard_normal((m, n))
    n1, n2 = cfg.prior_counts
    inside = rng.choice(support, size=n1, replace=False)
    outside_pool = np.setdiff1d(np.arange(n), support)
    outside = rng.choice(outside_pool, size=n2, replace=False)
    prior = frozenset(int(i) for i in np.concatenate([inside, outside]))
    if cfg.weighted:
        weights = make_weights(prior, cfg.theta, n)
    else:
        weights = WeightVector.uniform(n, cfg.theta)
    matrix = SensingMatrix(phi)
    clean = matrix @ x
    quantizer = Quantizer(float(np.max(np.abs(clean))) / cfg.bin_divisor)
    y_q = quantize(clean, quantizer)
    return Instance(Signal(x, support=frozenset(int(i) for i in support)), matrix,
                    weights, quantizer, y_q, trial_id=trial_id, seed_used=seed_used,
                    prior_support=prior)


@dataclass(frozen=True)
class TrialResult:
    trial_id: int
    p: float
    m: int
    snr_db: float
    iterations: int
    converged: bool
    feasibility_gap: float
    wall_time_seconds: float
    seed_used: int
    epsilon: float = math.nan
    error: Optional[str] = None

    @property
    def perfect(self) -> bool:
        return self.snr_db == math.inf


def run_trial(instance: Instance, p: float, solver_cfg: Optional[SolverConfig] = None,
              mode: str = "quantized", tube_cfg: Optional[TubeProjectionConfig] = None,
              record_timing: bool = True) -> TrialResult:
    """Decode one instance and score it; solver failures are recorded, not raised."""
    if mode not in ("quantized", "noiseless"):
        raise ValueError("mode must be 'quantized' or 'noiseless'")
    solver_cfg = solver_cfg or SolverConfig(p=p)
    if solver_cfg.p != p:
        solver_cfg = dataclasses.replace(solver_cfg, p=p)
    signal, matrix, weights, quantizer, y_q = instance
    start = time.perf_counter()
    try:
        if mode == "noiseless":
            report = solve_bp(matrix @ signal.values, matrix, weights.weights, solver_cfg)
        else:
            report = solve_bpdq(y_q, matrix, weights.weights, solver_cfg, tube_cfg,
                                bin_width=quantizer.alpha)
    except (ArithmeticError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        elapsed = time.perf_counter() - start
        return TrialResult(instance.trial_id, p, matrix.m, math.nan, 0, False, math.nan,
                           round(elapsed, 3) if record_timing else 0.0,
                           instance.seed_used, error=f"{type(exc).__name__}: {exc}")
    elapsed = time.perf_counter() - start
    return TrialResult(
        trial_id=instance.trial_id, p=p, m=matrix.m,
        snr_db=snr_db(signal.values, report.x), iterations=report.iterations,
        converged=report.converged, feasibility_gap=report.feasibility_gap,
        wall_time_seconds=round(elapsed, 3) if record_timing else 0.0,
        seed_used=instance.seed_used, epsilon=report.epsilon,
    )


# --- sweeps ----------------------------------------------------------------

@dataclass
class ExperimentTable:
    config: ExperimentConfig
    rows: List[TrialResult] = field(default_factory=list)

    def cell(self, p: float, m: int) -> List[TrialResult]:
        return [r for r in self.rows if r.p == p and r.m == m]

    def aggregates(self) -> List[dict]:
        """Per-(p, m) summaries in row order.

        Mean, median and std use finite SNRs only; ``mean_snr_converged``
        restricts the mean to converged trials (``nan`` if none converged).
        """
        cells = []
        for r in self.rows:
            if (r.p, r.m) not in cells:
                cells.append((r.p, r.m))
        out = []
        for p, m in cells:
            rows = self.cell(p, m)
            finite = [r.snr_db for r in rows if math.isfinite(r.snr_db)]
            conv = [r.snr_db for r in rows if r.converged and math.isfinite(r.snr_db)]
            out.append({
                "p": p, "m": m, "trials": len(rows),
                "mean_snr_db": statistics.fmean(finite) if finite else math.nan,
                "median_snr_db": statistics.median(finite) if finite else math.nan,
                "std_snr_db": statistics.pstdev(finite) if len(finite) > 1 else (0.0 if finite else math.nan),
                "mean_snr_converged": statistics.fmean(conv) if conv else math.nan,
                "perfect": sum(r.perfect for r in rows),
                "not_converged": sum(not r.converged for r in rows),
                "failed": sum(r.error is not None for r in rows),
            })
        return out


def run_experiment(cfg: ExperimentConfig, progress=None, stream_csv=None) -> ExperimentTable:
    """Run every (p, m, trial) cell in that order.

    ``progress(result)`` is called after each trial. ``stream_csv`` (a path)
    receives rows as they finish so partial results survive interruption.
    BLAS threads are limited to ``cfg.threads`` for reproducibility.
    """
    table = ExperimentTable(cfg)
    p_values = (2.0,) if cfg.mode == "noiseless" else cfg.p_list
    tube_cfg = TubeProjectionConfig(method=cfg.tube_method)
    fh = writer = None
    if stream_csv is not None:
        fh = open(stream_csv, "w", newline="", encoding="utf-8")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
    try:
        with threadpool_limits(limits=cfg.threads):
            for p in p_values:
                solver_cfg = cfg.solver_config(p)
                for m in cfg.m_values:
                    for t in range(cfg.trials):
                        inst = generate_instance(cfg, t, m)
                        res = run_trial(inst, p, solver_cfg, cfg.mode, tube_cfg,
                                        cfg.record_timing)
                        table.rows.append(res)
                        if writer is not None:
                            writer.writerow(_csv_row(res, cfg))
                            fh.flush()
                        if progress is not None:
                            progress(res)
    finally:
        if fh is not None:
            fh.close()
    return table


# --- output ----------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def _csv_row(r: TrialResult, cfg: ExperimentConfig) -> list:
    values = (r.trial_id, float(r.p), r.m, cfg.k, cfg.n, float(cfg.theta),
              float(cfg.rho_prior), float(cfg.alpha_overlap), float(r.epsilon),
              float(r.snr_db), r.iterations, bool(r.converged), float(r.feasibility_gap),
              r.seed_used, float(r.wall_time_seconds))
    return [_fmt(v) for v in values]


def _row_dict(r: TrialResult, cfg: ExperimentConfig) -> dict:
    d = dict(zip(CSV_COLUMNS, (r.trial_id, r.p, r.m, cfg.k, cfg.n, cfg.theta,
                               cfg.rho_prior, cfg.alpha_overlap, r.epsilon, r.snr_db,
                               r.iterations, r.converged, r.feasibility_gap,
                               r.seed_used, r.wall_time_seconds)))
    d["error"] = r.error
    return {key: _json_number(v) for key, v in d.items()}


def emit_results(table: ExperimentTable, format: str, path) -> None:
    """Write per-trial rows as CSV, or rows plus config and aggregates as JSON."""
    if format == "csv":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            for r in table.rows:
                writer.writerow(_csv_row(r, table.config))
    elif format == "json":
        doc = {
            "artifact": "wbpdq",
            "version": __version__,
            "config": table.config.to_dict(),
            "rows": [_row_dict(r, table.config) for r in table.rows],
            "aggregates": [{k: _json_number(v) for k, v in a.items()}
                           for a in table.aggregates()],
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, allow_nan=False)
            fh.write("\n")
    else:
        raise ValueError(f"unknown format {format!r}")


def emit_aggregates(table: ExperimentTable, path) -> None:
    aggs = table.aggregates()
    cols = ["p", "m", "trials", "mean_snr_db", "median_snr_db", "std_snr_db",
            "mean_snr_converged", "perfect", "not_converged", "failed"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(cols)
        for a in aggs:
            writer.writerow([_fmt(float(a[c]) if isinstance(a[c], float) else a[c]) for c in cols])


_CSV_TYPES = {
    "trial_id": int, "p": float, "m": int, "k": int, "n": int, "theta": float,
    "rho_prior": float, "alpha_overlap": float, "epsilon": float, "snr_db": float,
    "iterations": int, "converged": _parse_bool, "feasibility_gap": float,
    "seed_used": int, "wall_time_seconds": float,
}


def read_results_csv(path) -> List[dict]:
    """Parse a results CSV back into typed rows."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != CSV_COLUMNS:
            raise FormatError(f"{path}: unexpected header {header}")
        rows = []
        for rec in reader:
            if len(rec) != len(CSV_COLUMNS):
                raise FormatError(f"{path}: row has {len(rec)} fields")
            rows.append({c: _CSV_TYPES[c](v) for c, v in zip(CSV_COLUMNS, rec)})
    return rows
