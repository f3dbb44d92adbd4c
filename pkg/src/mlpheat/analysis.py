"""Experiment runner: references, per-depth error tables, rates and file output."""

from __future__ import annotations

import csv
import json
import logging
import math
import subprocess
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .mlp_core import (
    EstimationError,
    MlpParams,
    estimate,
    m_schedule,
    rv_count_closed_form,
    run_batch,
)
from .oracle import QuadratureGrid, picard_solve
from .problem import EstimateVector, make_problem, ridge_reduction
from .random_kernels import RandomStream

log = logging.getLogger(__name__)

__all__ = [
    "ConfigError",
    "RunConfig",
    "ReportRow",
    "ExperimentReport",
    "ErrorWeighting",
    "lp_error",
    "fit_rate",
    "run_experiment",
    "compute_reference",
    "median_report",
    "emit_outputs",
    "read_report_csv",
    "CSV_HEADER",
]

CSV_HEADER = ["n", "m", "estimate", "error", "RT", "RV"]
REFERENCE = 3


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


@dataclass
class RunConfig:
    """Experiment settings; defaults: sin_mean, d=100, T=1, x=0, n<=7, MLP(6,6) reference."""

    problem: str = "sin_mean"
    d: int = 100
    T: float = 1.0
    t0: float = 0.0
    x0: Optional[list] = None
    n_max: int = 7
    base_mode: str = "schedule"   # "schedule" (m = M_n) or "fixed"
    m: int = 2                    # base for base_mode == "fixed"
    reference: str = "mlp"        # "mlp", "oracle" or "exact"
    ref_n: int = 6
    ref_m: int = 6
    repetitions: int = 10
    p: float = 2.0
    seed: int = 0
    output: Optional[str] = None
    threads: Optional[int] = None

    def validate(self) -> None:
        if self.n_max < 1:
            raise ConfigError("n_max must be >= 1")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if self.p < 2:
            raise ConfigError("L^p order must be >= 2")
        if not 0 <= self.t0 < self.T:
            raise ConfigError("need 0 <= t0 < T")
        if self.d < 1:
            raise ConfigError("d must be >= 1")
        if self.base_mode not in ("schedule", "fixed"):
            raise ConfigError(f"unknown base_mode {self.base_mode!r}")
        if self.base_mode == "fixed" and self.m < 1:
            raise ConfigError("fixed base m must be >= 1")
        if self.reference not in ("mlp", "oracle", "exact"):
            raise ConfigError(f"unknown reference {self.reference!r}")
        if self.x0 is not None and len(self.x0) != self.d:
            raise ConfigError("x0 must have length d")

    @classmethod
    def from_mapping(cls, data: dict) -> "RunConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def point(self) -> np.ndarray:
        return np.zeros(self.d) if self.x0 is None else np.asarray(self.x0, dtype=np.float64)

    def base(self, n: int) -> int:
        return m_schedule(n) if self.base_mode == "schedule" else self.m


@dataclass
class ErrorWeighting:
    """Slot weights (1, sqrt(h), ..., sqrt(h)) for a remaining horizon h = T - t0."""

    weights: np.ndarray

    @classmethod
    def for_horizon(cls, d: int, horizon: float) -> "ErrorWeighting":
        if horizon <= 0:
            raise ValueError("horizon must be positive")
        w = np.full(d + 1, math.sqrt(horizon))
        w[0] = 1.0
        return cls(w)


def lp_error(estimates, reference, p: float = 2.0, weighting: ErrorWeighting | None = None) -> np.ndarray:
    """Per-slot weighted L^p error: w_nu * (mean |est_nu - ref_nu|^p)^(1/p)."""
    rows = [e.as_array() if isinstance(e, EstimateVector) else np.asarray(e, dtype=np.float64)
            for e in estimates]
    if not rows:
        raise ValueError("need at least one estimate")
    if p < 1:
        raise ValueError("p must be >= 1")
    arr = np.stack(rows)
    ref = reference.as_array() if isinstance(reference, EstimateVector) else np.asarray(reference)
    err = np.mean(np.abs(arr - ref[None, :]) ** p, axis=0) ** (1.0 / p)
    if weighting is not None:
        err = err * weighting.weights
    return err


@dataclass
class ReportRow:
    n: int
    m: int
    estimate: float          # mean value slot over replicates
    error: float             # weighted L^p error of the value slot
    grad_error: float        # max over gradient slots of the weighted L^p error
    sup_error: float         # max over all slots
    runtime: float           # mean seconds per replicate
    rv_count: int            # per replicate
    replicate_estimates: list = field(default_factory=list)
    replicate_errors: list = field(default_factory=list)


@dataclass
class ExperimentReport:
    rows: list
    metadata: dict = field(default_factory=dict)


def _build_id() -> str:
    try:
        rev = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"], cwd=Path(__file__).parent,
            capture_output=True, text=True, timeout=5, check=True,
        ).stdout.strip()
        return f"mlpheat-{__version__}+g{rev}"
    except (OSError, subprocess.SubprocessError):
        return f"mlpheat-{__version__}"


def compute_reference(config: RunConfig, problem=None) -> EstimateVector:
    """Reference (v, grad v)(t0, x0) according to ``config.reference``."""
    problem = problem or make_problem(config.problem, config.d, config.T)
    x0 = config.point()
    if config.reference == "exact":
        if problem.exact is None:
            raise ConfigError(f"problem {problem.label!r} has no closed-form solution")
        return EstimateVector.from_array(problem.exact(config.t0, x0))
    if config.reference == "oracle":
        if problem.d <= 2:
            return picard_solve(problem, QuadratureGrid(), [(config.t0, x0)])[0]
        if problem.ridge_direction is not None:
            red = ridge_reduction(problem)
            u1 = picard_solve(red.problem, QuadratureGrid(), [(config.t0, red.project(x0))])[0]
            return EstimateVector.from_array(red.lift(u1.as_array()))
        raise ConfigError("oracle reference needs d <= 2 or a ridge-reducible problem")
    stream = RandomStream.root(config.seed).child(0, 0, REFERENCE)
    return estimate(stream, problem, None, MlpParams(config.ref_n, config.ref_m, config.t0, x0))


def run_experiment(config: RunConfig, reference: EstimateVector | None = None) -> ExperimentReport:
    """Run depths n = 1..n_max and tabulate errors against the reference.

    ``reference`` skips the reference computation (e.g. to share one across seeds).
    """
    config.validate()
    try:
        problem = make_problem(config.problem, config.d, config.T)
    except KeyError as exc:
        raise ConfigError(str(exc)) from None
    x0 = config.point()
    if reference is None:
        start = time.perf_counter()
        reference = compute_reference(config, problem)
        ref_time = time.perf_counter() - start
    else:
        ref_time = 0.0
    if not reference.is_finite():
        raise EstimationError("reference is not finite")
    ref = reference.as_array()
    weighting = ErrorWeighting.for_horizon(config.d, config.T - config.t0)

    rows = []
    for n in range(1, config.n_max + 1):
        m = config.base(n)
        batch = run_batch(config.seed, problem, None, MlpParams(n, m, config.t0, x0),
                          config.repetitions, threads=config.threads, tag=n)
        if batch.failures:
            exc = batch.failures[0]
            raise EstimationError(f"n={n}, m={m}: {len(batch.failures)} replicate(s) failed; first: {exc}")
        est = batch.as_array()
        err = lp_error(est, ref, config.p, weighting)
        rows.append(ReportRow(
            n=n, m=m,
            estimate=float(est[:, 0].mean()),
            error=float(err[0]),
            grad_error=float(err[1:].max()),
            sup_error=float(err.max()),
            runtime=float(np.mean(batch.runtimes)),
            rv_count=int(batch.rv_counts[0]),
            replicate_estimates=[float(v) for v in est[:, 0]],
            replicate_errors=[float(v) for v in np.abs(est[:, 0] - ref[0])],
        ))
        log.info("n=%d m=%d error=%.3e rv=%d", n, m, err[0], batch.rv_counts[0])

    meta = {
        "config": asdict(config),
        "reference": {"value": reference.value, "gradient": reference.gradient.tolist()},
        "reference_seconds": ref_time,
        "build": _build_id(),
    }
    return ExperimentReport(rows, meta)


def median_report(reports: Sequence[ExperimentReport]) -> ExperimentReport:
    """Row-wise median of the value-slot error (and runtime) across several reports."""
    if not reports:
        raise ValueError("no reports")
    rows = []
    for group in zip(*(r.rows for r in reports)):
        first = group[0]
        rows.append(ReportRow(
            n=first.n, m=first.m,
            estimate=float(np.median([r.estimate for r in group])),
            error=float(np.median([r.error for r in group])),
            grad_error=float(np.median([r.grad_error for r in group])),
            sup_error=float(np.median([r.sup_error for r in group])),
            runtime=float(np.median([r.runtime for r in group])),
            rv_count=first.rv_count,
        ))
    return ExperimentReport(rows, {"combined": len(reports)})


def fit_rate(report: ExperimentReport, axis: str = "rv_count") -> float:
    """Least-squares slope of log(error) against log(rv_count) or log(runtime)."""
    if axis not in ("rv_count", "runtime"):
        raise ValueError("axis must be 'rv_count' or 'runtime'")
    xs, ys = [], []
    dropped = 0
    for row in report.rows:
        x = float(getattr(row, axis))
        if row.error > 0 and x > 0:
            xs.append(math.log(x))
            ys.append(math.log(row.error))
        else:
            dropped += 1
    if dropped:
        log.warning("fit_rate: excluded %d row(s) with non-positive values", dropped)
    if len(xs) < 3:
        raise ValueError("need at least 3 rows with positive error to fit a rate")
    slope, _ = np.polyfit(np.array(xs), np.array(ys), 1)
    return float(slope)


def _fmt(x: float) -> str:
    return repr(float(x))


def _paths(output_path) -> dict:
    base = Path(output_path)
    if base.suffix == ".csv":
        base = base.with_suffix("")
    return {
        "csv": base.with_name(base.name + ".csv"),
        "replicates": base.with_name(base.name + ".replicates.csv"),
        "plot": base.with_name(base.name + ".plot.dat"),
        "meta": base.with_name(base.name + ".meta.json"),
    }


def emit_outputs(report: ExperimentReport, output_path) -> dict:
    """Write the CSV table, per-replicate CSV, plot data and run metadata.

    Returns the mapping of file kind to path.  I/O problems raise ``OSError``
    with the offending path in the message.
    """
    paths = _paths(output_path)
    current = paths["csv"].parent
    try:
        current.mkdir(parents=True, exist_ok=True)
        current = paths["csv"]
        with open(current, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow(CSV_HEADER)
            for r in report.rows:
                w.writerow([r.n, r.m, _fmt(r.estimate), _fmt(r.error), _fmt(r.runtime), r.rv_count])

        current = paths["replicates"]
        with open(current, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow(["n", "m", "replicate", "estimate", "error"])
            for r in report.rows:
                for i, (e, err) in enumerate(zip(r.replicate_estimates, r.replicate_errors)):
                    w.writerow([r.n, r.m, i, _fmt(e), _fmt(err)])

        current = paths["plot"]
        with open(current, "w") as fh:
            fh.write("# n RV error RV^-1/2 RV^-1/4 RT RT^-1/2 RT^-1/4 grad_error sup_error\n")
            for r in report.rows:
                rt = r.runtime if r.runtime > 0 else float("nan")
                fh.write(" ".join(_fmt(v) if not isinstance(v, int) else str(v) for v in (
                    r.n, r.rv_count, r.error, r.rv_count ** -0.5, r.rv_count ** -0.25,
                    r.runtime, rt ** -0.5, rt ** -0.25, r.grad_error, r.sup_error)) + "\n")

        current = paths["meta"]
        meta = dict(report.metadata)
        meta["rows"] = [
            {k: v for k, v in asdict(r).items() if k not in ("replicate_estimates", "replicate_errors")}
            for r in report.rows
        ]
        with open(current, "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"cannot write {current}: {exc.strerror or exc}") from exc
    return paths


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer, np.floating)):
        return obj.item()
    raise TypeError(f"not JSON serialisable: {type(obj)}")


def read_report_csv(path) -> list[dict]:
    """Parse a table written by ``emit_outputs`` back into typed rows."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise ValueError(f"unexpected header {reader.fieldnames}")
        return [
            {"n": int(r["n"]), "m": int(r["m"]), "estimate": float(r["estimate"]),
             "error": float(r["error"]), "RT": float(r["RT"]), "RV": int(r["RV"])}
            for r in reader
        ]


def count_table(d: int, n_max: int, base_mode: str = "schedule", m: int = 2) -> list[tuple[int, int, int]]:
    """(n, m, RV) for n = 1..n_max without running anything."""
    out = []
    for n in range(1, n_max + 1):
        mn = m_schedule(n) if base_mode == "schedule" else m
        out.append((n, mn, rv_count_closed_form(d, n, mn)))
    return out
