#!/usr/bin/env python3
"""
Experiment runner for the monotonicity laboratory.

Usage:
    python expcli.py scan --config experiments/plane_scan.cfg --out results
    python expcli.py dyadic --config experiments/ --jobs 4
    python expcli.py fh --config experiments/fh_caps.cfg --resolution-scale 2

Experiment files are flat sections of `key = value` lines:

    [experiment]
    kind = scan

    [metric]
    kind = space_form
    n = 2
    kappa = 1.0

    [pair]
    family = sector
    theta = pi/2

Or set environment variables:
    MONOLAB_OUTPUT_DIR=results
    MONOLAB_LOG_LEVEL=DEBUG

Exit codes: 0 every verdict passed, 1 a verdict failed, 2 configuration or
domain error, 3 numerical failure, 4 nonconvergence.
"""

import argparse
import csv
import json
import logging
import math
import os
import re
import sys
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import replace
from pathlib import Path
from typing import Annotated, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from dotenv import load_dotenv
from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, ValidationError, field_validator

from ballgrid import BallGrid
from errors import ConfigError, MonoLabError, NonConvergenceError, PreconditionError
from fbsolver import TwoPhaseProblem, flux_balance_check, lipschitz_ratio, two_phase_solve
from fields import build_corrector, corrector_energy_bound, energy_inequality_check
from geometry import ModelMetric, hebey_verify
from monotone import (
    DyadicTrace,
    MonotonicityTrace,
    almost_mono_bound,
    calibrate_c0,
    default_radii,
    diff_inequality_check,
    dyadic_trace,
    phi_scan,
)
from pairs import (
    Pair,
    friedland_hayman_check,
    friedland_hayman_scan,
    make_cap_pair,
    make_inhomogeneous_pair,
    make_plane_pair,
    make_sector_pair,
    make_zero_pair,
)

logger = logging.getLogger(__name__)

__version__ = "0.1.0"

KINDS = ("scan", "bound", "dyadic", "fh", "solve", "hebey", "calibrate")
SCAN_HEADER = ["r", "A_plus", "A_minus", "B_plus", "B_minus", "phi", "phi_F", "verdict"]
DYADIC_HEADER = ["k", "r", "A_plus", "A_minus", "b_plus", "b_minus", "delta_k", "phi", "verdict"]
FH_HEADER = ["theta", "alpha_plus", "alpha_minus", "sum"]


# -----------------------------
# Config values
# -----------------------------
_PI_TERM = re.compile(r"^([0-9.eE+-]*)\s*\*?\s*pi\s*(?:/\s*([0-9.eE+]+))?$")


def parse_angle(value):
    """Numbers or multiples of pi: `pi`, `pi/2`, `3*pi/2`, `0.5pi`."""
    if not isinstance(value, str):
        return value
    text = value.strip().lower()
    match = _PI_TERM.match(text)
    if not match:
        return text
    factor = match.group(1)
    if factor in ("", "+"):
        factor = 1.0
    elif factor == "-":
        factor = -1.0
    value = float(factor) * math.pi
    if match.group(2):
        value /= float(match.group(2))
    return value


def parse_list(value):
    if isinstance(value, str):
        try:
            return json.loads(value)
        except json.JSONDecodeError:
            raise ValueError(f"expected a JSON list such as [1, 0], got '{value}'") from None
    return value


Angle = Annotated[float, BeforeValidator(parse_angle)]
FloatList = Annotated[List[float], BeforeValidator(parse_list)]
Matrix = Annotated[List[List[float]], BeforeValidator(parse_list)]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ExperimentSection(_Section):
    kind: Literal["scan", "bound", "dyadic", "fh", "solve", "hebey", "calibrate"]
    name: Optional[str] = None
    seed: int = Field(0, ge=0)
    plots: bool = True
    log_x: bool = False


class MetricSection(_Section):
    kind: Literal["euclidean", "space_form", "curvature_matrix"] = "euclidean"
    n: int = Field(2, ge=2, le=3)
    kappa: float = 0.0
    t: float = Field(1.0, gt=0.0, le=1.0)
    curvature: Optional[Matrix] = None
    curvature_bound: Optional[float] = Field(None, ge=0.0)
    working_radius: Optional[float] = Field(None, gt=0.0)


class GridSection(_Section):
    R: float = Field(1.0, gt=0.0)
    n_r: int = Field(64, ge=16)
    n_ang: int = Field(64, ge=16)

    @field_validator("n_ang")
    @classmethod
    def _even(cls, v: int) -> int:
        if v % 2:
            raise ValueError(f"n_ang must be even, got {v}")
        return v


class PairSection(_Section):
    family: Literal["plane", "sector", "inhomogeneous", "cap", "zero"] = "plane"
    direction: Optional[FloatList] = None
    theta: Optional[Angle] = None
    a: float = Field(0.5, ge=0.0, le=1.0)


class ProblemSection(_Section):
    boundary: Literal["linear", "constant"] = "linear"
    direction: Optional[FloatList] = None
    amplitude: float = 1.0
    offset: float = 0.0
    f1: float = 0.0
    f2: float = 0.0
    bound: float = Field(1.0, gt=0.0)
    omega: float = Field(1.5, gt=0.0, lt=2.0)
    tol: float = Field(1e-9, gt=0.0)
    max_sweeps: int = Field(50000, ge=1)
    max_outer: int = Field(50, ge=1)
    K: Optional[float] = Field(None, gt=0.0)
    flux: Literal["difference", "product"] = "difference"


class ConstantsSection(_Section):
    c0: float = Field(0.0, ge=0.0)
    C1: float = Field(1.0, gt=0.0)
    C2: float = Field(10.0, gt=0.0)
    C3: float = Field(10.0, ge=0.0)
    K: float = Field(0.5, ge=0.0)
    tol_mono: Optional[float] = Field(None, gt=0.0)
    k_max: int = Field(3, ge=1)
    delta: Optional[float] = Field(None, gt=0.0)


class ScanSection(_Section):
    radii: Optional[FloatList] = None
    r_min: Optional[float] = Field(None, gt=0.0)
    r_max: Optional[float] = Field(None, gt=0.0)
    count: int = Field(24, ge=2)
    theta: Optional[Angle] = None
    n_partitions: int = Field(0, ge=0)
    margin: float = Field(0.2, gt=0.0)
    radius: Optional[float] = Field(None, gt=0.0)


class ExperimentConfig(_Section):
    experiment: ExperimentSection
    metric: MetricSection = MetricSection()
    grid: GridSection = GridSection()
    pair: PairSection = PairSection()
    problem: ProblemSection = ProblemSection()
    constants: ConstantsSection = ConstantsSection()
    scan: ScanSection = ScanSection()

    @property
    def kind(self) -> str:
        return self.experiment.kind

    def problems(self) -> List[Tuple[Tuple[str, str], str]]:
        """Cross-section consistency; ((section, key), message) per problem."""
        issues = []
        n = self.metric.n
        family = self.pair.family
        uses_pair = self.kind in ("scan", "bound", "dyadic", "calibrate")
        if uses_pair:
            if family == "sector" and n != 2:
                issues.append((("pair", "family"), "sector pairs need n = 2"))
            if family == "cap" and n != 3:
                issues.append((("pair", "family"), "cap pairs need n = 3"))
            if family in ("sector", "cap") and self.pair.theta is None:
                issues.append((("pair", "theta"), f"missing required key 'theta' for {family} pairs"))
            if family == "inhomogeneous" and self.grid.R > 1.0:
                issues.append((("grid", "R"), "inhomogeneous pairs need R <= 1"))
        if self.metric.kind == "curvature_matrix":
            A = self.metric.curvature
            if A is None:
                issues.append((("metric", "curvature"), "missing required key 'curvature'"))
            elif np.shape(A) != (n, n):
                issues.append((("metric", "curvature"), f"curvature must be a {n}x{n} matrix"))
        if self.kind == "dyadic":
            if self.grid.R < 1.0:
                issues.append((("grid", "R"), "dyadic experiments need R >= 1"))
            k = self.constants.k_max
            shells = 4.0 ** (-k) * self.grid.n_r / self.grid.R
            if shells < 8:
                issues.append((
                    ("constants", "k_max"),
                    f"insufficient resolution: B_(4^-{k}) spans {shells:.2f} shells, need 8",
                ))
        if self.kind == "solve" and n != 2:
            issues.append((("metric", "n"), "the two-phase solver needs n = 2"))
        if self.kind == "fh" and self.scan.theta is None and self.scan.n_partitions == 0:
            issues.append((("scan", "theta"), "fh experiments need theta or n_partitions"))
        return issues

    def scaled(self, factor: int) -> "ExperimentConfig":
        """Copy with n_r and n_ang multiplied by factor (n_ang stays even)."""
        if factor < 1:
            raise ConfigError(f"resolution scale must be >= 1, got {factor}")
        data = self.model_dump()
        data["grid"]["n_r"] = self.grid.n_r * factor
        data["grid"]["n_ang"] = self.grid.n_ang * factor
        return ExperimentConfig.model_validate(data)


def parse_config(text: str) -> ExperimentConfig:
    """Parse an experiment file; every problem is reported with its line number."""
    sections: Dict[str, Dict[str, str]] = {}
    lines: Dict[Tuple[str, ...], int] = {}
    errors: List[Tuple[int, str]] = []
    current = None

    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith(("#", ";")):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if current not in ExperimentConfig.model_fields:
                errors.append((number, f"unknown section [{current}]"))
                current = None
                continue
            if current in sections:
                errors.append((number, f"duplicate section [{current}]"))
            sections.setdefault(current, {})
            lines[(current,)] = number
            continue
        if "=" not in line:
            errors.append((number, f"expected 'key = value', got '{line}'"))
            continue
        if current is None:
            errors.append((number, "key outside of a known section"))
            continue
        key, value = (part.strip() for part in line.split("=", 1))
        if key in sections[current]:
            errors.append((number, f"duplicate key '{key}'"))
        sections[current][key] = value
        lines[(current, key)] = number

    if errors:
        raise ConfigError("invalid experiment file", errors)

    try:
        config = ExperimentConfig.model_validate(sections)
    except ValidationError as exc:
        for err in exc.errors():
            loc = tuple(str(p) for p in err["loc"])
            number = lines.get(loc[:2], lines.get(loc[:1], 0))
            errors.append((number, f"{'.'.join(loc)}: {err['msg']}"))
        raise ConfigError("invalid experiment file", sorted(errors)) from None

    for (section, key), message in config.problems():
        errors.append((lines.get((section, key), lines.get((section,), 0)), message))
    if errors:
        raise ConfigError("invalid experiment file", sorted(errors))
    return config


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


# -----------------------------
# Building blocks from a config
# -----------------------------
def build_model(section: MetricSection) -> ModelMetric:
    if section.kind == "curvature_matrix":
        model = ModelMetric.from_curvature_matrix(section.n, np.asarray(section.curvature), section.t)
    elif section.kind == "space_form":
        model = ModelMetric.space_form(section.n, section.kappa, section.t)
    else:
        model = replace(ModelMetric.euclidean(section.n), t=section.t)
    if section.curvature_bound is not None or section.working_radius is not None:
        model = replace(model, curvature_bound=section.curvature_bound,
                        working_radius=section.working_radius)
    return model


def build_pair(config: ExperimentConfig, grid: BallGrid) -> Pair:
    section = config.pair
    if section.family == "zero":
        return make_zero_pair(grid)
    if section.family == "sector":
        return make_sector_pair(grid, section.theta)
    if section.family == "cap":
        return make_cap_pair(grid, section.theta)
    if section.family == "inhomogeneous":
        return make_inhomogeneous_pair(grid, section.a)
    direction = section.direction or [1.0] + [0.0] * (grid.n - 1)
    return make_plane_pair(grid, direction)


def scan_radii(config: ExperimentConfig, grid: BallGrid) -> np.ndarray:
    section = config.scan
    if section.radii is not None:
        return np.asarray(section.radii, dtype=float)
    radii = default_radii(grid, section.r_max, section.count)
    if section.r_min is not None:
        radii = radii[radii >= section.r_min]
    return radii


# -----------------------------
# Output files
# -----------------------------
def _num(value) -> str:
    return repr(float(value))


def _verdict(ok) -> str:
    return "pass" if ok else "fail"


def emit_csv(trace: Union[MonotonicityTrace, DyadicTrace], path) -> Path:
    """Fixed header, full double precision, LF line endings."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if isinstance(trace, DyadicTrace):
            writer.writerow(DYADIC_HEADER)
            last = len(trace) - 1
            for k in range(len(trace)):
                ok = trace.chain_ok[k] and (k == last or trace.product_ok[k])
                writer.writerow([int(trace.ks[k])] + [_num(v) for v in (
                    trace.radii[k], trace.A_plus[k], trace.A_minus[k], trace.b_plus[k],
                    trace.b_minus[k], trace.delta[k], trace.phi[k],
                )] + [_verdict(ok)])
        else:
            writer.writerow(SCAN_HEADER)
            for i in range(len(trace)):
                writer.writerow([_num(v) for v in (
                    trace.radii[i], trace.A_plus[i], trace.A_minus[i], trace.B_plus[i],
                    trace.B_minus[i], trace.phi[i], trace.phi_F[i],
                )] + [_verdict(trace.row_verdicts[i])])
    return path


def read_csv(path) -> Dict[str, Union[np.ndarray, List[str]]]:
    """Columns of an emitted CSV; numeric columns as float arrays, verdicts as strings."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    columns = {}
    for idx, name in enumerate(header):
        values = [row[idx] for row in rows]
        if name == "verdict":
            columns[name] = values
        elif name == "k":
            columns[name] = np.array([int(v) for v in values], dtype=int)
        else:
            columns[name] = np.array([float(v) for v in values], dtype=float)
    return columns


def emit_fh_table(reports, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(FH_HEADER)
        for rep in reports:
            writer.writerow([_num(rep.theta), _num(rep.alpha_plus), _num(rep.alpha_minus),
                             _num(rep.total)])
    return path


def emit_svg(trace: Union[MonotonicityTrace, DyadicTrace], path, log_x: bool = False) -> Path:
    """Line plot of phi and phi_F against r, or of b_k against k for dyadic traces."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "monolab"
    fig, ax = plt.subplots(figsize=(6, 4))
    if isinstance(trace, DyadicTrace):
        ax.plot(trace.ks, trace.b_plus, marker="o", label="b_k plus")
        ax.plot(trace.ks, trace.b_minus, marker="s", label="b_k minus")
        ax.set_xlabel("k")
        ax.set_ylabel("b_k")
        if np.all(trace.b_plus > 0) and np.all(trace.b_minus > 0):
            ax.set_yscale("log")
    else:
        ax.plot(trace.radii, trace.phi, label="phi")
        ax.plot(trace.radii, trace.phi_F, linestyle="--", label="phi_F")
        ax.set_xlabel("r")
        ax.set_ylabel("phi(r)")
        if log_x and len(trace):
            ax.set_xscale("log")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


# -----------------------------
# Reports
# -----------------------------
class Report(BaseModel):
    name: str
    kind: str
    config: dict
    verdicts: Dict[str, bool]
    passed: bool
    fitted: Dict[str, Optional[float]]
    files: List[str]
    runtime_s: float
    version: str = __version__


def _finite(value) -> Optional[float]:
    value = float(value)
    return value if math.isfinite(value) else None


def _run_scan(config, model, grid, out, files, verdicts, fitted):
    pair = build_pair(config, grid)
    trace = phi_scan(model, pair, scan_radii(config, grid), c0=config.constants.c0,
                     tol_mono=config.constants.tol_mono)
    c = config.constants
    diff = diff_inequality_check(trace, C2=c.C2, C3=c.C3, t=model.t, C1=c.C1)
    verdicts["monotone"] = trace.verdicts["monotone"]
    verdicts["diff_inequality"] = diff.passed
    if len(trace):
        residual = trace.identity_residual[np.isfinite(trace.identity_residual)]
        fitted["phi_min"] = float(trace.phi.min())
        fitted["phi_max"] = float(trace.phi.max())
        fitted["identity_residual"] = float(residual.max()) if residual.size else None
    fitted["diff_worst_margin"] = _finite(diff.worst_margin)
    return trace


def _run_bound(config, model, grid, out, files, verdicts, fitted):
    pair = build_pair(config, grid)
    report = almost_mono_bound(model, pair, config.constants.delta, config.scan.radii)
    verdicts["bounded"] = bool(math.isfinite(report.C_fitted))
    fitted.update(C_fitted=report.C_fitted, sup_phi=report.sup_phi, budget=report.budget,
                  argmax_r=_finite(report.argmax_r))
    try:
        energy = energy_inequality_check(model, pair.u_plus, seed=config.experiment.seed)
        fitted["energy_fitted_C"] = energy.fitted_C
    except PreconditionError as exc:
        logger.warning(f"energy inequality skipped: {exc}")
        fitted["energy_fitted_C"] = None
    corrector = build_corrector(model, grid)
    weighted = corrector_energy_bound(model, pair.u_plus, corrector, report.delta)
    fitted["corrector_C"] = weighted.rhs_constant
    fitted["corrector_c"] = corrector.c
    return report.trace


def _run_dyadic(config, model, grid, out, files, verdicts, fitted):
    c = config.constants
    trace = dyadic_trace(model, build_pair(config, grid), c.k_max, C1=c.C1, C2=c.C2)
    verdicts.update(trace.verdicts)
    fitted["epsilon"] = _finite(trace.epsilon)
    ratios = trace.product_ratio[np.isfinite(trace.product_ratio)]
    fitted["max_product_ratio"] = float(ratios.max()) if ratios.size else None
    return trace


def _run_calibrate(config, model, grid, out, files, verdicts, fitted):
    pair = build_pair(config, grid)
    result = calibrate_c0(model, [pair], scan_radii(config, grid))
    verdicts["calibrated"] = result.passed
    fitted["c0"] = result.c0
    fitted["last_failing_c0"] = result.last_failing
    return result.traces[0]


def _run_fh(config, model, grid, out, files, verdicts, fitted):
    n, section = config.metric.n, config.scan
    reports = []
    if section.theta is not None:
        reports.append(friedland_hayman_check(n, section.theta))
        fitted["sum"] = reports[0].total
    if section.n_partitions:
        table = friedland_hayman_scan(n, section.n_partitions, section.margin)
        files.append(str(emit_fh_table(table, out / "fh.csv")))
        reports.extend(table)
        fitted["min_sum"] = min(r.total for r in table)
    verdicts["friedland_hayman"] = all(r.passed for r in reports)
    return None


def _run_hebey(config, model, grid, out, files, verdicts, fitted):
    report = hebey_verify(model, config.scan.radius, config.constants.K)
    verdicts["hebey"] = report.passed
    fitted.update(fitted_K=report.fitted_K, value_K=report.value_K,
                  derivative_K=report.derivative_K, eigen_min=report.eigen_min,
                  eigen_max=report.eigen_max, worst_ratio=_finite(report.worst_ratio))
    return None


def _run_solve(config, model, grid, out, files, verdicts, fitted):
    section = config.problem
    e = np.asarray(section.direction or [1.0, 0.0], dtype=float)
    if section.boundary == "linear":
        def boundary(x):
            return section.amplitude * (x @ e) + section.offset
    else:
        boundary = section.amplitude + section.offset
    problem = TwoPhaseProblem(
        model=model, grid=grid, boundary=boundary, f1=section.f1, f2=section.f2, bound=section.bound,
        omega=section.omega, tol=section.tol, max_sweeps=section.max_sweeps, max_outer=section.max_outer,
    )
    solution = two_phase_solve(problem)
    files.extend(str(p) for p in solution.save(out))

    h = grid.mesh_size
    scale = max(1.0, abs(section.amplitude) + abs(section.offset), section.bound)
    limit = 10.0 * h * h * scale
    verdicts["converged"] = solution.converged
    verdicts["residual"] = max(solution.residual_plus, solution.residual_minus) <= limit
    fitted.update(iterations=float(solution.iterations), residual_plus=solution.residual_plus,
                  residual_minus=solution.residual_minus)

    lip = lipschitz_ratio(solution, section.K or 0.5 * grid.R)
    fitted["lipschitz_ratio"] = None if lip.vacuous else lip.sup_ratio
    G = (lambda a, b: a - b) if section.flux == "difference" else (lambda a, b: a * b - 1.0)
    flux = flux_balance_check(solution, G)
    if flux.values.size:
        fitted["flux_min"] = float(flux.values.min())
        fitted["flux_max"] = float(flux.values.max())
    if not solution.converged:
        raise NonConvergenceError(
            f"sign pattern did not settle after {solution.iterations} iterations"
            + (" (cycle)" if solution.cycled else "")
            + (" (relaxation stalled)" if solution.stalled else "")
        )
    return None


RUNNERS = {
    "scan": _run_scan,
    "bound": _run_bound,
    "dyadic": _run_dyadic,
    "calibrate": _run_calibrate,
    "fh": _run_fh,
    "hebey": _run_hebey,
    "solve": _run_solve,
}


def run_experiment(config: ExperimentConfig, out_dir, name: Optional[str] = None) -> Report:
    """Dispatch one experiment, write its traces and a JSON report into out_dir."""
    start = time.perf_counter()
    name = name or config.experiment.name or config.kind
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = build_model(config.metric)
    grid = None
    if config.kind not in ("fh", "hebey"):
        grid = BallGrid(config.metric.n, config.grid.R, config.grid.n_r, config.grid.n_ang)

    files: List[str] = []
    verdicts: Dict[str, bool] = {}
    fitted: Dict[str, Optional[float]] = {}
    logger.info(f"Running {config.kind} experiment '{name}' on {model.describe()}")

    def finish() -> Report:
        report = Report(
            name=name, kind=config.kind, config=config.model_dump(mode="json"),
            verdicts={k: bool(v) for k, v in verdicts.items()},
            passed=all(verdicts.values()),
            fitted={k: (None if v is None else float(v)) for k, v in fitted.items()},
            files=files, runtime_s=time.perf_counter() - start,
        )
        (out / "report.json").write_text(report.model_dump_json(indent=2), encoding="utf-8")
        return report

    try:
        trace = RUNNERS[config.kind](config, model, grid, out, files, verdicts, fitted)
    except NonConvergenceError:
        finish()
        raise
    if trace is not None:
        stem = "dyadic" if isinstance(trace, DyadicTrace) else "trace"
        files.append(str(emit_csv(trace, out / f"{stem}.csv")))
        if config.experiment.plots:
            files.append(str(emit_svg(trace, out / f"{stem}.svg", config.experiment.log_x)))

    report = finish()
    status = "PASS" if report.passed else "FAIL"
    logger.info(f"{status} {name}: {report.verdicts} ({report.runtime_s:.2f}s)")
    return report


# -----------------------------
# CLI
# -----------------------------
def _run_file(path: str, kind: str, out_dir: str, scale: int) -> Tuple[str, int, str]:
    """Run one experiment file; returns (path, exit code, message). Used by worker processes."""
    try:
        config = load_config(path)
        if config.kind != kind:
            raise ConfigError(f"{path} is a '{config.kind}' experiment, not '{kind}'")
        if scale != 1:
            config = config.scaled(scale)
        stem = Path(path).stem
        report = run_experiment(config, Path(out_dir) / stem, name=config.experiment.name or stem)
        return path, (0 if report.passed else 1), ", ".join(
            f"{k}={'pass' if v else 'fail'}" for k, v in report.verdicts.items()
        )
    except MonoLabError as exc:
        return path, exc.exit_code, f"{type(exc).__name__}: {exc}"


class ExperimentRunner:
    """
    Runs one experiment file or every *.cfg file of a directory.

    Args:
        kind: experiment kind the files must declare
        out_dir: root directory for outputs (one subdirectory per file)
        jobs: worker processes for directories with several files
        resolution_scale: multiplier applied to n_r and n_ang
    """

    def __init__(self, kind: str, out_dir: str, jobs: int = 1, resolution_scale: int = 1):
        if kind not in KINDS:
            raise ConfigError(f"unknown experiment kind '{kind}'")
        if jobs < 1:
            raise ConfigError(f"--jobs must be >= 1, got {jobs}")
        self.kind = kind
        self.out_dir = out_dir
        self.jobs = jobs
        self.resolution_scale = resolution_scale

    def _declares_kind(self, path: Path) -> bool:
        try:
            return load_config(path).kind == self.kind
        except ConfigError:
            # keep broken files so the run reports them
            return True

    def collect(self, config_path: str) -> List[str]:
        """A single file, or the *.cfg files of a directory that declare this kind."""
        path = Path(config_path)
        if path.is_dir():
            files = sorted(str(p) for p in path.glob("*.cfg") if self._declares_kind(p))
            if not files:
                raise ConfigError(f"no {self.kind} experiment files in {path}")
            return files
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        return [str(path)]

    def run(self, config_path: str) -> int:
        files = self.collect(config_path)
        logger.info(f"{len(files)} {self.kind} experiment(s), jobs={self.jobs}")
        results = []
        if self.jobs == 1 or len(files) == 1:
            for path in files:
                results.append(_run_file(path, self.kind, self.out_dir, self.resolution_scale))
        else:
            with ProcessPoolExecutor(max_workers=self.jobs) as ex:
                futures = [
                    ex.submit(_run_file, path, self.kind, self.out_dir, self.resolution_scale)
                    for path in files
                ]
                for future in as_completed(futures):
                    results.append(future.result())

        code = 0
        for path, status, message in sorted(results):
            if status == 0:
                logger.info(f"{path}: {message}")
            else:
                logger.error(f"{path} (exit {status}): {message}")
            code = max(code, status)
        return code


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True,
                        help="experiment file, or a directory of *.cfg files")
    common.add_argument("--out", default=os.getenv("MONOLAB_OUTPUT_DIR", "results"),
                        help="output directory (or set MONOLAB_OUTPUT_DIR)")
    common.add_argument("--jobs", type=int, default=1,
                        help="worker processes for a directory of configs (default: 1)")
    common.add_argument("--resolution-scale", type=int, default=1,
                        help="multiply n_r and n_ang for refinement studies (default: 1)")
    common.add_argument("--log-level", default=os.getenv("MONOLAB_LOG_LEVEL", "INFO"),
                        help="logging level (or set MONOLAB_LOG_LEVEL)")

    parser = argparse.ArgumentParser(
        description="Monotonicity-formula laboratory on geodesic balls"
    )
    sub = parser.add_subparsers(dest="kind", required=True)
    helps = {
        "scan": "phi(r) scan and monotone verdict",
        "bound": "almost-monotonicity constant",
        "dyadic": "dyadic energy lemmas",
        "fh": "cap exponents and the Friedland-Hayman sum",
        "solve": "two-phase free boundary solve and Lipschitz ratio",
        "hebey": "normal-coordinate metric bounds",
        "calibrate": "smallest grid value of c0 giving monotonicity",
    }
    for kind in KINDS:
        sub.add_parser(kind, parents=[common], help=helps[kind])
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point."""
    load_dotenv()
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        format='%(asctime)s [%(levelname)s] %(name)s: %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S',
    )
    try:
        runner = ExperimentRunner(args.kind, args.out, args.jobs, args.resolution_scale)
        return runner.run(args.config)
    except MonoLabError as exc:
        logger.error(f"{type(exc).__name__}: {exc}")
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
