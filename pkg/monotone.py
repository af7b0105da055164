#!/usr/bin/env python3
"""
Monotonicity engine.

For a pair (u_plus, u_minus) on a grid and metric:
    A_pm(r) = int_{B_r} |grad u_pm|^2 w dV_g,   w = |x|^(2-n) or the corrector F_g
    B_pm(r) = int_{dB_r} |grad u_pm|^2 w dS_g
    phi(r)  = e^(c0 r^2) r^-4 A_plus(r) A_minus(r)
    phi_F   = r^-4 A_plus(r) A_minus(r) with the corrector weight
and the verdicts built on them: monotone scans, c0 calibration, the
almost-monotone bound, the dyadic lemmas and the differential inequality.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ballgrid import BallGrid, sphere_integral, volume_integral
from errors import ConfigError, DomainError
from fields import CorrectorField, build_corrector, gradient_energy
from geometry import ModelMetric
from pairs import SUBHARMONIC, Pair

logger = logging.getLogger(__name__)

DISTANCE = "distance_power"
CORRECTOR = "corrector"
WEIGHTS = (DISTANCE, CORRECTOR)

# smallest radius, in shell spacings, where A_pm is trusted
MIN_RADIUS_SHELLS = 4


class PairEnergetics:
    """
    Lazily computed energy densities of one pair on one metric.

    Densities are computed once and reused for every radius of a scan.
    """

    def __init__(self, model: ModelMetric, pair: Pair, corrector: Optional[CorrectorField] = None):
        self.model = model
        self.pair = pair
        self.grid: BallGrid = pair.grid
        self._corrector = corrector
        self._energy: Optional[Tuple[np.ndarray, np.ndarray]] = None

    @property
    def energy(self) -> Tuple[np.ndarray, np.ndarray]:
        if self._energy is None:
            self._energy = (
                gradient_energy(self.model, self.pair.u_plus).values,
                gradient_energy(self.model, self.pair.u_minus).values,
            )
        return self._energy

    @property
    def corrector(self) -> CorrectorField:
        if self._corrector is None:
            self._corrector = build_corrector(self.model, self.grid)
        return self._corrector

    def _density(self, weight: str):
        if weight not in WEIGHTS:
            raise ConfigError(f"unknown weight '{weight}', expected one of {WEIGHTS}")
        plus, minus = self.energy
        if weight == CORRECTOR:
            F = self.corrector.values
            return plus * F, minus * F, 0.0
        return plus, minus, 2.0 - self.grid.n

    def A(self, r: float, weight: str = DISTANCE) -> Tuple[float, float]:
        plus, minus, power = self._density(weight)
        return (volume_integral(self.grid, self.model, plus, r, power),
                volume_integral(self.grid, self.model, minus, r, power))

    def B(self, r: float, weight: str = CORRECTOR) -> Tuple[float, float]:
        plus, minus, power = self._density(weight)
        if power:
            w = self.grid.radius**power
            plus, minus = plus * w, minus * w
        return (sphere_integral(self.grid, self.model, plus, r),
                sphere_integral(self.grid, self.model, minus, r))


def energies(model: ModelMetric, pair: Pair, r: float, weight: str = DISTANCE,
             corrector: Optional[CorrectorField] = None) -> Tuple[float, float]:
    return PairEnergetics(model, pair, corrector).A(r, weight)


def surface_energies(model: ModelMetric, pair: Pair, r: float, weight: str = CORRECTOR,
                     corrector: Optional[CorrectorField] = None) -> Tuple[float, float]:
    return PairEnergetics(model, pair, corrector).B(r, weight)


def phi(model: ModelMetric, pair: Pair, r: float, c0: float = 0.0,
        weight: str = DISTANCE) -> float:
    if r <= 0:
        raise DomainError(f"phi needs r > 0, got {r}")
    a_plus, a_minus = energies(model, pair, r, weight)
    return math.exp(c0 * r * r) * a_plus * a_minus / r**4


# -----------------------------
# Scans
# -----------------------------
def default_radii(grid: BallGrid, r_max: Optional[float] = None, count: int = 24) -> np.ndarray:
    """Shell radii from 4 spacings out to r_max, roughly evenly spaced."""
    r_max = grid.R if r_max is None else min(float(r_max), grid.R)
    first = MIN_RADIUS_SHELLS
    last = int(np.searchsorted(grid.shells, r_max * (1 + 1e-12), side="right")) - 1
    if last < first:
        raise DomainError(f"no admissible scan radius below {r_max} on {grid!r}")
    idx = np.unique(np.linspace(first, last, count).round().astype(int))
    return grid.shells[idx]


def _checked_radii(grid: BallGrid, radii) -> np.ndarray:
    radii = np.asarray(radii, dtype=float)
    if radii.size and (np.any(np.diff(radii) <= 0)):
        raise DomainError("scan radii must be strictly increasing")
    if radii.size and (radii[0] <= 0 or radii[-1] > grid.R * (1 + 1e-12)):
        raise DomainError(f"scan radii must lie in (0, {grid.R}]")
    floor = MIN_RADIUS_SHELLS * grid.dr
    keep = radii >= floor * (1 - 1e-12)
    if not keep.all():
        logger.warning(f"dropping {int((~keep).sum())} radii below {floor:.4g} (4 shell spacings)")
    return radii[keep]


def monotone_rows(values: np.ndarray, tol: float) -> np.ndarray:
    """Row i passes when values[i] >= values[i-1] (1 - tol); row 0 always passes."""
    ok = np.ones(values.shape, dtype=bool)
    ok[1:] = values[1:] >= values[:-1] * (1.0 - tol)
    return ok


def mono_tolerance(grid: BallGrid) -> float:
    return 3.0 * grid.dr**2 + 1e-9


@dataclass
class MonotonicityTrace:
    radii: np.ndarray
    A_plus: np.ndarray
    A_minus: np.ndarray
    B_plus: np.ndarray
    B_minus: np.ndarray
    phi: np.ndarray
    phi_F: np.ndarray
    A_F_plus: np.ndarray
    A_F_minus: np.ndarray
    B_dist_plus: np.ndarray
    B_dist_minus: np.ndarray
    c0: float
    tol_mono: float
    log_derivative: np.ndarray
    identity_rhs: np.ndarray
    row_verdicts: np.ndarray
    verdicts: Dict[str, bool] = field(default_factory=dict)
    label: str = ""

    def __len__(self) -> int:
        return len(self.radii)

    @property
    def identity_residual(self) -> np.ndarray:
        """Relative gap between d ln phi / dr and -4/r + 2 c0 r + B/A (both phases)."""
        lhs = self.log_derivative / self.radii
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.abs(lhs - self.identity_rhs) / np.abs(self.identity_rhs)

    @classmethod
    def empty(cls, c0: float = 0.0, tol_mono: float = 0.0) -> "MonotonicityTrace":
        z = np.zeros(0)
        return cls(z, z, z, z, z, z, z, z, z, z, z, c0, tol_mono, z, z,
                   np.zeros(0, dtype=bool), {"monotone": True})


def phi_scan(model: ModelMetric, pair: Pair, radii: Optional[Sequence[float]] = None,
             c0: float = 0.0, tol_mono: Optional[float] = None,
             energetics: Optional[PairEnergetics] = None,
             check_class: bool = True) -> MonotonicityTrace:
    """
    Evaluate A, B, phi and phi_F along radii and record the monotone verdict.

    check_class=False silences the warning for pairs outside the subharmonic
    class, for callers that only want the raw trace.
    """
    grid = pair.grid
    tol = mono_tolerance(grid) if tol_mono is None else float(tol_mono)
    radii = default_radii(grid) if radii is None else _checked_radii(grid, radii)
    if check_class and pair.cls != SUBHARMONIC:
        logger.warning(f"monotone verdict on non-subharmonic pair {pair.describe()}")
    if radii.size == 0:
        return MonotonicityTrace.empty(c0, tol)

    en = energetics or PairEnergetics(model, pair)
    A = np.array([en.A(r, DISTANCE) for r in radii])
    AF = np.array([en.A(r, CORRECTOR) for r in radii])
    B = np.array([en.B(r, CORRECTOR) for r in radii])
    BD = np.array([en.B(r, DISTANCE) for r in radii])

    phi_vals = np.exp(c0 * radii**2) * A[:, 0] * A[:, 1] / radii**4
    phi_F = AF[:, 0] * AF[:, 1] / radii**4

    log_derivative = np.full(radii.shape, np.nan)
    if radii.size >= 2 and np.all(phi_vals > 0):
        log_derivative = np.gradient(np.log(phi_vals), np.log(radii))
    with np.errstate(divide="ignore", invalid="ignore"):
        identity_rhs = -4.0 / radii + 2.0 * c0 * radii + BD[:, 0] / A[:, 0] + BD[:, 1] / A[:, 1]

    rows = monotone_rows(phi_vals, tol)
    trace = MonotonicityTrace(
        radii=radii, A_plus=A[:, 0], A_minus=A[:, 1], B_plus=B[:, 0], B_minus=B[:, 1],
        phi=phi_vals, phi_F=phi_F, A_F_plus=AF[:, 0], A_F_minus=AF[:, 1],
        B_dist_plus=BD[:, 0], B_dist_minus=BD[:, 1], c0=float(c0), tol_mono=tol,
        log_derivative=log_derivative, identity_rhs=identity_rhs, row_verdicts=rows,
        verdicts={"monotone": bool(rows.all())},
        label=f"{pair.describe()} on {model.describe()}",
    )
    if not rows.all():
        i = int(np.argmin(rows))
        logger.info(f"phi decreases at r={radii[i]:.4g} for {trace.label} (c0={c0})")
    return trace


def boundary_ratio(trace: MonotonicityTrace, alpha_plus: float,
                   alpha_minus: float) -> Tuple[np.ndarray, np.ndarray]:
    """r B_pm / (2 alpha_pm A_pm); identically 1 for homogeneous flat pairs."""
    with np.errstate(divide="ignore", invalid="ignore"):
        return (trace.radii * trace.B_dist_plus / (2.0 * alpha_plus * trace.A_plus),
                trace.radii * trace.B_dist_minus / (2.0 * alpha_minus * trace.A_minus))


# -----------------------------
# c0 calibration
# -----------------------------
@dataclass
class CalibrationResult:
    c0: Optional[float]
    passed: bool
    outcomes: List[Tuple[float, bool]]
    last_failing: Optional[float]
    first_passing: Optional[float]
    traces: List[MonotonicityTrace]


def c0_candidates(Lambda: float) -> List[float]:
    if Lambda <= 0:
        return [0.0]
    return [0.0] + [m * Lambda for m in (0.25, 0.5, 1.0, 2.0, 4.0, 8.0)]


def calibrate_c0(model: ModelMetric, pairs: Sequence[Pair],
                 radii: Optional[Sequence[float]] = None) -> CalibrationResult:
    """Smallest grid value of c0 for which every pair's scan is monotone."""
    traces = [phi_scan(model, p, radii, c0=0.0) for p in pairs]
    outcomes = []
    chosen = None
    last_failing = None
    for c0 in c0_candidates(model.Lambda):
        ok = all(
            monotone_rows(t.phi * np.exp(c0 * t.radii**2), t.tol_mono).all() for t in traces
        )
        outcomes.append((c0, bool(ok)))
        if ok:
            chosen = c0
            break
        last_failing = c0
    if chosen is None:
        logger.warning(f"no grid value of c0 makes phi monotone on {model.describe()}")
    else:
        traces = [phi_scan(model, p, t.radii, c0=chosen) for p, t in zip(pairs, traces)]
        logger.info(f"calibrated c0={chosen:.4g} on {model.describe()}")
    return CalibrationResult(
        c0=chosen, passed=chosen is not None, outcomes=outcomes,
        last_failing=last_failing, first_passing=chosen, traces=traces,
    )


# -----------------------------
# Almost monotonicity
# -----------------------------
@dataclass
class AlmostMonotoneReport:
    sup_phi: float
    argmax_r: float
    budget: float
    C_fitted: float
    delta: float
    trace: MonotonicityTrace


def almost_mono_bound(model: ModelMetric, pair: Pair, delta: Optional[float] = None,
                      radii: Optional[Sequence[float]] = None) -> AlmostMonotoneReport:
    """C_fitted = sup_{r <= delta} phi(r) / (1 + A_plus(delta) + A_minus(delta))^2."""
    grid = pair.grid
    delta = grid.R if delta is None else float(delta)
    if delta <= 0 or delta > grid.R * (1 + 1e-12):
        raise DomainError(f"delta={delta} outside (0, {grid.R}]")
    en = PairEnergetics(model, pair)
    trace = phi_scan(model, pair, default_radii(grid, delta) if radii is None else radii,
                     energetics=en, check_class=False)
    a_plus, a_minus = en.A(delta, DISTANCE)
    budget = (1.0 + a_plus + a_minus) ** 2
    if len(trace):
        i = int(np.argmax(trace.phi))
        sup_phi, argmax_r = float(trace.phi[i]), float(trace.radii[i])
    else:
        sup_phi, argmax_r = 0.0, float("nan")
    return AlmostMonotoneReport(sup_phi=sup_phi, argmax_r=argmax_r, budget=budget,
                                C_fitted=sup_phi / budget, delta=delta, trace=trace)


# -----------------------------
# Dyadic lemmas
# -----------------------------
@dataclass
class DyadicTrace:
    ks: np.ndarray
    radii: np.ndarray
    A_plus: np.ndarray
    A_minus: np.ndarray
    b_plus: np.ndarray
    b_minus: np.ndarray
    delta: np.ndarray
    phi: np.ndarray
    product_ratio: np.ndarray
    product_ok: np.ndarray
    epsilon: float
    chain_ok: np.ndarray
    verdicts: Dict[str, bool]
    C1: float
    C2: float

    def __len__(self) -> int:
        return len(self.ks)


def dyadic_trace(model: ModelMetric, pair: Pair, k_max: int, C1: float = 1.0,
                 C2: float = 10.0) -> DyadicTrace:
    """
    Energies over B_{4^-k}, k = 0..k_max, and the dyadic verdicts.

    product:   4^4 A+_{k+1} A-_{k+1} <= A+_k A-_k (1 + delta_k) when b_k >= C1
    dichotomy: b_k >= C1 and 4^4 A+_{k+1} >= A+_k imply A-_{k+1} <= (1 - eps) A-_k;
               eps is fitted, the verdict needs eps > 0 (vacuous if never triggered)
    chain:     4^(4k) A+_k A-_k <= A+_0 A-_0 prod_{j<k} (1 + delta_j)
    """
    grid = pair.grid
    if k_max < 1:
        raise ConfigError(f"dyadic trace needs k_max >= 1, got {k_max}")
    if grid.R < 1.0:
        raise ConfigError(f"dyadic trace needs a grid of radius >= 1, got {grid.R}")
    finest = 4.0 ** (-k_max)
    if finest < 8 * grid.dr:
        raise ConfigError(
            f"insufficient resolution: B_(4^-{k_max}) spans {finest / grid.dr:.2f} shells, "
            f"need at least 8 (raise n_r to {int(math.ceil(8 * grid.R * 4**k_max))})"
        )

    en = PairEnergetics(model, pair)
    ks = np.arange(k_max + 1)
    radii = 4.0 ** (-ks.astype(float))
    A = np.array([en.A(r, DISTANCE) for r in radii])
    b = (4.0 ** (4 * ks))[:, None] * A
    with np.errstate(divide="ignore"):
        delta = C2 / np.sqrt(b[:, 0]) + C2 / np.sqrt(b[:, 1]) + C2 * 4.0 ** (-2.0 * ks)
    premise = (b[:, 0] >= C1) & (b[:, 1] >= C1)
    prod = A[:, 0] * A[:, 1]

    lhs = 4.0**4 * prod[1:]
    rhs = prod[:-1] * (1.0 + delta[:-1])
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(prod[:-1] > 0, lhs / prod[:-1], np.nan)
    product_ok = ~premise[:-1] | (lhs <= rhs * (1 + 1e-9))

    eps_values = []
    for k in range(k_max):
        if premise[k] and 4.0**4 * A[k + 1, 0] >= A[k, 0] and A[k, 1] > 0:
            eps_values.append(1.0 - A[k + 1, 1] / A[k, 1])
    epsilon = float(min(eps_values)) if eps_values else float("nan")
    dichotomy_ok = (not eps_values) or epsilon > 0

    phi_k = (4.0 ** (4 * ks)) * prod
    allowance = np.concatenate([[1.0], np.cumprod(1.0 + delta[:-1])])
    chain_ok = phi_k <= phi_k[0] * allowance * (1 + 1e-9)

    return DyadicTrace(
        ks=ks, radii=radii, A_plus=A[:, 0], A_minus=A[:, 1], b_plus=b[:, 0], b_minus=b[:, 1],
        delta=delta, phi=phi_k, product_ratio=ratio, product_ok=product_ok, epsilon=epsilon,
        chain_ok=chain_ok, C1=float(C1), C2=float(C2),
        verdicts={
            "product": bool(product_ok.all()),
            "dichotomy": bool(dichotomy_ok),
            "chain": bool(chain_ok.all()),
        },
    )


# -----------------------------
# Differential inequality
# -----------------------------
@dataclass
class DiffInequalityReport:
    passed: bool
    margins: np.ndarray
    worst_margin: float
    premise_count: int
    integrated_lhs: float
    integrated_rhs: float
    integrated_ok: bool
    vacuous: bool


def diff_inequality_check(trace: MonotonicityTrace, C2: float = 10.0, C3: float = 10.0,
                          t: float = 1.0, C1: float = 1.0) -> DiffInequalityReport:
    """
    phi_F' >= -C2 (1/sqrt(A_plus) + 1/sqrt(A_minus) + C3 t^2) phi_F at interior
    radii where A_pm >= C1, and phi_F(1/4) <= (1 + C2 delta) phi_F(1).
    """
    r = trace.radii
    m = len(r)
    margins = np.full(m, np.nan)
    if m < 3:
        return DiffInequalityReport(True, margins, math.inf, 0, 0.0, 0.0, True, True)

    ap, am, pf = trace.A_F_plus, trace.A_F_minus, trace.phi_F
    premise = (ap >= C1) & (am >= C1)
    slope = np.gradient(pf, r)
    with np.errstate(divide="ignore", invalid="ignore"):
        decay = 1.0 / np.sqrt(ap) + 1.0 / np.sqrt(am) + C3 * t * t
        rhs = -C2 * decay * pf
    interior = np.zeros(m, dtype=bool)
    interior[1:-1] = True
    active = interior & premise
    margins[active] = slope[active] - rhs[active]

    spacing = np.gradient(r)
    slack = trace.tol_mono * np.abs(pf) / spacing
    ok = np.all(margins[active] >= -slack[active]) if active.any() else True

    lo = min(max(0.25, r[0]), r[-1])
    hi = max(min(1.0, r[-1]), r[0])
    phi_lo = float(np.interp(lo, r, pf))
    phi_hi = float(np.interp(hi, r, pf))
    with np.errstate(divide="ignore"):
        d_hi = (1.0 / math.sqrt(np.interp(hi, r, ap)) if np.interp(hi, r, ap) > 0 else math.inf)
        d_hi += (1.0 / math.sqrt(np.interp(hi, r, am)) if np.interp(hi, r, am) > 0 else math.inf)
    d_hi += C3 * t * t
    integrated_rhs = (1.0 + C2 * d_hi) * phi_hi if phi_hi > 0 else (0.0 if phi_lo == 0 else math.inf)
    integrated_ok = phi_lo <= integrated_rhs * (1 + 1e-9) + 1e-300

    worst = float(np.nanmin(margins)) if active.any() else math.inf
    return DiffInequalityReport(
        passed=bool(ok and integrated_ok), margins=margins, worst_margin=worst,
        premise_count=int(active.sum()), integrated_lhs=phi_lo,
        integrated_rhs=float(integrated_rhs), integrated_ok=bool(integrated_ok),
        vacuous=not bool(active.any()),
    )
