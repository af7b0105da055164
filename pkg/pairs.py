#!/usr/bin/env python3
"""
Two-phase test pairs (u_plus, u_minus) and characteristic cone exponents.

Families:
- plane:          <x,e>^+ and <x,e>^-                     (equality case)
- sector (n=2):   r^a sin(a phi) on complementary sectors  (strict case)
- inhomogeneous:  x1^+ - (a/2)(x1^+)^2 and x1^-           (Delta u >= -1 case)
- cap (n=3):      r^a P(theta) on complementary polar caps
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from ballgrid import BallGrid
from errors import ConfigError, NumericalError
from fields import ScalarField, check_superharmonic_bound
from geometry import ModelMetric

logger = logging.getLogger(__name__)

SUBHARMONIC = "subharmonic"
DELTA_GE_MINUS_ONE = "delta_ge_minus_one"
CLASS_BOUNDS = {SUBHARMONIC: 0.0, DELTA_GE_MINUS_ONE: 1.0}


@dataclass(frozen=True, eq=False)
class Pair:
    u_plus: ScalarField
    u_minus: ScalarField
    cls: str
    interface: np.ndarray
    family: str
    params: Dict[str, object] = field(default_factory=dict)

    @property
    def grid(self) -> BallGrid:
        return self.u_plus.grid

    def scaled(self, plus: float = 1.0, minus: float = 1.0) -> "Pair":
        return Pair(self.u_plus.scaled(plus), self.u_minus.scaled(minus), self.cls,
                    self.interface, self.family, dict(self.params))

    def describe(self) -> str:
        args = ", ".join(f"{k}={v}" for k, v in self.params.items())
        return f"{self.family}({args})"


# -----------------------------
# Interface tagging
# -----------------------------
def phase_labels(u_plus: np.ndarray, u_minus: np.ndarray) -> np.ndarray:
    return np.where(u_plus > 0, 1, np.where(u_minus > 0, -1, 0)).astype(np.int8)


def interface_mask(grid: BallGrid, labels: np.ndarray) -> np.ndarray:
    """Nodes with a stencil neighbor carrying a different phase label."""
    tagged = np.zeros(grid.shape, dtype=bool)
    lower = np.concatenate([grid.antipode(labels)[:1], labels[:-1]], axis=0)
    tagged |= lower != labels
    tagged[:-1] |= labels[1:] != labels[:-1]
    axis = 1 if grid.n == 2 else 2
    tagged |= np.roll(labels, 1, axis=axis) != labels
    tagged |= np.roll(labels, -1, axis=axis) != labels
    if grid.n == 3:
        half = grid.n_azimuth // 2
        tagged[:, 1:] |= labels[:, :-1] != labels[:, 1:]
        tagged[:, :-1] |= labels[:, 1:] != labels[:, :-1]
        for row in (0, -1):
            tagged[:, row] |= np.roll(labels[:, row], half, axis=1) != labels[:, row]
    return tagged


def build_pair(grid: BallGrid, u_plus, u_minus, cls: str, family: str, **params) -> Pair:
    """Wrap nodal values into a Pair, tagging the interface on both phases."""
    up = np.maximum(np.asarray(u_plus, dtype=float), 0.0)
    um = np.maximum(np.asarray(u_minus, dtype=float), 0.0)
    tagged = interface_mask(grid, phase_labels(up, um))
    return Pair(
        u_plus=ScalarField(grid, up, kinks=tagged, name="u_plus"),
        u_minus=ScalarField(grid, um, kinks=tagged, name="u_minus"),
        cls=cls, interface=tagged, family=family, params=params,
    )


# -----------------------------
# Generators
# -----------------------------
def make_zero_pair(grid: BallGrid) -> Pair:
    zeros = np.zeros(grid.shape)
    return build_pair(grid, zeros, zeros, SUBHARMONIC, "zero")


def make_plane_pair(grid: BallGrid, direction) -> Pair:
    e = np.asarray(direction, dtype=float)
    if e.shape != (grid.n,) or abs(np.linalg.norm(e) - 1.0) > 1e-9:
        raise ConfigError(f"plane pair needs a unit vector in R^{grid.n}, got {direction}")
    s = grid.coords @ e
    return build_pair(grid, s, -s, SUBHARMONIC, "plane", direction=tuple(float(v) for v in e))


def make_sector_pair(grid: BallGrid, theta: float) -> Pair:
    if grid.n != 2:
        raise ConfigError("sector pairs exist only in dimension 2")
    if not (0.0 < theta < 2.0 * math.pi):
        raise ConfigError(f"sector opening must lie in (0, 2 pi), got {theta}")
    a_plus = math.pi / theta
    a_minus = math.pi / (2.0 * math.pi - theta)
    r = grid.radius
    phi = np.broadcast_to(grid.phi, grid.shape)
    up = np.where(phi <= theta, r**a_plus * np.sin(a_plus * phi), 0.0)
    um = np.where(phi >= theta, r**a_minus * np.sin(a_minus * (phi - theta)), 0.0)
    return build_pair(grid, up, um, SUBHARMONIC, "sector", theta=float(theta),
                      alpha_plus=a_plus, alpha_minus=a_minus)


def make_inhomogeneous_pair(grid: BallGrid, a: float) -> Pair:
    if not (0.0 <= a <= 1.0):
        raise ConfigError(f"inhomogeneous pair needs 0 <= a <= 1, got {a}")
    if grid.R > 1.0:
        raise ConfigError(f"inhomogeneous pair needs grid radius <= 1, got {grid.R}")
    x1 = grid.coords[..., 0]
    pos = np.maximum(x1, 0.0)
    return build_pair(grid, pos - 0.5 * a * pos**2, np.maximum(-x1, 0.0),
                      DELTA_GE_MINUS_ONE, "inhomogeneous", a=float(a))


def make_cap_pair(grid: BallGrid, theta: float) -> Pair:
    """Homogeneous harmonic pair on the caps {polar angle < theta} and its complement."""
    if grid.n != 3:
        raise ConfigError("cap pairs exist only in dimension 3")
    plus = cap_exponent(3, theta)
    minus = cap_exponent(3, math.pi - theta)
    polar = grid.theta
    p_plus = cap_profile(plus, polar)
    p_minus = cap_profile(minus, math.pi - polar)
    r = grid.shells[:, None, None]
    up = r**plus.alpha * p_plus[None, :, None] * np.ones(grid.n_azimuth)
    um = r**minus.alpha * p_minus[None, :, None] * np.ones(grid.n_azimuth)
    return build_pair(grid, up, um, SUBHARMONIC, "cap", theta=float(theta),
                      alpha_plus=plus.alpha, alpha_minus=minus.alpha)


# -----------------------------
# Cap exponents
# -----------------------------
@dataclass(frozen=True)
class CapExponent:
    n: int
    theta: float
    lam: float
    alpha: float


def _shoot(lam: float, theta: float, rtol: float, dense: bool = False):
    """Integrate P'' + cot(t) P' + lam P = 0 from the regular pole."""
    start = min(1e-4, 1e-3 * theta)
    y0 = [1.0 - 0.25 * lam * start**2, -0.5 * lam * start]

    def rhs(t, y):
        return [y[1], -y[1] / math.tan(t) - lam * y[0]]

    sol = solve_ivp(rhs, (start, theta), y0, method="DOP853", rtol=rtol,
                    atol=rtol * 1e-2, dense_output=dense)
    if not sol.success:
        raise NumericalError(f"cap ODE integration failed at lambda={lam}: {sol.message}")
    return sol, start


def cap_exponent(n: int, theta: float, rtol: float = 1e-12, xtol: float = 1e-12) -> CapExponent:
    """
    First Dirichlet eigenvalue of the cap/sector of opening theta and its exponent.

    n=2 is closed form. n=3 brackets lambda by geometric steps (a factor 1.5
    cannot skip the first eigenvalue) and refines with brentq.
    """
    if n == 2:
        if not (0.0 < theta < 2.0 * math.pi):
            raise ConfigError(f"sector opening must lie in (0, 2 pi), got {theta}")
        alpha = math.pi / theta
        return CapExponent(n=2, theta=float(theta), lam=alpha**2, alpha=alpha)
    if n != 3:
        raise ConfigError(f"cap exponents are implemented for n in (2, 3), got {n}")
    if not (0.0 < theta < math.pi):
        raise ConfigError(f"cap opening must lie in (0, pi), got {theta}")

    def endpoint(lam):
        sol, _ = _shoot(lam, theta, rtol)
        return sol.y[0, -1]

    lo, hi = 0.0, 1.0
    for _ in range(200):
        if endpoint(hi) < 0:
            break
        lo, hi = hi, 1.5 * hi
    else:
        raise NumericalError(f"could not bracket the cap eigenvalue for theta={theta}")

    lam = brentq(endpoint, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=500)
    alpha = -0.5 + math.sqrt(0.25 + lam)
    logger.debug(f"cap theta={theta:.6g}: lambda={lam:.12g}, alpha={alpha:.12g}")
    return CapExponent(n=3, theta=float(theta), lam=float(lam), alpha=float(alpha))


def cap_profile(cap: CapExponent, polar) -> np.ndarray:
    """Eigenfunction P(polar) normalized by P(0) = 1, zero outside the cap."""
    polar = np.asarray(polar, dtype=float)
    sol, start = _shoot(cap.lam, cap.theta, 1e-12, dense=True)
    inside = (polar >= start) & (polar < cap.theta)
    out = np.zeros_like(polar)
    out[inside] = sol.sol(polar[inside])[0]
    near = polar < start
    out[near] = 1.0 - 0.25 * cap.lam * polar[near] ** 2
    return np.clip(out, 0.0, None)


@dataclass
class FHReport:
    n: int
    theta: float
    alpha_plus: float
    alpha_minus: float
    total: float
    passed: bool


def friedland_hayman_check(n: int, theta: float) -> FHReport:
    """alpha_plus + alpha_minus >= 2 for the complementary partition."""
    complement = (2.0 * math.pi if n == 2 else math.pi) - theta
    plus = cap_exponent(n, theta)
    minus = cap_exponent(n, complement)
    total = plus.alpha + minus.alpha
    return FHReport(n=n, theta=float(theta), alpha_plus=plus.alpha, alpha_minus=minus.alpha,
                    total=total, passed=bool(total >= 2.0 - 1e-9))


def friedland_hayman_scan(n: int, count: int = 50, margin: float = 0.2) -> List[FHReport]:
    """Scan of openings including the symmetric partition."""
    upper = 2.0 * math.pi if n == 2 else math.pi
    thetas = np.linspace(margin, upper - margin, count - 1)
    thetas = np.unique(np.append(thetas, 0.5 * upper))
    return [friedland_hayman_check(n, float(t)) for t in thetas]


# -----------------------------
# Admissibility
# -----------------------------
@dataclass
class PairValidation:
    passed: bool
    violations: List[str]
    min_laplacian_plus: float
    min_laplacian_minus: float
    measured_bound: float
    effective_class: str


def _center_value(values: np.ndarray) -> float:
    m0 = values[0].mean()
    m1 = values[1].mean()
    return 0.5 * (3.0 * m0 - m1)


def validate_pair(model: ModelMetric, pair: Pair, tol: Optional[float] = None) -> PairValidation:
    grid = pair.grid
    tol = grid.tolerance if tol is None else float(tol)
    up, um = pair.u_plus.values, pair.u_minus.values
    violations = []

    if up.min() < 0 or um.min() < 0:
        violations.append("negative values")
    if np.any(up * um > 0):
        violations.append("supports overlap")
    scale = max(1.0, float(up.max()), float(um.max()))
    limit = math.sqrt(grid.shells[0]) * scale
    for name, vals in (("u_plus", up), ("u_minus", um)):
        center = _center_value(vals)
        if abs(center) > limit:
            violations.append(f"{name} does not vanish at the center ({center:.4g})")

    bound = CLASS_BOUNDS[pair.cls]
    rep_plus = check_superharmonic_bound(model, pair.u_plus, bound, tol)
    rep_minus = check_superharmonic_bound(model, pair.u_minus, bound, tol)
    for name, rep in (("u_plus", rep_plus), ("u_minus", rep_minus)):
        if not rep.passed:
            violations.append(
                f"{name}: Delta_g >= -{bound} fails ({rep.worst_value:.4g} at node {rep.worst_node})"
            )

    worst = min(rep_plus.min_value, rep_minus.min_value)
    measured = max(0.0, -worst) if math.isfinite(worst) else 0.0
    floor = min(rep_plus.floor, rep_minus.floor)
    if floor + CLASS_BOUNDS[SUBHARMONIC] >= 0.0:
        effective = SUBHARMONIC
    elif floor + CLASS_BOUNDS[DELTA_GE_MINUS_ONE] >= 0.0:
        effective = DELTA_GE_MINUS_ONE
    else:
        effective = "none"
    if violations:
        logger.warning(f"pair {pair.describe()} on {model.describe()}: {'; '.join(violations)}")
    return PairValidation(
        passed=not violations, violations=violations,
        min_laplacian_plus=rep_plus.min_value, min_laplacian_minus=rep_minus.min_value,
        measured_bound=measured, effective_class=effective,
    )
