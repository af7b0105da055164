#!/usr/bin/env python3
"""
Scalar fields on ball grids and the operators acting on them.

- laplace_beltrami: finite-volume (1/sqrt g) d_i(sqrt g g^ij d_j u) in polar
  coordinates, zero flux through the origin, linear ghost shell outside R
- gradient_energy: g^ij d_i u d_j u from central differences, with the mean of
  squared one-sided differences at nodes tagged as kinks
- build_corrector: F_g = r^(2-n) + F_1g with -Delta_g F_g >= 0 off the origin
- energy_inequality_check / corrector_energy_bound: weak-form monitors
"""

import csv
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from ballgrid import BallGrid, annulus_integral, volume_integral
from errors import ConstructionError, DomainError, NumericalError, PreconditionError
from geometry import ModelMetric

logger = logging.getLogger(__name__)


class ScalarField:
    """Nodal values on a grid; read-only once built."""

    def __init__(self, grid: BallGrid, values, kinks: Optional[np.ndarray] = None,
                 name: str = "u"):
        values = np.array(values, dtype=float)
        if values.shape != grid.shape:
            raise DomainError(f"field shape {values.shape} does not match grid {grid.shape}")
        if not np.all(np.isfinite(values)):
            raise NumericalError(f"field '{name}' has non-finite values")
        if kinks is None:
            kinks = np.zeros(grid.shape, dtype=bool)
        kinks = np.array(kinks, dtype=bool)
        if kinks.shape != grid.shape:
            raise DomainError("kink mask shape does not match the grid")
        values.setflags(write=False)
        kinks.setflags(write=False)
        self.grid = grid
        self.values = values
        self.kinks = kinks
        self.name = name

    @classmethod
    def from_function(cls, grid: BallGrid, fn, name: str = "u", kinks=None) -> "ScalarField":
        """Evaluate fn on the node coordinates, array of shape grid.shape + (n,)."""
        return cls(grid, fn(grid.coords), kinks=kinks, name=name)

    @classmethod
    def constant(cls, grid: BallGrid, value: float, name: str = "c") -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(value)), name=name)

    def scaled(self, factor: float) -> "ScalarField":
        return ScalarField(self.grid, factor * self.values, kinks=self.kinks, name=self.name)

    def __repr__(self) -> str:
        return f"ScalarField({self.name!r}, {self.grid!r})"

    def to_csv(self, path) -> None:
        """Columns: r, angle(s), value; full double precision, LF endings."""
        grid = self.grid
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            if grid.n == 2:
                writer.writerow(["r", "phi", "value"])
                for i, r in enumerate(grid.shells):
                    for j, p in enumerate(grid.phi):
                        writer.writerow([repr(float(r)), repr(float(p)), repr(float(self.values[i, j]))])
            else:
                writer.writerow(["r", "theta", "phi", "value"])
                for i, r in enumerate(grid.shells):
                    for k, th in enumerate(grid.theta):
                        for j, p in enumerate(grid.phi):
                            writer.writerow([repr(float(r)), repr(float(th)), repr(float(p)),
                                             repr(float(self.values[i, k, j]))])


# -----------------------------
# Laplace-Beltrami
# -----------------------------
def _radial_divergence(grid: BallGrid, gm, u: np.ndarray) -> np.ndarray:
    ghost = 2.0 * u[-1] - u[-2]
    ext = np.concatenate([u, ghost[None]], axis=0)
    flux = gm.radial_coef[1:] * np.diff(ext, axis=0) / grid.dr
    inner = np.concatenate([np.zeros_like(flux[:1]), flux[:-1]], axis=0)
    return (flux - inner) / (gm.node_measure * grid.dr)


def _azimuthal_divergence(grid: BallGrid, coef: np.ndarray, u: np.ndarray, axis: int) -> np.ndarray:
    # chord-corrected differences, exact on first harmonics
    flux = coef * (np.roll(u, -1, axis=axis) - u) / grid.chord
    return (flux - np.roll(flux, 1, axis=axis)) / grid.chord


def _azimuthal_central(grid: BallGrid, u: np.ndarray, axis: int) -> np.ndarray:
    return (np.roll(u, -1, axis=axis) - np.roll(u, 1, axis=axis)) / (2.0 * math.sin(grid.dphi))


def _polar_divergence(grid: BallGrid, gm, u: np.ndarray) -> np.ndarray:
    dmu = np.diff(u, axis=1) / np.diff(grid.mu)[None, :, None]
    flux = np.zeros((grid.n_r, grid.n_polar + 1, grid.n_azimuth))
    flux[:, 1:-1] = gm.mu_face[:, 1:-1] * dmu
    return np.diff(flux, axis=1) / grid.mu_weights[None, :, None]


def laplace_beltrami(model: ModelMetric, field: ScalarField) -> ScalarField:
    """Delta_g u at every node; the outer shell uses a one-sided ghost value."""
    grid = field.grid
    gm = grid.metric_on(model)
    u = field.values
    radial = _radial_divergence(grid, gm, u)
    if grid.n == 2:
        angular = _azimuthal_divergence(grid, gm.phi_face, u, axis=1)
    else:
        angular = _polar_divergence(grid, gm, u) + _azimuthal_divergence(grid, gm.phi_face, u, axis=2)
        if gm.cross is not None:
            du_dphi = _azimuthal_central(grid, u, axis=2)
            du_dmu = np.gradient(u, grid.mu, axis=1, edge_order=2)
            angular = angular + np.gradient(gm.cross * du_dphi, grid.mu, axis=1, edge_order=2)
            angular = angular + _azimuthal_central(grid, gm.cross * du_dmu, axis=2)
    return ScalarField(grid, radial + angular / gm.node_measure, name=f"lap({field.name})")


# -----------------------------
# Gradient energy
# -----------------------------
def _radial_differences(grid: BallGrid, u: np.ndarray):
    """(central, forward, backward) radial differences at every node."""
    dr = grid.dr
    lower = np.concatenate([grid.antipode(u)[:1], u[:-1]], axis=0)
    backward = (u - lower) / dr
    central = np.empty_like(u)
    central[:-1] = (u[1:] - lower[:-1]) / (2.0 * dr)
    central[-1] = (3.0 * u[-1] - 4.0 * u[-2] + u[-3]) / (2.0 * dr)
    forward = np.empty_like(u)
    forward[:-1] = (u[1:] - u[:-1]) / dr
    forward[-1] = backward[-1]
    return central, forward, backward


def _azimuthal_differences(grid: BallGrid, u: np.ndarray, axis: int):
    central = _azimuthal_central(grid, u, axis)
    forward = (np.roll(u, -1, axis=axis) - u) / grid.chord
    backward = (u - np.roll(u, 1, axis=axis)) / grid.chord
    return central, forward, backward


def _polar_differences(grid: BallGrid, u: np.ndarray):
    """d/dtheta with reflected ghost rows across both poles."""
    half = grid.n_azimuth // 2
    ut = u[:, ::-1, :]
    th = grid.theta[::-1]
    low = np.roll(ut[:, :1, :], half, axis=2)
    high = np.roll(ut[:, -1:, :], half, axis=2)
    ext = np.concatenate([low, ut, high], axis=1)
    th_ext = np.concatenate([[-th[0]], th, [2.0 * math.pi - th[-1]]])
    central = np.gradient(ext, th_ext, axis=1)[:, 1:-1]
    steps = np.diff(ext, axis=1) / np.diff(th_ext)[None, :, None]
    forward, backward = steps[:, 1:], steps[:, :-1]
    return central[:, ::-1], forward[:, ::-1], backward[:, ::-1]


def _directional_square(central, forward, backward, kinks):
    return np.where(kinks, 0.5 * (forward**2 + backward**2), central**2)


def gradient_energy(model: ModelMetric, field: ScalarField) -> ScalarField:
    """|grad_g u|^2 at the nodes, nonnegative by construction."""
    grid = field.grid
    gm = grid.metric_on(model)
    u, kinks = field.values, field.kinks

    dr_c, dr_f, dr_b = _radial_differences(grid, u)
    # on kink nodes of shell 0 the backward difference would cross the origin
    dr_b[0] = dr_f[0]
    energy = _directional_square(dr_c, dr_f, dr_b, kinks)
    axis = 1 if grid.n == 2 else 2
    dp_c, dp_f, dp_b = _azimuthal_differences(grid, u, axis)
    energy = energy + gm.grad_phi * _directional_square(dp_c, dp_f, dp_b, kinks)
    if grid.n == 3:
        dt_c, dt_f, dt_b = _polar_differences(grid, u)
        energy = energy + gm.grad_theta * _directional_square(dt_c, dt_f, dt_b, kinks)
        energy = energy + 2.0 * gm.grad_cross * dt_c * dp_c
    return ScalarField(grid, np.maximum(energy, 0.0), name=f"energy({field.name})")


# -----------------------------
# Nodal inequality checks
# -----------------------------
@dataclass
class SuperharmonicReport:
    passed: bool
    bound: float
    tol: float
    worst_value: float
    worst_node: Tuple[int, ...]
    worst_point: np.ndarray
    checked: int
    worst_slack: float = 0.0
    min_value: float = math.inf
    floor: float = math.inf


def nodal_slack(field: ScalarField, tol: Optional[float] = None) -> np.ndarray:
    """
    Per-node slack tol * max(1, R^2 |u| / r^4).

    The second factor follows the truncation error of the finite-volume operator
    on functions homogeneous about the origin, whose fourth derivatives grow
    like |u| / r^4 towards the center.
    """
    grid = field.grid
    tol = grid.tolerance if tol is None else float(tol)
    r = grid.radius
    return tol * np.maximum(1.0, np.abs(field.values) * grid.R**2 / r**4)


def check_superharmonic_bound(model: ModelMetric, field: ScalarField, bound: float,
                              tol: Optional[float] = None,
                              mask: Optional[np.ndarray] = None) -> SuperharmonicReport:
    """
    Delta_g u >= -bound - slack at interior nodes that are not kinks.

    The worst node minimizes Delta_g u + slack; that minimum is the report's
    floor, so the check passes exactly when floor + bound >= 0.
    """
    grid = field.grid
    tol = grid.tolerance if tol is None else float(tol)
    lap = laplace_beltrami(model, field).values
    active = grid.interior_mask() & ~field.kinks
    if mask is not None:
        active &= mask
    if not active.any():
        return SuperharmonicReport(True, bound, tol, math.inf, (), np.zeros(grid.n), 0)
    slack = nodal_slack(field, tol)
    relaxed = np.where(active, lap + slack, np.inf)
    idx = np.unravel_index(int(np.argmin(relaxed)), grid.shape)
    worst = float(lap[idx])
    passed = relaxed[idx] + bound >= 0.0
    if not passed:
        logger.warning(
            f"Delta_g {field.name} >= -{bound} fails: {worst:.4g} at node {idx} "
            f"(slack {slack[idx]:.3g})"
        )
    return SuperharmonicReport(
        passed=bool(passed), bound=float(bound), tol=tol, worst_value=worst,
        worst_node=tuple(int(i) for i in idx), worst_point=grid.coords[idx],
        checked=int(active.sum()), worst_slack=float(slack[idx]),
        min_value=float(lap[active].min()), floor=float(relaxed[idx]),
    )


# -----------------------------
# Corrector
# -----------------------------
@dataclass
class CorrectorField:
    field: ScalarField
    n: int
    c: float
    t: float

    @property
    def values(self) -> np.ndarray:
        return self.field.values


def build_corrector(model: ModelMetric, grid: BallGrid) -> CorrectorField:
    """
    F_g = r^(2-n) + F_1g built from the discrete radial flux.

    The flux through each face is -sqrt_det/m where m is the running minimum
    envelope of sqrt_det over directions, so every interior flux difference is
    nonpositive and F_g is nodally superharmonic. In flat space this is 1/r
    exactly.
    """
    if grid.n == 2:
        return CorrectorField(ScalarField.constant(grid, 1.0, name="F"), n=2, c=0.0, t=model.t)

    gm = grid.metric_on(model)
    sq = gm.sqrt_det_faces.reshape(grid.n_r + 1, -1)
    envelope = np.empty(grid.n_r)
    envelope[0] = sq[1].min()
    envelope[1:] = envelope[0] * np.cumprod((sq[2:] / sq[1:-1]).min(axis=1))

    r = grid.shells
    ext = np.concatenate([r, [r[-1] + grid.dr]])
    slope = -1.0 / (ext[:-1] * ext[1:] * envelope)
    profile = np.empty(grid.n_r)
    profile[0] = 1.0 / r[0]
    profile[1:] = profile[0] + grid.dr * np.cumsum(slope[:-1])

    values = np.broadcast_to(profile.reshape((-1,) + (1,) * len(grid.ang_shape)), grid.shape)
    F = ScalarField(grid, values, name="F")
    F1 = profile - 1.0 / r
    c = float(np.abs(F1).max() / model.t**2)

    if np.any(profile < 0.5 / r):
        i = int(np.argmax(0.5 / r - profile))
        raise ConstructionError(
            f"corrector drops below r^(2-n)/2 at shell {i} (r={r[i]:.4g}, F={profile[i]:.4g}); "
            f"refine the grid or shrink R for {model.describe()}"
        )
    lap = laplace_beltrami(model, F).values
    interior = lap[1:-1]
    slack = 1e-9 * np.abs(lap).max()
    if interior.max() > slack:
        i = 1 + int(np.unravel_index(int(np.argmax(interior)), interior.shape)[0])
        raise ConstructionError(
            f"corrector is not superharmonic at shell {i} (Delta F={interior.max():.4g}) "
            f"for {model.describe()}"
        )
    logger.info(f"Corrector for {model.describe()}: fitted c={c:.4g}")
    return CorrectorField(F, n=3, c=c, t=model.t)


# -----------------------------
# Weak-form checks
# -----------------------------
def bump_family(grid: BallGrid, count: int = 8, seed: int = 0) -> List[ScalarField]:
    """Seeded bumps (1 - (|x - x0|/rho)^2)^3_+ supported inside 0.9 R."""
    rng = np.random.default_rng(seed)
    coords = grid.coords
    bumps = []
    for k in range(count):
        rho = grid.R * rng.uniform(0.15, 0.3)
        direction = rng.normal(size=grid.n)
        direction /= np.linalg.norm(direction)
        center = direction * rng.uniform(0.0, 0.9 * grid.R - rho - 1e-9)
        s = np.linalg.norm(coords - center, axis=-1) / rho
        bumps.append(ScalarField(grid, np.clip(1.0 - s**2, 0.0, None) ** 3, name=f"bump{k}"))
    return bumps


@dataclass
class EnergyInequalityReport:
    passed: bool
    C: float
    tol: float
    lhs: List[float]
    rhs: List[float]
    fitted_C: float

    @property
    def worst_margin(self) -> float:
        return min(r - l for l, r in zip(self.lhs, self.rhs)) if self.lhs else math.inf


def _require_admissible(model: ModelMetric, field: ScalarField):
    if field.values.min() < -1e-12:
        raise PreconditionError(f"field '{field.name}' takes negative values")
    report = check_superharmonic_bound(model, field, 1.0)
    if not report.passed:
        raise PreconditionError(
            f"field '{field.name}' violates Delta_g u >= -1: {report.worst_value:.4g} "
            f"at node {report.worst_node}"
        )
    return report


def energy_inequality_check(model: ModelMetric, field: ScalarField, C: float = 4.0,
                            testfns: Optional[List[ScalarField]] = None,
                            seed: int = 0) -> EnergyInequalityReport:
    """
    int 2|grad u|^2 phi <= int C u phi + int u^2 Delta_g phi for each bump phi.

    fitted_C is the smallest nonnegative C that passes every test function.
    """
    grid = field.grid
    _require_admissible(model, field)
    testfns = bump_family(grid, seed=seed) if testfns is None else testfns
    tol = grid.tolerance
    energy = gradient_energy(model, field).values
    u = field.values

    lhs, rhs, needed = [], [], [0.0]
    for phi in testfns:
        lap_phi = laplace_beltrami(model, phi).values
        left = volume_integral(grid, model, 2.0 * energy * phi.values, grid.R)
        linear = volume_integral(grid, model, u * phi.values, grid.R)
        quadratic = volume_integral(grid, model, u**2 * lap_phi, grid.R)
        lhs.append(left)
        rhs.append(C * linear + quadratic)
        if linear > 1e-14:
            needed.append((left - quadratic - tol) / linear)
    passed = all(l <= r + tol for l, r in zip(lhs, rhs))
    return EnergyInequalityReport(
        passed=bool(passed), C=float(C), tol=tol, lhs=lhs, rhs=rhs,
        fitted_C=float(max(needed)),
    )


@dataclass
class CorrectorEnergyReport:
    lhs: float
    annulus: float
    rhs_constant: float
    delta: float
    admissible: bool


def corrector_energy_bound(model: ModelMetric, field: ScalarField, corrector: CorrectorField,
                           delta: Optional[float] = None) -> CorrectorEnergyReport:
    """Smallest C with int_{B_d/4} |grad u|^2 F <= C + C int_{B_d/2 - B_d/4} u^2."""
    grid = field.grid
    delta = grid.R if delta is None else float(delta)
    admissible = check_superharmonic_bound(model, field, 1.0).passed and field.values.min() >= -1e-12
    if not admissible:
        logger.warning(f"corrector energy bound evaluated on inadmissible field '{field.name}'")
    energy = gradient_energy(model, field).values
    lhs = volume_integral(grid, model, energy * corrector.values, 0.25 * delta)
    annulus = annulus_integral(grid, model, field.values**2, 0.25 * delta, 0.5 * delta)
    return CorrectorEnergyReport(
        lhs=lhs, annulus=annulus, rhs_constant=lhs / (1.0 + annulus),
        delta=delta, admissible=bool(admissible),
    )
