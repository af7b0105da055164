#!/usr/bin/env python3
"""
Two-phase free boundary solver on polar grids (n=2).

Solves Delta_g u = f1 on {u > 0} and Delta_g u = -f2 on {u < 0} with
Dirichlet data h on the outer shell by a sign-pattern fixed point:

    u^0     = discrete harmonic extension of h
    u^(m+1) solves Delta_g u = f1 1{u^m > 0} - f2 1{u^m < 0}

Each linear solve is red-black over-relaxation on the same five-point
finite-volume operator that fields.laplace_beltrami applies, so residuals
measured with laplace_beltrami match the solver's own.
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Tuple, Union

import numpy as np
from scipy.spatial import cKDTree

from ballgrid import BallGrid
from errors import ConfigError, DomainError
from fields import ScalarField, laplace_beltrami
from geometry import ModelMetric, metric_at
from monotone import phi
from pairs import DELTA_GE_MINUS_ONE, Pair, build_pair

logger = logging.getLogger(__name__)

Source = Union[float, Callable[[np.ndarray], np.ndarray]]
Flux = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _evaluate(grid: BallGrid, source, name: str) -> np.ndarray:
    if callable(source):
        values = np.asarray(source(grid.coords), dtype=float)
    else:
        values = np.asarray(source, dtype=float)
    try:
        return np.broadcast_to(values, grid.shape).astype(float)
    except ValueError:
        raise ConfigError(f"{name} has shape {values.shape}, grid needs {grid.shape}") from None


@dataclass
class TwoPhaseProblem:
    """
    Args:
        model: metric of the ball
        grid: polar grid (n=2)
        boundary: Dirichlet data on the outer shell; callable of coordinates,
            array over the outer shell angles, or a constant
        f1, f2: right-hand sides in the positive and negative phase
        bound: declared bound C with |f1|, |f2| <= C
        omega: over-relaxation factor in (0, 2)
        tol: relative residual of each linear solve
    """

    model: ModelMetric
    grid: BallGrid
    boundary: Source
    f1: Source = 0.0
    f2: Source = 0.0
    bound: float = 1.0
    omega: float = 1.5
    tol: float = 1e-9
    max_sweeps: int = 50000
    max_outer: int = 50

    def __post_init__(self):
        if self.grid.n != 2 or self.model.n != 2:
            raise ConfigError("the two-phase solver is implemented for n=2 only")
        if not (0.0 < self.omega < 2.0):
            raise ConfigError(f"omega must lie in (0, 2), got {self.omega}")
        if self.tol <= 0:
            raise ConfigError(f"solver tolerance must be positive, got {self.tol}")
        self.f1_values = _evaluate(self.grid, self.f1, "f1")
        self.f2_values = _evaluate(self.grid, self.f2, "f2")
        for name, vals in (("f1", self.f1_values), ("f2", self.f2_values)):
            if np.abs(vals).max() > self.bound * (1 + 1e-12):
                raise ConfigError(f"|{name}| exceeds the declared bound C={self.bound}")
        self.boundary_values = self._boundary()

    def _boundary(self) -> np.ndarray:
        grid = self.grid
        if callable(self.boundary):
            outer = grid.coords[-1]
            return np.asarray(self.boundary(outer), dtype=float).reshape(grid.ang_shape)
        values = np.asarray(self.boundary, dtype=float)
        try:
            return np.broadcast_to(values, grid.ang_shape).astype(float)
        except ValueError:
            raise ConfigError(
                f"boundary data has shape {values.shape}, outer shell needs {grid.ang_shape}"
            ) from None


@dataclass
class FreeBoundarySolution:
    problem: TwoPhaseProblem
    u: ScalarField
    labels: np.ndarray
    interface: np.ndarray
    iterations: int
    sweeps: int
    residual_plus: float
    residual_minus: float
    converged: bool
    cycled: bool = False
    stalled: bool = False
    history: List[int] = field(default_factory=list)

    @property
    def grid(self) -> BallGrid:
        return self.u.grid

    def interface_points(self) -> np.ndarray:
        return self.grid.coords[self.interface]

    def save(self, out_dir, stem: str = "solution") -> Tuple[Path, Path]:
        """Nodal values in the field CSV format plus a listing of interface nodes."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        values_path = out / f"{stem}_u.csv"
        nodes_path = out / f"{stem}_interface.csv"
        self.u.to_csv(values_path)
        grid = self.grid
        with open(nodes_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["i", "j", "r", "phi", "u"])
            for i, j in zip(*np.nonzero(self.interface)):
                writer.writerow([int(i), int(j), repr(float(grid.shells[i])),
                                 repr(float(grid.phi[j])), repr(float(self.u.values[i, j]))])
        return values_path, nodes_path


# -----------------------------
# Linear solve
# -----------------------------
class _Stencil:
    """Five-point coefficients of Delta_g on the unknown shells 0..n_r-2."""

    def __init__(self, model: ModelMetric, grid: BallGrid):
        gm = grid.metric_on(model)
        m = gm.node_measure[:-1]
        dr2 = grid.dr**2
        chord2 = grid.chord**2
        self.c_out = gm.radial_coef[1:-1] / (m * dr2)
        self.c_in = gm.radial_coef[:-2] / (m * dr2)
        self.c_next = gm.phi_face[:-1] / (m * chord2)
        self.c_prev = np.roll(gm.phi_face[:-1], 1, axis=1) / (m * chord2)
        self.diag = self.c_out + self.c_in + self.c_next + self.c_prev
        i, j = np.indices(self.diag.shape)
        self.colors = [((i + j) % 2) == c for c in (0, 1)]

    def neighbors(self, u: np.ndarray) -> np.ndarray:
        inner = np.concatenate([u[:1], u[:-2]], axis=0)  # c_in is zero on shell 0
        interior = u[:-1]
        return (self.c_out * u[1:] + self.c_in * inner
                + self.c_next * np.roll(interior, -1, axis=1)
                + self.c_prev * np.roll(interior, 1, axis=1))

    def apply(self, u: np.ndarray) -> np.ndarray:
        return self.neighbors(u) - self.diag * u[:-1]


def _relax(stencil: _Stencil, u: np.ndarray, rhs: np.ndarray, omega: float, tol: float,
           scale: float, max_sweeps: int,
           check_every: int = 20) -> Tuple[np.ndarray, int, float, bool]:
    """
    Red-black SOR on the unknown shells; the outer shell of u stays fixed.

    Returns (u, sweeps, relative residual, stalled); stalled means the sweep
    cap was reached above tol.
    """
    u = u.copy()
    residual = math.inf
    for sweep in range(1, max_sweeps + 1):
        for color in stencil.colors:
            update = (stencil.neighbors(u) - rhs) / stencil.diag
            interior = u[:-1]
            interior[color] = (1.0 - omega) * interior[color] + omega * update[color]
        if sweep % check_every == 0 or sweep == max_sweeps:
            residual = float(np.abs(stencil.apply(u) - rhs).max()) / scale
            if residual <= tol:
                return u, sweep, residual, False
    logger.warning(
        f"relaxation stalled at relative residual {residual:.3g} after {max_sweeps} sweeps"
    )
    return u, max_sweeps, residual, True


def _labels(u: np.ndarray, eps: float) -> np.ndarray:
    return np.where(u > eps, 1, np.where(u < -eps, -1, 0)).astype(np.int8)


def _free_boundary(grid: BallGrid, labels: np.ndarray) -> np.ndarray:
    """
    Nodes where u vanishes, plus positive nodes with a negative neighbor on the
    same ring or an adjacent ring (the antipodal neighbor of ring 0 is not used).
    """
    negative = labels < 0
    touches = np.zeros(grid.shape, dtype=bool)
    touches[1:] |= negative[:-1]
    touches[:-1] |= negative[1:]
    touches |= np.roll(negative, 1, axis=1) | np.roll(negative, -1, axis=1)
    return (labels == 0) | ((labels > 0) & touches)


def two_phase_solve(problem: TwoPhaseProblem) -> FreeBoundarySolution:
    """Sign-pattern fixed point; a repeated earlier pattern is reported as a cycle."""
    grid, model = problem.grid, problem.model
    stencil = _Stencil(model, grid)
    h = problem.boundary_values
    f1, f2 = problem.f1_values, problem.f2_values

    # radial extension of h is the starting guess; exact for linear data
    u = (grid.shells / grid.shells[-1])[:, None] * h[None, :]
    scale = max(float(np.abs(h).max()), problem.bound * grid.R**2, 1e-300)
    eps = 10.0 * problem.tol * scale

    zero = np.zeros((grid.n_r - 1, grid.n_azimuth))
    u, sweeps, _, stalled = _relax(stencil, u, zero, problem.omega, problem.tol, scale,
                                   problem.max_sweeps)
    labels = _labels(u, eps)
    seen = [labels.tobytes()]
    history = [int((labels > 0).sum())]
    converged = cycled = False
    iterations = 0

    for m in range(1, problem.max_outer + 1):
        if stalled:
            break
        rhs = np.where(labels > 0, f1, 0.0) - np.where(labels < 0, f2, 0.0)
        u, used, _, stalled = _relax(stencil, u, rhs[:-1], problem.omega, problem.tol, scale,
                                     problem.max_sweeps)
        sweeps += used
        iterations = m
        new_labels = _labels(u, eps)
        history.append(int((new_labels > 0).sum()))
        key = new_labels.tobytes()
        if stalled:
            labels = new_labels
            break
        if np.array_equal(new_labels, labels):
            converged = True
            break
        if key in seen:
            cycled = True
            logger.warning(f"sign pattern cycles after {m} iterations on {model.describe()}")
            labels = new_labels
            break
        seen.append(key)
        labels = new_labels
    else:
        logger.warning(f"sign pattern still moving after {problem.max_outer} iterations")

    field_u = ScalarField(grid, u, name="u")
    interface = _free_boundary(grid, labels)
    rhs = np.where(labels > 0, f1, 0.0) - np.where(labels < 0, f2, 0.0)
    error = np.abs(laplace_beltrami(model, field_u).values - rhs)
    unknown = np.zeros(grid.shape, dtype=bool)
    unknown[:-1] = True
    plus = unknown & (labels > 0) & ~interface
    minus = unknown & (labels < 0) & ~interface
    res_plus = float(error[plus].max()) if plus.any() else 0.0
    res_minus = float(error[minus].max()) if minus.any() else 0.0

    logger.info(
        f"two-phase solve on {model.describe()}: {iterations} iterations, {sweeps} sweeps, "
        f"{int(interface.sum())} interface nodes, converged={converged}, stalled={stalled}"
    )
    return FreeBoundarySolution(
        problem=problem, u=field_u, labels=labels, interface=interface,
        iterations=iterations, sweeps=sweeps, residual_plus=res_plus,
        residual_minus=res_minus, converged=converged, cycled=cycled, stalled=stalled,
        history=history,
    )


# -----------------------------
# Diagnostics
# -----------------------------
@dataclass
class LipschitzReport:
    sup_ratio: float
    argmax_node: Optional[Tuple[int, int]]
    argmax_point: Optional[np.ndarray]
    distance: float
    K: float
    metric_factor: float
    vacuous: bool


def lipschitz_ratio(solution: FreeBoundarySolution, K: float) -> LipschitzReport:
    """
    sup |u(x)| / d(x, F(u)) over nodes of B_K with d <= R/4.

    d is the coordinate distance scaled by the square root of the smallest
    metric eigenvalue on B_K, a lower bound for the geodesic distance.
    """
    grid = solution.grid
    if not (0.0 < K < grid.R):
        raise DomainError(f"sub-ball radius must lie in (0, {grid.R}), got {K}")
    if not solution.interface.any():
        logger.info("empty free boundary, Lipschitz ratio is vacuous")
        return LipschitzReport(0.0, None, None, math.inf, K, 1.0, True)

    inside = np.broadcast_to((grid.shells <= K)[:, None], grid.shape)
    coords = grid.coords
    g = metric_at(solution.problem.model, coords[inside]).g
    factor = math.sqrt(float(np.linalg.eigvalsh(g).min()))

    tree = cKDTree(coords[solution.interface])
    candidates = inside & ~solution.interface
    dist, _ = tree.query(coords[candidates])
    dist = factor * dist
    values = np.abs(solution.u.values[candidates])
    keep = dist <= 0.25 * grid.R
    if not keep.any():
        return LipschitzReport(0.0, None, None, math.inf, K, factor, True)

    ratios = np.where(keep, values / dist, -np.inf)
    k = int(np.argmax(ratios))
    node = tuple(int(v) for v in np.argwhere(candidates)[k])
    return LipschitzReport(
        sup_ratio=float(ratios[k]), argmax_node=node, argmax_point=coords[node],
        distance=float(dist[k]), K=float(K), metric_factor=factor, vacuous=False,
    )


def _toward_phase(u, ahead, behind, step, sign):
    """One-sided difference toward the neighbor lying deeper in the given phase."""
    fwd = (ahead - u) / step
    bwd = (u - behind) / step
    in_ahead = sign * ahead > 0
    in_behind = sign * behind > 0
    prefer_ahead = in_ahead & (~in_behind | (sign * ahead >= sign * behind))
    return np.where(prefer_ahead, fwd, np.where(in_behind, bwd, 0.0))


def one_sided_slopes(solution: FreeBoundarySolution) -> Tuple[np.ndarray, np.ndarray]:
    """|grad_g u+| and |grad_g u-| at interface nodes, each from its own phase."""
    grid = solution.grid
    gm = grid.metric_on(solution.problem.model)
    u = solution.u.values
    lower = np.concatenate([grid.antipode(u)[:1], u[:-1]], axis=0)
    upper = np.concatenate([u[1:], 2.0 * u[-1:] - u[-2:-1]], axis=0)
    after = np.roll(u, -1, axis=1)
    before = np.roll(u, 1, axis=1)
    slopes = []
    for sign in (1.0, -1.0):
        radial = _toward_phase(u, upper, lower, grid.dr, sign)
        angular = _toward_phase(u, after, before, grid.chord, sign)
        slopes.append(np.sqrt(radial**2 + gm.grad_phi * angular**2)[solution.interface])
    return slopes[0], slopes[1]


@dataclass
class FluxReport:
    nodes: np.ndarray
    slope_plus: np.ndarray
    slope_minus: np.ndarray
    values: np.ndarray

    @property
    def spread(self) -> float:
        return float(np.ptp(self.values)) if self.values.size else 0.0


def flux_balance_check(solution: FreeBoundarySolution, G: Flux) -> FluxReport:
    """Values of G(|grad u+|, |grad u-|) along the free boundary; diagnostic only."""
    a, b = one_sided_slopes(solution)
    if a.size == 0:
        logger.info("empty free boundary, no flux values")
    return FluxReport(nodes=np.argwhere(solution.interface), slope_plus=a, slope_minus=b,
                      values=np.asarray(G(a, b), dtype=float))


def pair_from_solution(solution: FreeBoundarySolution) -> Pair:
    """(u+, u-) scaled so both phases satisfy Delta_g u >= -1."""
    problem = solution.problem
    s = max(1.0, float(np.abs(problem.f1_values).max()), float(np.abs(problem.f2_values).max()))
    u = solution.u.values / s
    return build_pair(solution.grid, np.maximum(u, 0.0), np.maximum(-u, 0.0),
                      DELTA_GE_MINUS_ONE, "two_phase", scale=s)


@dataclass
class SlopeProductReport:
    alpha: float
    sigma: float
    node: Optional[Tuple[int, int]]
    phi_at_radius: float
    C: float
    radius: float


def slope_product_bound(solution: FreeBoundarySolution, radius: float) -> SlopeProductReport:
    """
    alpha = |grad u+| and sigma = |grad u-| at the interface node nearest the
    centre, and the constant C of alpha^2 sigma^2 <= C phi(radius).
    """
    grid = solution.grid
    a, b = one_sided_slopes(solution)
    pair = pair_from_solution(solution)
    value = phi(solution.problem.model, pair, radius)
    if a.size == 0:
        return SlopeProductReport(0.0, 0.0, None, value, 0.0, float(radius))
    nodes = np.argwhere(solution.interface)
    k = int(np.argmin(grid.shells[nodes[:, 0]]))
    s = float(pair.params["scale"])
    alpha, sigma = float(a[k]) / s, float(b[k]) / s
    product = alpha**2 * sigma**2
    C = product / value if value > 0 else (0.0 if product == 0 else math.inf)
    return SlopeProductReport(alpha=alpha, sigma=sigma, node=tuple(int(v) for v in nodes[k]),
                              phi_at_radius=value, C=C, radius=float(radius))
