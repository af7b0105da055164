#!/usr/bin/env python3
"""
Polar (n=2) and spherical-shell (n=3) grids over geodesic balls, with the
volume and sphere quadratures used by every energy in the laboratory.

Node layout:
- n=2: values have shape (n_r, n_ang); angle phi_j = 2 pi j / n_ang
- n=3: values have shape (n_r, n_polar, n_azimuth) with n_polar = n_ang // 2
  Gauss-Legendre nodes in mu = cos(theta) and n_azimuth = n_ang uniform angles

Radii are shell midpoints r_i = (i + 1/2) dr, so the origin is never a node.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from errors import ConfigError, DomainError
from geometry import ModelMetric, metric_at

logger = logging.getLogger(__name__)

MIN_SHELLS = 16
MIN_ANGLES = 16


@dataclass(frozen=True, eq=False)
class GridMetric:
    """Metric quantities of one model sampled on one grid (polar coordinates)."""

    sqrt_det: np.ndarray           # nodes
    sqrt_det_faces: np.ndarray     # radial faces r = f dr, f = 0..n_r
    radial_coef: np.ndarray        # radial flux coefficient per face (face 0 is 0)
    node_measure: np.ndarray       # r^(n-1) sqrt_det at nodes
    phi_face: np.ndarray           # azimuthal flux coefficient at phi_(j+1/2)
    mu_face: Optional[np.ndarray]  # polar flux coefficient at mu faces (n=3)
    cross: Optional[np.ndarray]    # mixed mu-phi coefficient at nodes (n=3, None if zero)
    grad_phi: np.ndarray           # coefficient of (d_phi u)^2 in |grad u|^2
    grad_theta: Optional[np.ndarray]
    grad_cross: Optional[np.ndarray]


class BallGrid:
    """
    Structured grid over the coordinate ball B_R.

    Args:
        n: dimension, 2 or 3
        R: outer radius
        n_r: number of radial shells
        n_ang: points per circle (n=2) or azimuthal count (n=3, polar count n_ang // 2)
    """

    def __init__(self, n: int, R: float, n_r: int, n_ang: int):
        if n not in (2, 3):
            raise ConfigError(f"grid dimension must be 2 or 3, got {n}")
        if not (R > 0 and math.isfinite(R)):
            raise ConfigError(f"grid radius must be positive, got {R}")
        if n_r < MIN_SHELLS or n_ang < MIN_ANGLES:
            raise ConfigError(
                f"grid resolution too low: n_r={n_r}, n_ang={n_ang} "
                f"(need at least {MIN_SHELLS} and {MIN_ANGLES})"
            )
        if n_ang % 2:
            raise ConfigError(f"n_ang must be even, got {n_ang}")

        self.n = n
        self.R = float(R)
        self.n_r = int(n_r)
        self.n_ang = int(n_ang)
        self.dr = self.R / self.n_r
        self.faces = np.arange(self.n_r + 1) * self.dr
        self.shells = (np.arange(self.n_r) + 0.5) * self.dr

        self.n_azimuth = self.n_ang
        self.dphi = 2.0 * math.pi / self.n_azimuth
        self.phi = self.dphi * np.arange(self.n_azimuth)
        self.chord = 2.0 * math.sin(0.5 * self.dphi)

        if n == 2:
            self.n_polar = 1
            self.mu = self.theta = self.mu_weights = self.mu_faces = None
            self.ang_shape = (self.n_azimuth,)
            self.ang_weights = np.full(self.n_azimuth, self.dphi)
        else:
            self.n_polar = self.n_ang // 2
            self.mu, self.mu_weights = np.polynomial.legendre.leggauss(self.n_polar)
            faces = np.concatenate([[-1.0], -1.0 + np.cumsum(self.mu_weights)])
            faces[-1] = 1.0
            self.mu_faces = faces
            self.theta = np.arccos(self.mu)
            self.ang_shape = (self.n_polar, self.n_azimuth)
            self.ang_weights = self.mu_weights[:, None] * np.full(self.n_azimuth, self.dphi)

        self.shape = (self.n_r,) + self.ang_shape
        self._metric_cache: Dict[ModelMetric, GridMetric] = {}
        logger.debug(f"Built grid n={n} R={R} shape={self.shape}")

    def __repr__(self) -> str:
        return f"BallGrid(n={self.n}, R={self.R}, n_r={self.n_r}, n_ang={self.n_ang})"

    # -----------------------------
    # Geometry of the nodes
    # -----------------------------
    @property
    def node_count(self) -> int:
        return int(np.prod(self.shape))

    def directions_at(self, mu=None, phi=None) -> np.ndarray:
        """Unit vectors for angular coordinates (defaults: the node angles)."""
        phi = self.phi if phi is None else np.asarray(phi, dtype=float)
        if self.n == 2:
            return np.stack([np.cos(phi), np.sin(phi)], axis=-1)
        mu = self.mu if mu is None else np.asarray(mu, dtype=float)
        s = np.sqrt(np.clip(1.0 - mu**2, 0.0, None))[:, None]
        c = mu[:, None] * np.ones_like(phi)[None, :]
        return np.stack([s * np.cos(phi)[None, :], s * np.sin(phi)[None, :], c], axis=-1)

    @property
    def directions(self) -> np.ndarray:
        return self.directions_at()

    @property
    def radius(self) -> np.ndarray:
        return np.broadcast_to(
            self.shells.reshape((-1,) + (1,) * len(self.ang_shape)), self.shape
        )

    @property
    def coords(self) -> np.ndarray:
        r = self.shells.reshape((-1,) + (1,) * (len(self.ang_shape) + 1))
        return r * self.directions[None, ...]

    @property
    def mesh_size(self) -> float:
        """Largest cell extent, radial or angular."""
        h = max(self.dr, self.R * self.dphi)
        if self.n == 3:
            ext = np.concatenate([[0.0], self.theta[::-1], [math.pi]])
            h = max(h, self.R * float(np.diff(ext).max()))
        return h

    @property
    def tolerance(self) -> float:
        """5 dr^2, the absolute slack of the nodal and weak inequality checks."""
        return 5.0 * self.dr**2

    def interior_mask(self) -> np.ndarray:
        """Nodes away from the origin and the one-sided outer shell."""
        shell_ok = (self.shells >= self.R / 16.0) & (np.arange(self.n_r) <= self.n_r - 2)
        return np.broadcast_to(
            shell_ok.reshape((-1,) + (1,) * len(self.ang_shape)), self.shape
        ).copy()

    def antipode(self, values: np.ndarray) -> np.ndarray:
        """Values at the antipodal angular node of every node."""
        half = self.n_azimuth // 2
        if self.n == 2:
            return np.roll(values, half, axis=1)
        return np.roll(values[:, ::-1, :], half, axis=2)

    def shell_index(self, r: float) -> int:
        """Snap a radius to the nearest shell midpoint."""
        k = int(round(r / self.dr - 0.5))
        if k < 0 or k >= self.n_r or abs(self.shells[k] - r) > 0.5 * self.dr * (1 + 1e-9):
            raise DomainError(f"no shell within half a spacing of r={r} on {self!r}")
        return k

    # -----------------------------
    # Euclidean weights
    # -----------------------------
    @property
    def vol_weights(self) -> np.ndarray:
        r = self.shells.reshape((-1,) + (1,) * len(self.ang_shape))
        return r ** (self.n - 1) * self.dr * self.ang_weights[None, ...]

    def sphere_weights(self, i: int) -> np.ndarray:
        return self.shells[i] ** (self.n - 1) * self.ang_weights

    # -----------------------------
    # Metric on the grid
    # -----------------------------
    def metric_on(self, model: ModelMetric) -> GridMetric:
        """Sample the model on this grid; cached per model."""
        if model.n != self.n:
            raise ConfigError(f"grid dimension {self.n} does not match {model.describe()}")
        if self.R > model.radius * (1.0 + 1e-12):
            raise DomainError(
                f"grid radius {self.R} exceeds the working radius {model.radius:.6g} "
                f"of {model.describe()}"
            )
        if self.R >= model.domain_radius:
            raise DomainError(
                f"grid radius {self.R} reaches outside the chart of {model.describe()}"
            )
        cached = self._metric_cache.get(model)
        if cached is None:
            logger.info(f"Sampling {model.describe()} on {self!r}")
            cached = self._build_metric(model)
            self._metric_cache[model] = cached
        return cached

    def _tangential(self, model: ModelMetric, r, dirs, frames):
        """sqrt_det and tangential block T in the given orthonormal frames."""
        pts = np.asarray(r)[..., None] * dirs
        data = metric_at(model, pts)
        T = np.einsum("...ai,...ij,...bj->...ab", frames, data.g, frames)
        return data.sqrt_det, T

    def _build_metric(self, model: ModelMetric) -> GridMetric:
        n = self.n
        ext = np.concatenate([self.shells, [self.shells[-1] + self.dr]])
        face_r = self.faces
        if n == 2:
            return self._build_polar(model, ext, face_r)
        return self._build_spherical(model, ext, face_r)

    def _build_polar(self, model, ext, face_r) -> GridMetric:
        phi = self.phi
        half = phi + 0.5 * self.dphi

        def frame(angles):
            e_phi = np.stack([-np.sin(angles), np.cos(angles)], axis=-1)
            return e_phi[:, None, :]

        dirs = self.directions_at(phi=phi)
        sq_nodes, T_nodes = self._tangential(
            model, self.shells[:, None], dirs[None], frame(phi)[None]
        )
        sq_faces = metric_at(model, face_r[:, None, None] * dirs[None]).sqrt_det
        sq_half, T_half = self._tangential(
            model, self.shells[:, None], self.directions_at(phi=half)[None], frame(half)[None]
        )
        r = self.shells[:, None]
        radial = np.zeros((self.n_r + 1, self.n_azimuth))
        radial[1:] = face_r[1:, None] * sq_faces[1:]
        return GridMetric(
            sqrt_det=sq_nodes,
            sqrt_det_faces=sq_faces,
            radial_coef=radial,
            node_measure=r * sq_nodes,
            phi_face=sq_half / (r * T_half[..., 0, 0]),
            mu_face=None,
            cross=None,
            grad_phi=1.0 / (r**2 * T_nodes[..., 0, 0]),
            grad_theta=None,
            grad_cross=None,
        )

    def _spherical_frames(self, mu, phi):
        s = np.sqrt(np.clip(1.0 - mu**2, 0.0, None))[:, None]
        c = mu[:, None] * np.ones_like(phi)[None, :]
        cp, sp = np.cos(phi)[None, :], np.sin(phi)[None, :]
        e_theta = np.stack([c * cp, c * sp, -s * np.ones_like(cp)], axis=-1)
        e_phi = np.stack([-sp * np.ones_like(c), cp * np.ones_like(c), np.zeros_like(c)], axis=-1)
        return np.stack([e_theta, e_phi], axis=-2)

    def _build_spherical(self, model, ext, face_r) -> GridMetric:
        mu, phi = self.mu, self.phi
        half = phi + 0.5 * self.dphi
        shells = self.shells[:, None, None]

        dirs = self.directions_at(mu, phi)
        sq_nodes, T_nodes = self._tangential(
            model, shells, dirs[None], self._spherical_frames(mu, phi)[None]
        )
        sq_faces = metric_at(model, face_r[:, None, None, None] * dirs[None]).sqrt_det
        sq_mu, T_mu = self._tangential(
            model, shells, self.directions_at(self.mu_faces, phi)[None],
            self._spherical_frames(self.mu_faces, phi)[None],
        )
        sq_half, T_half = self._tangential(
            model, shells, self.directions_at(mu, half)[None],
            self._spherical_frames(mu, half)[None],
        )

        def inverse(T):
            det = T[..., 0, 0] * T[..., 1, 1] - T[..., 0, 1] ** 2
            return T[..., 1, 1] / det, -T[..., 0, 1] / det, T[..., 0, 0] / det

        s2_nodes = (1.0 - mu**2)[None, :, None]
        s2_faces = (1.0 - self.mu_faces**2)[None, :, None]
        tt_mu, _, _ = inverse(T_mu)
        _, _, pp_half = inverse(T_half)
        tt, tp, pp = inverse(T_nodes)

        radial = np.zeros((self.n_r + 1,) + self.ang_shape)
        radial[1:] = (ext[:-1] * ext[1:])[:, None, None] * sq_faces[1:]
        cross = -sq_nodes * tp
        if np.abs(tp).max() <= 1e-14:
            cross = None

        r2 = shells**2
        s_nodes = np.sqrt(s2_nodes)
        return GridMetric(
            sqrt_det=sq_nodes,
            sqrt_det_faces=sq_faces,
            radial_coef=radial,
            node_measure=r2 * sq_nodes,
            phi_face=sq_half * pp_half / s2_nodes,
            mu_face=sq_mu * s2_faces * tt_mu,
            cross=cross,
            grad_phi=pp / (r2 * s2_nodes),
            grad_theta=tt / r2,
            grad_cross=tp / (r2 * s_nodes),
        )


# -----------------------------
# Quadrature
# -----------------------------
def _values(integrand) -> np.ndarray:
    return np.asarray(getattr(integrand, "values", integrand), dtype=float)


def cell_fractions(grid: BallGrid, r: float, power: float) -> np.ndarray:
    """Fraction of each radial cell inside B_r, exact for r-independent integrands."""
    q = grid.n + power
    if q <= 0:
        raise DomainError(f"radial weight power {power} is not integrable in dimension {grid.n}")
    a, b = grid.faces[:-1], grid.faces[1:]
    frac = np.clip((r**q - a**q) / (b**q - a**q), 0.0, 1.0)
    frac[b <= r] = 1.0
    frac[a >= r] = 0.0
    return frac


def volume_integral(grid: BallGrid, model: ModelMetric, integrand, r: float,
                    radial_weight_power: float = 0.0) -> float:
    """
    Integral of integrand * |x|^power over B_r with respect to dV_g.

    Full shells use the midpoint rule; the shell cut by r is weighted by its
    exact volume fraction.
    """
    if r < 0 or r > grid.R * (1 + 1e-12):
        raise DomainError(f"radius {r} outside [0, {grid.R}]")
    gm = grid.metric_on(model)
    dens = _values(integrand) * grid.radius**radial_weight_power * gm.sqrt_det * grid.vol_weights
    shell_sums = dens.reshape(grid.n_r, -1).sum(axis=1)
    return float(shell_sums @ cell_fractions(grid, min(r, grid.R), radial_weight_power))


def annulus_integral(grid: BallGrid, model: ModelMetric, integrand, r_in: float,
                     r_out: float, radial_weight_power: float = 0.0) -> float:
    if r_in > r_out:
        raise DomainError(f"annulus radii out of order: {r_in} > {r_out}")
    outer = volume_integral(grid, model, integrand, r_out, radial_weight_power)
    return outer - volume_integral(grid, model, integrand, r_in, radial_weight_power)


def sphere_integral(grid: BallGrid, model: ModelMetric, integrand, r: float) -> float:
    """Surface integral over the shell nearest to r (snap-to-shell)."""
    k = grid.shell_index(r)
    gm = grid.metric_on(model)
    vals = _values(integrand)[k]
    return float((vals * gm.sqrt_det[k] * grid.sphere_weights(k)).sum())
