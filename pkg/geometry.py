#!/usr/bin/env python3
"""
Model Riemannian metrics in geodesic normal coordinates.

Three kinds of model are supported:
- euclidean: g = I
- space_form: constant curvature kappa, g = P_rad + f(|x|)^2 P_tan
- polynomial_perturbation: g = I + h(x), h_ij(x) = sum c_ijkl x_k x_l

Every model may be rescaled, g^t(x) = g(t x), which is how small geodesic
balls are blown up to the unit ball.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Optional, Tuple

import numpy as np

from errors import ConfigError, DomainError

logger = logging.getLogger(__name__)

EUCLIDEAN = "euclidean"
SPACE_FORM = "space_form"
PERTURBATION = "polynomial_perturbation"
KINDS = (EUCLIDEAN, SPACE_FORM, PERTURBATION)

# eigenvalue window for the metric on the working ball
EIGEN_LOWER = 0.25
EIGEN_UPPER = 4.0


def sin_ratio(kappa: float, rho) -> np.ndarray:
    """f(rho) = sin(sqrt(k) rho)/(sqrt(k) rho), or the sinh form for k < 0."""
    rho = np.asarray(rho, dtype=float)
    if kappa > 0:
        return np.sinc(math.sqrt(kappa) * rho / math.pi)
    if kappa < 0:
        s = math.sqrt(-kappa) * rho
        small = s < 1e-4
        safe = np.where(small, 1.0, s)
        return np.where(small, 1.0 + s**2 / 6.0 + s**4 / 120.0, np.sinh(safe) / safe)
    return np.ones_like(rho)


def sample_directions(n: int, count: int) -> np.ndarray:
    """Deterministic, roughly uniform unit vectors (circle or Fibonacci sphere)."""
    if n == 2:
        angles = 2.0 * math.pi * np.arange(count) / count
        return np.stack([np.cos(angles), np.sin(angles)], axis=-1)
    k = np.arange(count) + 0.5
    z = 1.0 - 2.0 * k / count
    azimuth = math.pi * (1.0 + math.sqrt(5.0)) * k
    s = np.sqrt(1.0 - z**2)
    return np.stack([s * np.cos(azimuth), s * np.sin(azimuth), z], axis=-1)


@dataclass(frozen=True)
class MetricData:
    g: np.ndarray
    g_inv: np.ndarray
    sqrt_det: np.ndarray


@dataclass(frozen=True)
class ModelMetric:
    """
    Immutable metric descriptor.

    Args:
        n: dimension, 2 or 3
        kind: one of KINDS
        kappa: sectional curvature for space forms (1/length^2)
        coefficients: flattened c_ijkl (n**4 entries) for perturbations
        curvature_bound: declared Lambda of the unscaled metric (derived if None)
        working_radius: declared working radius (derived if None)
        t: rescale factor, the model evaluates g(t x)
    """

    n: int
    kind: str = EUCLIDEAN
    kappa: float = 0.0
    coefficients: Tuple[float, ...] = field(default=(), repr=False)
    curvature_bound: Optional[float] = None
    working_radius: Optional[float] = None
    t: float = 1.0

    def __post_init__(self):
        if self.n not in (2, 3):
            raise ConfigError(f"dimension must be 2 or 3, got {self.n}")
        if self.kind not in KINDS:
            raise ConfigError(f"unknown metric kind '{self.kind}'")
        if not (0.0 < self.t <= 1.0):
            raise DomainError(f"rescale factor must lie in (0, 1], got {self.t}")
        if self.curvature_bound is not None and self.curvature_bound < 0:
            raise ConfigError("curvature bound must be nonnegative")
        if self.working_radius is not None and self.working_radius <= 0:
            raise ConfigError("working radius must be positive")
        if self.kind == PERTURBATION:
            self._validate_coefficients()
        if self.working_radius is not None and self.working_radius >= self.domain_radius:
            raise DomainError(
                f"working radius {self.working_radius} reaches outside the chart "
                f"(radius {self.domain_radius:.6g})"
            )

    # -----------------------------
    # Constructors
    # -----------------------------
    @classmethod
    def euclidean(cls, n: int) -> "ModelMetric":
        return cls(n=n)

    @classmethod
    def space_form(cls, n: int, kappa: float, t: float = 1.0) -> "ModelMetric":
        kind = EUCLIDEAN if kappa == 0 else SPACE_FORM
        return cls(n=n, kind=kind, kappa=float(kappa), t=t)

    @classmethod
    def perturbation(cls, n: int, coefficients, curvature_bound: Optional[float] = None,
                     t: float = 1.0) -> "ModelMetric":
        c = np.asarray(coefficients, dtype=float)
        if c.size != n**4:
            raise ConfigError(f"perturbation needs {n**4} coefficients, got {c.size}")
        return cls(n=n, kind=PERTURBATION, coefficients=tuple(c.ravel().tolist()),
                   curvature_bound=curvature_bound, t=t)

    @classmethod
    def from_curvature_matrix(cls, n: int, A, t: float = 1.0) -> "ModelMetric":
        """
        Quadratic normal-coordinate expansion of a curvature tensor R = A (.) delta.

        g_ij = delta_ij - (1/3) R_ikjl x_k x_l, so A = (kappa/2) I matches the
        space form of curvature kappa up to O(|x|^4).
        """
        A = np.asarray(A, dtype=float)
        if A.shape != (n, n) or not np.allclose(A, A.T):
            raise ConfigError("curvature matrix must be symmetric n x n")
        d = np.eye(n)
        # R_abcd = A_ac d_bd + d_ac A_bd - A_ad d_bc - d_ad A_bc
        R = (np.einsum("ac,bd->abcd", A, d) + np.einsum("ac,bd->abcd", d, A)
             - np.einsum("ad,bc->abcd", A, d) - np.einsum("ad,bc->abcd", d, A))
        # c_ijkl: coefficient of x_k x_l in h_ij, symmetrized in (k, l)
        c = -(np.einsum("ikjl->ijkl", R) + np.einsum("iljk->ijkl", R)) / 6.0
        return cls.perturbation(n, c, t=t)

    # -----------------------------
    # Derived quantities
    # -----------------------------
    @cached_property
    def tensor(self) -> np.ndarray:
        n = self.n
        return np.asarray(self.coefficients, dtype=float).reshape(n, n, n, n)

    @cached_property
    def _direction_spectrum(self) -> Tuple[float, float]:
        """(min eigenvalue, max spectral norm) of h(w) over sampled unit w."""
        dirs = sample_directions(self.n, 720 if self.n == 2 else 2000)
        h = np.einsum("ijkl,mk,ml->mij", self.tensor, dirs, dirs)
        eig = np.linalg.eigvalsh(h)
        return float(eig.min()), float(np.abs(eig).max())

    def _validate_coefficients(self):
        c = self.tensor
        scale = max(np.abs(c).max(), 1.0)
        if not np.allclose(c, c.transpose(1, 0, 2, 3), atol=1e-12 * scale):
            raise ConfigError("perturbation coefficients must be symmetric in (i, j)")
        if not np.allclose(c, c.transpose(0, 1, 3, 2), atol=1e-12 * scale):
            raise ConfigError("perturbation coefficients must be symmetric in (k, l)")
        dirs = sample_directions(self.n, 64 if self.n == 2 else 200)
        hx = np.einsum("ijkl,mk,ml,mj->mi", c, dirs, dirs, dirs)
        if np.abs(hx).max() > 1e-10 * scale:
            raise ConfigError(
                "perturbation violates the Gauss lemma h(x)x = 0; "
                "coordinates would not be geodesic normal"
            )

    @property
    def base_curvature_bound(self) -> float:
        if self.curvature_bound is not None:
            return float(self.curvature_bound)
        if self.kind == SPACE_FORM:
            return abs(self.kappa)
        if self.kind == PERTURBATION:
            return 3.0 * self._direction_spectrum[1]
        return 0.0

    @property
    def Lambda(self) -> float:
        """Curvature bound of the model as evaluated, i.e. after rescaling."""
        return self.t**2 * self.base_curvature_bound

    @property
    def radius(self) -> float:
        """Ball where metric_at answers: declared, or min(1, 0.8/sqrt(Lambda))."""
        if self.working_radius is not None:
            return float(self.working_radius)
        lam = self.Lambda
        if lam <= 0:
            return 1.0
        return min(1.0, 0.8 / math.sqrt(lam))

    @cached_property
    def domain_radius(self) -> float:
        """Radius of the coordinate chart where the model is defined."""
        if self.kind == SPACE_FORM and self.kappa > 0:
            return math.pi / (math.sqrt(self.kappa) * self.t)
        if self.kind == PERTURBATION:
            mu_min = self._direction_spectrum[0]
            if mu_min < 0:
                return 1.0 / (self.t * math.sqrt(-mu_min))
        return math.inf

    def describe(self) -> str:
        if self.kind == SPACE_FORM:
            return f"space_form(n={self.n}, kappa={self.kappa}, t={self.t})"
        if self.kind == PERTURBATION:
            return f"perturbation(n={self.n}, Lambda={self.base_curvature_bound:.4g}, t={self.t})"
        return f"euclidean(n={self.n})"


# -----------------------------
# Metric evaluation
# -----------------------------
def _as_points(model: ModelMetric, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.n:
        raise DomainError(f"expected points of dimension {model.n}, got shape {x.shape}")
    return x, np.linalg.norm(x, axis=-1)


def _require_working_ball(model: ModelMetric, r):
    # closed ball: the outer face of a grid of radius model.radius lies on it
    if np.any(r > model.radius * (1.0 + 1e-12)):
        raise DomainError(
            f"point at |x|={float(np.max(r)):.6g} outside the working radius "
            f"{model.radius:.6g} of {model.describe()}"
        )


def metric_at(model: ModelMetric, x) -> MetricData:
    """
    Evaluate g, g^-1 and sqrt(det g) at one point or an array of points.

    Args:
        model: the metric
        x: array of shape (..., n) in normal coordinates, |x| <= model.radius

    Returns:
        MetricData with arrays of shape (..., n, n) and (...,)
    """
    x, r = _as_points(model, x)
    _require_working_ball(model, r)
    return _evaluate(model, x, r)


def _evaluate(model: ModelMetric, x, r) -> MetricData:
    """Formulas only; difference stencils may step past the working radius."""
    if np.any(r >= model.domain_radius):
        raise DomainError(
            f"point at |x|={float(np.max(r)):.6g} outside the chart of {model.describe()} "
            f"(radius {model.domain_radius:.6g})"
        )

    n = model.n
    eye = np.eye(n)
    batch = x.shape[:-1]
    y = model.t * x

    if model.kind == EUCLIDEAN:
        g = np.broadcast_to(eye, batch + (n, n)).copy()
        return MetricData(g=g, g_inv=g.copy(), sqrt_det=np.ones(batch))

    if model.kind == SPACE_FORM:
        rho = np.linalg.norm(y, axis=-1)
        f = sin_ratio(model.kappa, rho)
        yhat = np.divide(y, rho[..., None], out=np.zeros_like(y), where=rho[..., None] > 0)
        outer = yhat[..., :, None] * yhat[..., None, :]
        f2 = (f**2)[..., None, None]
        g = f2 * eye + (1.0 - f2) * outer
        g_inv = eye / f2 + (1.0 - 1.0 / f2) * outer
        return MetricData(g=g, g_inv=g_inv, sqrt_det=f ** (n - 1))

    h = np.einsum("ijkl,...k,...l->...ij", model.tensor, y, y)
    g = eye + h
    sign, logdet = np.linalg.slogdet(g)
    if np.any(sign <= 0):
        raise DomainError(f"metric of {model.describe()} degenerates inside the sampled points")
    g_inv = np.linalg.inv(g)
    return MetricData(g=g, g_inv=g_inv, sqrt_det=np.exp(0.5 * logdet))


def metric_derivatives(model: ModelMetric, x, step: Optional[float] = None) -> np.ndarray:
    """d_k g_ij by 4th-order central differences, shape (..., n_k, n, n)."""
    x, r = _as_points(model, x)
    _require_working_ball(model, r)
    s = step if step is not None else 1e-4 * model.radius

    def g_at(p):
        return _evaluate(model, p, np.linalg.norm(p, axis=-1)).g

    parts = []
    for k in range(model.n):
        e = np.zeros(model.n)
        e[k] = s
        parts.append((-g_at(x + 2 * e) + 8.0 * g_at(x + e)
                      - 8.0 * g_at(x - e) + g_at(x - 2 * e)) / (12.0 * s))
    return np.stack(parts, axis=-3)


# -----------------------------
# Hebey bounds
# -----------------------------
@dataclass
class HebeyReport:
    passed: bool
    K: float
    radius: float
    worst_ratio: float
    worst_point: np.ndarray
    fitted_K: float
    value_K: float
    derivative_K: float
    eigen_min: float
    eigen_max: float

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "K": self.K,
            "radius": self.radius,
            "worst_ratio": self.worst_ratio,
            "worst_point": [float(v) for v in self.worst_point],
            "fitted_K": self.fitted_K,
            "value_K": self.value_K,
            "derivative_K": self.derivative_K,
            "eigen_min": self.eigen_min,
            "eigen_max": self.eigen_max,
        }


def hebey_points(n: int, radius: float, n_shells: int = 40) -> np.ndarray:
    """Sample set: n_shells spheres out to the radius itself, times directions."""
    dirs = sample_directions(n, 64 if n == 2 else 128)
    radii = radius * np.arange(1, n_shells + 1) / n_shells
    return (radii[:, None, None] * dirs[None, :, :]).reshape(-1, n)


def hebey_verify(model: ModelMetric, radius: Optional[float] = None, K: float = 0.5,
                 step: Optional[float] = None, n_shells: int = 40) -> HebeyReport:
    """
    Check 1/4 <= g <= 4, |g - delta| <= K|y|^2 and |dg| <= K|y| on B_radius.

    The candidate K is compared against the fitted constants; increasing K can
    only turn a failure into a pass.
    """
    radius = model.radius if radius is None else float(radius)
    if radius <= 0:
        raise DomainError(f"radius must be positive, got {radius}")
    _require_working_ball(model, radius)
    if K < 0:
        raise ConfigError("candidate constant K must be nonnegative")

    pts = hebey_points(model.n, radius, n_shells)
    r = np.linalg.norm(pts, axis=-1)
    data = metric_at(model, pts)
    eye = np.eye(model.n)
    dev = np.abs(data.g - eye).max(axis=(-2, -1))
    der = np.abs(metric_derivatives(model, pts, step)).max(axis=(-3, -2, -1))
    eig = np.linalg.eigvalsh(data.g)

    value_K = float((dev / r**2).max())
    derivative_K = float((der / r).max())
    fitted_K = max(value_K, derivative_K)

    excess = np.maximum(dev - K * r**2, der - K * r)
    worst = int(np.argmax(excess))
    if K > 0:
        worst_ratio = fitted_K / K
    else:
        worst_ratio = 0.0 if fitted_K <= 1e-12 else math.inf

    eig_ok = eig.min() >= EIGEN_LOWER and eig.max() <= EIGEN_UPPER
    passed = bool(eig_ok and fitted_K <= K * (1.0 + 1e-9) + 1e-12)
    if not passed:
        logger.warning(
            f"Hebey bounds fail for {model.describe()} at K={K}: fitted K={fitted_K:.4g}, "
            f"worst point |y|={r[worst]:.4g}"
        )
    return HebeyReport(
        passed=passed, K=float(K), radius=radius, worst_ratio=float(worst_ratio),
        worst_point=pts[worst], fitted_K=fitted_K, value_K=value_K,
        derivative_K=derivative_K, eigen_min=float(eig.min()), eigen_max=float(eig.max()),
    )


# -----------------------------
# Radial Laplacian and rescaling
# -----------------------------
def radial_laplacian(model: ModelMetric, r: float, n_dirs: int = 64) -> float:
    """(n-1)/r + d/dr ln sqrt(det g), averaged over rays."""
    if r <= 0:
        raise DomainError(f"radial Laplacian needs r > 0, got {r}")
    _require_working_ball(model, r)
    s = min(1e-4 * model.radius, 0.25 * r)
    dirs = sample_directions(model.n, n_dirs)

    def log_sqrt_det(rho):
        pts = rho * dirs
        return np.log(_evaluate(model, pts, np.full(len(pts), rho)).sqrt_det)

    d = (-log_sqrt_det(r + 2 * s) + 8 * log_sqrt_det(r + s)
         - 8 * log_sqrt_det(r - s) + log_sqrt_det(r - 2 * s)) / (12 * s)
    return (model.n - 1) / r + float(d.mean())


def rescale(model: ModelMetric, t: float) -> ModelMetric:
    """g^t(x) = g(t x); composes multiplicatively."""
    if not (0.0 < t <= 1.0):
        raise DomainError(f"rescale factor must lie in (0, 1], got {t}")
    return replace(model, t=model.t * t, working_radius=None)
