import math

import numpy as np
import pytest

from errors import ConfigError, DomainError
from geometry import (
    ModelMetric,
    hebey_verify,
    metric_at,
    metric_derivatives,
    radial_laplacian,
    rescale,
)


def test_euclidean_metric_is_identity():
    data = metric_at(ModelMetric.euclidean(2), [0.3, 0.4])
    assert np.array_equal(data.g, np.eye(2))
    assert data.sqrt_det == pytest.approx(1.0)


def test_sphere_tangential_eigenvalue(round2):
    data = metric_at(round2, [0.6, 0.8])
    eig = np.linalg.eigvalsh(data.g)
    assert eig[0] == pytest.approx(math.sin(1.0) ** 2, rel=1e-12)
    assert eig[0] == pytest.approx(0.70807, abs=1e-5)
    assert eig[1] == pytest.approx(1.0, abs=1e-12)


def test_hyperbolic_tangential_eigenvalue():
    x = np.array([0.3, 0.0, 0.4])
    data = metric_at(ModelMetric.space_form(3, -1.0), x)
    eig = np.linalg.eigvalsh(data.g)
    expected = (math.sinh(0.5) / 0.5) ** 2
    assert eig[1] == pytest.approx(expected, rel=1e-12)
    assert eig[2] == pytest.approx(expected, rel=1e-12)
    assert eig[0] == pytest.approx(1.0, abs=1e-12)
    assert data.sqrt_det == pytest.approx(math.sinh(0.5) ** 2 / 0.25, rel=1e-12)


@pytest.mark.parametrize("model", [
    ModelMetric.space_form(2, 1.0),
    ModelMetric.space_form(3, -2.0),
    ModelMetric.from_curvature_matrix(3, np.diag([0.5, 0.2, -0.3])),
])
def test_inverse_metric(model):
    x = np.array([[0.1, 0.2, 0.3][: model.n], [0.4, -0.1, 0.05][: model.n]])
    data = metric_at(model, x)
    prod = np.einsum("...ij,...jk->...ik", data.g_inv, data.g)
    assert np.allclose(prod, np.eye(model.n), atol=1e-12)
    assert np.all(data.sqrt_det > 0)


def test_metric_at_origin_is_identity():
    data = metric_at(ModelMetric.space_form(3, 1.0), np.zeros(3))
    assert np.allclose(data.g, np.eye(3), atol=1e-15)


def test_points_outside_chart_raise():
    with pytest.raises(DomainError):
        metric_at(ModelMetric.space_form(2, 1.0), [3.2, 0.0])
    with pytest.raises(DomainError):
        metric_at(ModelMetric.euclidean(3), [0.1, 0.2])


def test_points_outside_working_radius_raise():
    with pytest.raises(DomainError, match="working radius"):
        metric_at(ModelMetric.euclidean(2), [5.0, 0.0])
    sphere = ModelMetric.space_form(2, 1.0)
    assert sphere.radius == pytest.approx(0.8)
    with pytest.raises(DomainError, match="working radius"):
        metric_at(sphere, [2.0, 0.0])
    with pytest.raises(DomainError):
        metric_at(sphere, [[0.1, 0.0], [0.0, 0.81]])
    # the closed ball is allowed
    assert metric_at(sphere, [0.0, 0.8]).sqrt_det > 0.0
    with pytest.raises(DomainError):
        hebey_verify(sphere, radius=1.0)
    with pytest.raises(DomainError):
        radial_laplacian(sphere, 0.9)


def test_declared_working_radius_must_fit_the_chart():
    assert ModelMetric(n=2, kind="space_form", kappa=1.0, working_radius=3.0).radius == 3.0
    with pytest.raises(DomainError):
        ModelMetric(n=2, kind="space_form", kappa=1.0, working_radius=3.2)


def test_rescaled_metric_evaluates_g_at_tx():
    base = ModelMetric.space_form(2, 1.0)
    scaled = rescale(base, 0.5)
    x = np.array([0.7, -0.2])
    assert np.allclose(metric_at(scaled, x).g, metric_at(base, 0.5 * x).g, atol=1e-15)
    assert scaled.Lambda == pytest.approx(0.25)
    assert rescale(scaled, 0.5).t == pytest.approx(0.25)
    assert scaled.radius == 1.0


def test_rescale_factor_range():
    with pytest.raises(DomainError):
        rescale(ModelMetric.euclidean(2), 0.0)
    with pytest.raises(DomainError):
        ModelMetric(n=2, t=1.5)


def test_curvature_matrix_matches_space_form_to_fourth_order():
    pert = ModelMetric.from_curvature_matrix(2, 0.5 * np.eye(2))
    sphere = ModelMetric.space_form(2, 1.0)
    x = np.array([0.1, 0.0])
    diff = np.abs(metric_at(pert, x).g - metric_at(sphere, x).g).max()
    assert diff < 1e-5
    assert pert.base_curvature_bound == pytest.approx(1.0, rel=1e-6)


def test_perturbation_must_respect_gauss_lemma():
    c = np.zeros(16)
    c[0] = 1.0
    with pytest.raises(ConfigError):
        ModelMetric.perturbation(2, c)


def test_metric_derivatives_of_flat_metric_vanish():
    d = metric_derivatives(ModelMetric.euclidean(2), np.array([[0.2, 0.1]]))
    assert d.shape == (1, 2, 2, 2)
    assert np.all(d == 0)


def test_hebey_flat_passes_with_zero_constant():
    report = hebey_verify(ModelMetric.euclidean(2), radius=0.8, K=0.0)
    assert report.passed
    assert report.fitted_K == 0.0


def test_hebey_sphere_passes_above_fitted_constant():
    report = hebey_verify(ModelMetric.space_form(2, 1.0), radius=0.8, K=0.7)
    assert report.passed
    assert report.value_K == pytest.approx(1.0 / 3.0, abs=1e-3)
    assert report.derivative_K == pytest.approx(2.0 / 3.0, abs=2e-3)
    assert 0.25 <= report.eigen_min <= report.eigen_max <= 4.0


def test_hebey_hyperbolic_passes():
    report = hebey_verify(ModelMetric.space_form(2, -1.0), radius=0.8, K=1.0)
    assert report.passed
    assert report.fitted_K == pytest.approx(0.7886, abs=5e-3)


def test_hebey_small_constant_fails_on_outer_shell():
    report = hebey_verify(ModelMetric.space_form(2, 1.0), radius=0.8, K=0.1)
    assert not report.passed
    assert report.worst_ratio > 1.0
    assert np.linalg.norm(report.worst_point) == pytest.approx(0.8, rel=1e-9)


def test_hebey_fitted_constant_stable_under_step_refinement():
    model = ModelMetric.space_form(2, 1.0)
    coarse = hebey_verify(model, radius=0.8, step=1e-3)
    fine = hebey_verify(model, radius=0.8, step=1e-4)
    assert coarse.fitted_K == pytest.approx(fine.fitted_K, rel=0.1)


def test_hebey_constants_scale_under_rescaling():
    base = ModelMetric.space_form(2, 1.0)
    scaled = rescale(base, 0.5)
    assert hebey_verify(scaled, radius=1.0).value_K == pytest.approx(
        0.25 * hebey_verify(base, radius=0.5).value_K, rel=1e-9
    )


def test_radial_laplacian_flat():
    assert radial_laplacian(ModelMetric.euclidean(3), 0.5) == pytest.approx(4.0, rel=1e-9)


def test_radial_laplacian_sphere():
    assert radial_laplacian(ModelMetric.space_form(2, 1.0), 0.5) == pytest.approx(
        1.0 / math.tan(0.5), rel=1e-7
    )
    assert radial_laplacian(ModelMetric.space_form(3, 1.0), 0.5) == pytest.approx(
        2.0 / math.tan(0.5), rel=1e-7
    )


def test_radial_laplacian_needs_positive_radius():
    with pytest.raises(DomainError):
        radial_laplacian(ModelMetric.euclidean(2), 0.0)


def test_hebey_verdict_is_monotone_in_K():
    model = ModelMetric.space_form(2, 1.0)
    verdicts = [hebey_verify(model, K=K).passed for K in (0.1, 0.3, 0.5, 0.7, 1.0)]
    assert verdicts == sorted(verdicts)
    assert verdicts[-1] and not verdicts[0]


def test_rescale_composes():
    base = ModelMetric.space_form(3, -1.0)
    two_step = rescale(rescale(base, 0.5), 0.4)
    one_step = rescale(base, 0.2)
    x = np.array([[0.3, -0.2, 0.5]])
    assert two_step.t == pytest.approx(one_step.t)
    assert two_step.Lambda == pytest.approx(0.04)
    assert np.allclose(metric_at(two_step, x).g, metric_at(one_step, x).g, atol=1e-15)
