import logging
import math

import numpy as np
import pytest

from ballgrid import BallGrid
from errors import ConfigError, DomainError
from geometry import ModelMetric, rescale
from monotone import (
    PairEnergetics,
    almost_mono_bound,
    boundary_ratio,
    c0_candidates,
    calibrate_c0,
    diff_inequality_check,
    dyadic_trace,
    energies,
    phi,
    phi_scan,
)
from pairs import make_inhomogeneous_pair, make_plane_pair, make_sector_pair, make_zero_pair


@pytest.fixture(scope="module")
def plane2(polar_grid):
    return make_plane_pair(polar_grid, [1.0, 0.0])


@pytest.fixture(scope="module")
def sector_grid():
    # 0.4 and 0.8 fall on shell faces
    return BallGrid(2, 1.0, 80, 64)


@pytest.fixture(scope="module")
def sector(sector_grid):
    return make_sector_pair(sector_grid, math.pi / 2)


def test_half_disc_energy(plane2, flat2):
    a_plus, a_minus = energies(flat2, plane2, 1.0)
    assert a_plus == pytest.approx(math.pi / 2, rel=1e-2)
    assert a_minus == pytest.approx(math.pi / 2, rel=1e-2)
    assert phi(flat2, plane2, 1.0) == pytest.approx(math.pi**2 / 4, rel=1e-2)


def test_half_ball_energy(shell_grid, flat3):
    pair = make_plane_pair(shell_grid, [1.0, 0.0, 0.0])
    assert phi(flat3, pair, 1.0) == pytest.approx(math.pi**2, rel=1e-2)


def test_phi_needs_positive_radius(plane2, flat2):
    with pytest.raises(DomainError):
        phi(flat2, plane2, 0.0)


def test_plane_scan_is_monotone(plane2, flat2):
    trace = phi_scan(flat2, plane2)
    assert trace.verdicts["monotone"]
    assert np.all(trace.row_verdicts)
    assert np.allclose(trace.phi, math.pi**2 / 4, rtol=2e-2)
    # the corrector is 1 in the plane
    assert np.allclose(trace.phi_F, trace.phi, rtol=1e-12)


def test_sector_growth_rate(sector, flat2):
    ratio = phi(flat2, sector, 0.8) / phi(flat2, sector, 0.4)
    assert ratio == pytest.approx(2.0 ** (4.0 / 3.0), rel=3e-2)


def test_sector_log_derivative_identity(sector, flat2):
    trace = phi_scan(flat2, sector)
    assert trace.verdicts["monotone"]
    keep = trace.radii >= 0.2
    assert trace.identity_residual[keep].max() < 0.05


def test_plane_boundary_ratio(plane2, flat2):
    trace = phi_scan(flat2, plane2)
    plus, minus = boundary_ratio(trace, 1.0, 1.0)
    assert np.allclose(plus, 1.0, atol=1e-2)
    assert np.allclose(minus, 1.0, atol=1e-2)


def test_energetics_are_reused(plane2, flat2):
    en = PairEnergetics(flat2, plane2)
    first = en.energy
    en.A(0.5)
    assert en.energy is first
    with pytest.raises(ConfigError):
        en.A(0.5, weight="gaussian")


def test_scan_radii_validation(plane2, flat2, polar_grid):
    with pytest.raises(DomainError):
        phi_scan(flat2, plane2, radii=[0.5, 0.4])
    with pytest.raises(DomainError):
        phi_scan(flat2, plane2, radii=[0.5, 1.5])
    trace = phi_scan(flat2, plane2, radii=[polar_grid.dr])
    assert len(trace) == 0
    assert trace.verdicts["monotone"]


def test_bilinear_scaling(plane2, flat2):
    base = phi(flat2, plane2, 0.5)
    scaled = phi(flat2, plane2.scaled(2.0, 3.0), 0.5)
    assert scaled == pytest.approx(36.0 * base, rel=1e-12)


def test_zero_pair_is_monotone(polar_grid, flat2):
    trace = phi_scan(flat2, make_zero_pair(polar_grid))
    assert np.all(trace.phi == 0.0)
    assert trace.verdicts["monotone"]


def test_rescaling_invariance():
    model = ModelMetric.space_form(2, 1.0)
    small = BallGrid(2, 0.5, 32, 32)
    unit = BallGrid(2, 1.0, 32, 32)
    direct = phi(model, make_plane_pair(small, [1.0, 0.0]), 0.3)
    blown_up = phi(rescale(model, 0.5), make_plane_pair(unit, [1.0, 0.0]), 0.6)
    assert blown_up == pytest.approx(direct, rel=1e-9)


def test_almost_monotone_constant(plane2, flat2):
    report = almost_mono_bound(flat2, plane2)
    expected = (math.pi**2 / 4) / (1.0 + math.pi) ** 2
    assert report.C_fitted == pytest.approx(expected, rel=2e-2)
    assert report.delta == 1.0
    with pytest.raises(DomainError):
        almost_mono_bound(flat2, plane2, delta=2.0)


def test_dyadic_plane_equality():
    grid = BallGrid(2, 1.0, 512, 64)
    trace = dyadic_trace(ModelMetric.euclidean(2), make_plane_pair(grid, [1.0, 0.0]), 3)
    assert len(trace) == 4
    assert np.allclose(trace.product_ratio, 1.0, atol=1e-3)
    assert trace.verdicts == {"product": True, "dichotomy": True, "chain": True}
    assert trace.epsilon == pytest.approx(1.0 - 1.0 / 16.0, abs=1e-3)


def test_dyadic_sector_is_strict():
    grid = BallGrid(2, 1.0, 512, 64)
    trace = dyadic_trace(ModelMetric.euclidean(2), make_sector_pair(grid, math.pi / 2), 3)
    assert all(trace.verdicts.values())
    assert np.all(trace.product_ratio < 1.0)


def test_dyadic_needs_resolution(plane2, flat2):
    with pytest.raises(ConfigError, match="insufficient resolution"):
        dyadic_trace(flat2, plane2, 3)
    with pytest.raises(ConfigError):
        dyadic_trace(flat2, plane2, 0)
    small = BallGrid(2, 0.5, 64, 64)
    with pytest.raises(ConfigError):
        dyadic_trace(flat2, make_plane_pair(small, [1.0, 0.0]), 1)


def test_c0_candidates():
    assert c0_candidates(0.0) == [0.0]
    assert c0_candidates(2.0) == [0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0]


def test_flat_calibration_needs_no_exponential(plane2, flat2):
    result = calibrate_c0(flat2, [plane2])
    assert result.passed
    assert result.c0 == 0.0
    assert result.outcomes == [(0.0, True)]


@pytest.mark.parametrize("kappa", [1.0, -1.0])
def test_curved_calibration(kappa):
    model = ModelMetric.space_form(2, kappa)
    grid = BallGrid(2, 0.5, 64, 64)
    result = calibrate_c0(model, [make_plane_pair(grid, [1.0, 0.0])])
    assert result.passed
    assert result.c0 in c0_candidates(model.Lambda)
    assert all(t.verdicts["monotone"] for t in result.traces)


def test_differential_inequality_on_plane(plane2, flat2):
    report = diff_inequality_check(phi_scan(flat2, plane2))
    assert report.passed
    assert not report.vacuous
    assert report.premise_count > 0


def test_differential_inequality_vacuous_for_zero_pair(polar_grid, flat2):
    report = diff_inequality_check(phi_scan(flat2, make_zero_pair(polar_grid)))
    assert report.passed
    assert report.vacuous


@pytest.mark.parametrize("kappa, expected", [(1.0, 0.25), (-1.0, 0.0)])
def test_spatial_calibration_is_resolution_stable(kappa, expected):
    model = ModelMetric.space_form(3, kappa)
    chosen = []
    for n_r, n_ang in ((32, 16), (64, 32)):
        grid = BallGrid(3, 0.5, n_r, n_ang)
        result = calibrate_c0(model, [make_plane_pair(grid, [1.0, 0.0, 0.0])])
        assert result.passed
        chosen.append(result.c0)
    assert chosen == [expected, expected]


def test_almost_monotone_constant_family(flat2, round2):
    fitted = {}
    for model in (flat2, round2):
        for a in (None, 0.25, 0.5, 1.0):
            values = []
            for n in (64, 128):
                grid = BallGrid(2, 1.0, n, n)
                if a is None:
                    pair = make_plane_pair(grid, [1.0, 0.0])
                else:
                    pair = make_inhomogeneous_pair(grid, a)
                values.append(almost_mono_bound(model, pair).C_fitted)
            assert values[1] == pytest.approx(values[0], rel=0.15)
            fitted[(model.describe(), a)] = values[1]
    assert max(fitted.values()) < 10.0 * min(fitted.values())


def test_almost_monotone_bound_skips_the_class_warning(polar_grid, flat2, caplog):
    pair = make_inhomogeneous_pair(polar_grid, 0.8)
    with caplog.at_level(logging.WARNING, logger="monotone"):
        report = almost_mono_bound(flat2, pair)
    assert math.isfinite(report.C_fitted)
    assert "non-subharmonic" not in caplog.text
    with caplog.at_level(logging.WARNING, logger="monotone"):
        phi_scan(flat2, pair)
    assert "non-subharmonic" in caplog.text
