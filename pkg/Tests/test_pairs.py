import math

import numpy as np
import pytest
from scipy.special import lpmv

from ballgrid import BallGrid
from errors import ConfigError
from fields import ScalarField
from pairs import (
    DELTA_GE_MINUS_ONE,
    SUBHARMONIC,
    Pair,
    cap_exponent,
    cap_profile,
    friedland_hayman_check,
    friedland_hayman_scan,
    make_cap_pair,
    make_inhomogeneous_pair,
    make_plane_pair,
    make_sector_pair,
    make_zero_pair,
    validate_pair,
)


def test_plane_pair_is_admissible(polar_grid, flat2):
    pair = make_plane_pair(polar_grid, [1.0, 0.0])
    result = validate_pair(flat2, pair)
    assert result.passed, result.violations
    assert result.effective_class == SUBHARMONIC
    assert pair.interface[0].all()


def test_zero_pair(polar_grid, flat2):
    pair = make_zero_pair(polar_grid)
    assert not pair.interface.any()
    assert validate_pair(flat2, pair).passed


def test_inhomogeneous_pair_class(flat2):
    pair = make_inhomogeneous_pair(BallGrid(2, 1.0, 64, 256), 1.0)
    result = validate_pair(flat2, pair)
    assert result.passed, result.violations
    assert result.effective_class == DELTA_GE_MINUS_ONE
    assert result.measured_bound == pytest.approx(1.0, abs=0.01)


def test_inhomogeneous_pair_at_the_class_limit_needs_angular_resolution(polar_grid, flat2):
    # the angular stencil adds a sin^2(dphi/2) cos(2 phi) error to Delta x1^2
    result = validate_pair(flat2, make_inhomogeneous_pair(polar_grid, 1.0))
    assert not result.passed
    assert result.measured_bound == pytest.approx(1.0 + math.sin(math.pi / 64) ** 2, rel=1e-6)
    assert validate_pair(flat2, make_inhomogeneous_pair(polar_grid, 0.8)).passed


def test_sector_pair_is_admissible(polar_grid, flat2):
    result = validate_pair(flat2, make_sector_pair(polar_grid, math.pi / 2))
    assert result.passed, result.violations
    assert result.effective_class == SUBHARMONIC


def test_overlapping_supports_are_reported(polar_grid, flat2):
    ones = ScalarField.constant(polar_grid, 1.0)
    mask = np.zeros(polar_grid.shape, dtype=bool)
    pair = Pair(ones, ones, SUBHARMONIC, mask, "overlap")
    result = validate_pair(flat2, pair)
    assert not result.passed
    assert "supports overlap" in result.violations


def test_invalid_pairs(polar_grid, shell_grid):
    with pytest.raises(ConfigError):
        make_plane_pair(polar_grid, [1.0, 1.0])
    with pytest.raises(ConfigError):
        make_sector_pair(shell_grid, math.pi)
    with pytest.raises(ConfigError):
        make_sector_pair(polar_grid, 0.0)
    with pytest.raises(ConfigError):
        make_inhomogeneous_pair(polar_grid, 2.0)
    with pytest.raises(ConfigError):
        make_inhomogeneous_pair(BallGrid(2, 2.0, 32, 32), 0.5)
    with pytest.raises(ConfigError):
        make_cap_pair(polar_grid, math.pi / 2)


def test_sector_pair_exponents(polar_grid):
    pair = make_sector_pair(polar_grid, math.pi / 2)
    assert pair.params["alpha_plus"] == pytest.approx(2.0)
    assert pair.params["alpha_minus"] == pytest.approx(2.0 / 3.0)
    assert np.all(pair.u_plus.values * pair.u_minus.values == 0.0)


def test_hemisphere_exponent():
    cap = cap_exponent(3, math.pi / 2)
    assert cap.lam == pytest.approx(2.0, abs=1e-9)
    assert cap.alpha == pytest.approx(1.0, abs=1e-9)


def test_cap_eigenfunction_vanishes_on_boundary():
    theta = math.pi / 3
    cap = cap_exponent(3, theta)
    assert abs(lpmv(0, cap.alpha, math.cos(theta))) < 1e-8


def test_cap_exponent_tolerance_insensitive():
    loose = cap_exponent(3, 1.0, rtol=1e-10)
    tight = cap_exponent(3, 1.0, rtol=1e-12)
    assert loose.alpha == pytest.approx(tight.alpha, abs=1e-8)


def test_cap_profile_matches_legendre():
    cap = cap_exponent(3, math.pi / 2)
    polar = np.array([0.0, 0.5, 1.0, 1.5, 2.0])
    profile = cap_profile(cap, polar)
    assert np.allclose(profile[:4], np.cos(polar[:4]), atol=1e-8)
    assert profile[4] == 0.0


def test_hemisphere_cap_pair_is_plane_pair(shell_grid):
    pair = make_cap_pair(shell_grid, math.pi / 2)
    x3 = shell_grid.coords[..., 2]
    assert np.allclose(pair.u_plus.values, np.maximum(x3, 0.0), atol=1e-8)
    assert np.allclose(pair.u_minus.values, np.maximum(-x3, 0.0), atol=1e-8)


def test_cap_exponent_range():
    with pytest.raises(ConfigError):
        cap_exponent(3, math.pi)
    with pytest.raises(ConfigError):
        cap_exponent(4, 1.0)


def test_friedland_hayman_equality_cases():
    assert friedland_hayman_check(3, math.pi / 2).total == pytest.approx(2.0, abs=1e-6)
    assert friedland_hayman_check(2, math.pi).total == pytest.approx(2.0, abs=1e-12)
    report = friedland_hayman_check(2, math.pi / 2)
    assert report.total == pytest.approx(8.0 / 3.0)
    assert report.passed


def test_friedland_hayman_planar_scan():
    reports = friedland_hayman_scan(2, count=50, margin=0.2)
    assert all(r.passed for r in reports)
    assert min(r.total for r in reports) == pytest.approx(2.0, abs=1e-9)


@pytest.mark.parametrize("n, upper", [(2, 2.0 * math.pi), (3, math.pi)])
def test_cap_exponent_decreases_with_opening(n, upper):
    thetas = np.linspace(0.3, upper - 0.3, 12)
    alphas = np.array([cap_exponent(n, float(t)).alpha for t in thetas])
    assert np.all(np.diff(alphas) < 0.0)


def test_friedland_hayman_spatial_minimum_is_the_hemisphere():
    reports = friedland_hayman_scan(3, count=15, margin=0.3)
    assert all(r.passed for r in reports)
    best = min(reports, key=lambda r: r.total)
    assert best.theta == pytest.approx(math.pi / 2)
    assert best.total == pytest.approx(2.0, abs=1e-6)
    others = [r.total for r in reports if r is not best]
    assert min(others) > best.total + 1e-4
