"""Criterion tests: von Mises, fatigue parameter calibration, plane
transformations and the critical-plane search (calibration identities)."""

import numpy as np
import pytest

from rucopt import criteria as cr

F1, T1 = 454.0, 300.0  # fully reversed bending/torsion limits (MPa)
YIELD = 972.0


# -- von Mises ---------------------------------------------------------------

def test_von_mises_uniaxial_at_yield():
    sigma = np.array([YIELD, 0, 0, 0, 0, 0])
    assert cr.von_mises_g(sigma, YIELD) == pytest.approx(0.0, abs=1e-12)


def test_von_mises_pure_shear_at_limit():
    # the documented pure-shear yield companion value of the 972 MPa limit
    sigma = np.array([0.0, 0.0, 561.18])
    assert cr.von_mises(sigma) == pytest.approx(561.18 * np.sqrt(3), rel=1e-12)
    assert abs(cr.von_mises_g(sigma, YIELD)) < 1e-4


def test_von_mises_hydrostatic_is_deviatoric_free():
    sigma = np.array([123.0, 123.0, 123.0, 0, 0, 0])
    assert cr.von_mises(sigma) == pytest.approx(0.0, abs=1e-9)
    assert cr.von_mises_g(sigma, YIELD) == pytest.approx(-1.0)


def test_von_mises_2d_embedding_consistency():
    s2 = np.array([120.0, -45.0, 60.0])
    s3 = np.array([120.0, -45.0, 0.0, 60.0, 0.0, 0.0])
    assert cr.von_mises(s2) == pytest.approx(cr.von_mises(s3), rel=1e-14)


def test_von_mises_rejects_nonpositive_limit():
    with pytest.raises(ValueError):
        cr.von_mises_g(np.array([1.0, 0, 0]), 0.0)


# -- parameter calibration -----------------------------------------------------

def test_findley_params_in_documented_brackets():
    p = cr.fatigue_params("findley", F1, T1)
    r = F1 / T1
    assert p.alpha == pytest.approx((2 - r) / (2 * np.sqrt(r - 1)), rel=1e-14)
    assert p.beta == pytest.approx(F1 / (2 * np.sqrt(r - 1)), rel=1e-14)
    assert 0.3 < p.alpha < 0.4
    assert 300.0 < p.beta < 330.0


def test_matake_params_exact():
    p = cr.fatigue_params("matake", F1, T1)
    assert p.alpha == pytest.approx(2 * T1 / F1 - 1, rel=1e-14)
    assert p.beta == T1


def test_dangvan_params_exact():
    p = cr.fatigue_params("dangvan", F1, T1)
    assert p.alpha == pytest.approx(3 * T1 / F1 - 1.5, rel=1e-14)
    assert p.beta == T1


def test_params_reject_out_of_range_ratio():
    with pytest.raises(ValueError):
        cr.fatigue_params("findley", 650.0, 300.0)  # ratio > 2
    with pytest.raises(ValueError):
        cr.fatigue_params("matake", 290.0, 300.0)  # ratio < 1
    with pytest.raises(ValueError):
        cr.fatigue_params("nope", F1, T1)


# -- stress transformation ------------------------------------------------------

def test_transform_uniaxial_principal_plane():
    plane = cr.plane_basis(0.0)
    sn, tau = cr.transform_stress(np.array([200.0, 0, 0]), plane, 2)
    assert sn == pytest.approx(200.0)
    assert tau == pytest.approx(0.0, abs=1e-12)


def test_transform_uniaxial_45deg_mohr():
    plane = cr.plane_basis(np.pi / 4)
    sn, tau = cr.transform_stress(np.array([200.0, 0, 0]), plane, 2)
    assert sn == pytest.approx(100.0)
    assert tau == pytest.approx(-100.0)


def test_transform_3d_hydrostatic_any_plane():
    rng = np.random.default_rng(7)
    sigma = np.array([55.0, 55.0, 55.0, 0, 0, 0])
    for _ in range(10):
        plane = cr.plane_basis(rng.uniform(0, np.pi / 2),
                               rng.uniform(0, 2 * np.pi))
        sn, ta, tb = cr.transform_stress(sigma, plane, 3)
        assert sn == pytest.approx(55.0)
        assert ta == pytest.approx(0.0, abs=1e-10)
        assert tb == pytest.approx(0.0, abs=1e-10)


def test_plane_basis_orthonormal_right_handed():
    rng = np.random.default_rng(8)
    for _ in range(10):
        p = cr.plane_basis(rng.uniform(0, np.pi), rng.uniform(0, 2 * np.pi))
        T = np.vstack([p.n, p.a, p.b])
        assert np.allclose(T @ T.T, np.eye(3), atol=1e-12)


# -- cycle extremes -------------------------------------------------------------

def test_extremes_reversed_uniaxial_45deg():
    plane = cr.plane_basis(np.pi / 4)
    amp = np.array([300.0, 0, 0])
    sn_a, tau_amp = cr.transform_stress(amp, plane, 2)
    tau_a, sn_max = cr.plane_cycle_extremes(0.0, sn_a, 0.0, tau_amp)
    assert tau_a == pytest.approx(150.0)
    assert sn_max == pytest.approx(150.0)


def test_extremes_static_load():
    tau_a, sn_max = cr.plane_cycle_extremes(80.0, 0.0, 25.0, 0.0)
    assert tau_a == 0.0
    assert sn_max == pytest.approx(80.0)


def test_extremes_mean_plus_amplitude():
    tau_a, sn_max = cr.plane_cycle_extremes(100.0, 50.0, 0.0, 0.0)
    assert sn_max == pytest.approx(150.0)


def test_hydrostatic_max_cases():
    hydro_amp = np.array([50.0, 50.0, 50.0, 0, 0, 0])
    assert cr.hydrostatic_max(np.zeros(6), hydro_amp) == pytest.approx(50.0)
    shear_amp = np.array([0.0, 0.0, 0.0, 120.0, 0, 0])
    assert cr.hydrostatic_max(np.zeros(6), shear_amp) == pytest.approx(0.0)
    # plane stress: sigma_zz = 0, so an xx-only cycle has trace amp S
    sxx_amp = np.array([90.0, 0.0, 0.0])
    assert cr.hydrostatic_max(np.zeros(3), sxx_amp) == pytest.approx(30.0)


# -- critical plane search -------------------------------------------------------

@pytest.mark.parametrize("criterion", ["findley", "matake", "dangvan"])
def test_torsion_calibration_identity(criterion):
    """Fully reversed torsion at the torsion limit sits exactly on g = 0."""
    p = cr.fatigue_params(criterion, F1, T1)
    res = cr.critical_plane_g(np.zeros(3), np.array([0.0, 0.0, T1]), p, 0.1)
    assert abs(res.g) < 1e-3


def test_bending_calibration_identity_findley():
    p = cr.fatigue_params("findley", F1, T1)
    res = cr.critical_plane_g(np.zeros(3), np.array([F1, 0.0, 0.0]), p, 1.0)
    assert abs(res.g) < 2e-3


@pytest.mark.parametrize("criterion", ["findley", "matake", "dangvan"])
def test_zero_stress_gives_minus_one(criterion):
    p = cr.fatigue_params(criterion, F1, T1)
    res = cr.critical_plane_g(np.zeros(3), np.zeros(3), p, 1.0)
    assert res.g == pytest.approx(-1.0)


def _random_cycles(n, rng, scale=300.0):
    return (scale * rng.normal(size=(n, 3)), scale * rng.normal(size=(n, 3)))


@pytest.mark.parametrize("criterion", [
    "findley",
    pytest.param("matake", marks=pytest.mark.xfail(
        strict=True,
        reason="Matake evaluates sigma_n_max AT the argmax-shear plane, so "
               "the plane-selection error enters g at first order in the "
               "grid step; the 0.02 band corresponds to a second-order "
               "property and is unattainable for general cycles")),
    "dangvan",
])
def test_grid_refinement_robustness(criterion):
    """Coarse 5 deg scan must stay near the 0.5 deg scan on random cycles."""
    p = cr.fatigue_params(criterion, F1, T1)
    rng = np.random.default_rng(11)
    mean, amp = _random_cycles(100, rng)
    g5 = cr.evaluate_cycle(mean, amp, p, cr.plane_grid(2, 5.0)).g
    g05 = cr.evaluate_cycle(mean, amp, p, cr.plane_grid(2, 0.5)).g
    assert np.all(np.abs(g5 - g05) <= 0.02 * (1 + np.abs(g05)))


@pytest.mark.parametrize("criterion", ["matake"])
def test_grid_refinement_first_order_envelope(criterion):
    """Matake's actual convergence: first order in the grid step.

    The 5 deg scan stays within a first-order envelope of the 0.5 deg scan
    and the error contracts roughly linearly with the step."""
    p = cr.fatigue_params(criterion, F1, T1)
    rng = np.random.default_rng(11)
    mean, amp = _random_cycles(100, rng)
    g5 = cr.evaluate_cycle(mean, amp, p, cr.plane_grid(2, 5.0)).g
    g1 = cr.evaluate_cycle(mean, amp, p, cr.plane_grid(2, 1.0)).g
    g05 = cr.evaluate_cycle(mean, amp, p, cr.plane_grid(2, 0.5)).g
    assert np.all(np.abs(g5 - g05) <= 0.12 * (1 + np.abs(g05)))
    assert np.mean(np.abs(g1 - g05)) <= 0.35 * np.mean(np.abs(g5 - g05))


def _rotate_voigt_2d(sigma, psi):
    c, s = np.cos(psi), np.sin(psi)
    sx, sy, txy = sigma
    return np.array([
        c * c * sx + s * s * sy + 2 * c * s * txy,
        s * s * sx + c * c * sy - 2 * c * s * txy,
        -c * s * sx + c * s * sy + (c * c - s * s) * txy,
    ])


@pytest.mark.parametrize("criterion", ["findley", "matake", "dangvan"])
def test_rotation_consistency_2d(criterion):
    p = cr.fatigue_params(criterion, F1, T1)
    rng = np.random.default_rng(13)
    grid = cr.plane_grid(2, 1.0)
    for _ in range(5):
        mean = 200 * rng.normal(size=3)
        amp = 200 * rng.normal(size=3)
        psi = rng.uniform(0, np.pi)
        g0 = cr.evaluate_cycle(mean, amp, p, grid).g[0]
        g1 = cr.evaluate_cycle(_rotate_voigt_2d(mean, psi),
                               _rotate_voigt_2d(amp, psi), p, grid).g[0]
        # rotation moves the attained plane within one grid increment
        assert abs(g1 - g0) <= 0.01 * (1 + abs(g0))


@pytest.mark.parametrize("criterion", ["findley", "matake", "dangvan"])
def test_positive_scaling_property(criterion):
    p = cr.fatigue_params(criterion, F1, T1)
    rng = np.random.default_rng(17)
    mean, amp = _random_cycles(20, rng)
    grid = cr.plane_grid(2, 1.0)
    g1 = cr.evaluate_cycle(mean, amp, p, grid).g
    k = 2.7
    gk = cr.evaluate_cycle(k * mean, k * amp, p, grid).g
    assert np.allclose(gk, k * (g1 + 1) - 1, rtol=1e-10, atol=1e-10)


def test_matake_tie_break_prefers_larger_normal_stress():
    """Equibiaxial cycle: every plane has zero shear amplitude, so the tie
    break must pick the plane maximizing the normal stress."""
    p = cr.fatigue_params("matake", F1, T1)
    amp = np.array([200.0, 200.0, 0.0])
    res = cr.critical_plane_g(np.zeros(3), amp, p, 1.0)
    assert res.tau_a == pytest.approx(0.0, abs=1e-9)
    assert res.sigma_n_max == pytest.approx(200.0)
    assert res.g == pytest.approx(p.alpha * 200.0 / p.beta - 1.0, rel=1e-9)


def test_pure_shear_criteria_agree():
    """Zero-mean shear cycles: the three criteria coincide (shear governed)."""
    params = [cr.fatigue_params(c, F1, T1) for c in ("findley", "matake",
                                                     "dangvan")]
    grid = cr.plane_grid(2, 0.1)
    amp = np.array([[0.0, 0.0, 250.0]])
    gs = [cr.evaluate_cycle(np.zeros((1, 3)), amp, p, grid).g[0]
          for p in params]
    for g in gs[1:]:
        assert abs(g - gs[0]) <= 0.05 * (1 + abs(gs[0]))
    assert gs[1] == pytest.approx(250.0 / T1 - 1.0, abs=1e-6)


def test_3d_grid_covers_hemisphere():
    grid = cr.plane_grid(3, 5.0, 5.0)
    assert grid.thetas.max() == pytest.approx(np.pi / 2)
    assert grid.phis.max() < 2 * np.pi
    assert grid.n_planes == 19 * 72


def test_3d_torsion_calibration():
    p = cr.fatigue_params("findley", F1, T1)
    mean = np.zeros(6)
    amp = np.array([0.0, 0, 0, T1, 0, 0])
    res = cr.critical_plane_g(mean, amp, p, 1.0, 2.0)
    assert abs(res.g) < 2e-3


def test_von_mises_cycle_worst_instant():
    mean = np.array([[300.0, 0.0, 0.0]])
    amp = np.array([[-200.0, 0.0, 0.0]])
    ev = cr.von_mises_cycle(mean, amp, YIELD)
    assert ev.g[0] == pytest.approx(500.0 / YIELD - 1.0)
