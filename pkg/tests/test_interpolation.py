import numpy as np
import pytest

from entrolab.analysis import gauge_invariance_defect, time_reversal_defect
from entrolab.heat import spectral_decompose
from entrolab.interpolation import (RHO_FLOOR, acceleration, central_difference, fitted_order, interpolate,
                                    mass_profile, pairwise_orders, verify_continuity_equation,
                                    verify_hjb, verify_semigroup_derivative)
from entrolab.schrodinger import SchrodingerSolution, solve_schrodinger_system
from entrolab.space import (UnsupportedSpaceError, build_interval_grid, build_weighted_graph, gamma,
                            laplacian)

from conftest import smooth_pair, two_point


def _curve(n, J, eps=0.05, L=1.0, boundary="neumann", pair=None):
    sp = build_interval_grid(n, L, boundary)
    H = spectral_decompose(sp)
    r0, r1 = pair(sp) if pair else smooth_pair(sp)
    sol = solve_schrodinger_system(sp, H, r0, r1, eps)
    return interpolate(sol, H, J), sol, H


def test_uniform_curve_is_static():
    sp = build_interval_grid(40, 2.0)
    H = spectral_decompose(sp)
    u = np.full(40, 0.5)
    curve = interpolate(solve_schrodinger_system(sp, H, u, u, 0.2), H, 32)
    assert np.allclose(curve.rho, 0.5, rtol=1e-12)
    assert np.allclose(curve.theta, 0.0, atol=1e-13)
    assert np.allclose(curve.accel, 0.0, atol=1e-12)
    assert verify_semigroup_derivative(curve)["max_residual"] <= 1e-12
    cont = verify_continuity_equation(curve, [np.sin(sp.coords[:, 0])])
    assert cont["max_residual"] <= 1e-10
    hjb = verify_hjb(curve)
    assert max(hjb["gamma_phi_max"], hjb["gamma_psi_max"]) <= 1e-10
    assert max(hjb["exact_phi"], hjb["exact_psi"]) <= 1e-10


@pytest.fixture(scope="module")
def generic():
    return _curve(150, 64, eps=0.03)


def test_basic_invariants(generic):
    curve, sol, H = generic
    assert np.allclose(mass_profile(curve), 1.0, atol=1e-10)
    assert np.allclose(curve.rho[0], sol.rho0, atol=1e-12 * sol.rho0.max())
    assert np.allclose(curve.rho[-1], sol.rho1, atol=1e-12 * sol.rho1.max())
    assert np.max(np.abs(curve.phi + curve.psi - curve.eps * np.log(curve.rho))) <= 1e-10
    assert np.all(curve.rho[1:-1] > 0)
    assert np.all(curve.accel_valid)


def test_accel_reconstructed_from_rho_alone(generic):
    curve, _, _ = generic
    sp = curve.space
    logr = np.log(curve.rho)
    direct = -(curve.eps ** 2 / 8) * (2 * laplacian(sp, logr) + gamma(sp, logr, logr))
    assert np.allclose(curve.accel, direct, rtol=1e-9, atol=1e-12)


def test_accel_masked_on_zero_regions():
    def pair(sp):
        x = sp.coords[:, 0]
        r0 = np.where((x > 0.2) & (x < 0.4), 1.0, 0.0)
        r1 = np.exp(-(x - 0.7) ** 2 / 0.01)
        return r0 / (r0 @ sp.measure), r1 / (r1 @ sp.measure)

    curve, _, _ = _curve(80, 16, eps=0.05, pair=pair)
    x = curve.space.coords[:, 0]
    outside = (x < 0.15) | (x > 0.45)
    assert np.all(np.isnan(curve.accel[0, outside])) and not np.any(curve.accel_valid[0, outside])
    inner = curve.rho[1:-1]
    assert np.all(inner > 0)
    assert np.array_equal(curve.accel_valid[1:-1], inner > RHO_FLOOR)
    _, valid = acceleration(curve.space, curve.log_rho[0], curve.eps)
    assert np.array_equal(valid, curve.accel_valid[0])


def test_two_point_midpoint_by_hand():
    sp = two_point()
    H = spectral_decompose(sp)
    eps, p, q = 0.8, 0.2, 0.7
    sol = solve_schrodinger_system(sp, H, [p, 1 - p], [q, 1 - q], eps)
    curve = interpolate(sol, H, 16)
    e = np.exp(-2 * eps / 4)
    r = 0.5 * np.array([[1 + e, 1 - e], [1 - e, 1 + e]])
    expected = (r @ sol.f) * (r @ sol.g)
    assert np.allclose(curve.rho[8], expected, rtol=1e-12)
    assert np.allclose(mass_profile(curve), 1.0, atol=1e-12)


def cosine_pair(sp, a=0.5):
    # smooth and compatible with the Neumann condition, so rho_t is smooth up to t = 0
    x = sp.coords[:, 0]
    r0 = 1 + a * np.cos(np.pi * x)
    r1 = 1 - a * np.cos(np.pi * x) + 0.2 * np.cos(2 * np.pi * x)
    return r0 / (r0 @ sp.measure), r1 / (r1 @ sp.measure)


JS = [32, 64, 128, 256]


@pytest.fixture(scope="module")
def dyadic():
    sp = build_interval_grid(100, 1.0)
    H = spectral_decompose(sp)
    sol = solve_schrodinger_system(sp, H, *cosine_pair(sp), 0.1)
    return sol, H, [interpolate(sol, H, J) for J in JS]


def test_semigroup_derivative_order_in_dt(dyadic):
    sol, H, curves = dyadic
    reps = [verify_semigroup_derivative(c, coarse_J=32) for c in curves]
    errs = [r["max_residual_common"] for r in reps]
    assert fitted_order(JS, errs) >= 1.9, errs
    # the all-times maximum converges too, more slowly (endpoint layer)
    full = [r["max_residual"] for r in reps]
    assert all(a > b for a, b in zip(full, full[1:])) and full[-1] < 1e-3
    assert all(r["self_adjoint_defect"] <= 1e-10 for r in reps)
    assert all(r["self_adjoint_defect"] <= 1e-10 for r in reps)
    with pytest.raises(ValueError):
        verify_semigroup_derivative(interpolate(sol, H, 16))


@pytest.fixture(scope="module")
def refinement():
    levels = [(200, 32), (400, 64), (800, 128)]
    curves = [_curve(n, J, eps=0.05)[0] for n, J in levels]
    return levels, curves


def test_continuity_equation_refinement(refinement):
    levels, curves = refinement
    h = lambda sp: np.cos(3 * sp.coords[:, 0])  # noqa: E731
    errs = [verify_continuity_equation(c, [h(c.space)])["max_residual"] for c in curves]
    assert errs[0] > errs[1] > errs[2]
    assert fitted_order([n for n, _ in levels], errs) >= 1.0, errs
    # constant test field: mass conservation
    c = curves[0]
    assert verify_continuity_equation(c, [np.ones(c.space.n)])["max_residual"] <= 1e-10


def test_hjb_refinement(refinement):
    levels, curves = refinement
    reps = [verify_hjb(c) for c in curves]
    for name in ("phi", "psi"):
        g = [r[f"gamma_{name}_weighted"] for r in reps]
        assert g[0] > g[1] > g[2] and fitted_order([n for n, _ in levels], g) >= 1.0, g



def test_hjb_exact_form_order_in_dt(dyadic):
    _, _, curves = dyadic
    reps = [verify_hjb(c, coarse_J=32) for c in curves]
    for name in ("phi", "psi"):
        ex = [r[f"exact_{name}_common"] for r in reps]
        assert fitted_order(JS, ex) >= 1.9, ex


def test_graph_rejects_gamma_form_checks():
    sp = build_weighted_graph(range(3), [(0, 1, 1.0), (1, 2, 1.0)], [1, 1, 1])
    H = spectral_decompose(sp)
    u = np.full(3, 1 / 3)
    curve = interpolate(solve_schrodinger_system(sp, H, u, u, 0.5), H, 16)
    with pytest.raises(UnsupportedSpaceError):
        verify_hjb(curve)
    with pytest.raises(UnsupportedSpaceError):
        verify_continuity_equation(curve, [np.ones(3)])


def test_time_reversal(generic):
    curve, sol, H = generic
    sp = curve.space
    back = interpolate(solve_schrodinger_system(sp, H, sol.rho1, sol.rho0, sol.eps), H, curve.J)
    assert np.max(np.abs(back.rho[::-1] - curve.rho)) <= 1e-10 * curve.rho.max()
    assert np.max(np.abs(back.phi[::-1] - curve.psi)) <= 1e-10
    assert np.max(np.abs(back.psi[::-1] - curve.phi)) <= 1e-10
    assert time_reversal_defect(sp, H, sol.rho0, sol.rho1, sol.eps, curve.J, forward=curve) <= 1e-10


def test_gauge_shift_leaves_drift_invariant(generic):
    curve, sol, H = generic
    c = 7.3
    shifted = SchrodingerSolution(sol.space, sol.rho0, sol.rho1, sol.eps, sol.log_f + np.log(c),
                                  sol.log_g - np.log(c), sol.iterations, sol.marginal_residual,
                                  sol.gauge, sol.tol)
    other = interpolate(shifted, H, curve.J)
    d = other.theta - curve.theta
    assert np.allclose(d, -sol.eps * np.log(c), atol=1e-12)
    sp = curve.space
    assert np.max(np.abs(gamma(sp, other.theta, other.theta) - gamma(sp, curve.theta, curve.theta))) \
        <= 1e-12 * np.max(gamma(sp, curve.theta, curve.theta)) * 1e2
    assert gauge_invariance_defect(sol, H, curve.J) <= 1e-12


def test_unconverged_and_short_grids(generic):
    _, sol, H = generic
    with pytest.raises(ValueError):
        interpolate(sol, H, 8)


def test_central_difference_and_orders():
    t = np.linspace(0, 1, 11)
    assert np.allclose(central_difference(t ** 2, 0.1), 2 * t[1:-1])
    assert np.allclose(central_difference(t ** 2, 0.1, order=2), 2.0)
    with pytest.raises(ValueError):
        central_difference(t, 0.1, order=3)
    assert fitted_order([1, 2, 4], [1, 0.25, 0.0625]) == pytest.approx(2.0)
    assert pairwise_orders([1, 2, 4], [1, 0.5, 0.125]) == pytest.approx([1.0, 2.0])


def test_curve_csv(tmp_path):
    curve, _, _ = _curve(20, 16, eps=0.2)
    curve.write_csv(tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "t,x,rho,phi,psi,theta,accel"
    assert len(lines) == 1 + 17 * 20
