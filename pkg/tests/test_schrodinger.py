import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from entrolab.heat import heat_kernel, spectral_decompose
from entrolab.ot_reference import transport_vertices
from entrolab.schrodinger import (ConvergenceError, MarginalError, entropic_plan, log_plan,
                                  plan_relative_entropy, reference_log_density,
                                  solve_schrodinger_system)
from entrolab.space import build_interval_grid, build_weighted_graph

from conftest import smooth_pair, two_point


def _marginals(gamma):
    return gamma.sum(axis=1), gamma.sum(axis=0)


def test_uniform_solution_is_constant():
    sp = build_interval_grid(50, 3.0)
    H = spectral_decompose(sp)
    u = np.full(50, 1 / 3.0)
    sol = solve_schrodinger_system(sp, H, u, u, 0.3)
    assert np.allclose(sol.f, 1 / np.sqrt(3.0), rtol=1e-12)
    assert np.allclose(sol.g, 1 / np.sqrt(3.0), rtol=1e-12)
    gamma = entropic_plan(sol, H)
    expected = heat_kernel(H, 0.15) * np.outer(sp.measure, sp.measure) / 3.0
    assert np.allclose(gamma, expected, atol=1e-14)


def _two_point_oracle(p, q, eps):
    # couplings with marginals (p, 1-p), (q, 1-q) form a segment parametrized by a = gamma_00;
    # the entropy is strictly convex in a, so its derivative has a unique root
    R = np.exp(reference_log_density(two_point(), spectral_decompose(two_point()), eps))

    def plan(a):
        return np.array([[a, p - a], [q - a, 1 - p - q + a]])

    def dH(a):
        G = plan(a)
        return np.log(G[0, 0] / R[0, 0]) - np.log(G[0, 1] / R[0, 1]) \
            - np.log(G[1, 0] / R[1, 0]) + np.log(G[1, 1] / R[1, 1])

    lo, hi = max(0.0, p + q - 1), min(p, q)
    a = brentq(dH, lo + 1e-300 + 1e-15 * (hi - lo), hi - 1e-15 * (hi - lo), xtol=1e-16, rtol=1e-15)
    return plan(a)


@pytest.mark.parametrize("p,q", [(0.3, 0.8), (0.5, 0.5), (0.05, 0.6), (0.9, 0.1)])
def test_two_point_against_root_finding_oracle(p, q):
    sp = two_point()
    H = spectral_decompose(sp)
    sol = solve_schrodinger_system(sp, H, [p, 1 - p], [q, 1 - q], 1.0)
    gamma = entropic_plan(sol, H)
    oracle = _two_point_oracle(p, q, 1.0)
    assert np.allclose(gamma, oracle, atol=1e-9)
    # potentials recovered from the oracle plan: gamma_ij = f_i r_ij g_j, gauge f0 + f1 = g0 + g1
    r = heat_kernel(H, 0.5)
    ratio = oracle[0, 0] * r[1, 0] / (oracle[1, 0] * r[0, 0])  # f0 / f1
    f = sol.f
    assert f[0] / f[1] == pytest.approx(ratio, rel=1e-9)
    assert sol.f.sum() == pytest.approx(sol.g.sum(), rel=1e-12)


def test_large_eps_gives_product_plan():
    sp = build_interval_grid(30, 1.0)
    H = spectral_decompose(sp)
    r0, r1 = smooth_pair(sp)
    sol = solve_schrodinger_system(sp, H, r0, r1, 50.0)
    gamma = entropic_plan(sol, H)
    product = np.outer(r0 * sp.measure, r1 * sp.measure)
    assert np.abs(gamma - product).sum() < 1e-6


@pytest.mark.parametrize("eps", [1.0, 0.05, 0.002])
def test_plan_marginals_mass_and_residual(eps):
    sp = build_interval_grid(120, 1.0)
    H = spectral_decompose(sp)
    r0, r1 = smooth_pair(sp)
    sol = solve_schrodinger_system(sp, H, r0, r1, eps)
    gamma = entropic_plan(sol, H)
    a, b = _marginals(gamma)
    assert sol.converged and sol.marginal_residual <= 1e-14
    assert np.max(np.abs(a - r0 * sp.measure)) <= 2e-14
    assert np.max(np.abs(b - r1 * sp.measure)) <= 2e-14
    assert gamma.sum() == pytest.approx(1.0, abs=1e-9) and np.all(gamma >= 0)
    assert np.all(sol.f >= 0) and np.all(sol.g >= 0)


def test_zero_regions_give_exact_zeros():
    sp = build_interval_grid(80, 1.0)
    H = spectral_decompose(sp)
    x = sp.coords[:, 0]
    r0 = ((x > 0.1) & (x < 0.3)).astype(float)
    r1 = ((x > 0.6) & (x < 0.95)).astype(float)
    r0, r1 = r0 / (r0 @ sp.measure), r1 / (r1 @ sp.measure)
    sol = solve_schrodinger_system(sp, H, r0, r1, 0.01)
    assert np.all(sol.f[r0 == 0] == 0) and np.all(sol.f[r0 > 0] > 0)
    assert np.all(sol.g[r1 == 0] == 0)


@pytest.mark.parametrize("rho,match", [([0.5, 0.6], "mass"), ([1.2, -0.2], "negative"),
                                       ([np.nan, 1.0], "non-finite"), ([1.0], "expected")])
def test_marginal_errors(rho, match):
    H = spectral_decompose(two_point())
    with pytest.raises(MarginalError, match=match):
        solve_schrodinger_system(H.space, H, rho, [0.5, 0.5], 1.0)


def test_convergence_error_carries_history():
    sp = build_interval_grid(100, 1.0)
    H = spectral_decompose(sp)
    r0, r1 = smooth_pair(sp)
    with pytest.raises(ConvergenceError) as info:
        solve_schrodinger_system(sp, H, r0, r1, 0.01, max_iter=3)
    assert len(info.value.history) == 3 and info.value.history[-1] > 1e-14


def test_bad_arguments():
    H = spectral_decompose(two_point())
    u = [0.5, 0.5]
    for kw in (dict(eps=0.0), dict(eps=1.0, tol=0.0), dict(eps=1.0, init_g=-1.0)):
        with pytest.raises(ValueError):
            solve_schrodinger_system(H.space, H, u, u, **kw)
    with pytest.raises(ValueError):
        solve_schrodinger_system(two_point(), H, u, u, 1.0)


@pytest.fixture(scope="module")
def generic():
    sp = build_interval_grid(150, 1.0)
    H = spectral_decompose(sp)
    r0, r1 = smooth_pair(sp)
    return sp, H, r0, r1


def test_residual_monotone_and_trace(generic, tmp_path):
    sp, H, r0, r1 = generic
    sol = solve_schrodinger_system(sp, H, r0, r1, 0.01)
    hist = np.array(sol.history)
    assert np.all(np.diff(hist) <= 1e-15)
    sol.write_trace_csv(tmp_path / "trace.csv")
    lines = (tmp_path / "trace.csv").read_text().splitlines()
    assert lines[0] == "iteration,residual" and len(lines) == len(hist) + 1


def test_kl_to_optimum_decreases_along_iterates(generic):
    sp, H, r0, r1 = generic
    sol = solve_schrodinger_system(sp, H, r0, r1, 0.02, record_iterates=True)
    lp_star = log_plan(sol, H)
    star = np.exp(lp_star)
    lm = np.log(sp.measure)
    K = H.log_kernel(0.01)
    kls = []
    for lf, lg in sol.iterates:
        lp = (lf + lm)[:, None] + K + (lg + lm)[None, :]
        pos = star > 0
        kls.append(np.sum(star[pos] * (lp_star[pos] - lp[pos])) - 1.0 + np.exp(lp).sum())
    kls = np.array(kls)
    assert np.all(np.diff(kls) <= 1e-13) and kls[-1] < 1e-12


@pytest.mark.parametrize("eps", [0.5, 0.02, 0.005])
def test_symmetry_under_swapping(generic, eps):
    sp, H, r0, r1 = generic
    a = solve_schrodinger_system(sp, H, r0, r1, eps)
    b = solve_schrodinger_system(sp, H, r1, r0, eps)
    assert np.max(np.abs(a.f - b.g)) <= 1e-12 * a.f.max()
    assert np.max(np.abs(a.g - b.f)) <= 1e-12 * a.g.max()
    assert a.iterations == b.iterations


@pytest.mark.parametrize("c", [1e-3, 7.3, 250.0])
def test_gauge_invariance_to_initial_guess(generic, c):
    sp, H, r0, r1 = generic
    a = solve_schrodinger_system(sp, H, r0, r1, 0.02)
    b = solve_schrodinger_system(sp, H, r0, r1, 0.02, init_g=c)
    assert np.allclose(a.f, b.f, rtol=1e-10) and np.allclose(a.g, b.g, rtol=1e-10)


def test_relative_entropy_of_reference():
    sp = build_interval_grid(20, 1.0)
    H = spectral_decompose(sp)
    R = np.exp(reference_log_density(sp, H, 0.1))
    assert R.sum() == pytest.approx(1.0, rel=1e-12)
    assert plan_relative_entropy(R / R.sum(), H, 0.1) == pytest.approx(-np.log(R.sum()), abs=1e-12)
    with pytest.raises(ValueError):
        G = np.zeros((2, 2)); G[0, 1] = 1.0  # noqa: E702
        plan_relative_entropy(G, spectral_decompose(build_weighted_graph([0, 1], [(0, 1, 1.0)], [1, 1])), 0.0)


def _small_space(n, seed):
    rng = np.random.default_rng(seed)
    edges = [(i, i + 1, float(rng.uniform(0.5, 2))) for i in range(n - 1)] + [(0, n - 1, 0.7)]
    sp = build_weighted_graph(range(n), edges, list(rng.uniform(0.5, 2, n)))
    r0 = rng.uniform(0.1, 1, n); r1 = rng.uniform(0.1, 1, n)  # noqa: E702
    return sp, r0 / (r0 @ sp.measure), r1 / (r1 @ sp.measure)


@pytest.mark.parametrize("n,seed", [(3, 0), (4, 1), (4, 2)])
def test_optimal_below_every_polytope_vertex(n, seed):
    sp, r0, r1 = _small_space(n, seed)
    H = spectral_decompose(sp)
    eps = 0.5
    sol = solve_schrodinger_system(sp, H, r0, r1, eps)
    best = plan_relative_entropy(entropic_plan(sol, H), H, eps)
    verts = transport_vertices(r0 * sp.measure, r1 * sp.measure)
    assert len(verts) >= 2
    for V in verts:
        assert best < plan_relative_entropy(V, H, eps)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_optimal_below_random_couplings(seed):
    sp, r0, r1 = _small_space(5, seed % 1000)
    H = spectral_decompose(sp)
    eps = 0.3
    sol = solve_schrodinger_system(sp, H, r0, r1, eps)
    best = plan_relative_entropy(entropic_plan(sol, H), H, eps)
    rng = np.random.default_rng(seed)
    mu, nu = r0 * sp.measure, r1 * sp.measure
    for _ in range(50):
        # random feasible coupling: Sinkhorn scaling of a random positive matrix
        G = rng.uniform(0.01, 1, (5, 5))
        for _ in range(500):
            G *= (mu / G.sum(axis=1))[:, None]
            G *= (nu / G.sum(axis=0))[None, :]
        assert best < plan_relative_entropy(G, H, eps)
