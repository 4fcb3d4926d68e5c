"""Entropy derivatives, window bounds and small-eps convergence diagnostics.

Most functions take an :class:`InterpolationCurve` and return plain dicts of
floats/arrays so they can be dumped to CSV/JSON directly.  Time windows
``[delta, 1 - delta]`` are integrated exactly against the piecewise-linear
interpolant of the sampled integrand, so ``delta`` need not be a multiple
of ``1/J``.
"""
from __future__ import annotations

import csv
import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid

from .heat import HeatOperator, log_apply, log_heat_kernel
from .interpolation import (InterpolationCurve, central_difference, fitted_order,
                            interpolate, pairwise_orders)
from .ot_reference import ReferenceGeodesic
from .schrodinger import SchrodingerSolution, solve_schrodinger_system
from .space import (MeasureSpace, UnsupportedSpaceError, gamma, gamma2, generator_ratio,
                    hessian_form, hessian_hs_norm_sq, integrate, laplacian)

DEFAULT_DELTA = 0.1

LITERATURE_NOTE = ("Li-Yau and Hamilton bounds are the standard K=0 forms "
                   "|grad log u|^2 - d/dt log u <= N/(2t) and "
                   "t |grad log u|^2 <= log(sup f / u), taken from the literature")


class PreconditionError(ValueError):
    pass


def _check_delta(delta: float):
    if not 0 < delta < 0.5:
        raise PreconditionError(f"delta must lie in (0, 1/2), got {delta}")


def window_integral(tgrid, values, delta: float) -> float:
    """``int_delta^{1-delta}`` of the piecewise-linear interpolant of ``values``."""
    _check_delta(delta)
    t = np.asarray(tgrid, dtype=float)
    v = np.asarray(values, dtype=float)
    a, b = delta, 1.0 - delta
    inside = (t > a) & (t < b)
    ts = np.concatenate([[a], t[inside], [b]])
    vs = np.concatenate([[np.interp(a, t, v)], v[inside], [np.interp(b, t, v)]])
    if not np.all(np.isfinite(vs)):
        raise ValueError("integrand is not finite inside the window")
    return float(trapezoid(vs, ts))


def _weighted(space: MeasureSpace, field_, rho) -> np.ndarray:
    """``int field * rho dm`` per time, with non-finite entries where ``rho = 0`` dropped."""
    with np.errstate(invalid="ignore"):
        prod = np.where(rho > 0, field_ * rho, 0.0)
    return integrate(space, prod)


def _finite_or_nan(x, ok):
    return np.where(ok, x, np.nan)


# ---------------------------------------------------------------------------
# entropy along the curve


def entropy_profile(curve: InterpolationCurve) -> np.ndarray:
    """``H(t) = int rho_t log rho_t dm`` on every grid time (``0 log 0 = 0``)."""
    rho = curve.rho
    return _weighted(curve.space, curve.log_rho, rho)


def relative_entropy(space: MeasureSpace, rho) -> float:
    rho = np.asarray(rho, dtype=float)
    with np.errstate(divide="ignore"):
        lr = np.log(rho)
    return float(_weighted(space, lr, rho))


def normalized_entropy(space: MeasureSpace, rho) -> float:
    """Entropy relative to the probability ``m / m(X)``; nonnegative."""
    return relative_entropy(space, rho) + float(np.log(space.total_mass))


def _interior_fields(curve: InterpolationCurve):
    idx = curve.interior()
    return idx, curve.rho[idx], curve.phi[idx], curve.psi[idx], curve.theta[idx]


def entropy_first_derivative(curve: InterpolationCurve) -> dict:
    """Both closed forms of ``dH/dt`` against central differences of ``H``.

    ``gamma_form`` is ``int Gamma(rho, theta) dm`` and ``potential_form`` is
    ``(1/2 eps) int (Gamma(psi, psi) - Gamma(phi, phi)) rho dm``; the two
    differ by a discrete chain rule.  Deviations are relative to
    ``max |gamma_form|`` (absolute if that vanishes).
    """
    sp = curve.space
    idx, rho, phi, psi, theta = _interior_fields(curve)
    g_form = integrate(sp, gamma(sp, rho, theta))
    p_form = _weighted(sp, gamma(sp, psi, psi) - gamma(sp, phi, phi), rho) / (2 * curve.eps)
    fd = central_difference(entropy_profile(curve), curve.dt)
    scale = float(np.max(np.abs(g_form)))
    norm = scale if scale > 1e-300 else 1.0
    return {"t": curve.tgrid[idx], "gamma_form": g_form, "potential_form": p_form, "fd": fd,
            "scale": scale,
            "forms_deviation": float(np.max(np.abs(g_form - p_form))) / norm,
            "fd_deviation": float(np.max(np.abs(fd - g_form))) / norm,
            "fd_deviation_abs": float(np.max(np.abs(fd - g_form)))}


def entropy_second_derivative(curve: InterpolationCurve) -> dict:
    """``E1 = int (G2(theta) + eps^2/4 G2(log rho)) rho`` and ``E2 = int (G2(phi) + G2(psi)) rho / 2``.

    The two agree exactly up to rounding (``Gamma_2`` is a quadratic form and
    ``theta``, ``eps log rho / 2`` are half-difference and half-sum of
    ``psi`` and ``phi``); both are compared with second differences of ``H``.
    Values are returned on all grid times (NaN where a field is not finite).
    """
    sp = curve.space
    eps = curve.eps
    rho, lr = curve.rho, curve.log_rho
    ok = np.all(np.isfinite(lr), axis=-1)
    safe = lambda f: np.where(np.isfinite(f), f, 0.0)  # noqa: E731
    E1 = _weighted(sp, gamma2(sp, safe(curve.theta)) + 0.25 * eps * eps * gamma2(sp, safe(lr)), rho)
    E2 = 0.5 * _weighted(sp, gamma2(sp, safe(curve.phi)) + gamma2(sp, safe(curve.psi)), rho)
    E1, E2 = _finite_or_nan(E1, ok), _finite_or_nan(E2, ok)
    idx = curve.interior()
    fd2 = central_difference(entropy_profile(curve), curve.dt, order=2)
    scale = float(np.nanmax(np.abs(E1[idx])))
    norm = scale if scale > 1e-300 else 1.0
    defect = np.abs(E1 - E2)[idx]
    return {"t": curve.tgrid, "E1": E1, "E2": E2, "fd": fd2, "scale": scale,
            "parallelogram_defect": float(np.nanmax(defect)),
            "parallelogram_relative": float(np.nanmax(defect)) / norm,
            "fd_deviation": float(np.nanmax(np.abs(fd2 - E1[idx]))) / norm}


def convexity_and_window_bound(curve: InterpolationCurve, delta: float = DEFAULT_DELTA,
                               tol_convex: float = 1e-6, tol_bound: float = 1e-9,
                               floor: float = 1e-12, E1=None) -> dict:
    """Convexity of ``H`` and ``int_delta^{1-delta} E1 <= H(rho1)/(1-delta) + H(rho0)/delta``.

    Convexity is checked as ``min second difference >= -max(tol_convex max|H|, floor)``;
    the absolute floor absorbs rounding when ``H`` vanishes identically.
    The bound is stated for ``m(X) = 1``; otherwise entropies are taken
    relative to the normalized measure ``m / m(X)`` (``E1`` is unchanged by
    that rescaling) and ``normalized`` is set in the report.
    """
    sp = curve.space
    _check_delta(delta)
    K, _ = sp.curvature
    if K != 0:
        raise PreconditionError(f"window bound needs curvature K = 0, space has K = {K}")
    H = entropy_profile(curve)
    d2 = np.diff(H, 2)
    threshold = -max(tol_convex * float(np.max(np.abs(H))), floor)
    E1 = entropy_second_derivative(curve)["E1"] if E1 is None else E1
    lhs = window_integral(curve.tgrid, E1, delta)
    shift = float(np.log(sp.total_mass))
    h0, h1 = H[0] + shift, H[-1] + shift
    bound = h1 / (1 - delta) + h0 / delta
    return {"delta": delta, "normalized": abs(sp.total_mass - 1.0) > 1e-12,
            "min_second_difference": float(np.min(d2)),
            "convex_threshold": threshold,
            "convex": bool(np.min(d2) >= threshold),
            "window_integral": lhs, "bound": float(bound),
            "margin": float(bound - lhs), "bound_holds": bool(lhs <= bound + tol_bound)}


def second_order_integrals(curve: InterpolationCurve, delta: float = DEFAULT_DELTA) -> dict:
    """``I_hess`` (Hilbert-Schmidt Hessians) and ``I_lap`` (Laplacians) over the window."""
    sp = curve.space
    if not sp.is_grid:
        raise UnsupportedSpaceError("second-order integrals need a grid space")
    eps2 = curve.eps ** 2
    lr, rho, theta = curve.log_rho, curve.rho, curve.theta
    ok = np.all(np.isfinite(lr), axis=-1)
    safe = lambda f: np.where(np.isfinite(f), f, 0.0)  # noqa: E731
    hess = _weighted(sp, hessian_hs_norm_sq(sp, safe(theta)) + eps2 * hessian_hs_norm_sq(sp, safe(lr)),
                     rho)
    lap = _weighted(sp, laplacian(sp, safe(theta)) ** 2 + eps2 * laplacian(sp, safe(lr)) ** 2, rho)
    I_hess = window_integral(curve.tgrid, _finite_or_nan(hess, ok), delta)
    I_lap = window_integral(curve.tgrid, _finite_or_nan(lap, ok), delta)
    return {"I_hess": I_hess, "I_lap": I_lap, "lap_minus_hess": I_lap - I_hess}


def _masked_flux_density(curve: InterpolationCurve, h) -> np.ndarray:
    """``Gamma(h, a_t) rho_t`` per node, zero where ``a`` is masked nearby."""
    sp = curve.space
    h = sp.check_field(h)
    valid = curve.accel_valid
    a = np.where(valid, curve.accel, 0.0)
    _, cols, _ = sp.edges()
    bad_nb = sp.scatter_rows((~valid[..., cols]).astype(float)) > 0
    use = valid & ~bad_nb
    return np.where(use, gamma(sp, h, a) * curve.rho, 0.0)


def acceleration_flux(curve: InterpolationCurve, h, delta: float = DEFAULT_DELTA) -> float:
    """``A = int_delta^{1-delta} int Gamma(h, a_t) rho_t dm dt`` over unmasked nodes."""
    per_t = integrate(curve.space, _masked_flux_density(curve, h))
    return window_integral(curve.tgrid, per_t, delta)


def fixed_eps_second_derivative_check(curve: InterpolationCurve, h) -> dict:
    """``d^2/dt^2 int h rho_t`` against ``int Hess h(grad theta, grad theta) rho + int Gamma(h, a) rho``."""
    sp = curve.space
    if not sp.is_grid:
        raise UnsupportedSpaceError("fixed-eps second-derivative check needs a grid space")
    h = sp.check_field(h)
    idx = curve.interior()
    moment = integrate(sp, h * curve.rho)
    lhs = central_difference(moment, curve.dt, order=2)
    rho = curve.rho[idx]
    hess = integrate(sp, hessian_form(sp, h, curve.theta[idx]) * rho)
    flux = integrate(sp, _masked_flux_density(curve, h)[idx])
    rhs = hess + flux
    scale = float(np.max(np.abs(rhs)))
    norm = scale if scale > 1e-300 else 1.0
    return {"t": curve.tgrid[idx], "lhs": lhs, "hessian_term": hess, "flux_term": flux,
            "rhs": rhs, "scale": scale,
            "max_abs_deviation": float(np.max(np.abs(lhs - rhs))),
            "relative_deviation": float(np.max(np.abs(lhs - rhs))) / norm}


def geodesic_formula_check(ref: ReferenceGeodesic, h, delta: float = DEFAULT_DELTA) -> dict:
    """``d^2/dt^2 int h dmu_t`` against ``int Hess h(grad phi_t, grad phi_t) dmu_t`` on the oracle.

    The left side differentiates the exact pushforward moments; the right
    side uses the re-binned ``mu_t`` and the oracle velocity potential.
    """
    sp = ref.space
    h = sp.check_field(h)
    _check_delta(delta)
    t = ref.tgrid
    dt = float(t[1] - t[0])
    if not np.allclose(np.diff(t), dt):
        raise ValueError("geodesic formula check needs a uniform time grid")
    moment = np.array([ref.moment(h, s) for s in t])
    lhs = central_difference(moment, dt, order=2)
    inner_t = t[1:-1]
    rhs = integrate(sp, hessian_form(sp, h, ref.phi[1:-1]) * ref.mu[1:-1])
    win = (inner_t >= delta - 1e-12) & (inner_t <= 1 - delta + 1e-12)
    scale = float(np.max(np.abs(rhs[win])))
    norm = scale if scale > 1e-300 else 1.0
    dev = np.abs(lhs - rhs)[win]
    return {"t": inner_t[win], "lhs": lhs[win], "rhs": rhs[win], "scale": scale,
            "max_abs_deviation": float(np.max(dev)),
            "relative_deviation": float(np.max(dev)) / norm}


# ---------------------------------------------------------------------------
# eps sweeps


def lipschitz_constant(curve: InterpolationCurve, delta: float = DEFAULT_DELTA) -> float:
    """``max |phi_t(x) - phi_t(y)| / d(x, y)`` over adjacent nodes and ``t in [delta, 1]``."""
    sp = curve.space
    i, j = sp.adjacent_pairs()
    sel = curve.tgrid >= delta - 1e-12
    phi = curve.phi[sel]
    return float(np.max(np.abs(phi[:, i] - phi[:, j]) / sp.distance[i, j]))


def potential_deviation(curve: InterpolationCurve, ref: ReferenceGeodesic, t: float = 0.5) -> float:
    """Distance of ``-t phi^eps_t`` to ``t theta_t`` (oracle velocity potential) modulo constants.

    Kantorovich potentials are only determined on the support, so the
    comparison is in ``L^2(mu_t)``, after removing the ``mu_t``-mean.
    """
    j = int(np.argmin(np.abs(curve.tgrid - t)))
    if abs(ref.tgrid[j] - curve.tgrid[j]) > 1e-12:
        raise ValueError("curve and reference geodesic use different time grids")
    s = curve.tgrid[j]
    w = ref.mu[j] * curve.space.measure
    d = -s * curve.phi[j] - s * ref.phi[j]
    d = d - (d @ w) / w.sum()
    return float(np.sqrt((d * d) @ w / w.sum()))


def sup_w2_deviation(curve: InterpolationCurve, ref: ReferenceGeodesic) -> float:
    return max(ref.distance_to(curve.rho[j], t) for j, t in enumerate(curve.tgrid))


def curve_summary(curve: InterpolationCurve, ref: ReferenceGeodesic | None = None,
                  testfields: dict | None = None, delta: float = DEFAULT_DELTA,
                  t_potential: float = 0.5) -> dict:
    """All per-eps quantities of a sweep for one curve."""
    sp = curve.space
    out = {"eps": curve.eps, "n": sp.n, "J": curve.J,
           "sup_density": float(np.max(curve.rho)),
           "lipschitz": lipschitz_constant(curve, delta),
           "entropy": entropy_profile(curve)}
    if sp.is_grid:
        out.update(second_order_integrals(curve, delta))
    out["accel_flux"] = {name: acceleration_flux(curve, h, delta)
                         for name, h in (testfields or {}).items()}
    if ref is not None:
        out["w2_deviation"] = sup_w2_deviation(curve, ref)
        out["potential_deviation"] = potential_deviation(curve, ref, t_potential)
    return out


NEGLIGIBLE = 1e-10


def spread_ratio(values, floor: float = NEGLIGIBLE) -> float:
    """``max / min`` of ``|values|``; 1 when every entry is below ``floor``."""
    v = np.abs(np.asarray(values, dtype=float))
    if v.size == 0 or np.max(v) <= floor:
        return 1.0
    return float(np.max(v) / np.min(v)) if np.min(v) > 0 else np.inf


def tail_ratio(values, floor: float = NEGLIGIBLE) -> float:
    """:func:`spread_ratio` over all but the first (largest-eps) entry."""
    return spread_ratio(np.asarray(values, dtype=float)[1:], floor)


def decay_slope(eps_list, values) -> float:
    """Least-squares slope of ``log value`` against ``log(1/eps)``."""
    return -fitted_order(1.0 / np.asarray(eps_list, dtype=float), values)


def _strictly_decreasing(values, atol: float = 0.0) -> bool:
    return bool(np.all(np.diff(np.asarray(values, dtype=float)) < -atol))


@dataclass
class EpsSweepReport:
    eps_list: list
    n: int
    J: int
    delta: float
    summaries: list
    literature_note: str = field(default=LITERATURE_NOTE, repr=False)

    def __post_init__(self):
        if any(b >= a for a, b in zip(self.eps_list, self.eps_list[1:])):
            raise ValueError("eps_list must be strictly decreasing")
        for s in self.summaries:
            if (s["n"], s["J"]) != (self.n, self.J):
                raise ValueError(f"summary for eps={s['eps']} has resolution "
                                 f"({s['n']}, {s['J']}), expected ({self.n}, {self.J})")

    def column(self, key):
        return [s[key] for s in self.summaries]

    def flux(self, name):
        return [s["accel_flux"][name] for s in self.summaries]

    def checks(self) -> list[dict]:
        """Pass/fail assertions with the measured value and threshold."""
        rows = []

        def add(name, value, threshold, passed):
            rows.append({"check": name, "value": float(value), "threshold": threshold,
                         "passed": bool(passed)})

        sup = spread_ratio(self.column("sup_density"))
        add("sup_density_ratio", sup, "< 2", sup < 2)
        lip = spread_ratio(self.column("lipschitz"))
        add("lipschitz_ratio", lip, "< 2", lip < 2)
        for key in ("I_hess", "I_lap"):
            if key in self.summaries[0]:
                r = tail_ratio(self.column(key))
                add(f"{key}_tail_ratio", r, "< 3", r < 3)
        for name in self.summaries[0]["accel_flux"]:
            A = np.abs(self.flux(name))
            flat = bool(np.all(A <= NEGLIGIBLE))
            add(f"accel_flux_{name}_decreasing", float(np.max(np.diff(A))) if A.size > 1 else 0.0,
                "< 0", flat or _strictly_decreasing(A))
            ratio = A[-1] / A[0] if A[0] > NEGLIGIBLE else 0.0
            add(f"accel_flux_{name}_ratio", ratio, "< 0.2", flat or ratio < 0.2)
        if "w2_deviation" in self.summaries[0]:
            W = np.array(self.column("w2_deviation"))
            if np.all(W <= NEGLIGIBLE):
                add("w2_decreasing", 0.0, "< 0", True)
                add("w2_slope", -np.inf, "< -0.4", True)
            else:
                add("w2_decreasing", float(np.max(np.diff(W))), "< 0", _strictly_decreasing(W))
                slope = decay_slope(self.eps_list, W)
                add("w2_slope", slope, "< -0.4", slope < -0.4)
            P = np.array(self.column("potential_deviation"))
            add("potential_decreasing", float(np.max(np.diff(P))), "< 0",
                _strictly_decreasing(P) or np.all(P <= NEGLIGIBLE))
        return rows

    @property
    def passed(self) -> bool:
        return all(r["passed"] for r in self.checks())

    def write_csv(self, path) -> None:
        """One row per eps; columns ``eps, n, J, sup_density, lipschitz, I_hess, I_lap,
        w2_deviation, potential_deviation`` followed by ``accel_<field>`` columns."""
        names = list(self.summaries[0]["accel_flux"])
        cols = ["eps", "n", "J", "sup_density", "lipschitz", "I_hess", "I_lap",
                "w2_deviation", "potential_deviation"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols + [f"accel_{n}" for n in names])
            for s in self.summaries:
                row = [s.get(c, float("nan")) for c in cols]
                row += [s["accel_flux"][n] for n in names]
                w.writerow([c if isinstance(c, int) else repr(float(c)) for c in row])

    def write_entropy_csv(self, path) -> None:
        """Columns ``eps, t, H``."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["eps", "t", "H"])
            for s in self.summaries:
                tg = np.arange(s["J"] + 1) / s["J"]
                for t, H in zip(tg, s["entropy"]):
                    w.writerow([repr(float(s["eps"])), repr(float(t)), repr(float(H))])

    def write_summary_json(self, path) -> None:
        doc = {"n": self.n, "J": self.J, "delta": self.delta, "eps_list": list(self.eps_list),
               "note": self.literature_note, "checks": self.checks()}
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)


def convergence_report(curves, ref: ReferenceGeodesic | None = None, testfields: dict | None = None,
                       delta: float = DEFAULT_DELTA, summaries=None) -> EpsSweepReport:
    """Sweep report from curves sharing marginals and resolution (sorted by decreasing eps).

    Precomputed ``summaries`` (e.g. from worker processes) can be passed instead of curves.
    """
    if summaries is None:
        curves = sorted(curves, key=lambda c: -c.eps)
        res = {(c.space.n, c.J) for c in curves}
        if len(res) != 1:
            raise ValueError(f"curves have mixed resolutions {sorted(res)}")
        summaries = [curve_summary(c, ref, testfields, delta) for c in curves]
    summaries = sorted(summaries, key=lambda s: -s["eps"])
    n, J = summaries[0]["n"], summaries[0]["J"]
    return EpsSweepReport([s["eps"] for s in summaries], n, J, delta, summaries)


# ---------------------------------------------------------------------------
# invariances


def gauge_invariance_defect(sol: SchrodingerSolution, H: HeatOperator, J: int,
                            c: float = 7.3) -> float:
    """Max change of reported quantities under ``(f, g) -> (c f, g / c)``."""
    other = dataclasses.replace(sol, log_f=sol.log_f + np.log(c), log_g=sol.log_g - np.log(c))
    a, b = interpolate(sol, H, J), interpolate(other, H, J)
    return _curve_distance(a, b, reverse=False)


def time_reversal_defect(space: MeasureSpace, H: HeatOperator, rho0, rho1, eps: float, J: int,
                         tol: float = 1e-14, log_kernel=None,
                         forward: InterpolationCurve | None = None) -> float:
    """Max mismatch of ``H(t)``, ``rho_t`` and ``dH/dt`` after swapping the marginals."""
    if forward is None:
        forward = interpolate(solve_schrodinger_system(space, H, rho0, rho1, eps, tol=tol,
                                                       log_kernel=log_kernel), H, J)
    bwd = interpolate(solve_schrodinger_system(space, H, rho1, rho0, eps, tol=tol,
                                               log_kernel=log_kernel), H, J)
    return _curve_distance(forward, bwd, reverse=True)


def _curve_distance(a: InterpolationCurve, b: InterpolationCurve, reverse: bool) -> float:
    """Largest scale-relative difference (``|x - y| / max(1, max|x|)``) of curve quantities."""
    sel = slice(None, None, -1) if reverse else slice(None)
    sign = -1.0 if reverse else 1.0

    def rel(x, y):
        return float(np.nanmax(np.abs(x - y)) / max(1.0, float(np.nanmax(np.abs(x)))))

    d = [rel(a.rho, b.rho[sel]), rel(entropy_profile(a), entropy_profile(b)[sel])]
    da, db = entropy_first_derivative(a), entropy_first_derivative(b)
    d.append(rel(da["gamma_form"], sign * db["gamma_form"][sel]))
    d.append(rel(da["potential_form"], sign * db["potential_form"][sel]))
    ea, eb = entropy_second_derivative(a), entropy_second_derivative(b)
    d.append(rel(ea["E1"], eb["E1"][sel]))
    return max(d)


# ---------------------------------------------------------------------------
# Li-Yau / Hamilton


def heat_estimate_diagnostics(H: HeatOperator, f, tlist, tol: float = 1e-3) -> dict:
    """Li-Yau and Hamilton inequalities for ``u = h_t f`` on a flat grid.

    Li-Yau: ``Gamma(log u) - Delta u / u <= (1 + tol) N/(2t) + tol``.
    Hamilton: ``t Gamma(log u) <= (1 + tol) log(sup f / u) + tol``.
    ``d/dt log u = Delta u / u`` is used exactly.  Excess values are
    ``left - right`` maximized over nodes (negative means slack).
    """
    sp = H.space
    K, N = sp.curvature
    if K != 0 or not sp.is_grid:
        raise PreconditionError("heat estimates are checked on flat (K = 0) grids only")
    f = np.asarray(f, dtype=float)
    if f.shape != (sp.n,) or np.any(f < 0) or not np.any(f > 0):
        raise PreconditionError("f must be a nonnegative field, not identically zero")
    with np.errstate(divide="ignore"):
        log_f = np.log(f)
    log_sup = float(np.max(log_f))
    rows = []
    for t in tlist:
        if not t > 0:
            raise PreconditionError(f"times must be positive, got {t}")
        lu = log_apply(sp, log_heat_kernel(sp, t), log_f)
        G = gamma(sp, lu, lu)
        ly_left = G - generator_ratio(sp, lu)
        ly_bound = N / (2 * t)
        ly_excess = ly_left - ((1 + tol) * ly_bound + tol)
        ham_left = t * G
        ham_right = log_sup - lu
        ham_excess = ham_left - ((1 + tol) * ham_right + tol)
        rows.append({"t": float(t), "li_yau_max_left": float(np.max(ly_left)),
                     "li_yau_bound": float(ly_bound),
                     "li_yau_excess_abs": float(np.max(ly_left - ly_bound)),
                     "li_yau_excess": float(np.max(ly_excess)),
                     "li_yau_violations": int(np.sum(ly_excess > 0)),
                     "hamilton_excess_abs": float(np.max(ham_left - ham_right)),
                     "hamilton_excess": float(np.max(ham_excess)),
                     "hamilton_violations": int(np.sum(ham_excess > 0))})
    return {"n": sp.n, "N": N, "tol": tol, "note": LITERATURE_NOTE, "rows": rows,
            "violations": sum(r["li_yau_violations"] + r["hamilton_violations"] for r in rows)}


def refinement_orders(resolutions, errors) -> dict:
    """Fitted and pairwise orders of an error sequence under refinement."""
    return {"resolutions": list(resolutions), "errors": [float(e) for e in errors],
            "fitted": fitted_order(resolutions, errors),
            "pairwise": pairwise_orders(resolutions, errors)}
