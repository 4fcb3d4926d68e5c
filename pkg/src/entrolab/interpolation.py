"""Entropic interpolation and the PDE identities it satisfies.

Given a Schrödinger solution ``(f, g)`` at a fixed ``eps``, the curve is

    u_t = h_{t eps/2} f,  v_t = h_{(1-t) eps/2} g,  rho_t = u_t v_t,
    phi_t = eps log u_t,  psi_t = eps log v_t,  theta_t = (psi_t - phi_t) / 2,

stored in log form.  Identities that are exact on a finite space (mass,
``phi + psi = eps log rho``, the time derivative of ``rho``) are checked at
solver precision; those relying on the chain rule (continuity equation and
HJB equations in Gamma form) only hold up to discretization error and are
checked by refinement.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .heat import HeatOperator, log_apply, log_heat_kernel
from .schrodinger import ConvergenceError, SchrodingerSolution
from .space import (MeasureSpace, UnsupportedSpaceError, gamma, generator_ratio,
                    integrate, laplacian)

RHO_FLOOR = 1e-14


@dataclass(frozen=True, eq=False)
class InterpolationCurve:
    space: MeasureSpace
    eps: float
    tgrid: np.ndarray
    log_u: np.ndarray
    log_v: np.ndarray
    accel: np.ndarray
    accel_valid: np.ndarray

    @property
    def J(self) -> int:
        return self.tgrid.size - 1

    @property
    def dt(self) -> float:
        return 1.0 / self.J

    @property
    def log_rho(self) -> np.ndarray:
        return self.log_u + self.log_v

    @property
    def rho(self) -> np.ndarray:
        with np.errstate(under="ignore"):
            return np.exp(self.log_rho)

    @property
    def phi(self) -> np.ndarray:
        return self.eps * self.log_u

    @property
    def psi(self) -> np.ndarray:
        return self.eps * self.log_v

    @property
    def theta(self) -> np.ndarray:
        return 0.5 * (self.psi - self.phi)

    def interior(self, margin: int = 1) -> np.ndarray:
        return np.arange(margin, self.J + 1 - margin)

    def write_csv(self, path) -> None:
        """Columns ``t, x, rho, phi, psi, theta, accel``; one row per (t, node)."""
        sp = self.space
        xs = sp.coords[:, 0] if sp.kind == "interval" else np.arange(sp.n)
        rho, phi, psi, theta = self.rho, self.phi, self.psi, self.theta
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "rho", "phi", "psi", "theta", "accel"])
            for j, t in enumerate(self.tgrid):
                for i in range(sp.n):
                    w.writerow([repr(float(t)), repr(float(xs[i])), repr(float(rho[j, i])),
                                repr(float(phi[j, i])), repr(float(psi[j, i])),
                                repr(float(theta[j, i])), repr(float(self.accel[j, i]))])


def acceleration(space: MeasureSpace, log_rho, eps: float):
    """``a = -(eps^2/8) (2 Delta log rho + Gamma(log rho, log rho))`` with validity mask.

    Nodes with ``rho <= 1e-14`` or a non-finite stencil are masked (NaN).
    """
    log_rho = np.asarray(log_rho, dtype=float)
    finite = np.isfinite(log_rho)
    safe = np.where(finite, log_rho, 0.0)
    a = -(eps * eps / 8.0) * (2.0 * laplacian(space, safe) + gamma(space, safe, safe))
    rows, cols, _ = space.edges()
    bad_nb = space.scatter_rows((~finite[..., cols]).astype(float)) > 0
    with np.errstate(divide="ignore"):
        valid = finite & ~bad_nb & (log_rho > np.log(RHO_FLOOR))
    return np.where(valid, a, np.nan), valid


def interpolate(sol: SchrodingerSolution, H: HeatOperator, J: int) -> InterpolationCurve:
    if J < 16:
        raise ValueError(f"need J >= 16 time steps, got {J}")
    if not sol.converged:
        raise ConvergenceError("cannot interpolate an unconverged solution", sol.history)
    space = sol.space
    tgrid = np.arange(J + 1) / J
    log_u = np.empty((J + 1, space.n))
    log_v = np.empty((J + 1, space.n))
    for j in range(J + 1):
        K = log_heat_kernel(space, j * sol.eps / (2 * J))
        log_u[j] = log_apply(space, K, sol.log_f)
        log_v[J - j] = log_apply(space, K, sol.log_g)
    accel, valid = acceleration(space, log_u + log_v, sol.eps)
    for arr in (tgrid, log_u, log_v, accel, valid):
        arr.setflags(write=False)
    return InterpolationCurve(space, sol.eps, tgrid, log_u, log_v, accel, valid)


def central_difference(values, dt: float, order: int = 1) -> np.ndarray:
    """Central differences along axis 0 at interior samples ``1..J-1``."""
    v = np.asarray(values, dtype=float)
    if order == 1:
        return (v[2:] - v[:-2]) / (2 * dt)
    if order == 2:
        return (v[2:] - 2 * v[1:-1] + v[:-2]) / (dt * dt)
    raise ValueError("order must be 1 or 2")


def fitted_order(resolutions, errors) -> float:
    """Least-squares slope of ``-log(error)`` against ``log(resolution)``."""
    r = np.log(np.asarray(resolutions, dtype=float))
    e = np.log(np.asarray(errors, dtype=float))
    return float(-np.polyfit(r, e, 1)[0])


def pairwise_orders(resolutions, errors) -> list[float]:
    r = np.asarray(resolutions, dtype=float)
    e = np.asarray(errors, dtype=float)
    return [float(np.log(e[k] / e[k + 1]) / np.log(r[k + 1] / r[k])) for k in range(len(e) - 1)]


def mass_profile(curve: InterpolationCurve) -> np.ndarray:
    return integrate(curve.space, curve.rho)


def rho_time_derivative(curve: InterpolationCurve):
    """Exact ``d rho/dt = (eps/2)(v Delta u - u Delta v)``.

    Returns ``(drho, Du/u, Dv/v)``; the derivative is formed as
    ``(eps/2) rho (Du/u - Dv/v)`` so that it stays accurate where ``rho`` is tiny.
    """
    sp = curve.space
    ru = generator_ratio(sp, curve.log_u)
    rv = generator_ratio(sp, curve.log_v)
    return 0.5 * curve.eps * curve.rho * (ru - rv), ru, rv


def self_adjoint_defect(curve: InterpolationCurve, ru=None, rv=None) -> float:
    """``max_t |int (v Delta u - u Delta v) dm|``, relative; zero by self-adjointness."""
    sp = curve.space
    if ru is None:
        _, ru, rv = rho_time_derivative(curve)
    rho = curve.rho
    balance = np.abs(integrate(sp, rho * (ru - rv)))
    scale = integrate(sp, rho * (np.abs(ru) + np.abs(rv))) + 1.0
    return float(np.max(balance / scale))


def _common_rows(curve: InterpolationCurve, rows, coarse_J):
    """Mask of ``rows`` (time indices) lying on the grid ``k / coarse_J``."""
    if coarse_J is None:
        return np.ones(len(rows), dtype=bool)
    if curve.J % coarse_J:
        raise ValueError(f"J={curve.J} is not a multiple of coarse_J={coarse_J}")
    return np.asarray(rows) % (curve.J // coarse_J) == 0


def verify_semigroup_derivative(curve: InterpolationCurve, H: HeatOperator | None = None,
                                coarse_J: int | None = None) -> dict:
    """Compare the exact time derivative of ``rho`` with central differences.

    ``max_residual`` is taken over all interior times.  Its worst point is
    ``t = dt`` or ``1 - dt``, which moves into the endpoint layer as ``J``
    grows; for order estimates across dyadic ``J`` use
    ``max_residual_common``, the maximum over the times ``k / coarse_J``.
    """
    if curve.J < 32:
        raise ValueError("semigroup derivative check needs J >= 32")
    sp = curve.space
    exact, ru, rv = rho_time_derivative(curve)
    fd = central_difference(curve.rho, curve.dt)
    inner = curve.interior()
    err = np.max(np.abs(fd - exact[inner]), axis=1)
    resid = float(np.max(err))
    common = float(np.max(err[_common_rows(curve, inner, coarse_J)]))
    return {"J": curve.J, "max_residual": resid, "max_residual_common": common,
            "scale": float(np.max(np.abs(exact))),
            "self_adjoint_defect": self_adjoint_defect(curve, ru, rv)}


def verify_continuity_equation(curve: InterpolationCurve, testfields) -> dict:
    """``d/dt int h rho dm`` (central differences) against ``int Gamma(h, theta) rho dm``."""
    sp = curve.space
    if not sp.is_grid:
        raise UnsupportedSpaceError("continuity-equation check is only meaningful on grids")
    inner = curve.interior()
    rho, theta = curve.rho, curve.theta
    out = []
    for h in testfields:
        h = sp.check_field(h)
        moment = integrate(sp, h * rho)
        lhs = central_difference(moment, curve.dt)
        flux = integrate(sp, gamma(sp, h, theta[inner]) * rho[inner])
        r = lhs - flux
        out.append({"max_residual": float(np.max(np.abs(r))),
                    "scale": float(np.max(np.abs(flux))), "residual": r})
    return {"J": curve.J, "n": sp.n, "fields": out,
            "max_residual": max(o["max_residual"] for o in out)}


def verify_hjb(curve: InterpolationCurve, H: HeatOperator | None = None,
               coarse_J: int | None = None) -> dict:
    """Residuals of the HJB equations for ``phi`` (forward) and ``psi`` (backward).

    ``exact_*`` compare central differences with the exact discrete identity
    ``d/dt phi = (eps^2/2) Delta u / u``; ``gamma_*`` compare that identity
    with ``Gamma(phi, phi)/2 + (eps/2) Delta phi``, reported both in max
    norm and integrated against ``rho`` over ``t in [2/J, 1 - 2/J]``.
    ``exact_*_common`` restricts the time-difference residual to the times
    ``k / coarse_J`` in that window (see :func:`verify_semigroup_derivative`).
    """
    sp = curve.space
    if not sp.is_grid:
        raise UnsupportedSpaceError("Gamma-form HJB check is only meaningful on grids")
    eps = curve.eps
    J = curve.J
    win = np.arange(2, J - 1)
    common = _common_rows(curve, win, coarse_J) & (win >= 2 * J // (coarse_J or J)) \
        & (win <= J - 2 * J // (coarse_J or J))
    rho = curve.rho[win]
    report = {"J": J, "n": sp.n}
    for name, pot, logw, sign in (("phi", curve.phi, curve.log_u, 1.0),
                                  ("psi", curve.psi, curve.log_v, -1.0)):
        ratio = generator_ratio(sp, logw[win])
        exact = sign * 0.5 * eps * eps * ratio
        fd = central_difference(pot, curve.dt)[win - 1]
        p = pot[win]
        gform = sign * (0.5 * gamma(sp, p, p) + 0.5 * eps * laplacian(sp, p))
        err = np.max(np.abs(fd - exact), axis=1)
        report[f"exact_{name}"] = float(np.max(err))
        report[f"exact_{name}_common"] = float(np.max(err[common]))
        report[f"gamma_{name}_max"] = float(np.max(np.abs(gform - exact)))
        report[f"gamma_{name}_weighted"] = float(np.max(integrate(sp, np.abs(gform - exact) * rho)))
    return report
