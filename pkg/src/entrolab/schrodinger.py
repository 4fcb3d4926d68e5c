"""Schrödinger system ``rho0 = f h_{eps/2} g``, ``rho1 = g h_{eps/2} f``.

Solved by alternating (Sinkhorn) updates carried out on ``log f`` and
``log g``; every heat-flow evaluation goes through the entrywise-accurate
log kernel, so small ``eps`` with well separated marginals is fine.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .heat import HeatOperator, log_apply
from .space import MeasureSpace

log = logging.getLogger(__name__)


class MarginalError(ValueError):
    """Marginal is not a probability density w.r.t. the reference measure."""


class ConvergenceError(RuntimeError):
    """Sinkhorn iteration did not reach the requested tolerance."""

    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


@dataclass(frozen=True, eq=False)
class SchrodingerSolution:
    """Gauge-normalized solution (``int f dm = int g dm``), stored as logs."""

    space: MeasureSpace
    rho0: np.ndarray
    rho1: np.ndarray
    eps: float
    log_f: np.ndarray
    log_g: np.ndarray
    iterations: int
    marginal_residual: float
    gauge: float
    tol: float
    history: list = field(default_factory=list, repr=False)
    iterates: list = field(default_factory=list, repr=False)

    @property
    def f(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.exp(self.log_f)

    @property
    def g(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.exp(self.log_g)

    @property
    def converged(self) -> bool:
        return self.marginal_residual <= self.tol

    def write_trace_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "residual"])
            for k, r in enumerate(self.history, start=1):
                w.writerow([k, repr(float(r))])


def check_density(space: MeasureSpace, rho, name: str = "rho", atol: float = 1e-9) -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    if rho.shape != (space.n,):
        raise MarginalError(f"{name}: expected {space.n} node values, got shape {rho.shape}")
    if not np.all(np.isfinite(rho)):
        raise MarginalError(f"{name}: non-finite entries")
    if np.any(rho < 0):
        raise MarginalError(f"{name}: negative entry at node {int(np.argmin(rho))}")
    mass = float(rho @ space.measure)
    if abs(mass - 1.0) > atol:
        raise MarginalError(f"{name}: total mass {mass!r} is not 1")
    return rho


def _log(x):
    with np.errstate(divide="ignore"):
        return np.log(x)


def _marginal_error(space, log_a, log_hb, rho):
    with np.errstate(over="ignore", invalid="ignore"):
        prod = np.exp(log_a + log_hb)
    prod = np.where(np.isneginf(log_a), 0.0, prod)
    return float(np.max(np.abs(prod - rho) * space.measure))


def gauge_normalize(space: MeasureSpace, log_f, log_g):
    """Return ``(log f + log c, log g - log c, c)`` with ``int f dm = int g dm``."""
    lm = np.log(space.measure)
    log_c = 0.5 * (logsumexp(log_g + lm) - logsumexp(log_f + lm))
    return log_f + log_c, log_g - log_c, float(np.exp(log_c))


def solve_schrodinger_system(space: MeasureSpace, H: HeatOperator, rho0, rho1, eps: float,
                             tol: float = 1e-14, max_iter: int = 20000, init_g=1.0,
                             record_iterates: bool = False,
                             log_kernel: np.ndarray | None = None) -> SchrodingerSolution:
    """Alternate ``f <- rho0 / h_{eps/2} g`` and ``g <- rho1 / h_{eps/2} f``.

    Starts from ``g = init_g`` (scalar or per-node array).  The residual is
    the weighted max norm ``max_x |f h g - rho0| m_x`` of the marginal
    errors; iteration stops once it is ``<= tol``.
    """
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    rho0 = check_density(space, rho0, "rho0")
    rho1 = check_density(space, rho1, "rho1")
    if H.space is not space:
        raise ValueError("heat operator belongs to a different space")
    K = H.log_kernel(eps / 2) if log_kernel is None else log_kernel
    lr0, lr1 = _log(rho0), _log(rho1)
    init_g = np.broadcast_to(np.asarray(init_g, dtype=float), (space.n,))
    if np.any(init_g <= 0):
        raise ValueError("initial g must be positive")
    log_g = np.log(init_g)
    log_f = np.full(space.n, -np.inf)
    history, iterates = [], []
    sweeps = 0
    while True:
        log_hg = log_apply(space, K, log_g)
        if sweeps:
            # error of the current pair; marginal 1 is exact after a sweep
            residual = _marginal_error(space, log_f, log_hg, rho0)
            history.append(residual)
            if residual <= tol:
                break
            if sweeps >= max_iter:
                raise ConvergenceError(
                    f"Sinkhorn did not reach tol={tol:g} in {max_iter} iterations "
                    f"(eps={eps:g}, residual={residual:.3e})", history)
        log_f = lr0 - log_hg
        log_hf = log_apply(space, K, log_f)
        log_g = lr1 - log_hf
        sweeps += 1
        if record_iterates:
            iterates.append((log_f.copy(), log_g.copy()))
    log_hf = log_apply(space, K, log_f)
    residual = max(residual, _marginal_error(space, log_g, log_hf, rho1))
    log_f, log_g, c = gauge_normalize(space, log_f, log_g)
    log.debug("eps=%g: %d iterations, residual %.3e", eps, sweeps, residual)
    return SchrodingerSolution(space, rho0, rho1, float(eps), log_f, log_g, sweeps, residual,
                               c, float(tol), history, iterates)


def log_plan(sol: SchrodingerSolution, H: HeatOperator) -> np.ndarray:
    lm = np.log(sol.space.measure)
    K = H.log_kernel(sol.eps / 2)
    return (sol.log_f + lm)[:, None] + K + (sol.log_g + lm)[None, :]


def entropic_plan(sol: SchrodingerSolution, H: HeatOperator) -> np.ndarray:
    """``gamma(x, y) = f(x) r_{eps/2}(x, y) g(y) m_x m_y``."""
    if not sol.converged:
        raise ConvergenceError("plan requested from an unconverged solution", sol.history)
    with np.errstate(under="ignore"):
        return np.exp(log_plan(sol, H))


def reference_log_density(space: MeasureSpace, H: HeatOperator, eps: float) -> np.ndarray:
    """``log`` of the reference coupling ``r_{eps/2} m (x) m`` per cell."""
    lm = np.log(space.measure)
    return H.log_kernel(eps / 2) + lm[:, None] + lm[None, :]


def plan_relative_entropy(gamma, H: HeatOperator, eps: float) -> float:
    """``H(gamma | R_eps) = sum gamma log(gamma / (r_{eps/2} m (x) m))``."""
    gamma = np.asarray(gamma, dtype=float)
    logR = reference_log_density(H.space, H, eps)
    pos = gamma > 0
    if np.any(np.isneginf(logR[pos])):
        raise ValueError("coupling is not absolutely continuous w.r.t. the reference")
    return float(np.sum(gamma[pos] * (np.log(gamma[pos]) - logR[pos])))
