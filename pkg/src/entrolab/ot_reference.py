"""Exact optimal-transport oracle, independent of the heat/Schrödinger code.

1D geodesics come from monotone rearrangement: node masses are spread
uniformly over their cells, quantile functions are interpolated linearly in
``t`` and pushed back to node cells.  Small non-1D instances go through the
Kantorovich linear program.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import linprog

from .space import MeasureSpace, UnsupportedSpaceError

ENUMERATION_LIMIT = 4
LP_LIMIT = 30


class InstanceTooLargeError(ValueError):
    pass


def _require_neumann_interval(space: MeasureSpace):
    if space.kind != "interval" or space.boundary != "neumann":
        raise UnsupportedSpaceError(
            "quantile construction needs a 1D interval grid with Neumann boundary")


def cell_edges(space: MeasureSpace) -> np.ndarray:
    """Boundaries of the node cells ``[x_i - h/2, x_i + h/2]`` clipped to the interval."""
    _require_neumann_interval(space)
    x = space.coords[:, 0]
    mid = 0.5 * (x[1:] + x[:-1])
    return np.concatenate([[x[0]], mid, [x[-1]]])


def cell_cdf(space: MeasureSpace, rho) -> np.ndarray:
    """Normalized cumulative mass at the cell boundaries (``n + 1`` values)."""
    mass = np.asarray(rho, dtype=float) * space.measure
    cdf = np.concatenate([[0.0], np.cumsum(mass / mass.sum())])
    cdf[-1] = 1.0
    return np.maximum.accumulate(cdf)


def quantile_function(space: MeasureSpace, rho, q) -> np.ndarray:
    """Right-continuous generalized inverse CDF of the cell-uniform density."""
    edges = cell_edges(space)
    cdf = cell_cdf(space, rho)
    dm = np.diff(cdf)
    q = np.asarray(q, dtype=float)
    i = np.clip(np.searchsorted(cdf, q, side="right") - 1, 0, space.n - 1)
    # zero-mass cells are never selected by side="right" except at q = 1
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(dm[i] > 0, (q - cdf[i]) / dm[i], 0.0)
    return edges[i] + np.clip(frac, 0.0, 1.0) * (edges[i + 1] - edges[i])


@dataclass(frozen=True)
class PiecewiseQuantile:
    """Quantile function that is linear on each ``[q_k, q_{k+1}]``.

    ``lo[k]`` and ``hi[k]`` are its one-sided limits at the two ends of
    interval ``k``, so jumps (gaps in the support) are represented exactly.
    """

    q: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def from_density(cls, space: MeasureSpace, rho) -> "PiecewiseQuantile":
        edges = cell_edges(space)
        cdf = cell_cdf(space, rho)
        keep = np.diff(cdf) > 0
        q = np.concatenate([[0.0], cdf[1:][keep]])
        q[-1] = 1.0
        return cls(q, edges[:-1][keep], edges[1:][keep])

    def refine(self, knots) -> "PiecewiseQuantile":
        """Same function on a finer knot set (must contain ``self.q``)."""
        knots = np.asarray(knots, dtype=float)
        mid = 0.5 * (knots[1:] + knots[:-1])
        k = np.clip(np.searchsorted(self.q, mid, side="right") - 1, 0, self.lo.size - 1)
        width = self.q[k + 1] - self.q[k]
        slope = np.where(width > 0, (self.hi[k] - self.lo[k]) / np.where(width > 0, width, 1.0), 0.0)
        return PiecewiseQuantile(knots, self.lo[k] + slope * (knots[:-1] - self.q[k]),
                                 self.lo[k] + slope * (knots[1:] - self.q[k]))

    def polyline(self) -> tuple[np.ndarray, np.ndarray]:
        """``(positions, levels)`` tracing the graph, nondecreasing in both."""
        x = np.column_stack([self.lo, self.hi]).ravel()
        lev = np.column_stack([self.q[:-1], self.q[1:]]).ravel()
        return np.maximum.accumulate(x), lev

    def cdf(self, x) -> np.ndarray:
        px, lev = self.polyline()
        return np.interp(x, px, lev, left=0.0, right=1.0)

    def at_midpoints(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)


def common_knots(*quantiles: PiecewiseQuantile, npts: int = 0) -> np.ndarray:
    parts = [qf.q for qf in quantiles]
    if npts:
        parts.append(np.linspace(0.0, 1.0, npts + 1))
    return np.unique(np.concatenate(parts))


def combine(a: PiecewiseQuantile, b: PiecewiseQuantile, t: float) -> PiecewiseQuantile:
    """``(1 - t) a + t b`` on the union of both knot sets."""
    knots = common_knots(a, b)
    ra, rb = a.refine(knots), b.refine(knots)
    return PiecewiseQuantile(knots, (1 - t) * ra.lo + t * rb.lo, (1 - t) * ra.hi + t * rb.hi)


def quantile_l2(a: PiecewiseQuantile, b: PiecewiseQuantile, npts: int = 0) -> float:
    """Exact ``(int_0^1 |a - b|^2 dq)^(1/2)`` for piecewise-linear quantiles."""
    knots = common_knots(a, b, npts=npts)
    ra, rb = a.refine(knots), b.refine(knots)
    d0, d1 = ra.lo - rb.lo, ra.hi - rb.hi
    val = np.sum(np.diff(knots) * (d0 * d0 + d0 * d1 + d1 * d1) / 3.0)
    return float(np.sqrt(max(val, 0.0)))


def w2_distance_1d(space: MeasureSpace, rho, sigma, npts: int | None = None) -> float:
    """``W_2`` between two node densities via ``int_0^1 |F^-1 - G^-1|^2 dq``.

    Both quantile functions are piecewise linear, so the integral is exact
    on the union of their breakpoints; ``npts`` (default ``10 n``) extra
    uniform knots are merged in.
    """
    _require_neumann_interval(space)
    npts = 10 * space.n if npts is None else npts
    return quantile_l2(PiecewiseQuantile.from_density(space, rho),
                       PiecewiseQuantile.from_density(space, sigma), npts=npts)


def pushforward_density(space: MeasureSpace, quantile: PiecewiseQuantile) -> np.ndarray:
    """Node densities carrying the exact cell masses of the measure with this quantile."""
    F = quantile.cdf(cell_edges(space))
    F[0], F[-1] = 0.0, 1.0
    return np.diff(F) / space.measure


@dataclass(frozen=True, eq=False)
class ReferenceGeodesic:
    """Exact ``W_2`` geodesic on a 1D grid, sampled on ``tgrid``.

    ``phi[j]`` is the velocity potential at time ``tgrid[j]``: its gradient is
    the geodesic velocity, so ``d/dt int h dmu_t = int Gamma(h, phi_t) dmu_t``.
    """

    space: MeasureSpace
    tgrid: np.ndarray
    mu: np.ndarray
    phi: np.ndarray
    velocity: np.ndarray
    monotone_map: np.ndarray
    w2: float
    start: PiecewiseQuantile
    end: PiecewiseQuantile

    def quantile(self, t: float) -> PiecewiseQuantile:
        return combine(self.start, self.end, t)

    def moment(self, h_values, t: float) -> float:
        """``int h dmu_t`` for the exact pushforward, ``h`` a cubic spline through the nodes."""
        x = self.space.coords[:, 0]
        spline = CubicSpline(x, np.asarray(h_values, dtype=float))
        antider = spline.antiderivative()
        qf = self.quantile(t)
        w = np.diff(qf.q)
        width = qf.hi - qf.lo
        flat = width <= 1e-14 * (x[-1] - x[0])
        safe = np.where(flat, 1.0, width)
        avg = np.where(flat, spline(qf.lo), (antider(qf.hi) - antider(qf.lo)) / safe)
        return float(np.sum(w * avg))

    def distance_to(self, rho, t: float) -> float:
        """``W_2`` between a node density and ``mu_t`` (exact quantiles, no re-binning)."""
        return quantile_l2(PiecewiseQuantile.from_density(self.space, rho), self.quantile(t))

    def write_csv(self, path) -> None:
        """Columns ``t, x, mu, phi``."""
        x = self.space.coords[:, 0]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "mu", "phi"])
            for j, t in enumerate(self.tgrid):
                for i in range(self.space.n):
                    w.writerow([repr(float(t)), repr(float(x[i])), repr(float(self.mu[j, i])),
                                repr(float(self.phi[j, i]))])


def velocity_potential(space: MeasureSpace, v) -> np.ndarray:
    """Node-wise trapezoid antiderivative of ``v`` with zero ``m``-weighted mean."""
    x = space.coords[:, 0]
    v = np.asarray(v, dtype=float)
    phi = np.concatenate([np.zeros(v.shape[:-1] + (1,)),
                          np.cumsum(0.5 * (v[..., 1:] + v[..., :-1]) * np.diff(x), axis=-1)],
                         axis=-1)
    return phi - (phi @ space.measure)[..., None] / space.total_mass


def quantile_geodesic_1d(space: MeasureSpace, rho0, rho1, tgrid) -> ReferenceGeodesic:
    """Displacement interpolation ``F_t^-1 = (1-t) F_0^-1 + t F_1^-1``.

    Node masses are spread uniformly over their cells, which makes both
    quantile functions piecewise linear; on the union of their breakpoints
    every ``mu_t`` and ``W_2`` is then computed without quadrature error.
    """
    _require_neumann_interval(space)
    A = PiecewiseQuantile.from_density(space, rho0)
    B = PiecewiseQuantile.from_density(space, rho1)
    knots = common_knots(A, B)
    A, B = A.refine(knots), B.refine(knots)
    x = space.coords[:, 0]
    tgrid = np.asarray(tgrid, dtype=float)
    disp = np.column_stack([B.lo - A.lo, B.hi - A.hi]).ravel()
    mu, vel = [], []
    for t in tgrid:
        Xt = PiecewiseQuantile(knots, (1 - t) * A.lo + t * B.lo, (1 - t) * A.hi + t * B.hi)
        mu.append(pushforward_density(space, Xt))
        px, _ = Xt.polyline()
        vel.append(np.interp(x, px, disp))
    mu, vel = np.array(mu), np.array(vel)
    phi = velocity_potential(space, vel)
    # optimal map at the nodes: T = F_1^-1 o F_0 evaluated at the cell centres
    cdf0 = cell_cdf(space, rho0)
    T = quantile_function(space, rho1, np.clip(0.5 * (cdf0[1:] + cdf0[:-1]), 0.0, 1.0))
    return ReferenceGeodesic(space, tgrid, mu, phi, vel, T, quantile_l2(A, B), A, B)


# ---------------------------------------------------------------------------
# small discrete instances


@dataclass
class SmallOTResult:
    cost: float
    plan: np.ndarray
    u: np.ndarray
    v: np.ndarray
    method: str

    def write_plan_csv(self, path) -> None:
        np.savetxt(path, self.plan, delimiter=",", fmt="%.17g")


def transport_vertices(mu, nu, tol: float = 1e-12) -> list[np.ndarray]:
    """All vertices of the transport polytope ``{P >= 0 : P 1 = mu, P^T 1 = nu}``.

    Brute force over bases: each choice of ``len(mu) + len(nu) - 1`` cells is
    solved and kept if feasible.  Only sensible for tiny instances.
    """
    mu, nu = np.asarray(mu, float), np.asarray(nu, float)
    a, b = mu.size, nu.size
    cells = [(i, j) for i in range(a) for j in range(b)]
    rank = a + b - 1
    rhs = np.concatenate([mu, nu])
    found = {}
    for basis in combinations(range(a * b), rank):
        M = np.zeros((a + b, rank))
        for c, k in enumerate(basis):
            i, j = cells[k]
            M[i, c] = 1.0
            M[a + j, c] = 1.0
        if np.linalg.matrix_rank(M) < rank:
            continue
        sol, *_ = np.linalg.lstsq(M, rhs, rcond=None)
        if np.any(sol < -tol) or np.max(np.abs(M @ sol - rhs)) > 1e-10:
            continue
        P = np.zeros((a, b))
        for c, k in enumerate(basis):
            P[cells[k]] = max(sol[c], 0.0)
        found[tuple(np.round(P.ravel(), 12))] = P
    return list(found.values())


def exact_ot_small(mu, nu, cost) -> SmallOTResult:
    """Discrete Kantorovich problem ``min <P, cost>`` with its dual potentials.

    Vertex enumeration for ``n <= 4``; the HiGHS LP for ``n <= 30``.  Duals
    ``(u, v)`` satisfy ``u_i + v_j <= c_ij`` with equality on the plan support.
    """
    mu, nu, cost = np.asarray(mu, float), np.asarray(nu, float), np.asarray(cost, float)
    a, b = mu.size, nu.size
    if max(a, b) > LP_LIMIT:
        raise InstanceTooLargeError(f"exact OT limited to n <= {LP_LIMIT}, got {max(a, b)}")
    nu = nu * (mu.sum() / nu.sum())
    A_eq = np.zeros((a + b, a * b))
    for i in range(a):
        A_eq[i, i * b:(i + 1) * b] = 1.0
    for j in range(b):
        A_eq[a + j, j::b] = 1.0
    lp = linprog(cost.ravel(), A_eq=A_eq, b_eq=np.concatenate([mu, nu]), bounds=(0, None),
                 method="highs")
    if lp.status != 0:
        raise RuntimeError(f"LP failed: {lp.message}")
    duals = lp.eqlin.marginals
    u, v = duals[:a].copy(), duals[a:].copy()
    shift = u.mean()
    u, v = u - shift, v + shift
    if max(a, b) <= ENUMERATION_LIMIT:
        verts = transport_vertices(mu, nu)
        costs = [float(np.sum(P * cost)) for P in verts]
        k = int(np.argmin(costs))
        return SmallOTResult(costs[k], verts[k], u, v, "enumeration")
    P = lp.x.reshape(a, b)
    return SmallOTResult(float(lp.fun), P, u, v, "lp")


def cross_validate(plans_by_eps: dict, exact: SmallOTResult, cost) -> dict:
    """Transport-cost gap ``<gamma_eps, c> - W_2^2`` along an eps ladder."""
    cost = np.asarray(cost, float)
    eps = sorted(plans_by_eps, reverse=True)
    gaps = []
    for e in eps:
        P = np.asarray(plans_by_eps[e])
        if P.shape != cost.shape:
            raise ValueError(f"plan for eps={e} has shape {P.shape}, cost {cost.shape}")
        gaps.append(float(np.sum(P * cost)) - exact.cost)
    gaps = np.array(gaps)
    return {"eps": eps, "gap": gaps.tolist(),
            "nonnegative": bool(np.all(gaps >= -1e-10)),
            "decreasing": bool(np.all(np.diff(gaps) < 0))}
