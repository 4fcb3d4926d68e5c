"""Discrete metric measure spaces and the carré du champ calculus on them.

A space is a finite node set with a reference measure ``m``, a generator
(Laplacian) ``Delta`` that is self-adjoint in ``L^2(m)``, and a distance.
Fields are plain numpy arrays whose last axis indexes nodes, so every
operator below also accepts a stack of fields (e.g. one row per time).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, shortest_path

GRID_KINDS = ("interval", "grid2d")


class SpaceError(ValueError):
    """Invalid construction parameters for a space."""


class SpaceMismatchError(ValueError):
    """A field does not live on the space it is used with."""


class UnsupportedSpaceError(ValueError):
    """The operation is not defined for this kind of space."""


@dataclass(frozen=True, eq=False)
class MeasureSpace:
    """Finite metric measure space with generator.

    ``generator[i, j]`` is the rate from node ``i`` to ``j`` (off-diagonal
    entries nonnegative, rows summing to zero).  ``params`` holds what is
    needed to rebuild the space (see :func:`space_to_dict`).
    """

    kind: str
    points: tuple
    measure: np.ndarray
    generator: np.ndarray
    distance: np.ndarray
    params: dict
    curvature: tuple[float, float] = (0.0, 1.0)
    coords: np.ndarray | None = None
    _edges: tuple = field(default=(), repr=False)

    def __post_init__(self):
        for name in ("measure", "generator", "distance", "coords"):
            arr = getattr(self, name)
            if arr is not None:
                arr.setflags(write=False)
        if not self._edges:
            off = self.generator.copy()
            np.fill_diagonal(off, 0.0)
            rows, cols = np.nonzero(off)
            scatter = csr_matrix((np.ones(rows.size), (np.arange(rows.size), rows)),
                                 shape=(rows.size, self.measure.shape[0]))
            object.__setattr__(self, "_edges", (rows, cols, off[rows, cols], scatter))

    @property
    def n(self) -> int:
        return self.measure.shape[0]

    @property
    def total_mass(self) -> float:
        return float(self.measure.sum())

    @property
    def is_grid(self) -> bool:
        return self.kind in GRID_KINDS

    @property
    def boundary(self) -> str | None:
        return self.params.get("boundary")

    @property
    def spacing(self):
        return self.params.get("spacing")

    def edges(self):
        """Directed off-diagonal entries ``(rows, cols, rates)`` of the generator."""
        return self._edges[:3]

    def scatter_rows(self, contrib) -> np.ndarray:
        """Sum per-edge values (last axis) into their source nodes."""
        contrib = np.asarray(contrib)
        flat = contrib.reshape(-1, contrib.shape[-1])
        return np.asarray(flat @ self._edges[3]).reshape(contrib.shape[:-1] + (self.n,))

    def adjacent_pairs(self):
        """Undirected neighbour pairs ``(i, j)`` with ``i < j``."""
        rows, cols = self._edges[:2]
        keep = rows < cols
        return rows[keep], cols[keep]

    def check_field(self, f) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        if f.shape[-1] != self.n:
            raise SpaceMismatchError(
                f"field has {f.shape[-1]} nodes, space has {self.n}")
        return f


# ---------------------------------------------------------------------------
# constructors


def _interval_parts(n: int, length: float, boundary: str):
    if n < 3:
        raise SpaceError(f"interval grid needs n >= 3, got {n}")
    if not length > 0:
        raise SpaceError(f"length must be positive, got {length}")
    if boundary == "periodic":
        h = length / n
        x = h * np.arange(n)
        m = np.full(n, h)
        lap = np.zeros((n, n))
        idx = np.arange(n)
        lap[idx, idx] = -2.0
        lap[idx, (idx + 1) % n] += 1.0
        lap[idx, (idx - 1) % n] += 1.0
        lap /= h * h
        d = np.abs(x[:, None] - x[None, :])
        d = np.minimum(d, length - d)
    elif boundary == "neumann":
        h = length / (n - 1)
        x = h * np.arange(n)
        m = np.full(n, h)
        m[0] = m[-1] = h / 2
        lap = np.zeros((n, n))
        idx = np.arange(1, n - 1)
        lap[idx, idx] = -2.0
        lap[idx, idx + 1] = 1.0
        lap[idx, idx - 1] = 1.0
        # ghost-node reflection; with half-cell endpoint weights this keeps
        # m_i Delta_ij symmetric exactly
        lap[0, 0], lap[0, 1] = -2.0, 2.0
        lap[-1, -1], lap[-1, -2] = -2.0, 2.0
        lap /= h * h
        d = np.abs(x[:, None] - x[None, :])
    else:
        raise SpaceError(f"unknown boundary {boundary!r}")
    return h, x, m, lap, d


def build_interval_grid(n: int, length: float, boundary: str = "neumann") -> MeasureSpace:
    """Uniform grid on an interval (Neumann) or a circle (periodic)."""
    h, x, m, lap, d = _interval_parts(int(n), float(length), boundary)
    params = {"n": int(n), "length": float(length), "boundary": boundary,
              "spacing": h}
    return MeasureSpace("interval", tuple(range(n)), m, lap, d, params,
                        curvature=(0.0, 1.0), coords=x[:, None])


def build_tensor_grid(shape: Sequence[int], lengths: Sequence[float],
                      boundary: str = "neumann") -> MeasureSpace:
    """Tensor product of two interval grids; nodes in C (row-major) order."""
    (n1, n2), (l1, l2) = shape, lengths
    h1, x1, m1, lap1, d1 = _interval_parts(int(n1), float(l1), boundary)
    h2, x2, m2, lap2, d2 = _interval_parts(int(n2), float(l2), boundary)
    m = np.kron(m1, m2)
    lap = np.kron(lap1, np.eye(n2)) + np.kron(np.eye(n1), lap2)
    d = np.sqrt(np.kron(d1 ** 2, np.ones((n2, n2))) + np.kron(np.ones((n1, n1)), d2 ** 2))
    coords = np.stack(np.meshgrid(x1, x2, indexing="ij"), axis=-1).reshape(-1, 2)
    params = {"shape": [int(n1), int(n2)], "lengths": [float(l1), float(l2)],
              "boundary": boundary, "spacing": (h1, h2)}
    return MeasureSpace("grid2d", tuple(range(m.size)), m, lap, d, params,
                        curvature=(0.0, 2.0), coords=coords)


def build_weighted_graph(nodes: Sequence, edges: Sequence, measure: Sequence[float],
                         scale: float = 1.0,
                         curvature: tuple[float, float] = (0.0, 1.0)) -> MeasureSpace:
    """Weighted graph with ``Delta f(i) = (1/m_i) sum_j w_ij (f(j) - f(i))``.

    ``edges`` is a list of ``(i, j, w)`` with ``i``, ``j`` entries of
    ``nodes``.  Each undirected edge may be listed once or in both
    directions (then with equal weights).  Edge length for the distance is
    ``1 / sqrt(w * scale)``.
    """
    nodes = list(nodes)
    n = len(nodes)
    index = {v: k for k, v in enumerate(nodes)}
    if len(index) != n:
        raise SpaceError("duplicate node identifiers")
    m = np.asarray(measure, dtype=float)
    if m.shape != (n,):
        raise SpaceError(f"measure has {m.size} entries for {n} nodes")
    if np.any(~np.isfinite(m)) or np.any(m <= 0):
        raise SpaceError("measure weights must be positive and finite")
    w = np.zeros((n, n))
    for e in edges:
        a, b, wt = e
        if a not in index or b not in index:
            raise SpaceError(f"edge {e!r} references an unknown node")
        i, j, wt = index[a], index[b], float(wt)
        if i == j:
            raise SpaceError(f"self-loop at node {a!r}")
        if not wt > 0:
            raise SpaceError(f"edge {e!r} has non-positive weight")
        for p, q in ((i, j), (j, i)):
            if w[p, q] and w[p, q] != wt:
                raise SpaceError(f"asymmetric weights on edge ({a!r}, {b!r})")
            w[p, q] = wt
    ncomp, _ = connected_components(csr_matrix(w), directed=False)
    if n == 0 or ncomp != 1:
        raise SpaceError(f"graph must be connected (found {ncomp} components)")
    lap = w / m[:, None]
    np.fill_diagonal(lap, -lap.sum(axis=1))
    with np.errstate(divide="ignore"):
        lengths = np.where(w > 0, 1.0 / np.sqrt(w * scale), 0.0)
    d = shortest_path(csr_matrix(lengths), directed=False)
    params = {"nodes": nodes, "edges": [[a, b, float(wt)] for a, b, wt in edges],
              "measure": m.tolist(), "scale": float(scale)}
    return MeasureSpace("graph", tuple(nodes), m, lap, d, params, curvature=curvature)


# ---------------------------------------------------------------------------
# serialization


def space_to_dict(space: MeasureSpace) -> dict[str, Any]:
    p = space.params
    if space.kind == "interval":
        return {"kind": "interval", "n": p["n"], "length": p["length"],
                "boundary": p["boundary"]}
    if space.kind == "grid2d":
        return {"kind": "grid2d", "shape": list(p["shape"]),
                "lengths": list(p["lengths"]), "boundary": p["boundary"]}
    out = {"kind": "graph", "nodes": list(p["nodes"]),
           "edges": [list(e) for e in p["edges"]], "measure": list(p["measure"])}
    if p.get("scale", 1.0) != 1.0:
        out["scale"] = p["scale"]
    return out


def space_from_dict(doc: dict[str, Any]) -> MeasureSpace:
    kind = doc.get("kind")
    if kind == "interval":
        return build_interval_grid(doc["n"], doc["length"], doc.get("boundary", "neumann"))
    if kind == "grid2d":
        return build_tensor_grid(doc["shape"], doc["lengths"], doc.get("boundary", "neumann"))
    if kind == "graph":
        return build_weighted_graph(doc["nodes"], [tuple(e) for e in doc["edges"]],
                                    doc["measure"], scale=doc.get("scale", 1.0))
    raise SpaceError(f"unknown space kind {kind!r}")


def save_space(space: MeasureSpace, path) -> None:
    Path(path).write_text(json.dumps(space_to_dict(space), indent=2) + "\n")


def load_space(path) -> MeasureSpace:
    return space_from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# calculus


def integrate(space: MeasureSpace, f) -> np.ndarray | float:
    """``int f dm`` over the last axis."""
    return space.check_field(f) @ space.measure


def inner(space: MeasureSpace, f, g):
    return integrate(space, np.asarray(f) * np.asarray(g))


def laplacian(space: MeasureSpace, f) -> np.ndarray:
    return space.check_field(f) @ space.generator.T


def gamma(space: MeasureSpace, f, g) -> np.ndarray:
    """Carré du champ ``Gamma(f, g) = (Delta(fg) - f Delta g - g Delta f) / 2``.

    Evaluated through the equivalent edge sum
    ``(1/2) sum_j Delta_ij (f_j - f_i)(g_j - g_i)``, which avoids the
    cancellation of the product form and keeps ``Gamma(f, f) >= 0``.
    """
    f = space.check_field(f)
    g = space.check_field(g)
    rows, cols, rate = space.edges()
    df = f[..., cols] - f[..., rows]
    dg = df if g is f else g[..., cols] - g[..., rows]
    return space.scatter_rows(0.5 * rate * df * dg)


def gamma2(space: MeasureSpace, f) -> np.ndarray:
    """Iterated carré du champ ``Delta Gamma(f, f) / 2 - Gamma(f, Delta f)``."""
    f = space.check_field(f)
    return 0.5 * laplacian(space, gamma(space, f, f)) - gamma(space, f, laplacian(space, f))


def hessian_form(space: MeasureSpace, h, phi) -> np.ndarray:
    """``Hess h(grad phi, grad phi)`` via the Gamma identity."""
    h = space.check_field(h)
    phi = space.check_field(phi)
    return gamma(space, phi, gamma(space, phi, h)) - 0.5 * gamma(space, h, gamma(space, phi, phi))


def _second_differences_1d(f, h, boundary, axis):
    f = np.moveaxis(f, axis, -1)
    if boundary == "periodic":
        up, down = np.roll(f, -1, axis=-1), np.roll(f, 1, axis=-1)
    else:
        up = np.concatenate([f[..., 1:], f[..., -2:-1]], axis=-1)
        down = np.concatenate([f[..., 1:2], f[..., :-1]], axis=-1)
    return np.moveaxis((up - 2 * f + down) / (h * h), -1, axis), \
        np.moveaxis(up, -1, axis), np.moveaxis(down, -1, axis)


def hessian_hs_norm_sq(space: MeasureSpace, f) -> np.ndarray:
    """Squared Frobenius norm of the finite-difference Hessian (grids only)."""
    if not space.is_grid:
        raise UnsupportedSpaceError(
            f"finite-difference Hessian needs a grid space, got {space.kind!r}")
    f = space.check_field(f)
    bc = space.boundary
    if space.kind == "interval":
        fxx, _, _ = _second_differences_1d(f, space.spacing, bc, -1)
        return fxx ** 2
    (n1, n2), (h1, h2) = space.params["shape"], space.spacing
    g = f.reshape(f.shape[:-1] + (n1, n2))
    fxx, xp, xm = _second_differences_1d(g, h1, bc, -2)
    fyy, _, _ = _second_differences_1d(g, h2, bc, -1)
    # mixed derivative: centred y-difference of the x-shifted fields
    _, xp_yp, xp_ym = _second_differences_1d(xp, h2, bc, -1)
    _, xm_yp, xm_ym = _second_differences_1d(xm, h2, bc, -1)
    fxy = (xp_yp - xp_ym - xm_yp + xm_ym) / (4 * h1 * h2)
    return (fxx ** 2 + 2 * fxy ** 2 + fyy ** 2).reshape(f.shape)


def generator_ratio(space: MeasureSpace, log_u) -> np.ndarray:
    """``(Delta u) / u`` for ``u = exp(log_u)`` without forming ``u``.

    Uses ``sum_j Delta_ij (exp(log u_j - log u_i) - 1)``; stays finite for
    fields whose dynamic range overflows doubles.
    """
    log_u = space.check_field(log_u)
    rows, cols, rate = space.edges()
    with np.errstate(invalid="ignore"):
        contrib = rate * np.expm1(log_u[..., cols] - log_u[..., rows])
    return space.scatter_rows(contrib)
