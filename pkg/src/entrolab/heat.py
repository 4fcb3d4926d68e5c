"""Heat semigroup ``h_t = exp(t Delta)`` and heat kernel on a MeasureSpace.

Two evaluation routes are provided:

* spectral: eigendecomposition of the generator, used for ``heat_flow`` and
  ``heat_kernel`` (exact semigroup, absolute accuracy ~1e-15);
* logarithmic: ``log r_t(x, y)`` with *relative* accuracy for every entry,
  needed when the Schrödinger potentials span hundreds of e-folds.  On grids
  it uses the closed form of the lattice kernel (modified Bessel functions
  summed over reflected/periodic images); on general graphs a
  positivity-preserving scaling-and-squaring of the uniformized generator.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import linalg
from scipy.special import ive

from .space import MeasureSpace


class HeatError(RuntimeError):
    """Eigensolver failure or invalid semigroup time."""


@dataclass(frozen=True, eq=False)
class HeatOperator:
    """Spectral data of ``Delta``: ``Delta e_k = -lambda_k e_k``.

    ``eigenvectors[:, k]`` is ``e_k``, orthonormal in ``L^2(m)``.
    """

    space: MeasureSpace
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def __post_init__(self):
        self.eigenvalues.setflags(write=False)
        self.eigenvectors.setflags(write=False)

    def log_kernel(self, t: float) -> np.ndarray:
        """``log r_t(x, y)``, entrywise accurate (``-inf`` where ``r_t = 0``)."""
        return log_heat_kernel(self.space, t)

    def write_spectrum_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "lambda"])
            for k, lam in enumerate(self.eigenvalues):
                w.writerow([k, repr(float(lam))])


def spectral_decompose(space: MeasureSpace) -> HeatOperator:
    """Diagonalize the generator through ``D Delta D^-1`` with ``D = diag(sqrt m)``."""
    sq = np.sqrt(space.measure)
    sym = sq[:, None] * space.generator / sq[None, :]
    sym = 0.5 * (sym + sym.T)
    try:
        evals, vecs = linalg.eigh(-sym)
    except linalg.LinAlgError as exc:
        cond = np.linalg.cond(sym)
        raise HeatError(f"eigensolver failed on n={space.n} generator "
                        f"(condition number {cond:.3e}): {exc}") from exc
    evals = np.clip(evals, 0.0, None)
    evals[0] = 0.0
    vecs = vecs / sq[:, None]
    # constant sign convention: e_0 > 0
    if vecs[:, 0].sum() < 0:
        vecs[:, 0] *= -1
    return HeatOperator(space, evals, vecs)


def _coefficients(H: HeatOperator, f):
    f = H.space.check_field(f)
    return (f * H.space.measure) @ H.eigenvectors


def heat_flow(H: HeatOperator, f, t: float) -> np.ndarray:
    """``h_t f = sum_k exp(-lambda_k t) <f, e_k>_m e_k``."""
    if t < 0:
        raise HeatError(f"heat flow time must be >= 0, got {t}")
    c = _coefficients(H, f) * np.exp(-H.eigenvalues * t)
    return c @ H.eigenvectors.T


def heat_kernel(H: HeatOperator, t: float) -> np.ndarray:
    """``r_t(x, y) = sum_k exp(-lambda_k t) e_k(x) e_k(y)`` (density w.r.t. ``m``)."""
    if not t > 0:
        raise HeatError(f"heat kernel time must be > 0, got {t}")
    # exp underflows to exactly 0 for large lambda_k t, which is intended
    decay = np.exp(-H.eigenvalues * t)
    r = (H.eigenvectors * decay) @ H.eigenvectors.T
    return 0.5 * (r + r.T)


# ---------------------------------------------------------------------------
# entrywise-accurate log kernels


def log_ive_orders(kmax: int, z: float) -> np.ndarray:
    """``log(I_k(z) exp(-z))`` for integer ``k = 0..kmax``.

    scipy's ``ive`` is used until it approaches underflow; beyond that the
    ratios ``I_{k+1}/I_k`` come from the (stable) backward recurrence
    ``r_{k-1} = 1 / (2k/z + r_k)``.
    """
    k = np.arange(kmax + 1)
    if z == 0:
        out = np.full(kmax + 1, -np.inf)
        out[0] = 0.0
        return out
    with np.errstate(divide="ignore"):
        out = np.log(ive(k, z))
    bad = ~np.isfinite(out) | (out < -600.0)
    if bad.any():
        kc = max(int(np.argmax(bad)) - 1, 0)
        top = kmax + 200
        nu = top + 1.0
        r = z / (nu + np.sqrt(nu * nu + z * z))
        ratios = np.empty(kmax - kc)
        for j in range(top - 1, kc - 1, -1):
            r = 1.0 / (2.0 * (j + 1) / z + r)
            if j < kmax:
                ratios[j - kc] = r
        out[kc + 1:] = out[kc] + np.cumsum(np.log(ratios))
    return out


@lru_cache(maxsize=64)
def _image_offsets(n: int, boundary: str, k: int, reflected: bool) -> np.ndarray:
    i = np.arange(n)
    period = n if boundary == "periodic" else 2 * (n - 1)
    base = i[:, None] + i[None, :] if reflected else i[:, None] - i[None, :]
    out = np.abs(base + k * period)
    out.setflags(write=False)
    return out


def _log_kernel_interval(n: int, h: float, boundary: str, t: float) -> np.ndarray:
    """Log density (w.r.t. the grid measure) of the 1D lattice heat kernel.

    The kernel of ``(f_{i+1} - 2 f_i + f_{i-1}) / h^2`` on Z is
    ``exp(-z) I_k(z) / h`` with ``z = 2t / h^2``; periodic and Neumann
    (node-reflecting, half-cell endpoints) grids follow by summing images.
    """
    z = 2.0 * t / (h * h)
    period = n if boundary == "periodic" else 2 * (n - 1)
    nimg = 2 + int(np.ceil(8.0 * np.sqrt(z) / period))
    kmax = (nimg + 1) * period + 2 * n
    lq = log_ive_orders(kmax, z) - np.log(h)
    # every entry has an image within distance n - 1; images whose closest
    # approach is e^-40 below that are invisible in double precision
    floor = lq[n - 1] - 40.0
    kinds = (False,) if boundary == "periodic" else (False, True)
    out = None
    for k in sorted(range(-nimg, nimg + 1), key=abs):
        for reflected in kinds:
            off = _image_offsets(n, boundary, k, reflected)
            closest = abs(k) * period - (2 * n - 2 if reflected or k else 0)
            if k and lq[max(closest, 0)] < floor:
                continue
            term = lq[off]
            out = term if out is None else np.logaddexp(out, term)
    return out


def _log_kernel_graph(space: MeasureSpace, t: float) -> np.ndarray:
    # exp(t Delta) = exp(-c t) exp(t A) with A = Delta + c I >= 0 entrywise;
    # series and squarings only add nonnegative numbers -> relative accuracy
    lap = space.generator
    c = float(np.max(-np.diag(lap)))
    A = np.clip(lap + c * np.eye(space.n), 0.0, None)
    squarings = max(0, int(np.ceil(np.log2(max(c * t, 1e-300) / 0.5))))
    tau = t / 2 ** squarings
    term = np.eye(space.n)
    S = np.eye(space.n)
    for k in range(1, 60):
        term = term @ (tau * A) / k
        S = S + term
        if term.max() < 1e-18 * S.max():
            break
    log_scale = -c * tau
    for _ in range(squarings):
        s = S.max()
        S = (S / s) @ (S / s)
        log_scale = 2 * (log_scale + np.log(s))
    with np.errstate(divide="ignore"):
        logP = np.log(S) + log_scale
    return logP - np.log(space.measure)[None, :]


def log_heat_kernel(space: MeasureSpace, t: float) -> np.ndarray:
    """``log r_t`` on any space; ``t = 0`` gives the (log) identity density."""
    if t < 0:
        raise HeatError(f"heat kernel time must be >= 0, got {t}")
    if t == 0:
        out = np.full((space.n, space.n), -np.inf)
        np.fill_diagonal(out, -np.log(space.measure))
        return out
    if space.kind == "interval":
        p = space.params
        return _log_kernel_interval(p["n"], p["spacing"], p["boundary"], t)
    if space.kind == "grid2d":
        (n1, n2), (h1, h2) = space.params["shape"], space.spacing
        bc = space.boundary
        l1 = _log_kernel_interval(n1, h1, bc, t)
        l2 = _log_kernel_interval(n2, h2, bc, t)
        return (l1[:, None, :, None] + l2[None, :, None, :]).reshape(space.n, space.n)
    return _log_kernel_graph(space, t)


def log_apply(space: MeasureSpace, log_kernel: np.ndarray, log_f) -> np.ndarray:
    """``log (h_t f)`` given ``log r_t`` and ``log f`` (``-inf`` allowed)."""
    log_f = np.asarray(log_f, dtype=float)
    w = log_f + np.log(space.measure)
    A = log_kernel + w[..., None, :]
    mx = np.max(A, axis=-1, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    with np.errstate(divide="ignore", under="ignore"):
        return np.log(np.sum(np.exp(A - mx), axis=-1)) + mx[..., 0]


def log_heat_flow(H: HeatOperator, log_f, t: float) -> np.ndarray:
    return log_apply(H.space, H.log_kernel(t), log_f)
