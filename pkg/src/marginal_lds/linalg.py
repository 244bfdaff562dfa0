"""Small dense linear algebra on numpy arrays.

Everything here is written for the desk-scale dimensions the rest of the
package works at (d <= 32). Storage and BLAS-level products come from numpy;
the factorizations and iterative routines are implemented here so their
failure modes (pivot floors, iteration caps, overflow signalling) are under
our control.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DimensionMismatch, NotSpd, NotSymmetric, Overflow

__all__ = [
    "cholesky",
    "solve_spd",
    "spd_inverse",
    "rank_one_inverse_update",
    "operator_norm",
    "sym_eig",
    "spectral_radius_estimate",
    "condition_number",
]

_OVERFLOW_LOG = math.log(1e300)


def _as_square(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {m.shape}")
    return m


def _check_symmetric(m: np.ndarray, rel_tol: float, exc=NotSymmetric) -> None:
    scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
    if m.size and float(np.max(np.abs(m - m.T))) > rel_tol * scale:
        raise exc("matrix is not symmetric within tolerance")


def cholesky(m) -> np.ndarray:
    """Lower-triangular L with m = L L^T.

    Raises NotSpd when a pivot drops to or below 1e-14 * trace(m) / rows.
    """
    m = _as_square(m)
    _check_symmetric(m, 1e-12, NotSpd)
    n = m.shape[0]
    floor = 1e-14 * float(np.trace(m)) / max(n, 1)
    L = np.zeros_like(m)
    for j in range(n):
        pivot = m[j, j] - L[j, :j] @ L[j, :j]
        if not pivot > floor or not math.isfinite(pivot):
            raise NotSpd(f"Cholesky pivot {pivot:.3e} at column {j} below floor {floor:.3e}")
        L[j, j] = math.sqrt(pivot)
        if j + 1 < n:
            L[j + 1 :, j] = (m[j + 1 :, j] - L[j + 1 :, :j] @ L[j, :j]) / L[j, j]
    return L


def _forward(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    y = np.array(b, dtype=float, copy=True)
    for i in range(L.shape[0]):
        y[i] = (y[i] - L[i, :i] @ y[:i]) / L[i, i]
    return y


def _backward(L: np.ndarray, y: np.ndarray) -> np.ndarray:
    # solves L^T x = y
    x = np.array(y, dtype=float, copy=True)
    n = L.shape[0]
    for i in range(n - 1, -1, -1):
        x[i] = (x[i] - L[i + 1 :, i] @ x[i + 1 :]) / L[i, i]
    return x


def solve_spd(m, b) -> np.ndarray:
    """Solve m x = b for symmetric positive definite m by Cholesky.

    ``b`` may be a vector or a matrix of right-hand sides (one per column).
    """
    m = _as_square(m)
    b = np.asarray(b, dtype=float)
    if b.shape[0] != m.shape[0]:
        raise DimensionMismatch(f"rhs has {b.shape[0]} rows, matrix has {m.shape[0]}")
    L = cholesky(m)
    return _backward(L, _forward(L, b))


def spd_inverse(m) -> np.ndarray:
    m = _as_square(m)
    inv = solve_spd(m, np.eye(m.shape[0]))
    return 0.5 * (inv + inv.T)


def rank_one_inverse_update(p, x) -> np.ndarray:
    """Sherman-Morrison: given p = inv(S), return inv(S + x x^T)."""
    p = np.asarray(p, dtype=float)
    x = np.asarray(x, dtype=float).reshape(-1)
    if p.shape != (x.size, x.size):
        raise DimensionMismatch(f"inverse is {p.shape}, vector has length {x.size}")
    if not np.any(x):
        return p.copy()
    px = p @ x
    denom = 1.0 + float(x @ px)
    out = p - np.outer(px, px) / denom
    return 0.5 * (out + out.T)


def operator_norm(m, max_iter: int = 10_000) -> float:
    """Spectral norm by power iteration on m^T m.

    The start vector is the column of m^T m with the largest norm, which is
    deterministic and never orthogonal to the dominant eigenvector of a
    nonzero Gram matrix.
    """
    m = np.asarray(m)
    if not np.iscomplexobj(m):
        m = m.astype(float, copy=False)
    if m.ndim == 1:
        return float(np.sqrt(np.vdot(m, m).real))
    if m.size == 0:
        return 0.0
    g = m.conj().T @ m
    cols = np.sqrt(np.sum(np.abs(g) ** 2, axis=0))
    j = int(np.argmax(cols))
    if cols[j] == 0.0:
        return 0.0
    v = g[:, j] / cols[j]
    lam = float(np.vdot(v, g @ v).real)
    for _ in range(max_iter):
        w = g @ v
        nw = math.sqrt(float(np.vdot(w, w).real))
        if nw == 0.0:
            break
        v = w / nw
        new = float(np.vdot(v, g @ v).real)
        if abs(new - lam) <= 1e-15 * abs(new):
            lam = new
            break
        lam = new
    return math.sqrt(max(lam, 0.0))


def condition_number(m) -> float:
    """||m||_2 ||m^-1||_2 for a square invertible m."""
    m = _as_square(m)
    return operator_norm(m) * operator_norm(np.linalg.inv(m))


def sym_eig(m, tol: float = 1e-15, max_sweeps: int = 100):
    """Cyclic Jacobi eigendecomposition of a symmetric matrix.

    Returns ``(eigenvalues, V)`` with eigenvalues in descending order and the
    corresponding orthonormal eigenvectors as columns of V.
    """
    m = _as_square(m)
    _check_symmetric(m, 1e-10)
    a = 0.5 * (m + m.T)
    n = a.shape[0]
    v = np.eye(n)
    scale = float(np.sum(a * a))
    for _ in range(max_sweeps):
        off = float(np.sum((a - np.diag(np.diag(a))) ** 2))
        if off <= tol * tol * max(scale, 1e-300):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                rp = a[p, :].copy()
                rq = a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    lam = np.diag(a).copy()
    order = np.argsort(-lam, kind="stable")
    return lam[order], v[:, order]


def spectral_radius_estimate(m, k: int = 256) -> float:
    """Estimate rho(m) as ||m^k||_2^(1/k).

    The power is formed by binary exponentiation with the running product kept
    normalized and its log-scale tracked separately, so only the *virtual*
    norm can overflow; that is reported as :class:`Overflow`.
    """
    if k < 64:
        raise ValueError("spectral_radius_estimate needs k >= 64")
    m = _as_square(m)
    n = m.shape[0]

    def normalized(x, logscale):
        s = float(np.max(np.abs(x)))
        if s == 0.0:
            return x, -math.inf
        return x / s, logscale + math.log(s)

    base, base_log = normalized(m.copy(), 0.0)
    acc, acc_log = np.eye(n), 0.0
    e = k
    while e:
        if e & 1:
            acc, acc_log = normalized(acc @ base, acc_log + base_log)
            if acc_log == -math.inf:
                return 0.0
        e >>= 1
        if e:
            base, base_log = normalized(base @ base, 2.0 * base_log)
            if base_log == -math.inf:
                return 0.0
        if max(acc_log, base_log if e else -math.inf) > _OVERFLOW_LOG:
            raise Overflow("matrix power norm exceeded 1e300")
    total_log = acc_log + math.log(operator_norm(acc))
    if total_log > _OVERFLOW_LOG:
        raise Overflow("matrix power norm exceeded 1e300")
    return math.exp(total_log / k)
