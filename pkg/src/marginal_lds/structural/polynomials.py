"""Characteristic polynomials, Cayley-Hamilton recurrences, matrix power
bounds, and small-coefficient polynomial multiples.

Coefficient vectors are in ascending order: ``p[i]`` multiplies z**i.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import NonMonicDivisor, NotFound, Overflow
from ..systems import JordanSpec, make_rng

STREAM_POLY_SEARCH = 8
_OVERFLOW = 1e300


@dataclass
class CharPoly:
    coefficients: np.ndarray
    abs_sum: float
    jordan_mismatch: float | None = None


def faddeev_leverrier(A) -> np.ndarray:
    """Monic characteristic polynomial det(zI - A), ascending coefficients."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    c = np.zeros(n + 1)
    c[n] = 1.0
    M = np.zeros_like(A)
    eye = np.eye(n)
    for k in range(1, n + 1):
        M = A @ M + c[n - k + 1] * eye
        c[n - k] = -np.trace(A @ M) / k
    return c


def poly_multiply(p, q) -> np.ndarray:
    p = np.asarray(p)
    q = np.asarray(q)
    out = np.zeros(len(p) + len(q) - 1, dtype=np.result_type(p, q))
    for i, a in enumerate(p):
        out[i : i + len(q)] += a * q
    return out


def jordan_char_poly(spec: JordanSpec) -> np.ndarray:
    """Product of the block factors (z - lambda)^size, real pairs combined."""
    out = np.array([1.0])
    for b in spec.blocks:
        lam = b.eigenvalue
        if b.is_real:
            factor = np.array([-lam.real, 1.0])
        else:
            factor = np.array([abs(lam) ** 2, -2.0 * lam.real, 1.0])
        for _ in range(b.size):
            out = poly_multiply(out, factor)
    return out


def char_poly(A, jordan: JordanSpec | None = None) -> CharPoly:
    coef = faddeev_leverrier(A)
    mismatch = None
    if jordan is not None:
        ref = jordan_char_poly(jordan)
        if ref.shape != coef.shape:
            mismatch = math.inf
        else:
            mismatch = float(np.max(np.abs(ref - coef)))
    return CharPoly(coef, float(np.sum(np.abs(coef))), mismatch)


def ch_recurrence_residual(states, coefficients) -> np.ndarray:
    """||x_t + sum_{i<d} a_i x_{t-d+i}|| for t = d..T (entry t-d)."""
    x = np.asarray(states, dtype=float)
    a = np.asarray(coefficients, dtype=float)
    d = len(a) - 1
    if abs(a[d] - 1.0) > 1e-12:
        raise NonMonicDivisor("recurrence needs a monic polynomial")
    T1 = x.shape[0]
    if T1 <= d:
        return np.zeros(0)
    acc = x[d:].copy()
    for i in range(d):
        acc += a[i] * x[i : T1 - d + i]
    return np.linalg.norm(acc, axis=1)


def ch_noise_bound(d: int, C_A: float, C_xi: float) -> float:
    return d * 2.0**d * C_A * C_xi


@dataclass
class PowerCheck:
    worst_ratio: float
    worst_k: int
    worst_sum_ratio: float
    norms: np.ndarray


def jordan_power_check(A, r: int, C_A: float, k_max: int = 10_000) -> PowerCheck:
    """max_k ||A^k|| / ((k+1)^(r-1) C_A) and the partial-sum analogue
    sum_{s<=k} ||A^s|| / ((k+1)^r C_A), for k = 0..k_max."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    powers = np.empty((k_max + 1, n, n))
    P = np.eye(n)
    for k in range(k_max + 1):
        powers[k] = P
        P = P @ A
        if not np.all(np.isfinite(P)) or np.max(np.abs(P)) > _OVERFLOW:
            raise Overflow("matrix power exceeded 1e300")
    norms = np.linalg.norm(powers, ord=2, axis=(1, 2))
    ks = np.arange(k_max + 1, dtype=float)
    ratios = norms / ((ks + 1.0) ** (r - 1) * C_A)
    sums = np.cumsum(norms) / ((ks + 1.0) ** r * C_A)
    k = int(np.argmax(ratios))
    return PowerCheck(float(ratios[k]), k, float(np.max(sums)), norms)


def primorial(x: int) -> tuple[int, float]:
    """Product of primes <= x and ln(product) / (x ln x)."""
    x = int(x)
    if not 2 <= x <= 10_000:
        raise ValueError("primorial expects 2 <= x <= 10000")
    sieve = np.ones(x + 1, dtype=bool)
    sieve[:2] = False
    for p in range(2, int(math.isqrt(x)) + 1):
        if sieve[p]:
            sieve[p * p :: p] = False
    prod = 1
    logsum = 0.0
    for p in np.flatnonzero(sieve):
        prod *= int(p)
        logsum += math.log(int(p))
    return prod, logsum / (x * math.log(x))


def poly_mod(P, Q) -> np.ndarray:
    """Remainder of P divided by monic Q (ascending coefficients, length deg Q)."""
    P = np.array(P, dtype=np.result_type(np.asarray(P), np.asarray(Q), float))
    Q = np.asarray(Q)
    k = len(Q) - 1
    if k < 0 or Q[k] != 1:
        raise NonMonicDivisor("divisor must be monic")
    if len(P) > 65:
        raise ValueError("poly_mod supports degree <= 64")
    if k == 0:
        return np.zeros(0, dtype=P.dtype)
    r = P.copy()
    for i in range(len(r) - 1, k - 1, -1):
        lead = r[i]
        if lead != 0:
            r[i - k : i + 1] -= lead * Q
        r[i] = 0
    out = np.zeros(k, dtype=r.dtype)
    m = min(k, len(r))
    out[:m] = r[:m]
    return out


def roots_to_poly(roots) -> np.ndarray:
    out = np.array([1.0 + 0j])
    for z in roots:
        out = poly_multiply(out, np.array([-complex(z), 1.0]))
    if np.all(np.abs(out.imag) < 1e-14):
        return out.real.copy()
    return out


def is_small_multiple(P, roots, bound: float = 11.0, tol: float = 1e-9) -> bool:
    P = np.asarray(P, dtype=float)
    if P[-1] != 1.0 or np.any(np.abs(P) > bound):
        return False
    res = poly_mod(P, roots_to_poly(roots))
    return bool(np.all(np.abs(res) <= tol))


@dataclass
class SmallMultiple:
    coefficients: np.ndarray
    raw: np.ndarray
    residue: float
    candidates: int


def small_multiple_search(roots, max_degree: int, seed: int = 0, max_candidates: int = 1_000_000, tol: float = 1e-9) -> SmallMultiple:
    """Seeded random search for integer P* with coefficients in [-10, 10]
    whose residue modulo prod(z - z_i) vanishes, returned as the monic
    multiple (P* - r) / leading."""
    roots = [complex(z) for z in roots]
    k = len(roots)
    if k < 1 or k > 2:
        raise ValueError("small_multiple_search handles 1 or 2 roots")
    if any(abs(z) > 1 + 1e-12 for z in roots):
        raise ValueError("roots must lie in the closed unit disk")
    if not k <= max_degree <= 8:
        raise ValueError("max_degree must be between the root count and 8")
    Q = roots_to_poly(roots)
    rng = make_rng(seed, STREAM_POLY_SEARCH)
    degrees = list(range(k, max_degree + 1))
    # residues of the monomials z^j, so the residue of a batch is one product
    mono = np.array([poly_mod(np.eye(max_degree + 1)[j], Q) for j in range(max_degree + 1)])
    best = (math.inf, None)
    tried = 0
    batch = 4096
    while tried < max_candidates:
        n = min(batch, max_candidates - tried)
        deg = np.array(degrees)[rng.integers(0, len(degrees), size=n)]
        cand = rng.integers(-10, 11, size=(n, max_degree + 1))
        cand[np.arange(max_degree + 1)[None, :] > deg[:, None]] = 0
        lead = cand[np.arange(n), deg]
        cand[lead == 0, deg[lead == 0]] = 1
        res = np.max(np.abs(cand @ mono), axis=1)
        tried += n
        j = int(np.argmin(res))
        if res[j] < best[0]:
            best = (float(res[j]), cand[j].copy())
        hits = np.flatnonzero(res <= tol)
        if hits.size:
            i = int(hits[0])
            raw = cand[i, : deg[i] + 1].astype(float)
            r = np.zeros_like(raw, dtype=complex if np.iscomplexobj(mono) else float)
            r[:k] = cand[i] @ mono
            monic = ((raw - r) / raw[-1]).real if np.iscomplexobj(r) else (raw - r) / raw[-1]
            return SmallMultiple(monic, raw, float(res[i]), tried - n + i + 1)
    raise NotFound(f"no multiple found in {tried} candidates", best_residue=best[0], best_candidate=best[1])
