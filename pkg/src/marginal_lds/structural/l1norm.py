"""The l1-span norm: min over a of sum|a_s| + ||x - sum a_s x_s||_2.

This is the gauge of the absolute convex hull of the basis points together
with the unit ball. Its dual is

    max  w^T x   subject to  ||w||_2 <= 1,  |w^T x_s| <= 1 for every s,

so any w in the dual-feasible set certifies a lower bound and every
decomposition certifies an upper bound.

The solver is a restarted primal-dual hybrid gradient method run on a small
working set of basis columns that grows by column generation: after each
inner solve the full dual constraint set is checked and the most violated
columns are added. Columns are rescaled to unit length (which turns the
penalty into a weighted l1 norm) and the target is rescaled to unit length,
so the stopping tolerance is relative.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from ..errors import NoConvergence

TOL = 1e-6
MAX_ITER = 100_000
_CHECK_EVERY = 40
_RESTART_FACTOR = 0.2


@dataclass
class L1Decomposition:
    """x = sum_s coefficients[s] * basis[s] + residual."""

    coefficients: dict
    residual: np.ndarray
    value: float
    lower: float
    iterations: int
    converged: bool
    working_set: list = field(default_factory=list)

    @property
    def gap(self) -> float:
        return max(self.value - self.lower, 0.0)

    @property
    def coef_l1(self) -> float:
        return math.fsum(abs(v) for v in self.coefficients.values())

    @property
    def coef_l2(self) -> float:
        return math.sqrt(math.fsum(v * v for v in self.coefficients.values()))

    @property
    def residual_norm(self) -> float:
        return float(np.linalg.norm(self.residual))

    def reconstruct(self, basis) -> np.ndarray:
        out = self.residual.astype(float).copy()
        for s, a in self.coefficients.items():
            out += a * np.asarray(basis[s], dtype=float)
        return out


@njit(cache=True)
def _objective(U, lam, xh, b):
    d, k = U.shape
    r = xh.copy()
    pen = 0.0
    for j in range(k):
        if b[j] != 0.0:
            pen += lam[j] * abs(b[j])
            for i in range(d):
                r[i] -= U[i, j] * b[j]
    return pen + math.sqrt(np.sum(r * r)), r


@njit(cache=True)
def _dual_value(U, lam, xh, w):
    """Value of the scaled-feasible dual point built from w (and from the ball)."""
    nw = math.sqrt(np.sum(w * w))
    if nw == 0.0:
        return 0.0
    worst = nw
    g = U.T @ w
    for j in range(g.size):
        v = abs(g[j]) / lam[j]
        if v > worst:
            worst = v
    if worst < 1.0:
        worst = 1.0
    return np.dot(w, xh) / worst


@njit(cache=True)
def _pdhg(U, lam, xh, b, w, tau, sigma, tol, max_iter, check_every, restart_factor):
    d, k = U.shape
    b = b.copy()
    w = w.copy()
    bsum = np.zeros(k)
    wsum = np.zeros(d)
    navg = 0
    p0, r0 = _objective(U, lam, xh, b)
    gap_restart = p0 - max(_dual_value(U, lam, xh, w), _dual_value(U, lam, xh, r0))
    best_gap = gap_restart
    it = 0
    while it < max_iter:
        for _ in range(check_every):
            # primal step: weighted soft threshold
            g = U.T @ w
            bn = b + tau * g
            for j in range(k):
                t = tau * lam[j]
                if bn[j] > t:
                    bn[j] -= t
                elif bn[j] < -t:
                    bn[j] += t
                else:
                    bn[j] = 0.0
            bbar = 2.0 * bn - b
            b = bn
            # dual step: projection onto the unit ball
            wn = w + sigma * (xh - U @ bbar)
            nw = math.sqrt(np.sum(wn * wn))
            if nw > 1.0:
                wn /= nw
            w = wn
            bsum += b
            wsum += w
            navg += 1
            it += 1
        pc, rc = _objective(U, lam, xh, b)
        gc = pc - max(_dual_value(U, lam, xh, w), _dual_value(U, lam, xh, rc))
        ba = bsum / navg
        wa = wsum / navg
        pa, ra = _objective(U, lam, xh, ba)
        ga = pa - max(_dual_value(U, lam, xh, wa), _dual_value(U, lam, xh, ra))
        if ga < gc:
            cand_b, cand_w, cand_g = ba, wa, ga
        else:
            cand_b, cand_w, cand_g = b, w, gc
        if cand_g < best_gap:
            best_gap = cand_g
        if cand_g <= tol:
            return cand_b, cand_w, it, cand_g
        if cand_g <= restart_factor * gap_restart:
            b = cand_b.copy()
            w = cand_w.copy()
            bsum[:] = 0.0
            wsum[:] = 0.0
            navg = 0
            gap_restart = cand_g
    return b, w, it, best_gap


def _spectral_bound(U: np.ndarray) -> float:
    # ||U||_2 <= ||U||_F; the Gram eigenvalue is cheap at these sizes
    g = U.T @ U if U.shape[1] <= U.shape[0] else U @ U.T
    return math.sqrt(max(float(np.max(np.linalg.eigvalsh(g))), 1e-300))


def _residual_dual(r: np.ndarray) -> np.ndarray:
    nr = np.linalg.norm(r)
    return r / nr if nr > 0 else r


def _certify(X: np.ndarray, x: np.ndarray, w: np.ndarray) -> float:
    """Lower bound w'^T x from w scaled into the dual-feasible set."""
    nw = float(np.linalg.norm(w))
    if nw == 0.0:
        return 0.0
    worst = max(nw, float(np.max(np.abs(X.T @ w))) if X.shape[1] else 0.0, 1.0)
    return float(w @ x) / worst


def l1_span_norm(
    x,
    basis,
    tol: float = TOL,
    max_iter: int = MAX_ITER,
    threshold: float | None = None,
    strict: bool = False,
) -> L1Decomposition:
    """Decompose ``x`` over ``basis`` minimizing sum|a_s| + ||v||_2.

    ``tol`` bounds the certified gap relative to ||x||. With ``threshold`` set
    the solve stops as soon as the value is certified to be on one side of it
    (used for membership tests). Non-convergence is reported through
    ``converged``; ``strict=True`` raises :class:`NoConvergence` instead.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    d = x.size
    X = np.asarray(basis, dtype=float).reshape(-1, d).T if len(basis) else np.zeros((d, 0))
    scale = float(np.linalg.norm(x))
    if scale == 0.0:
        return L1Decomposition({}, np.zeros(d), 0.0, 0.0, 0, True)
    norms = np.linalg.norm(X, axis=0)
    live = np.flatnonzero(norms > 0.0)
    if live.size == 0:
        return L1Decomposition({}, x.copy(), scale, scale, 0, True)

    xh = x / scale
    Ul = X[:, live] / norms[live]
    laml = 1.0 / norms[live]
    Xl = X[:, live]

    # initial working set: the columns most aligned with x
    batch = max(2 * d, 4)
    score = np.abs(xh @ Xl)
    order = np.argsort(-score, kind="stable")
    ws = [int(j) for j in order[: min(batch, live.size)]]
    b = np.zeros(len(ws))
    w = xh.copy()
    used = 0
    thr = None if threshold is None else threshold / scale
    converged = False
    chunk = 2 * _CHECK_EVERY
    a_ws, primal, dual = np.zeros(len(ws)), 1.0, 0.0

    while True:
        U = np.ascontiguousarray(Ul[:, ws])
        lam = laml[ws]
        step = 0.95 / _spectral_bound(U)
        budget = min(max(max_iter - used, _CHECK_EVERY), chunk)
        b, w, iters, _ = _pdhg(U, lam, xh, b, w, step, step, tol * 0.25, budget, _CHECK_EVERY, _RESTART_FACTOR)
        used += iters
        chunk = min(2 * chunk, 4000)
        r = xh - U @ b
        a_ws = b * lam
        primal = float(np.sum(np.abs(a_ws)) + np.linalg.norm(r))
        dual = max(_certify(Xl, xh, w), _certify(Xl, xh, _residual_dual(r)))
        if primal - dual > tol:
            pol = _polish(Xl, xh, ws, a_ws, (w, _residual_dual(r)))
            if pol is not None and pol[2] - pol[3] < primal - dual:
                cols, a, primal, dual = pol
                for j in cols:
                    if j not in ws:
                        ws.append(j)
                        b = np.concatenate([b, [0.0]])
                pos = {j: i for i, j in enumerate(ws)}
                a_ws = np.zeros(len(ws))
                for j, v in zip(cols, a):
                    a_ws[pos[j]] = v
        if primal - dual <= tol:
            converged = True
            break
        if thr is not None and (primal <= thr or dual > thr):
            converged = True
            break
        if used >= max_iter:
            break
        # column generation: add the most violated dual constraints
        cand_w = w / max(1.0, float(np.linalg.norm(w)))
        viol = np.maximum(np.abs(cand_w @ Xl), np.abs(_residual_dual(r) @ Xl))
        viol[ws] = -np.inf
        new = [int(j) for j in np.argsort(-viol, kind="stable")[:batch] if viol[j] > 1.0]
        if new:
            ws.extend(new)
            b = np.concatenate([b, np.zeros(len(new))])

    coefs = {}
    recon = np.zeros(d)
    for j, a in zip(ws, a_ws):
        if a != 0.0:
            s = int(live[j])
            coefs[s] = float(scale * a)
            recon += coefs[s] * X[:, s]
    v = x - recon
    value = math.fsum(abs(a) for a in coefs.values()) + float(np.linalg.norm(v))
    lower = min(scale * dual, value)
    if not converged and strict:
        raise NoConvergence(f"l1-span solve stopped with gap {value - lower:.3e}")
    return L1Decomposition(coefs, v, value, lower, used, converged, [int(live[j]) for j in ws])


def _active_set_candidate(XS: np.ndarray, signs: np.ndarray, xh: np.ndarray):
    """Exact optimum assuming the dual constraints on XS are tight with the
    given signs. Returns (w, a, nu) or None when the assumption is infeasible."""
    d, k = XS.shape
    G = XS.T @ XS
    try:
        Gi_s = np.linalg.solve(G, signs)
        Gi_x = np.linalg.solve(G, XS.T @ xh)
    except np.linalg.LinAlgError:
        return None
    w0 = XS @ Gi_s
    n0 = float(w0 @ w0)
    if n0 > 1.0 + 1e-12:
        return None
    px = xh - XS @ Gi_x
    npx = float(np.linalg.norm(px))
    if k == d or npx <= 1e-14:
        # x lies in the span: no residual
        a = Gi_x
        if npx > 1e-12:
            return None
        return w0, a, 0.0
    w = w0 + math.sqrt(max(1.0 - n0, 0.0)) * px / npx
    # x = XS a + nu w with nu >= 0
    M = np.column_stack([XS, w])
    sol, *_ = np.linalg.lstsq(M, xh, rcond=None)
    return w, sol[:k], float(sol[k])


def _polish(Xl, xh, ws, a_ws, duals, max_subsets: int = 400):
    """Try to jump to the exact optimum by guessing the tight dual constraints.

    Candidate constraints come from the support of the current iterate and
    from the constraints closest to tight under the current dual estimates.
    Every guess is certified by a primal/dual pair, so a wrong guess costs
    time but never accuracy.
    """
    d = Xl.shape[0]
    pool, signs = [], {}
    mags = np.abs(a_ws)
    if np.any(mags > 0):
        for i in np.argsort(-mags, kind="stable")[: d + 1]:
            if mags[i] > 1e-9 * mags.max():
                j = int(ws[i])
                pool.append(j)
                signs[j] = float(np.sign(a_ws[i]))
    for w in duals:
        nw = float(np.linalg.norm(w))
        if nw == 0.0:
            continue
        proj = Xl.T @ w
        for j in np.argsort(-np.abs(proj), kind="stable")[: d + 2]:
            j = int(j)
            if j not in signs:
                pool.append(j)
                signs[j] = float(np.sign(proj[j])) or 1.0
    best = None
    tried = 0
    for k in range(0, d + 1):
        for combo in itertools.combinations(pool, k):
            tried += 1
            if tried > max_subsets:
                return best
            cols = list(combo)
            sg = np.array([signs[j] for j in cols])
            if k == 0:
                w, a, nu = xh.copy(), np.zeros(0), 1.0
            else:
                cand = _active_set_candidate(Xl[:, cols], sg, xh)
                if cand is None:
                    continue
                w, a, nu = cand
            if nu < -1e-12 or np.any(a * sg < -1e-12):
                continue
            dual = _certify(Xl, xh, w)
            r = xh - Xl[:, cols] @ a if k else xh
            primal = float(np.sum(np.abs(a)) + np.linalg.norm(r))
            if best is None or primal - dual < best[2] - best[3]:
                best = (cols, a, primal, dual)
            if primal - dual <= 1e-13:
                return best
    return best


def l1_norm_value_batch(points, basis, tol: float = TOL) -> np.ndarray:
    return np.array([l1_span_norm(p, basis, tol=tol).value for p in points])


@dataclass
class OutlierSet:
    indices: list
    threshold: float
    norms: np.ndarray
    lower: np.ndarray
    decompositions: list

    @property
    def size(self) -> int:
        return len(self.indices)


def outlier_threshold(d: int) -> float:
    return 2.0 / math.log(2.0) * d


def outlier_indices(states, tol: float = TOL, keep_decompositions: bool = True) -> OutlierSet:
    """Indices s whose state has l1-span norm over its past at least (2/ln 2) d.

    Index 0 is measured against the unit ball alone, so its norm is ||x_0||.
    Membership uses the solver's upper value, which can only overcount.
    """
    states = np.asarray(states, dtype=float)
    T1, d = states.shape
    thr = outlier_threshold(d)
    vals = np.empty(T1)
    lows = np.empty(T1)
    decs = []
    for s in range(T1):
        dec = l1_span_norm(states[s], states[:s], tol=tol)
        vals[s] = dec.value
        lows[s] = dec.lower
        decs.append(dec if keep_decompositions else None)
    idx = [int(s) for s in np.flatnonzero(vals >= thr)]
    return OutlierSet(idx, thr, vals, lows, decs)


def outlier_count_bound(states) -> float:
    """d log2(max_t ||x_t||)."""
    states = np.asarray(states, dtype=float)
    M = float(np.max(np.linalg.norm(states, axis=1)))
    return states.shape[1] * math.log2(M) if M > 0 else -math.inf


@dataclass
class WitnessCheck:
    holds: bool
    index: int
    projection: float
    required: float


def exists_large_witness(states, dec: L1Decomposition, w, target=None) -> WitnessCheck:
    """Search the past for s with |w^T x_s| >= (|w^T x_T| - ||v||) / sum|a_s|."""
    states = np.asarray(states, dtype=float)
    w = np.asarray(w, dtype=float).reshape(-1)
    xT = states[-1] if target is None else np.asarray(target, dtype=float)
    past = states[:-1] if target is None else states
    num = abs(float(w @ xT)) - dec.residual_norm * float(np.linalg.norm(w))
    l1 = dec.coef_l1
    if num <= 0.0:
        return WitnessCheck(True, -1, 0.0, 0.0)
    if l1 == 0.0:
        return WitnessCheck(False, -1, 0.0, math.inf)
    required = num / l1
    proj = np.abs(past @ w) if past.shape[0] else np.zeros(0)
    if proj.size == 0:
        return WitnessCheck(False, -1, 0.0, required)
    s = int(np.argmax(proj))
    return WitnessCheck(bool(proj[s] >= required * (1 - 1e-12)), s, float(proj[s]), required)
