"""Steady-state Kalman filter in one-step predictor form.

Predictor-form convention::

    x-_t  = A_KF x-_{t-1} + B_KF_u u_{t-1} + B_KF_y y_{t-1}
    yhat_t = C_KF x-_t

with K = P C^T (C P C^T + Sigma_y)^-1, A_KF = A (I - K C), B_KF_y = A K,
B_KF_u = B and C_KF = C, where P solves the discrete algebraic Riccati
equation for the predictive covariance.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import NoConvergence, NotControllable, NotObservable, NotSpd, UnstableFilter
from .linalg import cholesky, operator_norm, solve_spd, spectral_radius_estimate, sym_eig

RHO_POWER = 1 << 16


@dataclass
class KalmanSteadyState:
    P: np.ndarray
    K: np.ndarray
    A_kf: np.ndarray
    B_kf_u: np.ndarray
    B_kf_y: np.ndarray
    C_kf: np.ndarray
    innovation_cov: np.ndarray
    iterations: int = 0
    riccati_residual: float = 0.0

    @property
    def B_kf(self) -> np.ndarray:
        return np.hstack([self.B_kf_u, self.B_kf_y])

    def spectral_radius(self, k: int = RHO_POWER) -> float:
        return spectral_radius_estimate(self.A_kf, k)

    def to_dict(self) -> dict:
        out = {}
        for name in ("P", "K", "A_kf", "B_kf_u", "B_kf_y", "C_kf", "innovation_cov"):
            m = np.asarray(getattr(self, name))
            out[name] = {"shape": list(m.shape), "data": [float(v).hex() for v in m.ravel()]}
        out["iterations"] = self.iterations
        out["riccati_residual"] = self.riccati_residual
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "KalmanSteadyState":
        kw = {}
        for name in ("P", "K", "A_kf", "B_kf_u", "B_kf_y", "C_kf", "innovation_cov"):
            kw[name] = np.array([float.fromhex(v) for v in d[name]["data"]]).reshape(d[name]["shape"])
        return cls(**kw, iterations=int(d.get("iterations", 0)), riccati_residual=float(d.get("riccati_residual", 0.0)))


def _psd_sqrt(m):
    lam, V = sym_eig(m)
    return (V * np.sqrt(np.clip(lam, 0.0, None))) @ V.T


def _rank(m, rel_tol=1e-10) -> int:
    if m.size == 0:
        return 0
    lam, _ = sym_eig(m @ m.T if m.shape[0] <= m.shape[1] else m.T @ m)
    lam = np.clip(lam, 0.0, None)
    if lam[0] == 0.0:
        return 0
    return int(np.sum(lam > rel_tol * lam[0]))


def observability_matrix(A, C) -> np.ndarray:
    d = A.shape[0]
    blocks = [C]
    for _ in range(d - 1):
        blocks.append(blocks[-1] @ A)
    return np.vstack(blocks)


def controllability_matrix(A, G) -> np.ndarray:
    d = A.shape[0]
    blocks = [G]
    for _ in range(d - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks)


def _riccati_map(A, C, sigma_x, sigma_y, P):
    APC = A @ P @ C.T
    S = C @ P @ C.T + sigma_y
    nxt = A @ P @ A.T - APC @ solve_spd(S, APC.T) + sigma_x
    return 0.5 * (nxt + nxt.T)


def solve_dare(A, C, sigma_x, sigma_y, B=None, tol: float = 1e-12, max_iter: int = 1_000_000) -> KalmanSteadyState:
    """Steady-state predictive covariance by fixed-point Riccati iteration."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    sigma_x = np.atleast_2d(np.asarray(sigma_x, dtype=float))
    sigma_y = np.atleast_2d(np.asarray(sigma_y, dtype=float))
    d = A.shape[0]
    B = np.zeros((d, 0)) if B is None else np.asarray(B, dtype=float).reshape(d, -1)

    if _rank(observability_matrix(A, C)) < d:
        raise NotObservable("(A, C) is not observable")
    if _rank(controllability_matrix(A, _psd_sqrt(sigma_x))) < d:
        raise NotControllable("(A, Sigma_x^1/2) is not controllable")
    try:
        cholesky(sigma_y)
    except NotSpd as exc:
        raise NotSpd("observation noise covariance must be positive definite") from exc

    P = sigma_x.copy()
    for it in range(1, max_iter + 1):
        nxt = _riccati_map(A, C, sigma_x, sigma_y, P)
        step = float(np.max(np.abs(nxt - P)))
        P = nxt
        if step <= tol * max(float(np.max(np.abs(P))), 1e-300):
            break
    else:
        raise NoConvergence(f"Riccati iteration did not converge in {max_iter} steps")

    S = C @ P @ C.T + sigma_y
    K = solve_spd(S, C @ P).T
    residual = float(np.max(np.abs(_riccati_map(A, C, sigma_x, sigma_y, P) - P)))
    return KalmanSteadyState(
        P=P,
        K=K,
        A_kf=A @ (np.eye(d) - K @ C),
        B_kf_u=B.copy(),
        B_kf_y=A @ K,
        C_kf=C.copy(),
        innovation_cov=S,
        iterations=it,
        riccati_residual=residual,
    )


def steady_state_predict(kf: KalmanSteadyState, trajectory, x0_mean=None) -> np.ndarray:
    """Predictions yhat_t for t = 0..T; row t uses y_0..y_{t-1} only."""
    y = trajectory.observations
    u = trajectory.inputs
    d = kf.A_kf.shape[0]
    T = y.shape[0] - 1
    x = np.zeros(d) if x0_mean is None else np.asarray(x0_mean, dtype=float).reshape(d)
    out = np.empty((T + 1, kf.C_kf.shape[0]))
    out[0] = kf.C_kf @ x
    has_u = kf.B_kf_u.shape[1] > 0
    for t in range(1, T + 1):
        x = kf.A_kf @ x + kf.B_kf_y @ y[t - 1]
        if has_u:
            x = x + kf.B_kf_u @ u[t - 1]
        out[t] = kf.C_kf @ x
    return out


@dataclass
class TimeVaryingResult:
    predictions: np.ndarray
    gains: np.ndarray
    covariances: np.ndarray


def time_varying_kf(A, B, C, sigma_x, sigma_y, sigma_0, trajectory, x0_mean=None) -> TimeVaryingResult:
    """Textbook covariance recursion; gains[t] is the gain applied to y_t."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    d = A.shape[0]
    B = np.zeros((d, 0)) if B is None else np.asarray(B, dtype=float).reshape(d, -1)
    sigma_x = np.atleast_2d(np.asarray(sigma_x, dtype=float))
    sigma_y = np.atleast_2d(np.asarray(sigma_y, dtype=float))
    y = trajectory.observations
    u = trajectory.inputs
    T = y.shape[0] - 1
    n = C.shape[0]
    x = np.zeros(d) if x0_mean is None else np.asarray(x0_mean, dtype=float).reshape(d)
    P = np.atleast_2d(np.asarray(sigma_0, dtype=float)).copy()
    preds = np.empty((T + 1, n))
    gains = np.empty((T + 1, d, n))
    covs = np.empty((T + 1, d, d))
    for t in range(T + 1):
        preds[t] = C @ x
        S = C @ P @ C.T + sigma_y
        K = solve_spd(S, C @ P).T
        gains[t] = K
        covs[t] = P
        if t == T:
            break
        x = A @ (x + K @ (y[t] - C @ x))
        if B.shape[1]:
            x = x + B @ u[t]
        Pf = P - K @ C @ P
        P = A @ Pf @ A.T + sigma_x
        P = 0.5 * (P + P.T)
    return TimeVaryingResult(preds, gains, covs)


@dataclass
class UnrolledFilter:
    """Impulse response taps F_k = C A^k B_u, G_k = C A^k B_y for k < lag."""

    F: np.ndarray
    G: np.ndarray
    rho: float

    @property
    def lag(self) -> int:
        return self.F.shape[0]

    def tap_norms(self) -> np.ndarray:
        return np.array([operator_norm(np.hstack([self.F[k], self.G[k]])) for k in range(self.lag)])

    def predict(self, u, y, t: int) -> np.ndarray:
        """Truncated autoregressive forecast of y_{t+1} from the window at t."""
        out = np.zeros(self.G.shape[1])
        for k in range(self.lag):
            s = t - k
            if s < 0:
                break
            out = out + self.G[k] @ y[s]
            if self.F.shape[2]:
                out = out + self.F[k] @ u[s]
        return out


def unroll_filter(kf: KalmanSteadyState, lag: int) -> UnrolledFilter:
    if lag < 1:
        raise ValueError("lag must be >= 1")
    n = kf.C_kf.shape[0]
    m = kf.B_kf_u.shape[1]
    F = np.empty((lag, n, m))
    G = np.empty((lag, n, n))
    CA = kf.C_kf.copy()
    for k in range(lag):
        F[k] = CA @ kf.B_kf_u
        G[k] = CA @ kf.B_kf_y
        CA = CA @ kf.A_kf
    return UnrolledFilter(F, G, kf.spectral_radius())


def tail_l1(filt: UnrolledFilter, L: int) -> float:
    """sum_{k >= L} ||(F_k, G_k)||_2: explicit over the stored taps plus a
    geometric remainder ||tap_{H-1}|| rho^(j) beyond them."""
    if L < 0:
        raise ValueError("L must be >= 0")
    norms = filt.tap_norms()
    H = len(norms)
    rho = filt.rho
    last = norms[-1]
    if rho >= 1.0:
        return math.inf
    if L >= H:
        return float(last * rho ** (L - H + 1) / (1.0 - rho))
    explicit = math.fsum(norms[L:])
    return float(explicit + last * rho / (1.0 - rho))


# ---------------------------------------------------------------------------
# H-infinity norm and sufficient length


N_CIRCLE = 2048
N_GAMMA = 200


def transfer_norms(kf: KalmanSteadyState, radius: float, angles: np.ndarray) -> np.ndarray:
    """||F(w)||_2 at w = radius * e^{i angle}, with F(w) = sum_k F_k w^-k
    = w C (w I - A_KF)^-1 B_KF."""
    A = kf.A_kf
    d = A.shape[0]
    Bk = kf.B_kf
    w = radius * np.exp(1j * np.asarray(angles, dtype=float))
    mats = w[:, None, None] * np.eye(d)[None] - A[None].astype(complex)
    rhs = np.broadcast_to(Bk.astype(complex), (len(w),) + Bk.shape)
    X = np.linalg.solve(mats, rhs)
    H = w[:, None, None] * (kf.C_kf[None] @ X)
    if H.shape[1] == 1 or H.shape[2] == 1:
        return np.sqrt(np.sum(np.abs(H) ** 2, axis=(1, 2)))
    return np.array([operator_norm(h) for h in H])


def _golden_max(f, a, b, iters=60):
    g = (math.sqrt(5) - 1) / 2
    c, e = b - g * (b - a), a + g * (b - a)
    fc, fe = f(c), f(e)
    for _ in range(iters):
        if fc >= fe:
            b, e, fe = e, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, e, fe
            e = a + g * (b - a)
            fe = f(e)
    return max(fc, fe)


def hinf_norm(kf: KalmanSteadyState, radius: float = 1.0) -> float:
    """max over |z| = radius of ||F(z)||_2: dense grid plus golden-section
    refinement around the best grid point."""
    angles = 2 * math.pi * np.arange(N_CIRCLE) / N_CIRCLE
    vals = transfer_norms(kf, radius, angles)
    j = int(np.argmax(vals))
    h = 2 * math.pi / N_CIRCLE
    refined = _golden_max(lambda a: float(transfer_norms(kf, radius, np.array([a]))[0]), angles[j] - h, angles[j] + h, 40)
    return max(float(vals[j]), refined)


@dataclass
class SuffLenResult:
    length: int
    gamma: float
    bound: float
    hinf: float


def sufficient_length(kf: KalmanSteadyState, eps: float) -> SuffLenResult:
    """Smallest truncation length with unrolled-filter tail at most ``eps``,
    via inf over gamma in (rho, 1) of ln(||F(gamma z)||_inf / (eps (1-gamma))) / (1-gamma)."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    rho = kf.spectral_radius()
    if rho >= 1.0:
        raise UnstableFilter(f"filter spectral radius estimate {rho} >= 1")

    def objective(gamma):
        if gamma <= rho:
            return math.inf
        hi = hinf_norm(kf, gamma)
        if hi <= 0.0:
            return -math.inf
        return math.log(hi / (eps * (1.0 - gamma))) / (1.0 - gamma)

    gaps = np.logspace(-6, math.log10(1.0 - rho), N_GAMMA)
    gammas = 1.0 - gaps
    values = np.array([objective(g) for g in gammas])
    j = int(np.argmin(values))
    best_gamma, best = float(gammas[j]), float(values[j])
    if math.isfinite(best):
        lo = float(gammas[min(j + 1, N_GAMMA - 1)])
        hi = float(gammas[max(j - 1, 0)])
        lo = max(lo, rho + 1e-12)
        g = (math.sqrt(5) - 1) / 2
        a, b = lo, hi
        for _ in range(60):
            c, e = b - g * (b - a), a + g * (b - a)
            if objective(c) <= objective(e):
                b = e
            else:
                a = c
        cand = 0.5 * (a + b)
        val = objective(cand)
        if val < best:
            best_gamma, best = cand, val
    if best == -math.inf:
        length = 1
    else:
        length = max(1, int(math.ceil(best)))
    return SuffLenResult(length=length, gamma=best_gamma, bound=best, hinf=hinf_norm(kf, best_gamma))
