"""Online ridge least squares and its two LDS instantiations.

``OlsState`` is the learner: it keeps the regularized Gram matrix
Sigma = mu I + sum x x^T, its inverse (Sherman-Morrison, with a fresh
Cholesky inverse every ``REFACTOR_EVERY`` updates), the cross moment
Y = sum y x^T, and the current coefficients A = Y Sigma^-1.

Prediction always uses data strictly before the current step.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InsufficientHistory, ModelMismatch, NonPositiveRegularizer
from .linalg import rank_one_inverse_update, solve_spd, spd_inverse

REFACTOR_EVERY = 256


class KahanSum:
    """Running compensated sum."""

    __slots__ = ("total", "_c")

    def __init__(self):
        self.total = 0.0
        self._c = 0.0

    def add(self, value: float) -> float:
        y = value - self._c
        t = self.total + y
        self._c = (t - self.total) - y
        self.total = t
        return t


class OlsState:
    def __init__(self, dim_in: int, dim_out: int, mu: float):
        if not mu > 0:
            raise NonPositiveRegularizer(f"regularizer must be positive, got {mu}")
        self.mu = float(mu)
        self.dim_in = int(dim_in)
        self.dim_out = int(dim_out)
        self.sigma = self.mu * np.eye(dim_in)
        self.sigma_inv = np.eye(dim_in) / self.mu
        self.Y = np.zeros((dim_out, dim_in))
        self.A = np.zeros((dim_out, dim_in))
        self.t = 0

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.size != self.dim_in:
            raise DimensionMismatch(f"regressor has length {x.size}, learner expects {self.dim_in}")
        return self.A @ x

    def update(self, x, y) -> "OlsState":
        x = np.asarray(x, dtype=float).reshape(-1)
        y = np.asarray(y, dtype=float).reshape(-1)
        if x.size != self.dim_in or y.size != self.dim_out:
            raise DimensionMismatch(
                f"update with shapes ({x.size}, {y.size}), learner is ({self.dim_in}, {self.dim_out})"
            )
        self.sigma += np.outer(x, x)
        self.Y += np.outer(y, x)
        self.t += 1
        if self.t % REFACTOR_EVERY == 0:
            self.sigma_inv = spd_inverse(self.sigma)
        else:
            self.sigma_inv = rank_one_inverse_update(self.sigma_inv, x)
        self.A = self.Y @ self.sigma_inv
        return self

    def copy(self) -> "OlsState":
        other = OlsState.__new__(OlsState)
        other.mu, other.dim_in, other.dim_out, other.t = self.mu, self.dim_in, self.dim_out, self.t
        other.sigma = self.sigma.copy()
        other.sigma_inv = self.sigma_inv.copy()
        other.Y = self.Y.copy()
        other.A = self.A.copy()
        return other

    # checkpointing -------------------------------------------------------

    def dumps(self) -> str:
        """JSON checkpoint with every float written as ``float.hex``."""

        def hexed(m):
            return [[float(v).hex() for v in row] for row in np.atleast_2d(m)]

        return json.dumps(
            {
                "mu": self.mu.hex(),
                "t": self.t,
                "dim_in": self.dim_in,
                "dim_out": self.dim_out,
                "sigma": hexed(self.sigma),
                "Y": hexed(self.Y),
                "sigma_inv": hexed(self.sigma_inv),
            },
            indent=1,
        )

    @classmethod
    def loads(cls, text: str) -> "OlsState":
        d = json.loads(text)

        def unhex(rows, shape):
            return np.array([[float.fromhex(v) for v in row] for row in rows], dtype=float).reshape(shape)

        st = cls(d["dim_in"], d["dim_out"], float.fromhex(d["mu"]))
        st.t = int(d["t"])
        st.sigma = unhex(d["sigma"], (st.dim_in, st.dim_in))
        st.Y = unhex(d["Y"], (st.dim_out, st.dim_in))
        if "sigma_inv" in d:
            st.sigma_inv = unhex(d["sigma_inv"], (st.dim_in, st.dim_in))
        else:
            st.sigma_inv = spd_inverse(st.sigma)
        st.A = st.Y @ st.sigma_inv
        return st


def ols_init(dim_in: int, dim_out: int, mu: float) -> OlsState:
    return OlsState(dim_in, dim_out, mu)


def ols_predict(state: OlsState, x) -> np.ndarray:
    return state.predict(x)


def ols_update(state: OlsState, x, y) -> OlsState:
    return state.update(x, y)


def ols_batch_solve(xs, ys, mu: float) -> np.ndarray:
    """Direct ridge solution (sum y x^T)(mu I + sum x x^T)^-1."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    if not mu > 0:
        raise NonPositiveRegularizer(f"regularizer must be positive, got {mu}")
    m = xs.shape[1]
    if xs.shape[0] == 0:
        return np.zeros((ys.shape[1], m))
    sigma = mu * np.eye(m) + xs.T @ xs
    return solve_spd(sigma, xs.T @ ys).T


def residual_closed_form(xs, ys, mu: float, A_true, noises, x_t) -> np.ndarray:
    """Prediction residual A_t x_t - y_t written through the noises.

    ``xs``/``ys`` are the t past pairs, ``noises`` holds xi_0..xi_t (the last
    one belongs to the current step) and must satisfy y_s = A x_s + xi_s.
    """
    A_true = np.atleast_2d(np.asarray(A_true, dtype=float))
    n, m = A_true.shape
    xs = np.asarray(xs, dtype=float).reshape(-1, m)
    ys = np.asarray(ys, dtype=float).reshape(-1, n)
    noises = np.asarray(noises, dtype=float).reshape(-1, n)
    x_t = np.asarray(x_t, dtype=float).reshape(m)
    t = xs.shape[0]
    if noises.shape[0] != t + 1:
        raise DimensionMismatch(f"need {t + 1} noise vectors, got {noises.shape[0]}")
    if t:
        mismatch = ys - xs @ A_true.T - noises[:t]
        scale = 1.0 + np.max(np.abs(ys), axis=1)
        if np.any(np.max(np.abs(mismatch), axis=1) > 1e-10 * scale):
            raise ModelMismatch("history does not satisfy y_s = A x_s + xi_s")
    sigma = mu * np.eye(m) + xs.T @ xs
    z = solve_spd(sigma, x_t)
    return noises[:t].T @ (xs @ z) - mu * (A_true @ z) - noises[t]


@dataclass(frozen=True)
class ArConfig:
    lag: int
    input_dim: int
    obs_dim: int

    def __post_init__(self):
        if self.lag < 1:
            raise ValueError("lag must be >= 1")

    @property
    def feature_dim(self) -> int:
        return self.lag * (self.input_dim + self.obs_dim)


def ar_features(u, y, t: int, cfg: ArConfig) -> np.ndarray:
    """(u_t, ..., u_{t-l+1}, y_t, ..., y_{t-l+1}) with zeros before index 0."""
    if t < 0:
        raise ValueError("t must be >= 0")
    lag, m, n = cfg.lag, cfg.input_dim, cfg.obs_dim
    u = np.asarray(u, dtype=float).reshape(-1, m) if m else np.zeros((0, 0))
    y = np.asarray(y, dtype=float).reshape(-1, n)
    out = np.zeros(cfg.feature_dim)
    for k in range(lag):
        s = t - k
        if s < 0:
            break
        if m:
            out[k * m : (k + 1) * m] = u[s]
        out[lag * m + k * n : lag * m + (k + 1) * n] = y[s]
    return out


# ---------------------------------------------------------------------------
# LDS learners


def lds_regressor(x, u) -> np.ndarray:
    return np.concatenate([np.asarray(x, dtype=float).reshape(-1), np.asarray(u, dtype=float).reshape(-1)])


def lds_learner_step(state: OlsState, trajectory, t: int):
    """Predict x_{t+1} from (x_t; u_t), then learn from the revealed x_{t+1}."""
    if t < 0 or t >= trajectory.T:
        raise InsufficientHistory(f"step {t} needs x_{t + 1}, trajectory has T={trajectory.T}")
    z = lds_regressor(trajectory.states[t], trajectory.inputs[t])
    pred = state.predict(z)
    state.update(z, trajectory.states[t + 1])
    return pred, state


def ar_learner_step(state: OlsState, trajectory, t: int, cfg: ArConfig):
    """Predict y_{t+1} from the lagged window at t; updates start at t = lag - 1."""
    y = trajectory.observations
    if y is None:
        raise InsufficientHistory("trajectory has no observations")
    if t < 0 or t >= y.shape[0] - 1:
        raise InsufficientHistory(f"step {t} needs y_{t + 1}")
    feat = ar_features(trajectory.inputs, y, t, cfg)
    pred = state.predict(feat)
    if t >= cfg.lag - 1:
        state.update(feat, y[t + 1])
    return pred, state


def run_lds_learner(trajectory, mu: float, on_step=None):
    """Algorithm over a full trajectory; returns (predictions (T, d), state).

    ``predictions[t]`` is the forecast of x_{t+1}. ``on_step(t, state, z)``
    is called before each prediction with the regressor.
    """
    x, u = trajectory.states, trajectory.inputs
    d, m = x.shape[1], u.shape[1]
    state = OlsState(d + m, d, mu)
    preds = np.empty((trajectory.T, d))
    for t in range(trajectory.T):
        z = np.concatenate([x[t], u[t]]) if m else x[t]
        if on_step is not None:
            on_step(t, state, z)
        preds[t] = state.A @ z
        state.update(z, x[t + 1])
    return preds, state


def run_ar_learner(trajectory, mu: float, lag: int):
    """Autoregressive learner; returns (predictions (T+1, n), state) where
    ``predictions[t]`` forecasts y_t and row 0 is an unused zero."""
    y, u = trajectory.observations, trajectory.inputs
    n, m = y.shape[1], u.shape[1]
    cfg = ArConfig(lag, m, n)
    state = OlsState(cfg.feature_dim, n, mu)
    T = y.shape[0] - 1
    preds = np.zeros((T + 1, n))
    for t in range(T):
        feat = ar_features(u, y, t, cfg)
        preds[t + 1] = state.A @ feat
        if t >= lag - 1:
            state.update(feat, y[t + 1])
    return preds, state


def ridge_regret_bound(mu: float, A, max_sq_err: float, dim_in: int, T: int, M: float) -> float:
    """mu ||A||_F^2 + max_t ||y_t - A_t x_t||^2 * m * ln(1 + T M^2 / m)."""
    A = np.asarray(A, dtype=float)
    return mu * float(np.sum(A * A)) + max_sq_err * dim_in * math.log1p(T * M * M / dim_in)
