"""Leverage diagnostics for the ridge regressors of an LDS run.

With Sigma_t = mu I + sum_{s<t} v_s v_s^T, every step is checked for

    sum_{s<t} v_s^T Sigma_t^-1 v_s <= d
    sum_{s<t} b_s^2 <= (L_a^2 + L_v^2 / mu) d^2,   b_s = v_s^T Sigma_t^-1 v_t,

where (L_a, L_v) come from an l1-span decomposition of v_t over its past.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..linalg import spd_inverse
from .l1norm import l1_span_norm

_SLACK = 1e-9


@dataclass
class LeverageStep:
    t: int
    leverage_sum: float
    b_sq_sum: float
    coef_l1: float
    coef_l2: float
    residual_norm: float
    bound: float
    bound_tight: float
    dim: int

    @property
    def leverage_ok(self) -> bool:
        return self.leverage_sum <= self.dim * (1 + _SLACK)

    @property
    def b_ok(self) -> bool:
        return self.b_sq_sum <= self.bound_tight * (1 + _SLACK) + _SLACK


@dataclass
class LeverageReport:
    mu: float
    dim: int
    steps: list = field(default_factory=list)
    net: dict = field(default_factory=dict)

    @property
    def max_leverage(self) -> float:
        return max((s.leverage_sum for s in self.steps), default=0.0)

    @property
    def violations(self) -> list:
        return [s.t for s in self.steps if not (s.leverage_ok and s.b_ok)]

    def rows(self):
        for s in self.steps:
            yield {
                "t": s.t,
                "leverage_sum": s.leverage_sum,
                "b_sq_sum": s.b_sq_sum,
                "coef_l1": s.coef_l1,
                "coef_l2": s.coef_l2,
                "residual_norm": s.residual_norm,
                "bound": s.bound,
                "bound_tight": s.bound_tight,
            }


def regressors(trajectory) -> np.ndarray:
    x = trajectory.states[:-1]
    u = trajectory.inputs
    return np.hstack([x, u]) if u.shape[1] else x.copy()


def leverage_diagnostics(trajectory, mu: float, decompositions=None, c_xi: float = 1.0, delta: float = 0.1) -> LeverageReport:
    """Per-step leverage sums and b_s checks.

    ``decompositions[t]`` may supply the decomposition of v_t over v_0..v_{t-1}
    (for input-free runs these are the outlier-norm solves of the states),
    otherwise it is computed here.
    """
    if not mu > 0:
        raise ValueError("mu must be positive")
    V = regressors(trajectory) if hasattr(trajectory, "states") else np.asarray(trajectory, dtype=float)
    T, d = V.shape
    report = LeverageReport(float(mu), d)
    sigma = mu * np.eye(d)
    La_max = Lv_max = 0.0
    for t in range(T):
        if t:
            sigma += np.outer(V[t - 1], V[t - 1])
        inv = spd_inverse(sigma)
        past = V[:t]
        lev = float(np.einsum("ij,jk,ik->", past, inv, past)) if t else 0.0
        b = past @ (inv @ V[t]) if t else np.zeros(0)
        dec = decompositions[t] if decompositions is not None else l1_span_norm(V[t], past)
        l1, l2, rn = dec.coef_l1, dec.coef_l2, dec.residual_norm
        La_max, Lv_max = max(La_max, l1), max(Lv_max, rn)
        report.steps.append(
            LeverageStep(
                t=t,
                leverage_sum=lev,
                b_sq_sum=float(b @ b),
                coef_l1=l1,
                coef_l2=l2,
                residual_norm=rn,
                bound=(l1 * l1 + rn * rn / mu) * d * d,
                bound_tight=(l2 * l2 + rn * rn / mu) * d * d,
                dim=d,
            )
        )
    report.net = net_quantities(V, mu, La_max, Lv_max, c_xi, delta)
    return report


def net_quantities(V, mu, La, Lv, c_xi, delta) -> dict:
    """Covering-argument quantities, logged for inspection only."""
    T, d = V.shape
    g_sum = float(np.sum(np.linalg.norm(V, axis=1)))
    eps_net = 1.0 / g_sum if g_sum > 0 else math.inf
    core = La * La + Lv * Lv / mu
    R_z = mu**-0.5 * math.sqrt(core * d)
    S_b = math.sqrt(2.0) * math.sqrt(core * d * d + 1.0)
    log_term = d * math.log1p(2.0 * R_z / eps_net) + math.log(max(T, 1) / delta)
    L = math.sqrt(2.0) * c_xi * S_b * math.sqrt(log_term)
    return {"eps_net": eps_net, "R_z": R_z, "S_b": S_b, "L": L, "L_a": La, "L_v": Lv}


def theoretical_constants(d: int, M: float, r: int, C_A: float, C0: float, C_xi: float) -> tuple[float, float]:
    """Worst-case (L_a, L_v) for a decomposition of a state over its past,
    given ||x_t|| <= M: L_a = (2/ln 2) d and
    L_v = C_A (k'+1)^(r-1) max(C0, L_a) + C_A C_xi k'^r (L_a + 1), k' = floor(d log2 M)."""
    La = 2.0 / math.log(2.0) * d
    kp = max(int(math.floor(d * math.log2(max(M, 1.0)))), 0)
    Lv = C_A * (kp + 1) ** (r - 1) * max(C0, La) + C_A * C_xi * kp**r * (La + 1.0)
    return La, Lv
