"""Run every structural check on one simulated trajectory."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .anomaly import probe_directions
from .l1norm import OutlierSet, exists_large_witness, outlier_count_bound, outlier_indices
from .leverage import LeverageReport, leverage_diagnostics
from .polynomials import CharPoly, PowerCheck, ch_noise_bound, ch_recurrence_residual, char_poly, jordan_power_check
from .volume import PROBED_C, DoublingRecord, check_volume_doubling

DIAGNOSTIC_COLUMNS = [
    "t",
    "norm",
    "norm_lower",
    "outlier",
    "doubling_ratio",
    "doubling_triggered",
    "doubling_satisfied",
    "leverage_sum",
    "b_sq_sum",
    "b_bound",
    "ch_residual",
]

_REL = 1e-9


@dataclass
class TrajectoryDiagnostics:
    outliers: OutlierSet
    outlier_bound: float
    doubling: dict
    leverage: LeverageReport
    char_poly: CharPoly | None
    ch_residual: np.ndarray
    ch_bound: float
    power: PowerCheck | None
    witnesses: list = field(default_factory=list)
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def rows(self):
        d = self.outliers
        lev = self.leverage.steps
        lag = len(self.char_poly.coefficients) - 1 if self.char_poly is not None else None
        for t in range(len(d.norms)):
            rec: DoublingRecord | None = self.doubling.get(t)
            step = lev[t] if t < len(lev) else None
            ch = None
            if lag is not None and t >= lag and t - lag < len(self.ch_residual):
                ch = float(self.ch_residual[t - lag])
            yield {
                "t": t,
                "norm": float(d.norms[t]),
                "norm_lower": float(d.lower[t]),
                "outlier": t in d.indices,
                "doubling_ratio": None if rec is None else rec.ratio,
                "doubling_triggered": None if rec is None else rec.triggered,
                "doubling_satisfied": None if rec is None else rec.satisfied,
                "leverage_sum": None if step is None else step.leverage_sum,
                "b_sq_sum": None if step is None else step.b_sq_sum,
                "b_bound": None if step is None else step.bound_tight,
                "ch_residual": ch,
            }

    def summary(self) -> dict:
        out = {
            "outlier_count": self.outliers.size,
            "outlier_bound": self.outlier_bound,
            "doubling_checks": len(self.doubling),
            "doubling_triggered": sum(1 for r in self.doubling.values() if r.triggered),
            "max_leverage": self.leverage.max_leverage,
            "leverage_net": self.leverage.net,
            "ch_bound": self.ch_bound,
            "ch_max_residual": float(np.max(self.ch_residual)) if self.ch_residual.size else 0.0,
            "violations": list(self.violations),
        }
        if self.char_poly is not None:
            out["char_poly"] = self.char_poly.coefficients.tolist()
            out["char_poly_abs_sum"] = self.char_poly.abs_sum
        if self.power is not None:
            out["power_worst_ratio"] = self.power.worst_ratio
            out["power_worst_sum_ratio"] = self.power.worst_sum_ratio
        return out


def _ch_constant(A, d: int) -> float:
    """max_{k<d} ||A^k||_2, the power bound the recurrence residual needs."""
    P = np.eye(d)
    best = 1.0
    for _ in range(1, d):
        P = P @ A
        best = max(best, float(np.linalg.norm(P, 2)))
    return best


def diagnose_trajectory(trajectory, system=None, mu: float = 1.0, power_k_max: int = 10_000, directions: int = 4, seed: int = 0) -> TrajectoryDiagnostics:
    """Outlier count, volume doubling at every outlier-sized step, leverage
    sums, Cayley-Hamilton residuals and Jordan power ratios, with every
    violated inequality listed in ``violations``."""
    states = np.asarray(trajectory.states, dtype=float)
    T1, d = states.shape
    has_inputs = trajectory.inputs.shape[1] > 0 and bool(np.any(trajectory.inputs))
    violations = []

    out = outlier_indices(states)
    max_norm = float(np.max(np.linalg.norm(states, axis=1)))
    bound = outlier_count_bound(states)
    if max_norm >= 2.0 and out.size > bound * (1 + _REL):
        violations.append(f"outlier count {out.size} exceeds d log2 max norm {bound:.6g}")

    doubling = {}
    if d <= 2:
        trigger = 2.0 * min(PROBED_C) * d
        for t in range(T1):
            if out.lower[t] >= trigger:
                rec = check_volume_doubling(states[:t], states[t], decomposition=out.decompositions[t])
                doubling[t] = rec
                if rec.satisfied is False:
                    violations.append(f"t={t}: volume ratio {rec.ratio:.6g} below the doubling requirement")

    decs = None if has_inputs else out.decompositions[: T1 - 1]
    lev = leverage_diagnostics(trajectory, mu, decompositions=decs)
    for s in lev.steps:
        if not s.leverage_ok:
            violations.append(f"t={s.t}: leverage sum {s.leverage_sum:.6g} exceeds d")
        if not s.b_ok:
            violations.append(f"t={s.t}: b_s square sum {s.b_sq_sum:.6g} exceeds {s.bound_tight:.6g}")

    cp = power = None
    ch = np.zeros(0)
    ch_bound = math.nan
    if system is not None:
        A = np.asarray(system.A, dtype=float)
        cp = char_poly(A, getattr(system, "jordan", None))
        if system.spectral_radius() <= 1.0 + 1e-12 and cp.abs_sum > 2.0**d * (1 + _REL):
            violations.append(f"char-poly coefficient sum {cp.abs_sum:.6g} exceeds 2^d")
        if cp.jordan_mismatch is not None and cp.jordan_mismatch > 1e-8 * max(1.0, cp.abs_sum):
            violations.append(f"char-poly disagrees with the Jordan factors by {cp.jordan_mismatch:.3g}")
        if not has_inputs:
            ch = ch_recurrence_residual(states, cp.coefficients)
            c_xi = float(np.max(np.linalg.norm(trajectory.process_noise, axis=1))) if trajectory.T else 0.0
            if c_xi == 0.0:
                ch_bound = 1e-6 * max_norm
            else:
                ch_bound = ch_noise_bound(d, _ch_constant(A, d), c_xi)
            if ch.size and float(np.max(ch)) > ch_bound * (1 + _REL):
                violations.append(f"Cayley-Hamilton residual {float(np.max(ch)):.6g} exceeds {ch_bound:.6g}")
        if getattr(system, "jordan", None) is not None and power_k_max > 0:
            power = jordan_power_check(A, system.r, system.C_A, power_k_max)
            if power.worst_ratio > 1 + _REL:
                violations.append(f"||A^k|| ratio {power.worst_ratio:.6g} at k={power.worst_k} exceeds 1")
            if power.worst_sum_ratio > 1 + _REL:
                violations.append(f"power partial-sum ratio {power.worst_sum_ratio:.6g} exceeds 1")

    witnesses = []
    if T1 > 1:
        last = out.decompositions[-1]
        for w in probe_directions(states, directions, seed):
            chk = exists_large_witness(states, last, w)
            witnesses.append(chk)
            if not chk.holds:
                violations.append(f"no past state reaches projection {chk.required:.6g} along a probed direction")

    return TrajectoryDiagnostics(out, bound, doubling, lev, cp, ch, ch_bound, power, witnesses, violations)
