"""Anomaly-freeness of a vector series.

A series is (c, c1, c2, alpha)-anomaly-free when, for every unit direction w
and every t with M = |w^T x_t| > c, at least c1 M^alpha earlier indices s
satisfy |w^T x_s| >= c2 M. Only finitely many directions can be probed, so a
certificate here is empirical.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..linalg import sym_eig
from ..systems import make_rng

STREAM_DIRECTIONS = 7


@dataclass
class DirectionRecord:
    direction: list
    t: int
    M: float
    required: float
    observed: int
    passed: bool


@dataclass
class AnomalyReport:
    c: float
    c1: float
    c2: float
    alpha: float
    records: list = field(default_factory=list)

    @property
    def certified(self) -> bool:
        return all(r.passed for r in self.records)

    @property
    def failures(self) -> list:
        return [r for r in self.records if not r.passed]

    def to_dict(self) -> dict:
        return {
            "c": self.c,
            "c1": self.c1,
            "c2": self.c2,
            "alpha": self.alpha,
            "certified": self.certified,
            "records": [r.__dict__ for r in self.records],
        }


def probe_directions(series, count: int, seed: int = 0) -> np.ndarray:
    """Eigenvectors of the final Gram matrix followed by seeded random unit vectors."""
    x = np.asarray(series, dtype=float)
    d = x.shape[1]
    _, V = sym_eig(x.T @ x)
    dirs = [V[:, i] for i in range(d)]
    extra = max(count - d, 0)
    if extra:
        g = make_rng(seed, STREAM_DIRECTIONS).standard_normal((extra, d))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        dirs.extend(g)
    return np.array(dirs[: max(count, d)])


def _prior_counts(proj: np.ndarray, c2: float) -> np.ndarray:
    """counts[t] = #{s < t : proj[s] >= c2 * proj[t]} for nonnegative proj."""
    T = proj.size
    out = np.zeros(T, dtype=np.int64)
    block = 2048
    for lo in range(0, T, block):
        hi = min(lo + block, T)
        need = c2 * proj[lo:hi]
        ge = proj[None, :hi] >= need[:, None]
        mask = np.arange(hi)[None, :] < np.arange(lo, hi)[:, None]
        out[lo:hi] = np.count_nonzero(ge & mask, axis=1)
    return out


def certify_anomaly_free(series, directions=8, c=1.0, c1=0.5, c2=0.5, alpha=1.0, seed: int = 0) -> AnomalyReport:
    """Check every (direction, t) pair with |w^T x_t| > c."""
    if not (0 < c1 <= 0.5):
        raise ValueError("c1 must lie in (0, 1/2]")
    if c < 1.0 / c1:
        raise ValueError("c must be at least 1/c1")
    x = np.asarray(series, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if isinstance(directions, (int, np.integer)):
        W = probe_directions(x, int(directions), seed)
    else:
        W = np.atleast_2d(np.asarray(directions, dtype=float))
        W = W / np.linalg.norm(W, axis=1, keepdims=True)
    report = AnomalyReport(c, c1, c2, alpha)
    for w in W:
        proj = np.abs(x @ w)
        counts = _prior_counts(proj, c2)
        for t in np.flatnonzero(proj > c):
            M = float(proj[t])
            need = c1 * M**alpha
            report.records.append(
                DirectionRecord([float(v) for v in w], int(t), M, need, int(counts[t]), bool(counts[t] >= need))
            )
    return report


@dataclass
class FrontierPoint:
    c: float
    c1: float
    c2: float


def anomaly_frontier(series, directions=8, alpha=1.0, c1_grid=None, c2_grid=None, seed: int = 0) -> list:
    """Smallest certified c for each (c1, c2) on a grid, reduced to the
    Pareto frontier (small c, large c1, large c2).

    For fixed (c1, c2) the certificate holds exactly when c exceeds every
    failing M, so the minimal c is max(1/c1, largest failing M).
    """
    x = np.asarray(series, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    c1_grid = np.array([0.5, 0.25, 0.1, 0.05, 0.02, 0.01]) if c1_grid is None else np.asarray(c1_grid)
    c2_grid = np.array([0.9, 0.75, 0.5, 0.25, 0.1]) if c2_grid is None else np.asarray(c2_grid)
    W = probe_directions(x, directions, seed) if isinstance(directions, (int, np.integer)) else np.atleast_2d(directions)
    projs = [np.abs(x @ (w / np.linalg.norm(w))) for w in W]
    points = []
    for c2 in c2_grid:
        counts = [_prior_counts(p, float(c2)) for p in projs]
        for c1 in c1_grid:
            worst = 0.0
            for p, cnt in zip(projs, counts):
                fail = cnt < c1 * p**alpha
                if np.any(fail):
                    worst = max(worst, float(np.max(p[fail])))
            points.append(FrontierPoint(max(1.0 / float(c1), worst), float(c1), float(c2)))
    frontier = []
    for p in points:
        dominated = any(
            q.c <= p.c and q.c1 >= p.c1 and q.c2 >= p.c2 and (q.c < p.c or q.c1 > p.c1 or q.c2 > p.c2) for q in points
        )
        if not dominated:
            frontier.append(p)
    frontier.sort(key=lambda p: (p.c, -p.c1, -p.c2))
    return frontier
