"""Volumes of absolute convex hulls and the volume-doubling check."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionTooLarge
from ..systems import make_rng
from .l1norm import l1_span_norm, outlier_threshold

BALL_SIDES = 256
MC_SAMPLES = 1_000_000
MAX_DIM = 6
STREAM_VOLUME = 6
# the hull without the ball is measured as the limit of a ball shrunk by this factor
_NO_BALL_STRETCH = 1e6

PROBED_C = (1.0 / math.log(2.0), 1.0, 2.0)


@dataclass
class VolumeResult:
    volume: float
    stderr: float = 0.0
    exact: bool = True
    samples: int = 0


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull_2d(points) -> np.ndarray:
    """Andrew's monotone chain; counter-clockwise, no repeated endpoint."""
    pts = sorted(set(map(tuple, np.asarray(points, dtype=float).tolist())))
    if len(pts) <= 2:
        return np.array(pts, dtype=float).reshape(-1, 2)
    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1], dtype=float)


def polygon_area(vertices) -> float:
    v = np.asarray(vertices, dtype=float)
    if len(v) < 3:
        return 0.0
    x, y = v[:, 0], v[:, 1]
    return 0.5 * abs(math.fsum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def ball_polygon(sides: int = BALL_SIDES) -> np.ndarray:
    ang = 2 * math.pi * np.arange(sides) / sides
    return np.column_stack([np.cos(ang), np.sin(ang)])


def _as_points(points, d=None) -> np.ndarray:
    p = np.asarray(points, dtype=float)
    if p.size == 0:
        return np.zeros((0, d if d is not None else 0))
    return p.reshape(len(p), -1)


def hull_volume(
    points,
    include_unit_ball: bool = True,
    dim: int | None = None,
    samples: int = MC_SAMPLES,
    seed: int = 0,
) -> VolumeResult:
    """Volume of the absolute convex hull of the points (and the unit ball).

    Exact for d = 1, a polygon area for d = 2 (the ball as an inscribed
    256-gon), Monte Carlo with a standard error for 3 <= d <= 6.
    """
    pts = _as_points(points, dim)
    d = pts.shape[1] if pts.shape[0] else dim
    if d is None:
        raise ValueError("dimension is needed when there are no points")
    if d > MAX_DIM:
        raise DimensionTooLarge(f"hull volume supports d <= {MAX_DIM}, got {d}")
    if d == 1:
        half = max([abs(float(v)) for v in pts[:, 0]] + ([1.0] if include_unit_ball else []), default=0.0)
        return VolumeResult(2.0 * half)
    if d == 2:
        verts = [pts, -pts]
        if include_unit_ball:
            verts.append(ball_polygon())
        return VolumeResult(polygon_area(convex_hull_2d(np.vstack(verts))))
    return _mc_volume(pts, d, include_unit_ball, samples, seed)


def _mc_volume(pts, d, ball, samples, seed) -> VolumeResult:
    radius = float(np.max(np.linalg.norm(pts, axis=1))) if pts.shape[0] else 0.0
    if ball:
        radius = max(radius, 1.0)
    if radius == 0.0:
        return VolumeResult(0.0, 0.0, False, samples)
    rng = make_rng(seed, STREAM_VOLUME)
    box = (2 * radius) ** d
    hits = 0
    basis = pts if ball else pts * _NO_BALL_STRETCH
    limit = 1.0 if ball else 1.0 / _NO_BALL_STRETCH
    chunk = 4096
    done = 0
    while done < samples:
        n = min(chunk, samples - done)
        ys = rng.uniform(-radius, radius, size=(n, d))
        norms = np.linalg.norm(ys, axis=1)
        for y, ny in zip(ys, norms):
            if ball and ny <= 1.0:
                hits += 1
            elif ny <= radius:
                if l1_span_norm(y, basis, threshold=limit, tol=1e-4).value <= limit:
                    hits += 1
        done += n
    p = hits / samples
    return VolumeResult(box * p, box * math.sqrt(p * (1 - p) / samples), False, samples)


@dataclass
class DoublingRecord:
    norm: float
    norm_lower: float
    ratio: float
    exact: bool
    threshold: float
    triggered: bool
    satisfied: bool | None
    constant_checks: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "norm": self.norm,
            "norm_lower": self.norm_lower,
            "ratio": self.ratio,
            "exact": self.exact,
            "threshold": self.threshold,
            "triggered": self.triggered,
            "satisfied": self.satisfied,
            "constant_checks": self.constant_checks,
        }


def check_volume_doubling(S, x, probed=PROBED_C, samples: int = 20_000, seed: int = 0, decomposition=None) -> DoublingRecord:
    """Norm of x over S, and the hull volume ratio after adding x.

    A check triggers only when the certified lower bound on the norm clears
    its threshold, so solver slack can never trigger a vacuous assertion.
    Monte Carlo dimensions report the ratio but never assert. A precomputed
    ``decomposition`` of x over S skips the norm solve.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    d = x.size
    pts = _as_points(S, d)
    dec = decomposition if decomposition is not None else l1_span_norm(x, pts)
    before = hull_volume(pts, True, dim=d, samples=samples, seed=seed)
    after = hull_volume(np.vstack([pts, x[None]]), True, dim=d, samples=samples, seed=seed)
    ratio = after.volume / before.volume if before.volume > 0 else math.inf
    exact = d <= 2
    thr = outlier_threshold(d)
    triggered = exact and dec.lower >= thr
    checks = []
    ok = True
    for C in probed:
        need = 1.0 + 2.0 * math.exp(-1.0 / C)
        trig = exact and dec.lower >= 2.0 * C * d
        sat = (ratio >= need) if trig else None
        if sat is False:
            ok = False
        checks.append({"C": C, "norm_threshold": 2.0 * C * d, "ratio_needed": need, "triggered": trig, "satisfied": sat})
    if triggered and ratio < 2.0:
        ok = False
    any_trig = triggered or any(c["triggered"] for c in checks)
    return DoublingRecord(
        norm=dec.value,
        norm_lower=dec.lower,
        ratio=ratio,
        exact=exact,
        threshold=thr,
        triggered=triggered,
        satisfied=(ok if any_trig else None),
        constant_checks=checks,
    )
