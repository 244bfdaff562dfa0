"""Linear dynamical systems: construction, noise, and simulation.

Systems are built from a Jordan-block description so that the spectral
radius, the largest block size ``r`` and the similarity conditioning ``C_A``
are known exactly by construction.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np

from .errors import (
    DimensionMismatch,
    NoiseFileMissing,
    Overflow,
    RequiresObservationMatrix,
)
from .linalg import operator_norm, spectral_radius_estimate, sym_eig

# Stream ids for the counter-based generator; every random quantity in a
# simulation is drawn from its own (seed, stream) key.
STREAM_INITIAL = 0
STREAM_PROCESS = 1
STREAM_OBSERVATION = 2
STREAM_INPUT = 3
STREAM_MATRICES = 4
STREAM_SIMILARITY = 5

_REAL_PHASE_TOL = 1e-12


def make_rng(*keys: int) -> np.random.Generator:
    """Philox generator keyed by a tuple of non-negative integers."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in keys])))


@dataclass(frozen=True)
class JordanBlock:
    magnitude: float
    phase: float
    size: int

    @property
    def is_real(self) -> bool:
        return _is_real_phase(self.phase)

    @property
    def real_dim(self) -> int:
        return self.size if self.is_real else 2 * self.size

    @property
    def eigenvalue(self) -> complex:
        return self.magnitude * complex(math.cos(self.phase), math.sin(self.phase))


def _is_real_phase(phase: float) -> bool:
    p = phase % (2 * math.pi)
    return p < _REAL_PHASE_TOL or abs(p - math.pi) < _REAL_PHASE_TOL or abs(p - 2 * math.pi) < _REAL_PHASE_TOL


@dataclass(frozen=True)
class JordanSpec:
    """Jordan description of a transition matrix A = S J S^-1.

    ``similarity`` is ``"random"`` (seeded orthogonal factors around a
    diagonal scaling with condition number ``condition``) or ``"identity"``.
    """

    blocks: tuple
    condition: float = 1.0
    seed: int = 0
    similarity: str = "random"

    def __post_init__(self):
        blocks = tuple(b if isinstance(b, JordanBlock) else JordanBlock(*b) for b in self.blocks)
        object.__setattr__(self, "blocks", blocks)
        if not blocks:
            raise ValueError("JordanSpec needs at least one block")
        for b in blocks:
            if not (0.0 <= b.magnitude <= 1.0):
                raise ValueError(f"block magnitude {b.magnitude} outside [0, 1]")
            if not (0.0 <= b.phase < 2 * math.pi):
                raise ValueError(f"block phase {b.phase} outside [0, 2pi)")
            if b.size < 1:
                raise ValueError("block size must be >= 1")
        if self.condition < 1.0:
            raise ValueError("similarity condition C_A must be >= 1")
        if self.similarity not in ("random", "identity"):
            raise ValueError(f"unknown similarity mode {self.similarity!r}")

    @property
    def dim(self) -> int:
        return sum(b.real_dim for b in self.blocks)

    @property
    def max_block(self) -> int:
        return max(b.size for b in self.blocks)

    @property
    def spectral_radius(self) -> float:
        return max(b.magnitude for b in self.blocks)

    def to_dict(self) -> dict:
        return {
            "blocks": [[b.magnitude, b.phase, b.size] for b in self.blocks],
            "condition": self.condition,
            "seed": self.seed,
            "similarity": self.similarity,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "JordanSpec":
        return cls(
            blocks=tuple(tuple(b) for b in d["blocks"]),
            condition=float(d.get("condition", 1.0)),
            seed=int(d.get("seed", 0)),
            similarity=d.get("similarity", "random"),
        )


@dataclass(frozen=True)
class Bounds:
    """Declared constants: initial state, inputs, noise, and matrix norms."""

    C0: float = 1.0
    Cu: float = 0.0
    Cxi: float = 1.0
    Ceta: float = 0.0
    CB: float = 0.0
    CC: float = 1.0


NOISE_KINDS = ("gaussian", "bounded_iid", "adversarial_least_explored", "file", "none")


@dataclass(frozen=True)
class NoiseConfig:
    kind: str = "bounded_iid"
    sigma_x: Optional[np.ndarray] = None
    sigma_y: Optional[np.ndarray] = None
    c_xi: float = 1.0
    distribution: str = "uniform-ball"
    path: Optional[str] = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.kind == "gaussian":
            for name in ("sigma_x", "sigma_y"):
                m = getattr(self, name)
                if m is None:
                    continue
                m = np.atleast_2d(np.asarray(m, dtype=float))
                object.__setattr__(self, name, m)
                if not np.allclose(m, m.T, atol=1e-12):
                    raise ValueError(f"{name} is not symmetric")
                if sym_eig(m)[0][-1] < -1e-12:
                    raise ValueError(f"{name} is not positive semidefinite")
        if self.kind in ("bounded_iid", "adversarial_least_explored") and not self.c_xi > 0:
            raise ValueError("noise bound c_xi must be positive")
        if self.kind == "bounded_iid" and self.distribution not in ("uniform-ball", "rademacher-axes"):
            raise ValueError(f"unknown bounded distribution {self.distribution!r}")
        if self.kind == "file" and not self.path:
            raise ValueError("file noise needs a path")

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "c_xi": self.c_xi, "distribution": self.distribution, "seed": self.seed}
        if self.sigma_x is not None:
            out["sigma_x"] = np.asarray(self.sigma_x).tolist()
        if self.sigma_y is not None:
            out["sigma_y"] = np.asarray(self.sigma_y).tolist()
        if self.path is not None:
            out["path"] = self.path
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseConfig":
        return cls(
            kind=d.get("kind", "bounded_iid"),
            sigma_x=None if d.get("sigma_x") is None else np.asarray(d["sigma_x"], dtype=float),
            sigma_y=None if d.get("sigma_y") is None else np.asarray(d["sigma_y"], dtype=float),
            c_xi=float(d.get("c_xi", 1.0)),
            distribution=d.get("distribution", "uniform-ball"),
            path=d.get("path"),
            seed=int(d.get("seed", 0)),
        )


@dataclass
class SystemSpec:
    A: np.ndarray
    B: np.ndarray
    C: Optional[np.ndarray] = None
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    bounds: Bounds = field(default_factory=Bounds)
    r: int = 1
    C_A: float = 1.0
    x0: Optional[np.ndarray] = None
    jordan: Optional[JordanSpec] = None

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        d = self.A.shape[0]
        if self.A.shape != (d, d):
            raise DimensionMismatch(f"A must be square, got {self.A.shape}")
        self.B = np.asarray(self.B, dtype=float).reshape(d, -1)
        if self.C is not None:
            self.C = np.atleast_2d(np.asarray(self.C, dtype=float))
            if self.C.shape[1] != d:
                raise DimensionMismatch(f"C has {self.C.shape[1]} columns, state dim is {d}")
        if self.x0 is not None:
            self.x0 = np.asarray(self.x0, dtype=float).reshape(d)

    @property
    def d(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def n(self) -> int:
        return 0 if self.C is None else self.C.shape[0]

    def spectral_radius(self) -> float:
        """Exact from the Jordan description when available, else an
        upper-biased ||A^k||^(1/k) estimate at k = 2^30 (inf if it overflows)."""
        if self.jordan is not None:
            return self.jordan.spectral_radius
        try:
            return spectral_radius_estimate(self.A, 1 << 30)
        except Overflow:
            return math.inf

    def validate(self) -> list:
        """Return a list of violated invariants (empty when valid)."""
        problems = []
        if self.spectral_radius() > 1.0 + 1e-6:
            problems.append("spectral radius of A exceeds 1")
        if self.m and operator_norm(self.B) > self.bounds.CB * (1 + 1e-9) + 1e-12:
            problems.append("||B||_2 exceeds declared C_B")
        if self.x0 is not None and np.linalg.norm(self.x0) > self.bounds.C0 * (1 + 1e-12):
            problems.append("||x0|| exceeds declared C0")
        return problems

    def to_dict(self) -> dict:
        b = self.bounds
        return {
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "C": None if self.C is None else self.C.tolist(),
            "noise": self.noise.to_dict(),
            "bounds": {"C0": b.C0, "Cu": b.Cu, "Cxi": b.Cxi, "Ceta": b.Ceta, "CB": b.CB, "CC": b.CC},
            "r": self.r,
            "C_A": self.C_A,
            "x0": None if self.x0 is None else self.x0.tolist(),
            "jordan": None if self.jordan is None else self.jordan.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SystemSpec":
        A = np.asarray(d["A"], dtype=float)
        B = np.asarray(d.get("B") if d.get("B") is not None else np.zeros((A.shape[0], 0)), dtype=float)
        return cls(
            A=A,
            B=B.reshape(A.shape[0], -1),
            C=None if d.get("C") is None else np.asarray(d["C"], dtype=float),
            noise=NoiseConfig.from_dict(d.get("noise", {})),
            bounds=Bounds(**d.get("bounds", {})),
            r=int(d.get("r", 1)),
            C_A=float(d.get("C_A", 1.0)),
            x0=None if d.get("x0") is None else np.asarray(d["x0"], dtype=float),
            jordan=None if d.get("jordan") is None else JordanSpec.from_dict(d["jordan"]),
        )


@dataclass
class Trajectory:
    """One simulated run. ``process_noise[t-1]`` holds xi_t for t = 1..T."""

    states: np.ndarray
    inputs: np.ndarray
    process_noise: np.ndarray
    observations: Optional[np.ndarray] = None
    obs_noise: Optional[np.ndarray] = None

    @property
    def T(self) -> int:
        return self.states.shape[0] - 1

    def recurrence_residual(self, A, B) -> np.ndarray:
        x = self.states
        out = np.empty_like(self.process_noise)
        for t in range(1, self.T + 1):
            out[t - 1] = x[t] - (A @ x[t - 1] + B @ self.inputs[t - 1]) - self.process_noise[t - 1]
        return out


# ---------------------------------------------------------------------------
# construction


def jordan_matrix(spec: JordanSpec) -> np.ndarray:
    """Real block-diagonal Jordan form: complex pairs become 2x2
    rotation-scale cells with identity super-cells."""
    n = spec.dim
    J = np.zeros((n, n))
    i = 0
    for b in spec.blocks:
        if b.is_real:
            lam = b.magnitude * (1.0 if math.cos(b.phase) > 0 else -1.0)
            for k in range(b.size):
                J[i + k, i + k] = lam
                if k + 1 < b.size:
                    J[i + k, i + k + 1] = 1.0
            i += b.size
        else:
            c, s = math.cos(b.phase), math.sin(b.phase)
            cell = b.magnitude * np.array([[c, -s], [s, c]])
            for k in range(b.size):
                j = i + 2 * k
                J[j : j + 2, j : j + 2] = cell
                if k + 1 < b.size:
                    J[j : j + 2, j + 2 : j + 4] = np.eye(2)
            i += 2 * b.size
    return J


def _random_orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.where(np.diag(r) == 0, 1.0, np.diag(r)))


def similarity_matrix(spec: JordanSpec) -> np.ndarray:
    """S = Q1 diag(s) Q2 with s geometric from 1 to C_A, so cond(S) = C_A."""
    n = spec.dim
    if spec.similarity == "identity":
        return np.eye(n)
    rng = make_rng(spec.seed, STREAM_SIMILARITY)
    q1 = _random_orthogonal(rng, n)
    q2 = _random_orthogonal(rng, n)
    if n == 1:
        scale = np.ones(1)
    else:
        scale = spec.condition ** (np.arange(n) / (n - 1))
    return (q1 * scale) @ q2


def _scaled_gaussian(rng, shape, target_norm) -> np.ndarray:
    if 0 in shape or target_norm == 0:
        return np.zeros(shape)
    M = rng.standard_normal(shape)
    return M * (target_norm / operator_norm(M))


def build_jordan_system(
    spec: JordanSpec,
    input_dim: int = 0,
    obs_dim: int = 0,
    bounds: Bounds | None = None,
    noise: NoiseConfig | None = None,
    x0=None,
) -> SystemSpec:
    """Build A = S J S^-1 plus seeded B (norm C_B) and C (norm C_C)."""
    if input_dim < 0 or obs_dim < 0:
        raise DimensionMismatch("dimensions must be non-negative")
    bounds = bounds or Bounds()
    J = jordan_matrix(spec)
    S = similarity_matrix(spec)
    A = S @ J @ np.linalg.inv(S)
    if spec.similarity == "identity":
        A = J.copy()
    rng = make_rng(spec.seed, STREAM_MATRICES)
    d = spec.dim
    B = _scaled_gaussian(rng, (d, input_dim), bounds.CB)
    C = _scaled_gaussian(rng, (obs_dim, d), bounds.CC) if obs_dim else None
    return SystemSpec(
        A=A,
        B=B,
        C=C,
        noise=noise or NoiseConfig(kind="bounded_iid", c_xi=bounds.Cxi),
        bounds=bounds,
        r=spec.max_block,
        C_A=spec.condition,
        x0=x0,
        jordan=spec,
    )


# ---------------------------------------------------------------------------
# noise


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    lam, V = sym_eig(m)
    return (V * np.sqrt(np.clip(lam, 0.0, None))) @ V.T


def _uniform_ball(rng, count: int, dim: int, radius: float) -> np.ndarray:
    # the first dim coordinates of a normalized (dim+2)-Gaussian are uniform in
    # the ball; one row per step keeps shorter runs a prefix of longer ones
    g = rng.standard_normal((count, dim + 2))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return g[:, :dim] / norms * radius


def bounded_noise(rng, count: int, dim: int, c_xi: float, distribution: str) -> np.ndarray:
    if distribution == "uniform-ball":
        return _uniform_ball(rng, count, dim, c_xi)
    out = np.zeros((count, dim))
    k = rng.integers(0, 2 * dim, size=count)
    out[np.arange(count), k // 2] = np.where(k % 2 == 0, 1.0, -1.0) * c_xi
    return out


def adversarial_noise_step(gram, c_xi: float, state=None) -> np.ndarray:
    """C_xi times the least-variance eigenvector of ``gram``.

    The sign makes the inner product with ``state`` positive; on a tie the
    first nonzero coordinate is made positive.
    """
    gram = np.atleast_2d(np.asarray(gram, dtype=float))
    lam, V = sym_eig(gram)
    # degenerate smallest eigenvalue: prefer the lowest-index axis direction
    smallest = lam[-1]
    tied = np.where(np.abs(lam - smallest) <= 1e-12 * max(1.0, abs(lam[0])))[0]
    if len(tied) > 1:
        basis = V[:, tied]
        d = gram.shape[0]
        w = None
        for i in range(d):
            proj = basis @ (basis.T @ np.eye(d)[i])
            if np.linalg.norm(proj) > 1e-8:
                w = proj
                break
        w = w / np.linalg.norm(w)
    else:
        w = V[:, -1].copy()
    if state is not None:
        ip = float(w @ np.asarray(state, dtype=float))
        if abs(ip) > 1e-14 * max(1.0, float(np.linalg.norm(state))):
            if ip < 0:
                w = -w
            return c_xi * w
    nz = np.flatnonzero(np.abs(w) > 1e-14)
    if nz.size and w[nz[0]] < 0:
        w = -w
    return c_xi * w


def write_noise_csv(path, noise) -> None:
    """CSV with header ``t,xi_1..xi_d`` and one row per t = 1..T."""
    noise = np.atleast_2d(np.asarray(noise, dtype=float))
    d = noise.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"xi_{i + 1}" for i in range(d)])
        for t, row in enumerate(noise, start=1):
            w.writerow([t] + [repr(float(v)) for v in row])


def read_noise_csv(path, dim: int | None = None, T: int | None = None) -> np.ndarray:
    p = Path(path)
    if not p.exists():
        raise NoiseFileMissing(f"noise file not found: {path}")
    with open(p, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "t":
        raise ValueError(f"{path}: missing 't,xi_1..' header")
    data = np.array([[float(v) for v in r[1:]] for r in rows[1:] if r], dtype=float)
    if data.size == 0:
        data = np.zeros((0, len(rows[0]) - 1))
    if dim is not None and data.shape[1] != dim:
        raise DimensionMismatch(f"{path}: {data.shape[1]} noise columns, expected {dim}")
    if T is not None:
        if data.shape[0] < T:
            raise DimensionMismatch(f"{path}: {data.shape[0]} rows, need {T}")
        data = data[:T]
    return data


InputPolicy = Union[str, Callable[[int, np.ndarray, np.random.Generator], np.ndarray], np.ndarray]


def _input_sequence(policy: InputPolicy, sys: SystemSpec, T: int, seed: int):
    """Returns a function t, x_t -> u_t."""
    m = sys.m
    if isinstance(policy, np.ndarray):
        seq = np.asarray(policy, dtype=float).reshape(T, m)
        return lambda t, x: seq[t]
    if callable(policy):
        rng = make_rng(seed, STREAM_INPUT)
        return lambda t, x: np.asarray(policy(t, x, rng), dtype=float).reshape(m)
    if policy in (None, "zero"):
        zero = np.zeros(m)
        return lambda t, x: zero
    if policy == "bounded_random":
        seq = _uniform_ball(make_rng(seed, STREAM_INPUT), T, m, sys.bounds.Cu) if m else np.zeros((T, 0))
        return lambda t, x: seq[t]
    raise ValueError(f"unknown input policy {policy!r}")


def _initial_state(sys: SystemSpec, x0, seed: int) -> np.ndarray:
    if x0 is not None:
        return np.asarray(x0, dtype=float).reshape(sys.d).copy()
    if sys.x0 is not None:
        return sys.x0.copy()
    return _uniform_ball(make_rng(seed, STREAM_INITIAL), 1, sys.d, sys.bounds.C0)[0]


def simulate_full(
    sys: SystemSpec,
    inputs: InputPolicy = "zero",
    T: int = 100,
    seed: int = 0,
    x0=None,
) -> Trajectory:
    """Simulate x_t = A x_{t-1} + B u_{t-1} + xi_t for t = 1..T.

    The stored noise is recomputed from the states after each step so the
    recurrence holds exactly on the stored arrays. Adversarial noise uses the
    Gram matrix of all states seen so far.
    """
    if T < 1:
        raise ValueError("horizon T must be >= 1")
    d, m = sys.d, sys.m
    nc = sys.noise
    x = np.empty((T + 1, d))
    u = np.empty((T, m))
    xi = np.empty((T, d))
    x[0] = _initial_state(sys, x0, seed)
    policy = _input_sequence(inputs, sys, T, seed)

    if nc.kind == "gaussian":
        sx = _psd_sqrt(nc.sigma_x if nc.sigma_x is not None else np.eye(d))
        raw = make_rng(seed, STREAM_PROCESS).standard_normal((T, d)) @ sx.T
    elif nc.kind == "bounded_iid":
        raw = bounded_noise(make_rng(seed, STREAM_PROCESS), T, d, nc.c_xi, nc.distribution)
    elif nc.kind == "file":
        raw = read_noise_csv(nc.path, dim=d, T=T)
    elif nc.kind == "none":
        raw = np.zeros((T, d))
    else:
        raw = None
    gram = np.outer(x[0], x[0]) if raw is None else None

    for t in range(1, T + 1):
        u[t - 1] = policy(t - 1, x[t - 1])
        pred = sys.A @ x[t - 1] + sys.B @ u[t - 1]
        if raw is None:
            noise = adversarial_noise_step(gram, nc.c_xi, pred)
        else:
            noise = raw[t - 1]
        x[t] = pred + noise
        xi[t - 1] = x[t] - pred
        if gram is not None:
            gram += np.outer(x[t], x[t])
    return Trajectory(states=x, inputs=u, process_noise=xi)


def simulate_partial(
    sys: SystemSpec,
    T: int = 100,
    seed: int = 0,
    inputs: InputPolicy = "zero",
    x0_mean=None,
    x0=None,
) -> Trajectory:
    """Simulate the partially observed system y_t = C x_t + eta_t, t = 0..T.

    The initial state is drawn from N(x0_mean, P) with P the steady-state
    predictive covariance, unless ``x0`` is given explicitly.
    """
    if sys.C is None:
        raise RequiresObservationMatrix("partial observation needs an observation matrix C")
    nc = sys.noise
    if nc.kind not in ("gaussian", "none"):
        raise ValueError("partial observation requires gaussian noise")
    if T < 1:
        raise ValueError("horizon T must be >= 1")
    d, m, n = sys.d, sys.m, sys.n
    sigma_x = nc.sigma_x if nc.sigma_x is not None else np.eye(d)
    sigma_y = nc.sigma_y if nc.sigma_y is not None else np.eye(n)
    if nc.kind == "none":
        sigma_x = np.zeros((d, d))
        sigma_y = np.zeros((n, n))

    x = np.empty((T + 1, d))
    if x0 is not None:
        x[0] = np.asarray(x0, dtype=float).reshape(d)
    else:
        from .kalman import solve_dare

        mean = np.zeros(d) if x0_mean is None else np.asarray(x0_mean, dtype=float).reshape(d)
        P = solve_dare(sys.A, sys.C, sigma_x, sigma_y).P
        x[0] = mean + _psd_sqrt(P) @ make_rng(seed, STREAM_INITIAL).standard_normal(d)

    raw_xi = make_rng(seed, STREAM_PROCESS).standard_normal((T, d)) @ _psd_sqrt(sigma_x).T
    eta = make_rng(seed, STREAM_OBSERVATION).standard_normal((T + 1, n)) @ _psd_sqrt(sigma_y).T
    policy = _input_sequence(inputs, sys, T, seed)
    u = np.empty((T, m))
    xi = np.empty((T, d))
    y = np.empty((T + 1, n))
    y[0] = sys.C @ x[0] + eta[0]
    for t in range(1, T + 1):
        u[t - 1] = policy(t - 1, y[t - 1])
        pred = sys.A @ x[t - 1] + sys.B @ u[t - 1]
        x[t] = pred + raw_xi[t - 1]
        xi[t - 1] = x[t] - pred
        y[t] = sys.C @ x[t] + eta[t]
    return Trajectory(states=x, inputs=u, process_noise=xi, observations=y, obs_noise=eta)


def counterexample_instance(T: int, sign: int = 1):
    """Regression pairs (x_t, y_t), t = 1..T: zeros until the last step,
    then x_T = T and y_T = sign * T."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if sign not in (-1, 1):
        raise ValueError("sign must be -1 or +1")
    xs = np.zeros((T, 1))
    ys = np.zeros((T, 1))
    xs[-1, 0] = T
    ys[-1, 0] = sign * T
    return xs, ys


def state_growth_bound(sys: SystemSpec, T: int) -> float:
    """(T+1)^(r-1) C_A C0 + C_A C_B C_u T^r + C_A C_xi T^r."""
    b = sys.bounds
    r = sys.r
    return (
        (T + 1) ** (r - 1) * sys.C_A * b.C0
        + sys.C_A * b.CB * b.Cu * T**r
        + sys.C_A * b.Cxi * T**r
    )
