"""Trajectories, Hankel matrices, excitation checks, constraint sets, setpoints.

Stacking convention: a trajectory is stored as a ``(T, q)`` array whose rows
are ``w_t = [u_t; y_t]``. Its stacked-vector view interleaves per time step.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import _kernels

RANK_RTOL = 1e-10


class DimensionError(ValueError):
    """Raised when array shapes or sizes are inconsistent."""


@dataclass(frozen=True)
class SystemDims:
    m: int
    p: int
    n: int
    ell: int

    def __post_init__(self):
        if self.m < 1 or self.p < 1 or self.n < 1:
            raise ValueError(f"need m, p, n >= 1, got m={self.m}, p={self.p}, n={self.n}")
        if not 1 <= self.ell <= self.n:
            raise ValueError(f"lag must satisfy 1 <= ell <= n, got ell={self.ell}, n={self.n}")

    @property
    def q(self) -> int:
        return self.m + self.p

    def to_dict(self) -> dict:
        return {"m": self.m, "p": self.p, "n": self.n, "ell": self.ell}

    @classmethod
    def from_dict(cls, d: dict) -> "SystemDims":
        return cls(int(d["m"]), int(d["p"]), int(d["n"]), int(d["ell"]))


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Trajectory:
    """Input-output record. ``u`` is ``(T, m)``, ``y`` is ``(T, p)``."""

    u: np.ndarray
    y: np.ndarray
    dims: SystemDims

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if u.ndim == 1:
            u = u[:, None]
        if y.ndim == 1:
            y = y[:, None]
        if u.shape[1] != self.dims.m or y.shape[1] != self.dims.p:
            raise DimensionError(
                f"samples must have {self.dims.m} inputs and {self.dims.p} outputs, "
                f"got {u.shape[1]} and {y.shape[1]}")
        if u.shape[0] != y.shape[0]:
            raise DimensionError(f"input length {u.shape[0]} != output length {y.shape[0]}")
        if u.shape[0] < 1:
            raise DimensionError("trajectory must have at least one sample")
        object.__setattr__(self, "u", _frozen(u))
        object.__setattr__(self, "y", _frozen(y))

    @property
    def T(self) -> int:
        return self.u.shape[0]

    @property
    def w(self) -> np.ndarray:
        """Per-step samples as a ``(T, q)`` array."""
        return np.hstack([self.u, self.y])

    def stacked(self) -> np.ndarray:
        return self.w.ravel()

    @classmethod
    def from_w(cls, w, dims: SystemDims) -> "Trajectory":
        w = np.asarray(w, dtype=float).reshape(-1, dims.q)
        return cls(w[:, :dims.m], w[:, dims.m:], dims)

    def window(self, start: int, stop: int) -> "Trajectory":
        return Trajectory(self.u[start:stop], self.y[start:stop], self.dims)

    # -- serialization -------------------------------------------------
    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t"] + [f"u{i + 1}" for i in range(self.dims.m)]
                        + [f"y{i + 1}" for i in range(self.dims.p)])
        for t in range(self.T):
            writer.writerow([t] + [repr(float(v)) for v in self.u[t]] + [repr(float(v)) for v in self.y[t]])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source, dims: Optional[SystemDims] = None, n: int = 1, ell: int = 1) -> "Trajectory":
        """Read the CSV form. When ``dims`` is missing, m and p come from the header."""
        text = Path(source).read_text() if not isinstance(source, str) or "\n" not in source else source
        rows = list(csv.reader(io.StringIO(text)))
        if not rows:
            raise ValueError("empty trajectory CSV")
        header = rows[0]
        if not header or header[0] != "t":
            raise ValueError(f"line 1: expected header starting with 't', got {header!r}")
        m = sum(1 for h in header if h.startswith("u"))
        p = sum(1 for h in header if h.startswith("y"))
        if dims is None:
            dims = SystemDims(m, p, max(n, 1), max(min(ell, n), 1))
        elif (m, p) != (dims.m, dims.p):
            raise DimensionError(f"CSV has m={m}, p={p} but dims say m={dims.m}, p={dims.p}")
        data = np.empty((len(rows) - 1, m + p))
        for k, row in enumerate(rows[1:]):
            if len(row) != m + p + 1:
                raise ValueError(f"line {k + 2}: expected {m + p + 1} fields, got {len(row)}")
            data[k] = [float(v) for v in row[1:]]
        return cls(data[:, :m], data[:, m:], dims)

    def to_json(self) -> str:
        return json.dumps({"dims": self.dims.to_dict(), "u": self.u.tolist(), "y": self.y.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "Trajectory":
        d = json.loads(text)
        return cls(np.array(d["u"], dtype=float), np.array(d["y"], dtype=float), SystemDims.from_dict(d["dims"]))


@dataclass(frozen=True)
class HankelMatrix:
    depth: int
    data: np.ndarray
    source: Optional[Trajectory] = field(default=None, repr=False, compare=False)


@dataclass(frozen=True)
class ConstraintSet:
    u_lower: np.ndarray
    u_upper: np.ndarray
    y_lower: np.ndarray
    y_upper: np.ndarray

    def __post_init__(self):
        for lo, hi, name in ((self.u_lower, self.u_upper, "u"), (self.y_lower, self.y_upper, "y")):
            lo, hi = np.atleast_1d(np.asarray(lo, float)), np.atleast_1d(np.asarray(hi, float))
            if lo.shape != hi.shape:
                raise DimensionError(f"{name} bounds have mismatched shapes {lo.shape} and {hi.shape}")
            if np.any(lo > hi):
                raise ValueError(f"{name} lower bound exceeds upper bound")
            object.__setattr__(self, f"{name}_lower", _frozen(lo))
            object.__setattr__(self, f"{name}_upper", _frozen(hi))

    @classmethod
    def box(cls, u_lower, u_upper, p: int) -> "ConstraintSet":
        """Input box with unconstrained outputs."""
        return cls(u_lower, u_upper, np.full(p, -np.inf), np.full(p, np.inf))

    def contains_u(self, u, atol: float = 0.0) -> bool:
        u = np.asarray(u, float)
        return bool(np.all(u >= self.u_lower - atol) and np.all(u <= self.u_upper + atol))

    def strictly_contains(self, sp: "Setpoint") -> bool:
        return bool(np.all(sp.u_s > self.u_lower) and np.all(sp.u_s < self.u_upper)
                    and np.all(sp.y_s > self.y_lower) and np.all(sp.y_s < self.y_upper))


@dataclass(frozen=True)
class Setpoint:
    u_s: np.ndarray
    y_s: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "u_s", _frozen(np.atleast_1d(self.u_s)))
        object.__setattr__(self, "y_s", _frozen(np.atleast_1d(self.y_s)))

    @property
    def w_s(self) -> np.ndarray:
        return np.concatenate([self.u_s, self.y_s])

    def w_s_n(self, n: int) -> np.ndarray:
        return np.tile(self.w_s, n)


def rank_threshold(s: np.ndarray, shape) -> float:
    if s.size == 0:
        return 0.0
    return max(shape) * s[0] * RANK_RTOL


def numerical_rank(M: np.ndarray) -> int:
    M = np.asarray(M, float)
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    return int(np.sum(s > rank_threshold(s, M.shape)))


def build_hankel(w, depth: int) -> HankelMatrix:
    """Depth-``depth`` Hankel matrix of a trajectory or a ``(T, q)`` array.

    Column ``j`` is the stacked window ``w_[j, j+depth-1]``.
    """
    source = w if isinstance(w, Trajectory) else None
    data = w.w if isinstance(w, Trajectory) else np.asarray(w, float)
    if data.ndim == 1:
        data = data[:, None]
    T = data.shape[0]
    if depth < 1:
        raise DimensionError(f"depth must be positive, got {depth}")
    if depth > T:
        raise DimensionError(f"Hankel depth {depth} exceeds trajectory length T={T}")
    return HankelMatrix(depth, _kernels.hankel(data, depth), source)


def pe_order(u, order: int) -> bool:
    """True iff ``u`` is persistently exciting of the given order."""
    u = np.asarray(u, float)
    if u.ndim == 1:
        u = u[:, None]
    m = u.shape[1]
    H = build_hankel(u, order).data
    target = m * order
    if H.shape[1] < target:
        return False
    s = np.linalg.svd(H, compute_uv=False)
    return bool(s[target - 1] > rank_threshold(s, H.shape))


def behavior_rank_check(w: Trajectory, depth: int, dims: SystemDims, noisy: bool = False) -> dict:
    """Compare the rank of the depth-``depth`` Hankel matrix with ``m*depth + n``.

    Noise-free data must hit the target exactly; noisy data only needs to
    reach it.
    """
    H = build_hankel(w, depth).data
    target = dims.m * depth + dims.n
    s = np.linalg.svd(H, compute_uv=False)
    thr = rank_threshold(s, H.shape)
    rank = int(np.sum(s > thr))
    reaches = target <= s.size and s[target - 1] > thr
    if noisy:
        satisfied = bool(reaches)
    else:
        satisfied = bool(reaches and (s.size == target or s[target] <= thr))
    return {"rank": rank, "target": target, "satisfied": satisfied}


def is_equilibrium(sp: Setpoint, model, tol: float = 1e-9) -> bool:
    """Check that holding ``u_s`` reproduces ``y_s`` for ``n + 1`` steps.

    The consistent steady state is found by least squares on
    ``[A - I, B; C, D] [x; u] = [0; y]`` with ``u = u_s``.
    """
    A, B, C, D = model.A, model.B, model.C, model.D
    n = A.shape[0]
    lhs = np.vstack([A - np.eye(n), C])
    rhs = np.concatenate([-B @ sp.u_s, sp.y_s - D @ sp.u_s])
    x, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    U = np.tile(sp.u_s, (n + 1, 1))
    X, Y = _kernels.simulate(A, B, C, D, x, U)
    scale = max(1.0, float(np.max(np.abs(sp.y_s))))
    return bool(np.max(np.abs(Y - sp.y_s)) <= tol * scale and np.max(np.abs(X[1:] - x)) <= tol * scale * 10)
