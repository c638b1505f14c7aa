"""LTI plant models: the four-tank benchmark, random test systems, simulation."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import _kernels
from .core import ConstraintSet, DimensionError, Setpoint, SystemDims

# Linearized, discretized four-tank process.
FOUR_TANK_A = np.array([
    [0.921, 0.0, 0.041, 0.0],
    [0.0, 0.918, 0.0, 0.033],
    [0.0, 0.0, 0.924, 0.0],
    [0.0, 0.0, 0.0, 0.937],
])
FOUR_TANK_B = np.array([
    [0.017, 0.001],
    [0.001, 0.023],
    [0.0, 0.061],
    [0.072, 0.0],
])
FOUR_TANK_C = np.array([
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
])
FOUR_TANK_U_S = np.array([1.0, 1.0])
# Nominal output setpoint as usually quoted; not an exact equilibrium of the
# three-decimal matrices above (steady state is about [0.644, 0.753]).
FOUR_TANK_Y_S_QUOTED = np.array([0.65, 0.77])


def ctrb(A, B) -> np.ndarray:
    n = A.shape[0]
    blocks = [B]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks)


def obsv(A, C) -> np.ndarray:
    n = A.shape[0]
    blocks = [C]
    for _ in range(n - 1):
        blocks.append(blocks[-1] @ A)
    return np.vstack(blocks)


def observability_index(A, C) -> int:
    """Smallest ``k`` with ``rank [C; CA; ...; CA^(k-1)] = n``."""
    n = A.shape[0]
    O = C
    for k in range(1, n + 1):
        if np.linalg.matrix_rank(O) == n:
            return k
        O = np.vstack([O, O[-C.shape[0]:] @ A])
    raise ValueError("pair (A, C) is not observable")


@dataclass(frozen=True)
class StateSpaceModel:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: Optional[np.ndarray] = None

    def __post_init__(self):
        A, B, C = (np.atleast_2d(np.asarray(M, float)) for M in (self.A, self.B, self.C))
        n = A.shape[0]
        if A.shape != (n, n) or B.shape[0] != n or C.shape[1] != n:
            raise DimensionError(f"inconsistent model shapes A{A.shape} B{B.shape} C{C.shape}")
        D = np.zeros((C.shape[0], B.shape[1])) if self.D is None else np.atleast_2d(np.asarray(self.D, float))
        if D.shape != (C.shape[0], B.shape[1]):
            raise DimensionError(f"D has shape {D.shape}, expected {(C.shape[0], B.shape[1])}")
        for name, M in zip("ABCD", (A, B, C, D)):
            M.setflags(write=False)
            object.__setattr__(self, name, M)

    @property
    def dims(self) -> SystemDims:
        n = self.A.shape[0]
        return SystemDims(self.B.shape[1], self.C.shape[0], n, observability_index(self.A, self.C))

    def is_controllable(self) -> bool:
        return np.linalg.matrix_rank(ctrb(self.A, self.B)) == self.A.shape[0]

    def steady_state(self, u_s) -> tuple:
        """State and output reached by holding ``u_s`` (requires ``I - A`` invertible)."""
        n = self.A.shape[0]
        x = np.linalg.solve(np.eye(n) - self.A, self.B @ np.asarray(u_s, float))
        return x, self.C @ x + self.D @ u_s

    def simulate(self, x0, U) -> tuple:
        U = np.atleast_2d(np.asarray(U, float))
        return _kernels.simulate(self.A, self.B, self.C, self.D, np.asarray(x0, float), U)

    def to_json(self) -> str:
        return json.dumps({k: getattr(self, k).tolist() for k in "ABCD"})

    @classmethod
    def from_json(cls, text: str) -> "StateSpaceModel":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValueError(f"model file line {exc.lineno}: {exc.msg}") from exc
        missing = [k for k in "ABC" if k not in d]
        if missing:
            raise ValueError(f"model file is missing matrices {missing}")
        return cls(d["A"], d["B"], d["C"], d.get("D"))

    @classmethod
    def load(cls, path) -> "StateSpaceModel":
        return cls.from_json(Path(path).read_text())


@dataclass(frozen=True)
class FourTank:
    model: StateSpaceModel
    setpoint: Setpoint
    constraints: ConstraintSet
    W: np.ndarray
    L: int = 16
    x_s: np.ndarray = field(default=None, repr=False)


def four_tank(quoted_setpoint: bool = False) -> FourTank:
    """The four-tank benchmark with its setpoint, input box, stage weight and horizon.

    By default the output setpoint is the exact steady state of the stored
    matrices under ``u_s = [1, 1]``; ``quoted_setpoint=True`` returns the
    rounded ``[0.65, 0.77]`` instead, which is not an equilibrium of them.
    """
    model = StateSpaceModel(FOUR_TANK_A, FOUR_TANK_B, FOUR_TANK_C)
    x_s, y_s = model.steady_state(FOUR_TANK_U_S)
    if quoted_setpoint:
        y_s = FOUR_TANK_Y_S_QUOTED
    sp = Setpoint(FOUR_TANK_U_S, y_s)
    cons = ConstraintSet.box([-2.0, -2.0], [2.0, 2.0], p=2)
    W = np.diag([1e-2, 1e-2, 3.0, 3.0])
    return FourTank(model, sp, cons, W, 16, x_s)


def four_tank_dims() -> SystemDims:
    return SystemDims(m=2, p=2, n=4, ell=2)


def random_system(rng: np.random.Generator, m: int, p: int, n: int, radius=(0.3, 0.95)) -> StateSpaceModel:
    """Random stable, controllable and observable system with ``D = 0``."""
    for _ in range(100):
        Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
        eig = rng.uniform(*radius, size=n) * rng.choice([-1.0, 1.0], size=n)
        S = rng.standard_normal((n, n)) * 0.3
        A = S @ np.diag(eig) @ np.linalg.inv(S) if abs(np.linalg.det(S)) > 1e-3 else Q @ np.diag(eig) @ Q.T
        B = rng.standard_normal((n, m))
        C = rng.standard_normal((p, n))
        model = StateSpaceModel(A, B, C)
        if (model.is_controllable() and np.linalg.matrix_rank(obsv(A, C)) == n
                and np.linalg.cond(ctrb(A, B)) < 1e6 and np.linalg.cond(obsv(A, C)) < 1e6):
            return model
    raise RuntimeError("could not draw a well-conditioned random system")


class LtiPlant:
    """Stateful plant with optional bounded uniform output noise.

    ``step(u)`` advances one sample and returns the measured output; the
    noise-free output is kept in ``last_true_y``.
    """

    def __init__(self, model: StateSpaceModel, x0, eps_bar: float = 0.0, rng: Optional[np.random.Generator] = None):
        self.model = model
        self.x = np.array(x0, dtype=float)
        if self.x.shape != (model.A.shape[0],):
            raise DimensionError(f"initial state has shape {self.x.shape}, expected ({model.A.shape[0]},)")
        self.eps_bar = float(eps_bar)
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.last_true_y = None

    @property
    def dims(self) -> SystemDims:
        return self.model.dims

    def step(self, u) -> np.ndarray:
        u = np.asarray(u, float)
        if u.shape != (self.model.B.shape[1],):
            raise DimensionError(f"input has shape {u.shape}, expected ({self.model.B.shape[1]},)")
        y = self.model.C @ self.x + self.model.D @ u
        self.x = self.model.A @ self.x + self.model.B @ u
        self.last_true_y = y
        if self.eps_bar > 0:
            return y + self.rng.uniform(-self.eps_bar, self.eps_bar, size=y.shape)
        return y.copy()
