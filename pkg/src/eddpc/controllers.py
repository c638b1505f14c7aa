"""Receding-horizon data-driven controllers over a shared plant interface.

All schemes (efficient kernel-based predictor, raw Hankel predictor, and
SVD-reduced Hankel predictor) differ only in the predictor matrix handed to
:func:`eddpc.qp.assemble_controller_qp`.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .core import ConstraintSet, DimensionError, Setpoint, SystemDims
from .qp import ConfigError, assemble_controller_qp, solve
from .representation import Predictor

log = logging.getLogger(__name__)

SCHEMES = ("eddpc", "ddpc", "svd_ddpc")
SLACK_POLICIES = ("full_q", "outputs_p", "none")


class FeasibilityError(RuntimeError):
    """The predictive control problem has no solution at this time step."""

    def __init__(self, message, certificate=None):
        super().__init__(message)
        self.certificate = certificate


@dataclass(frozen=True)
class ControllerSpec:
    scheme: str
    L: int
    W: np.ndarray
    setpoint: Setpoint
    constraints: ConstraintSet
    mode: str = "nominal"
    lambda_beta: float = 0.0
    lambda_sigma: float = 0.0
    mu_beta: float = 0.5
    mu_sigma: float = 0.5
    eps_bar: float = 0.0
    slack_policy: str = "full_q"
    steps_per_solve: Optional[int] = None
    soft_terminal: Optional[float] = None

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.mode not in ("nominal", "robust"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.slack_policy not in SLACK_POLICIES:
            raise ConfigError(f"unknown slack policy {self.slack_policy!r}")
        if min(self.lambda_beta, self.lambda_sigma, self.eps_bar) < 0:
            raise ConfigError("regularization weights and eps_bar must be nonnegative")
        if self.mode == "nominal":
            object.__setattr__(self, "slack_policy", "none")
            object.__setattr__(self, "steps_per_solve", 1)
        else:
            if self.mu_beta <= 0 or self.mu_sigma <= 0:
                raise ConfigError("mu_beta and mu_sigma must be positive")
            if self.mu_beta + self.mu_sigma >= 2:
                raise ConfigError(f"mu_beta + mu_sigma = {self.mu_beta + self.mu_sigma} must be < 2")
            if self.lambda_sigma > 0 and self.eps_bar <= 0 and self.slack_policy != "none":
                raise ConfigError("robust mode with lambda_sigma > 0 needs eps_bar > 0")
        if self.steps_per_solve is not None and self.steps_per_solve < 1:
            raise ConfigError("steps_per_solve must be at least 1")

    def resolved_steps(self, n: int) -> int:
        if self.steps_per_solve is not None:
            return self.steps_per_solve
        return 1 if self.mode == "nominal" else n

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("W", "setpoint", "constraints")}
        d["W"] = np.asarray(self.W).tolist()
        d["setpoint"] = {"u_s": self.setpoint.u_s.tolist(), "y_s": self.setpoint.y_s.tolist()}
        d["constraints"] = {k: np.asarray(getattr(self.constraints, k)).tolist()
                            for k in ("u_lower", "u_upper", "y_lower", "y_upper")}
        return d


@dataclass
class SolveRecord:
    t: int
    w_hat: np.ndarray
    beta: np.ndarray
    sigma: np.ndarray
    objective: float
    status: str
    applied: np.ndarray
    kkt: dict = field(default_factory=dict)
    kkt_scaled: float = math.nan  # the quantity kkt_ok tests


def baseline_regressor_dim(spec: ControllerSpec, T: int, dims: SystemDims) -> int:
    if spec.scheme == "ddpc":
        return T - spec.L - dims.n + 1
    return dims.m * (spec.L + dims.n) + dims.n


def plan(spec: ControllerSpec, predictor: Predictor, window, t: int = 0) -> SolveRecord:
    """Solve the predictive control problem for the measured ``n``-sample window."""
    dims = predictor.dims
    n, m, q = dims.n, dims.m, dims.q
    if predictor.horizon_total != spec.L + n:
        raise DimensionError(f"predictor horizon {predictor.horizon_total} != L+n = {spec.L + n}")
    window = np.asarray(window, float)
    if window.shape != (n, q):
        raise DimensionError(f"window must be {n} x {q}, got {window.shape}")
    qp = assemble_controller_qp(
        predictor.P, window, spec.setpoint, spec.W, spec.constraints, spec.L, n, m,
        robust=spec.mode == "robust", eps_bar=spec.eps_bar, lambda_beta=spec.lambda_beta,
        lambda_sigma=spec.lambda_sigma, mu_beta=spec.mu_beta, mu_sigma=spec.mu_sigma,
        slack_policy=spec.slack_policy, soft_terminal=spec.soft_terminal)
    sol = solve(qp)
    if not sol.optimal:
        raise FeasibilityError(f"t={t}: QP status {sol.status}", sol.certificate or sol.kkt)
    lay = qp.labels["layout"]
    z = sol.z
    w_hat = z[lay.w].reshape(spec.L + n, q)
    k = spec.resolved_steps(n)
    applied = w_hat[n:n + k, :m].copy()
    return SolveRecord(t, w_hat, z[lay.beta].copy(), z[lay.sigma].copy(), sol.objective, sol.status,
                       applied, sol.kkt, sol.kkt["scaled"])


@dataclass
class RunResult:
    spec: dict
    u: np.ndarray
    y: np.ndarray
    y_measured: np.ndarray
    cost: float
    records: list
    solves: int
    infeasible: list
    failed: bool
    seconds: float
    hard_terminal: bool = True
    meta: dict = field(default_factory=dict)

    @property
    def w(self) -> np.ndarray:
        return np.hstack([self.u, self.y])

    def to_json(self, include_records: bool = False) -> str:
        d = {
            "config": self.spec,
            "u": self.u.tolist(),
            "y": self.y.tolist(),
            "y_measured": self.y_measured.tolist(),
            "cost": self.cost,
            "solves": self.solves,
            "infeasible": self.infeasible,
            "failed": self.failed,
            "hard_terminal": self.hard_terminal,
            "seconds": self.seconds,
            "meta": self.meta,
        }
        if include_records:
            d["records"] = [{"t": r.t, "objective": r.objective, "status": r.status,
                             "applied": r.applied.tolist()} for r in self.records]
        return json.dumps(d)

    def to_csv(self) -> str:
        m, p = self.u.shape[1], self.y.shape[1]
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["t"] + [f"u{i + 1}" for i in range(m)] + [f"y{i + 1}" for i in range(p)]
                    + [f"ym{i + 1}" for i in range(p)])
        for t in range(self.u.shape[0]):
            wr.writerow([t] + [repr(float(v)) for v in self.u[t]] + [repr(float(v)) for v in self.y[t]]
                        + [repr(float(v)) for v in self.y_measured[t]])
        return buf.getvalue()


def accumulated_cost(u, y, setpoint: Setpoint, R, Q) -> float:
    """Sum over the run of ``|u_t - u_s|_R^2 + |y_t - y_s|_Q^2``."""
    du = np.asarray(u, float) - setpoint.u_s
    dy = np.asarray(y, float) - setpoint.y_s
    return float(np.einsum("ti,ij,tj->", du, np.asarray(R, float), du)
                 + np.einsum("ti,ij,tj->", dy, np.asarray(Q, float), dy))


def warmup_window(plant, setpoint: Setpoint, n: int):
    """Drive the plant ``n`` steps at ``u_s``; returns the measured ``(n, q)`` window."""
    rows = []
    for _ in range(n):
        y = plant.step(setpoint.u_s)
        rows.append(np.concatenate([setpoint.u_s, y]))
    return np.array(rows)


def run_closed_loop(spec: ControllerSpec, predictor: Predictor, plant, T_sim: int,
                    R=None, Q=None, window=None, retry_soft: Optional[float] = None) -> RunResult:
    """Apply the receding-horizon policy to ``plant`` for ``T_sim`` steps.

    The first window comes from :func:`warmup_window` unless given. On an
    infeasible solve the run aborts, or, with ``retry_soft`` set, re-solves
    with a penalized terminal condition and reports ``hard_terminal=False``.
    """
    dims = predictor.dims
    n, m, q = dims.n, dims.m, dims.q
    if plant.model.B.shape[1] != m or plant.model.C.shape[0] != dims.p:
        raise DimensionError("plant dimensions do not match the predictor")
    R = np.asarray(R if R is not None else np.asarray(spec.W)[:m, :m], float)
    Q = np.asarray(Q if Q is not None else np.asarray(spec.W)[m:, m:], float)
    k = spec.resolved_steps(n)
    win = warmup_window(plant, spec.setpoint, n) if window is None else np.asarray(window, float)
    start = time.perf_counter()
    us, ys, yms, records, infeasible = [], [], [], [], []
    failed = False
    hard = spec.soft_terminal is None
    t = 0
    solves = 0
    while t < T_sim:
        try:
            rec = plan(spec, predictor, win, t)
        except FeasibilityError as exc:
            infeasible.append({"t": t, "reason": str(exc)})
            if retry_soft is None:
                log.warning("aborting run: %s", exc)
                failed = True
                break
            soft = ControllerSpec(**{**spec.__dict__, "soft_terminal": retry_soft})
            try:
                rec = plan(soft, predictor, win, t)
            except FeasibilityError as exc2:
                infeasible.append({"t": t, "reason": f"soft retry: {exc2}"})
                failed = True
                break
            hard = False
        solves += 1
        records.append(rec)
        for u in rec.applied:
            if t >= T_sim:
                break
            u = np.clip(u, spec.constraints.u_lower, spec.constraints.u_upper)
            y_meas = plant.step(u)
            us.append(u)
            ys.append(plant.last_true_y)
            yms.append(y_meas)
            win = np.vstack([win[1:], np.concatenate([u, y_meas])])
            t += 1
    u_arr = np.array(us).reshape(-1, m)
    y_arr = np.array(ys).reshape(-1, dims.p)
    cost = accumulated_cost(u_arr, y_arr, spec.setpoint, R, Q) if not failed else math.nan
    return RunResult(spec.to_dict(), u_arr, y_arr, np.array(yms).reshape(-1, dims.p), cost, records,
                     solves, infeasible, failed, time.perf_counter() - start, hard,
                     {"predictor": predictor.provenance, "regressor_dim": predictor.regressor_dim})
