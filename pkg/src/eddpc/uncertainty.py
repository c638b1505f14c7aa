"""Subspace uncertainty bounds for predictors estimated from noisy data.

``bound_thm5`` uses measured singular values of the noisy-side matrices only.
``bound_chain`` and ``predictor_distance_bound`` replace them by noise-free
(oracle) singular values, which are only available in simulation.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .core import DimensionError, SystemDims
from .numerics import PrincipalAngles, aligned_basis, nullspace, principal_angles
from .representation import KernelRep, Predictor, build_gamma


@dataclass(frozen=True)
class BoundInputs:
    dims: SystemDims
    T: int
    d: int
    L: int
    eps_bar: float
    delta1: float = math.nan
    delta2: float = math.nan
    s_gamma: Optional[float] = None  # s_{p(L+n)-n} of the noise-free Gamma
    s_hankel: Optional[float] = None  # s_{md+n} of the noise-free depth-d Hankel matrix

    def __post_init__(self):
        if min(self.T, self.d, self.L) < 1:
            raise ValueError("T, d and L must be positive")
        if self.d > self.T:
            raise DimensionError(f"depth d={self.d} exceeds T={self.T}")
        if self.d > self.L + self.dims.n:
            raise DimensionError(f"depth d={self.d} exceeds L+n={self.L + self.dims.n}")
        if self.eps_bar < 0:
            raise ValueError("eps_bar must be nonnegative")

    @property
    def has_oracle(self) -> bool:
        return self.s_gamma is not None and self.s_hankel is not None


@dataclass(frozen=True)
class BoundReport:
    c_theta: float
    c1: float
    rho1: float
    rho1_bar: float
    rho2: float
    bound_thm5: float
    bound_oracle: float
    valid: bool
    margin: float = math.nan
    empirical_sin_theta: Optional[float] = None

    def to_json(self) -> str:
        return json.dumps({k: (None if isinstance(v, float) and not math.isfinite(v) else v)
                           for k, v in asdict(self).items()})


def constants(inp: BoundInputs) -> dict:
    dims = inp.dims
    q, m, n = dims.q, dims.m, dims.n
    r = m * inp.d + n
    cols = inp.T - inp.d + 1
    shifts1 = inp.L + n - inp.d + 1
    c_theta = 8.0 * math.sqrt(q * inp.d * shifts1 * r * cols)
    c1 = math.sqrt(shifts1)
    rho1 = 4.0 * c1 * math.sqrt(2.0 * q * inp.d * r * cols)
    rho2 = 2.0 * math.sqrt(q * inp.d * cols)
    rho1_bar = rho1 / inp.s_gamma if inp.s_gamma else math.nan
    return {"c_theta": c_theta, "c1": c1, "rho1": rho1, "rho1_bar": rho1_bar, "rho2": rho2}


def _chain(inp: BoundInputs, k: dict):
    """Oracle bound value and the denominator margin (NaN without oracle data)."""
    if not inp.has_oracle or inp.s_gamma <= 0:
        return math.nan, math.nan
    margin = inp.s_hankel - (k["rho1_bar"] + k["rho2"]) * inp.eps_bar
    if margin <= 0:
        return math.nan, margin
    return (k["c_theta"] / inp.s_gamma) * inp.eps_bar / margin, margin


def bound_thm5(inp: BoundInputs) -> BoundReport:
    """``C_theta * eps_bar / (delta1 * delta2)``; invalid when a delta is not positive."""
    k = constants(inp)
    valid = bool(inp.delta1 > 0 and inp.delta2 > 0)
    value = k["c_theta"] * inp.eps_bar / (inp.delta1 * inp.delta2) if valid else math.nan
    oracle, margin = _chain(inp, k)
    return BoundReport(bound_thm5=value, bound_oracle=oracle, valid=valid, margin=margin, **k)


def bound_chain(inp: BoundInputs) -> BoundReport:
    """Bound expressed through noise-free singular values; tends to 0 with ``eps_bar``."""
    if not inp.has_oracle:
        raise ValueError("bound_chain needs the oracle singular values s_gamma and s_hankel")
    k = constants(inp)
    oracle, margin = _chain(inp, k)
    value = (k["c_theta"] * inp.eps_bar / (inp.delta1 * inp.delta2)
            if inp.delta1 > 0 and inp.delta2 > 0 else math.nan)
    return BoundReport(bound_thm5=value, bound_oracle=oracle, valid=bool(margin > 0), margin=margin, **k)


def predictor_distance_bound(inp: BoundInputs) -> float:
    """Upper bound on ``|P_hat - P|_F`` for a suitable basis ``P`` of the true behavior."""
    rep = bound_chain(inp)
    if not rep.valid:
        return math.nan
    dims = inp.dims
    return 2.0 * math.sqrt(dims.m * (inp.L + dims.n) + dims.n) * rep.bound_oracle


def delta1_bound(inp: BoundInputs) -> float:
    """Right side of ``1/delta1 <= delta2 / (delta2 s_gamma - rho1 eps_bar)``; NaN if not positive."""
    k = constants(inp)
    den = inp.delta2 * inp.s_gamma - k["rho1"] * inp.eps_bar
    return inp.delta2 / den if den > 0 else math.nan


def empirical_behavior_angle(P_hat: Predictor, P_true: Predictor) -> PrincipalAngles:
    if P_hat.P.shape[0] != P_true.P.shape[0]:
        raise DimensionError(f"predictor row counts differ: {P_hat.P.shape[0]} vs {P_true.P.shape[0]}")
    return principal_angles(P_hat.P, P_true.P)


@dataclass(frozen=True)
class OracleQuantities:
    """Noise-free counterparts aligned with an estimated kernel representation."""

    R_d: np.ndarray
    gamma: np.ndarray
    P: np.ndarray
    s_gamma: float
    s_hankel: float


def oracle_quantities(rep_hat: KernelRep, selected, H_clean, L_total: int) -> OracleQuantities:
    """Kernel rows of the noise-free data, rotated to match ``rep_hat``.

    The true ``R_d`` is the basis of the noise-free left nullspace nearest to
    ``rep_hat.R_d``; its Gamma uses the same selected rows, and ``P`` is the
    basis of the true behavior nearest to the estimated predictor.
    """
    dims, d = rep_hat.dims, rep_hat.d
    H_clean = np.asarray(H_clean, float)
    r = dims.m * d + dims.n
    R_true = nullspace(H_clean.T, target_nullity=dims.q * d - r).T
    R_al = aligned_basis(rep_hat.R_d.T, R_true.T).T
    rep = KernelRep(R_al, d, dims, "exact")
    G = build_gamma(rep, selected, L_total).data
    s = np.linalg.svd(G, compute_uv=False)
    k = dims.p * L_total - dims.n
    s_h = np.linalg.svd(H_clean, compute_uv=False)
    P = nullspace(G, target_nullity=dims.m * L_total + dims.n)
    return OracleQuantities(R_al, G, P, float(s[k - 1]), float(s_h[r - 1]))


def bound_inputs_from_data(rep_hat: KernelRep, gamma_hat, H_hat, T: int, L: int, eps_bar: float,
                           oracle: Optional[OracleQuantities] = None) -> BoundInputs:
    """Collect measured ``delta1``, ``delta2`` (and oracle values, if given)."""
    dims, d = rep_hat.dims, rep_hat.d
    G = np.asarray(getattr(gamma_hat, "data", gamma_hat), float)
    k = dims.p * (L + dims.n) - dims.n
    r = dims.m * d + dims.n
    delta1 = float(np.linalg.svd(G, compute_uv=False)[k - 1])
    delta2 = float(np.linalg.svd(np.asarray(H_hat, float), compute_uv=False)[r - 1])
    return BoundInputs(dims, T, d, L, eps_bar, delta1, delta2,
                       oracle.s_gamma if oracle else None, oracle.s_hankel if oracle else None)
