"""Data-driven predictors built from a kernel representation of the data.

Pipeline: depth-``d`` Hankel matrix, optional rank-``md+n`` denoising, left
nullspace ``R_d``, shift-stacked matrix ``Gamma`` over ``L + n`` samples, and
finally ``P = null(Gamma)`` whose image estimates the restricted behavior.
"""
from __future__ import annotations

import itertools
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import DimensionError, SystemDims, Trajectory, build_hankel, rank_threshold
from .numerics import cadzow_slra, nullspace, tsvd

log = logging.getLogger(__name__)

PROVENANCES = ("exact", "tsvd", "slra", "hankel", "svd_reduced")
DEFAULT_ROW_BUDGET = 2000


class DegenerateDataError(ValueError):
    """The data matrix does not reach the rank ``md + n`` the representation needs."""


@dataclass(frozen=True)
class KernelRep:
    R_d: np.ndarray
    d: int
    dims: SystemDims
    source: str = "exact"

    def block(self, rows, j: int) -> np.ndarray:
        """Coefficients ``r_{i,j}`` (each ``1 x q``) for the given rows."""
        q = self.dims.q
        return self.R_d[rows, q * j:q * (j + 1)]


@dataclass(frozen=True)
class GammaMatrix:
    data: np.ndarray
    shifts: int
    selected_rows: tuple
    condition_number: float


@dataclass(frozen=True)
class Predictor:
    P: np.ndarray
    horizon_total: int
    provenance: str
    dims: SystemDims
    d: Optional[int] = None
    L: Optional[int] = None
    metadata: dict = field(default_factory=dict)

    @property
    def regressor_dim(self) -> int:
        return self.P.shape[1]

    def to_json(self) -> str:
        return json.dumps({
            "provenance": self.provenance,
            "dims": self.dims.to_dict(),
            "d": self.d,
            "L": self.L,
            "horizon_total": self.horizon_total,
            "shape": list(self.P.shape),
            "matrix": self.P.ravel().tolist(),
            "metadata": self.metadata,
        })

    @classmethod
    def from_json(cls, text: str) -> "Predictor":
        d = json.loads(text)
        P = np.array(d["matrix"], dtype=float).reshape(d["shape"])
        return cls(P, int(d["horizon_total"]), d["provenance"], SystemDims.from_dict(d["dims"]),
                   d.get("d"), d.get("L"), d.get("metadata", {}))


def min_samples_eddpc(dims: SystemDims, d: int) -> int:
    return (dims.m + 1) * (d + dims.n) - 1


def min_samples_ddpc(dims: SystemDims, L: int) -> int:
    """Shared by the Hankel and SVD-reduced baselines."""
    return (dims.m + 1) * (L + 2 * dims.n) - 1


def kernel_rep(H, dims: SystemDims, d: int, source: str = "exact") -> KernelRep:
    """Rows spanning the left nullspace of a depth-``d`` data matrix."""
    H = np.asarray(getattr(H, "data", H), float)
    q = dims.q
    if H.shape[0] != q * d:
        raise DimensionError(f"expected {q * d} rows for depth {d}, got {H.shape[0]}")
    target = dims.m * d + dims.n
    s = np.linalg.svd(H, compute_uv=False)
    if s.size < target or s[target - 1] <= rank_threshold(s, H.shape):
        rank = int(np.sum(s > rank_threshold(s, H.shape))) if s.size else 0
        raise DegenerateDataError(
            f"data matrix has rank {rank} < m*d+n = {target}; input not exciting enough")
    R_d = nullspace(H.T, target_nullity=q * d - target).T
    return KernelRep(R_d, d, dims, source)


def build_gamma(rep: KernelRep, selected: Sequence[int], L_total: int) -> GammaMatrix:
    """Stack ``R_d`` and ``L_total - d`` right-shifted copies of the selected rows."""
    d, dims = rep.d, rep.dims
    q, p, n = dims.q, dims.p, dims.n
    if L_total < d:
        raise DimensionError(f"total horizon {L_total} shorter than depth {d}")
    selected = tuple(int(i) for i in selected)
    if len(selected) != p:
        raise DimensionError(f"need {p} selected rows, got {len(selected)}")
    shifts = L_total - d
    head = rep.R_d.shape[0]
    G = np.zeros((head + p * shifts, q * L_total))
    G[:head, :q * d] = rep.R_d
    sel = rep.R_d[list(selected)]
    for r in range(1, shifts + 1):
        G[head + p * (r - 1):head + p * r, q * r:q * r + q * d] = sel
    s = np.linalg.svd(G, compute_uv=False)
    k = p * L_total - n
    cond = float(s[0] / s[k - 1]) if s[k - 1] > 0 else math.inf
    return GammaMatrix(G, shifts, selected, cond)


def select_rows(rep: KernelRep, L_total: int, budget: int = DEFAULT_ROW_BUDGET, seed: int = 0) -> tuple:
    """Pick ``p`` rows of ``R_d`` whose shifted copies give the best conditioned Gamma.

    All subsets are scored when there are at most ``budget`` of them;
    otherwise ``budget`` distinct subsets are drawn at random. Ties go to the
    earliest candidate.
    """
    N = rep.R_d.shape[0]
    p = rep.dims.p
    if N == p or L_total == rep.d:
        return tuple(range(p))
    total = math.comb(N, p)
    if total <= budget:
        candidates = list(itertools.combinations(range(N), p))
    else:
        rng = np.random.default_rng(seed)
        seen = set()
        candidates = []
        while len(candidates) < max(budget, 1):
            c = tuple(sorted(rng.choice(N, size=p, replace=False).tolist()))
            if c not in seen:
                seen.add(c)
                candidates.append(c)
    best, best_cond = candidates[0], math.inf
    for c in candidates:
        cond = build_gamma(rep, c, L_total).condition_number
        if cond < best_cond:
            best, best_cond = c, cond
    return best


def denoise_hankel(traj: Trajectory, dims: SystemDims, d: int, method: str = "none", **slra_kw):
    """Depth-``d`` Hankel matrix of ``traj``, optionally reduced to rank ``md + n``."""
    H = build_hankel(traj, d)
    r = dims.m * d + dims.n
    if method == "none":
        return H.data, {}
    if r > min(H.data.shape):
        raise DegenerateDataError(f"depth-{d} Hankel matrix {H.data.shape} cannot have rank {r}")
    if method == "tsvd":
        return tsvd(H.data, r), {}
    if method == "slra":
        res = cadzow_slra(H, r, **slra_kw)
        info = {"slra_iterations": res.iterations, "slra_converged": res.converged}
        if not res.converged:
            log.warning("Cadzow iteration did not converge in %d steps", res.iterations)
        return res.H_hat, info
    raise ValueError(f"unknown denoise method {method!r}")


@dataclass(frozen=True)
class PipelineResult:
    H_hat: np.ndarray
    rep: KernelRep
    gamma: GammaMatrix
    predictor: Predictor


def run_pipeline(traj: Trajectory, dims: SystemDims, d: int, L: int, denoise: str = "none",
                 budget: int = DEFAULT_ROW_BUDGET, seed: int = 0, **slra_kw) -> PipelineResult:
    """Offline pipeline keeping the intermediate matrices (see :func:`predictor_from_data`)."""
    if d < dims.ell + 1:
        raise ValueError(f"depth d={d} must be at least ell+1={dims.ell + 1}")
    if L + dims.n < d:
        raise ValueError(f"L+n={L + dims.n} must be at least d={d}")
    need = min_samples_eddpc(dims, d)
    if traj.T < need:
        warnings.warn(f"T={traj.T} below the minimum {need} for depth {d}", stacklevel=3)
    H, info = denoise_hankel(traj, dims, d, denoise, **slra_kw)
    source = "exact" if denoise == "none" else denoise
    rep = kernel_rep(H, dims, d, source)
    L_total = L + dims.n
    rows = select_rows(rep, L_total, budget, seed)
    gamma = build_gamma(rep, rows, L_total)
    P = nullspace(gamma.data, target_nullity=dims.m * L_total + dims.n)
    meta = {"T": traj.T, "d": d, "gamma_condition": gamma.condition_number,
            "selected_rows": list(rows), **info}
    log.debug("predictor %s: cond(Gamma)=%.3e", source, gamma.condition_number)
    return PipelineResult(H, rep, gamma, Predictor(P, L_total, source, dims, d, L, meta))


def predictor_from_data(traj: Trajectory, dims: SystemDims, d: int, L: int, denoise: str = "none",
                        budget: int = DEFAULT_ROW_BUDGET, seed: int = 0, **slra_kw) -> Predictor:
    """Full offline pipeline producing a ``q(L+n) x (m(L+n)+n)`` orthonormal predictor.

    Steps: depth-``d`` Hankel matrix, optional denoising to rank ``md+n``
    (``"tsvd"`` or ``"slra"``), kernel rows, best-conditioned row subset,
    Gamma over ``L+n`` samples, and its nullspace.
    """
    return run_pipeline(traj, dims, d, L, denoise, budget, seed, **slra_kw).predictor


def hankel_predictor(traj: Trajectory, L_total: int, dims: Optional[SystemDims] = None) -> Predictor:
    """Raw depth-``L_total`` Hankel matrix used as predictor (DDPC baseline)."""
    if traj.T < L_total:
        raise DimensionError(f"T={traj.T} shorter than horizon {L_total}")
    dims = dims or traj.dims
    H = build_hankel(traj, L_total).data
    return Predictor(H, L_total, "hankel", dims, None, L_total - dims.n, {"T": traj.T})


def svd_predictor(traj: Trajectory, L_total: int, dims: Optional[SystemDims] = None) -> Predictor:
    """Leading ``m*L_total + n`` scaled left singular vectors of the Hankel matrix."""
    if traj.T < L_total:
        raise DimensionError(f"T={traj.T} shorter than horizon {L_total}")
    dims = dims or traj.dims
    H = build_hankel(traj, L_total).data
    r = dims.m * L_total + dims.n
    U, s, _ = np.linalg.svd(H, full_matrices=False)
    if s.size < r or s[r - 1] <= rank_threshold(s, H.shape):
        raise DegenerateDataError(f"Hankel matrix of depth {L_total} has rank below {r}")
    return Predictor(U[:, :r] * s[:r], L_total, "svd_reduced", dims, None, L_total - dims.n, {"T": traj.T})
