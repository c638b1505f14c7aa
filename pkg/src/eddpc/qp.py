"""Dense convex QP solver and the controller problem assembler.

Solves ``min 1/2 z'Hz + f'z  s.t.  A z = b,  lb <= z <= ub`` with a Mehrotra
primal-dual interior-point method, then polishes the result on the
identified active set with a null-space solve. The polish yields
KKT residuals near machine precision and, when the optimizer is not unique,
the minimum-norm optimizer.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-8


class QpInputError(ValueError):
    """Malformed problem data (NaN/Inf, inconsistent shapes, asymmetric H)."""


class ConfigError(ValueError):
    """Invalid controller configuration."""


@dataclass
class QpProblem:
    H: np.ndarray
    f: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    c0: float = 0.0
    labels: dict = field(default_factory=dict)

    @property
    def nz(self) -> int:
        return self.f.size

    def objective(self, z) -> float:
        return float(0.5 * z @ self.H @ z + self.f @ z + self.c0)

    def validate(self) -> None:
        nz = self.f.size
        if self.H.shape != (nz, nz):
            raise QpInputError(f"H has shape {self.H.shape}, expected {(nz, nz)}")
        if self.A_eq.shape != (self.b_eq.size, nz):
            raise QpInputError(f"A_eq has shape {self.A_eq.shape}, expected {(self.b_eq.size, nz)}")
        if self.lb.shape != (nz,) or self.ub.shape != (nz,):
            raise QpInputError("bound vectors must match the variable count")
        for name in ("H", "f", "A_eq", "b_eq"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise QpInputError(f"{name} contains NaN or Inf")
        if np.any(np.isnan(self.lb)) or np.any(np.isnan(self.ub)):
            raise QpInputError("bounds contain NaN")
        if np.any(self.lb == np.inf) or np.any(self.ub == -np.inf):
            raise QpInputError("bounds exclude every real value")
        asym = np.abs(self.H - self.H.T).max() if nz else 0.0
        if asym > 1e-10 * max(1.0, np.abs(self.H).max()):
            raise QpInputError(f"H is not symmetric (max asymmetry {asym:.2e})")

    def dump(self, path) -> None:
        """Write the problem as labeled row-major blocks for external cross-checks."""
        with open(path, "w") as fh:
            for name in ("H", "f", "A_eq", "b_eq", "lb", "ub"):
                M = np.atleast_2d(getattr(self, name))
                fh.write(f"# {name} {M.shape[0]} {M.shape[1]}\n")
                for row in M:
                    fh.write(" ".join(repr(float(v)) for v in row) + "\n")


@dataclass
class QpSolution:
    z: np.ndarray
    objective: float
    status: str
    kkt: dict
    y: Optional[np.ndarray] = None
    lam_lower: Optional[np.ndarray] = None
    lam_upper: Optional[np.ndarray] = None
    iterations: int = 0
    certificate: Optional[dict] = None

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def kkt_residuals(qp: QpProblem, z, y, lam_l, lam_u) -> dict:
    """Infinity-norm KKT residuals. Negative multipliers count as complementarity error.

    ``scaled`` is the largest residual relative to the magnitude of the terms
    it is formed from, so it is invariant to rescaling the problem data.
    """
    Hz, Aty = qp.H @ z, qp.A_eq.T @ y
    Az = qp.A_eq @ z
    grad = Hz + qp.f - Aty - lam_l + lam_u
    s_l = np.where(np.isfinite(qp.lb), z - qp.lb, np.inf)
    s_u = np.where(np.isfinite(qp.ub), qp.ub - z, np.inf)
    viol = np.max(np.maximum(0.0, -np.minimum(s_l, s_u)), initial=0.0)
    comp_l = np.abs(lam_l * np.where(np.isfinite(s_l), s_l, 0.0))
    comp_u = np.abs(lam_u * np.where(np.isfinite(s_u), s_u, 0.0))
    comp = max(np.max(comp_l, initial=0.0), np.max(comp_u, initial=0.0),
               np.max(-lam_l, initial=0.0), np.max(-lam_u, initial=0.0))
    inf = lambda v: float(np.max(np.abs(v), initial=0.0))
    out = {
        "stationarity": inf(grad),
        "primal_equality": inf(Az - qp.b_eq),
        "bound_violation": float(viol),
        "complementarity": float(comp),
    }
    lam = max(inf(lam_l), inf(lam_u))
    z_mag = 1.0 + inf(z)
    out["scaled"] = max(out["stationarity"] / (1.0 + max(inf(Hz), inf(qp.f), inf(Aty), lam)),
                        out["primal_equality"] / (1.0 + max(inf(Az), inf(qp.b_eq))),
                        out["bound_violation"] / z_mag,
                        out["complementarity"] / ((1.0 + lam) * z_mag))
    return out


def kkt_ok(qp: QpProblem, kkt: dict, tol: float = DEFAULT_TOL) -> bool:
    return bool(kkt) and kkt["scaled"] <= tol


# -- interior point ------------------------------------------------------

def _interior_start(lb, ub, z0=None):
    z = np.zeros_like(lb) if z0 is None else np.array(z0, float)
    both = np.isfinite(lb) & np.isfinite(ub)
    lo = np.isfinite(lb) & ~np.isfinite(ub)
    hi = ~np.isfinite(lb) & np.isfinite(ub)
    width = np.where(both, ub - lb, 1.0)
    margin = np.minimum(0.1 * width, 1.0)
    z = np.where(both, np.clip(z, lb + margin, ub - margin), z)
    z = np.where(lo, np.maximum(z, lb + 1.0), z)
    z = np.where(hi, np.minimum(z, ub - 1.0), z)
    return z


def _step_length(v, dv):
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return min(1.0, float(np.min(-v[neg] / dv[neg])))


def _ipm(qp: QpProblem, tol: float, max_iter: int, z0=None):
    H, f, A, b, lb, ub = qp.H, qp.f, qp.A_eq, qp.b_eq, qp.lb, qp.ub
    nz, neq = f.size, b.size
    il = np.flatnonzero(np.isfinite(lb))
    iu = np.flatnonzero(np.isfinite(ub))
    z = _interior_start(lb, ub, z0)
    y = np.zeros(neq)
    lam_l = np.ones(il.size)
    lam_u = np.ones(iu.size)
    n_comp = il.size + iu.size
    scale_f = 1.0 + np.max(np.abs(f), initial=0.0)
    scale_b = 1.0 + np.max(np.abs(b), initial=0.0)
    reg = 1e-11 * max(1.0, np.max(np.abs(np.diag(H)), initial=0.0))
    K = np.zeros((nz + neq, nz + neq))
    K[nz:, :nz] = A
    K[:nz, nz:] = A.T
    K[nz:, nz:] = -1e-13 * np.eye(neq)
    it = 0
    converged = False
    for it in range(1, max_iter + 1):
        s_l = z[il] - lb[il]
        s_u = ub[iu] - z[iu]
        if np.any(s_l <= 0) or np.any(s_u <= 0):
            break  # iterate hit a bound: step lengths underflowed
        lam_full = np.zeros(nz)
        lam_full[il] -= lam_l
        lam_full[iu] += lam_u
        r_d = H @ z + f - A.T @ y + lam_full
        r_p = A @ z - b
        mu = (s_l @ lam_l + s_u @ lam_u) / n_comp if n_comp else 0.0
        if (np.max(np.abs(r_d), initial=0.0) <= tol * scale_f
                and np.max(np.abs(r_p), initial=0.0) <= tol * scale_b and mu <= tol):
            converged = True
            break
        sig = np.zeros(nz)
        np.add.at(sig, il, lam_l / s_l)
        np.add.at(sig, iu, lam_u / s_u)
        K[:nz, :nz] = H + np.diag(sig + reg)
        try:
            lu = sla.lu_factor(K, check_finite=False)
        except (ValueError, np.linalg.LinAlgError):
            break

        def direction(rc_l, rc_u):
            rhs_z = -r_d.copy()
            np.add.at(rhs_z, il, rc_l / s_l)
            np.add.at(rhs_z, iu, -rc_u / s_u)
            sol = sla.lu_solve(lu, np.concatenate([rhs_z, -r_p]), check_finite=False)
            dz, dy = sol[:nz], -sol[nz:]
            dl = (rc_l - lam_l * dz[il]) / s_l
            du = (rc_u + lam_u * dz[iu]) / s_u
            return dz, dy, dl, du

        # predictor
        dz, dy, dl, du = direction(-s_l * lam_l, -s_u * lam_u)
        if n_comp:
            a_p = min(_step_length(s_l, dz[il]), _step_length(s_u, -dz[iu]))
            a_d = min(_step_length(lam_l, dl), _step_length(lam_u, du))
            mu_aff = ((s_l + a_p * dz[il]) @ (lam_l + a_d * dl)
                      + (s_u - a_p * dz[iu]) @ (lam_u + a_d * du)) / n_comp
            sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
            # corrector
            rc_l = sigma * mu - s_l * lam_l - dz[il] * dl
            rc_u = sigma * mu - s_u * lam_u + dz[iu] * du
            dz, dy, dl, du = direction(rc_l, rc_u)
            a_p = min(1.0, 0.995 * min(_step_length(s_l, dz[il]), _step_length(s_u, -dz[iu])))
            a_d = min(1.0, 0.995 * min(_step_length(lam_l, dl), _step_length(lam_u, du)))
        else:
            a_p = a_d = 1.0
        z = z + a_p * dz
        y = y + a_d * dy
        lam_l = lam_l + a_d * dl
        lam_u = lam_u + a_d * du
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(y))):
            break
    ll = np.zeros(nz)
    lu_ = np.zeros(nz)
    ll[il] = lam_l
    lu_[iu] = lam_u
    return z, y, ll, lu_, it, converged


# -- active-set polish ---------------------------------------------------

def _null_space_solve(qp: QpProblem, at_lower, at_upper):
    """Min-norm optimizer of the equality QP with the given bounds fixed."""
    H, f, A, b = qp.H, qp.f, qp.A_eq, qp.b_eq
    nz = f.size
    z = np.zeros(nz)
    z[at_lower] = qp.lb[at_lower]
    z[at_upper] = qp.ub[at_upper]
    fixed = at_lower | at_upper
    F = np.flatnonzero(~fixed)
    A_F = A[:, F]
    b_F = b - A[:, fixed] @ z[fixed]
    f_F = f[F] + H[np.ix_(F, np.flatnonzero(fixed))] @ z[fixed]
    H_FF = H[np.ix_(F, F)]
    if A_F.shape[0]:
        U, s, Vt = np.linalg.svd(A_F, full_matrices=True)
        tol = max(A_F.shape) * (s[0] if s.size else 0.0) * 1e-13
        r = int(np.sum(s > tol))
        z_p = Vt[:r].T @ ((U[:, :r].T @ b_F) / s[:r])
        N = Vt[r:].T
    else:
        z_p = np.zeros(F.size)
        N = np.eye(F.size)
    if N.shape[1]:
        Hr = N.T @ H_FF @ N
        g = N.T @ (H_FF @ z_p + f_F)
        w, V = np.linalg.eigh(0.5 * (Hr + Hr.T))
        keep = w > max(w.max(initial=0.0), 1.0) * 1e-13 * max(1, w.size)
        yv = -V[:, keep] @ ((V[:, keep].T @ g) / w[keep])
        z_F = z_p + N @ yv
    else:
        z_F = z_p
    z[F] = z_F
    grad = H @ z + f
    # multipliers: A_F' y = grad_F
    yeq, *_ = np.linalg.lstsq(A_F.T, grad[F], rcond=None) if A_F.shape[0] else (np.zeros(0),)
    red = grad - A.T @ yeq
    lam_l = np.where(at_lower, red, 0.0)
    lam_u = np.where(at_upper, -red, 0.0)
    return z, yeq, lam_l, lam_u


def _polish(qp: QpProblem, z, lam_l, lam_u, tol, max_rounds=30):
    lb, ub = qp.lb, qp.ub
    s_l = z - lb
    s_u = ub - z
    at_lower = np.isfinite(lb) & (lam_l > s_l)
    at_upper = np.isfinite(ub) & (lam_u > s_u) & ~at_lower
    scale = 1.0 + np.max(np.abs(qp.f), initial=0.0)
    for _ in range(max_rounds):
        z_new, y, ll, lu = _null_space_solve(qp, at_lower, at_upper)
        low_v = np.isfinite(lb) & (z_new < lb - tol * scale)
        up_v = np.isfinite(ub) & (z_new > ub + tol * scale)
        neg_l = at_lower & (ll < -tol * scale)
        neg_u = at_upper & (lu < -tol * scale)
        if not (low_v.any() or up_v.any() or neg_l.any() or neg_u.any()):
            z_new = np.clip(z_new, lb, ub)
            return z_new, y, np.maximum(ll, 0.0), np.maximum(lu, 0.0), True
        # one change per round keeps the set update monotone in practice
        if neg_l.any() or neg_u.any():
            worst_l = np.where(neg_l, ll, 0.0)
            worst_u = np.where(neg_u, lu, 0.0)
            if worst_l.min() <= worst_u.min():
                at_lower[np.argmin(worst_l)] = False
            else:
                at_upper[np.argmin(worst_u)] = False
        at_lower |= low_v
        at_upper |= up_v
    return None


def _phase1_certificate(qp: QpProblem) -> Optional[dict]:
    """LP check that ``A z = b`` meets the box; returns a certificate if not."""
    from scipy.optimize import linprog

    nz, neq = qp.nz, qp.b_eq.size
    if neq == 0:
        return None
    c = np.concatenate([np.zeros(nz), np.ones(2 * neq)])
    A = np.hstack([qp.A_eq, np.eye(neq), -np.eye(neq)])
    bounds = [(None if not np.isfinite(l) else l, None if not np.isfinite(u) else u)
              for l, u in zip(qp.lb, qp.ub)] + [(0, None)] * (2 * neq)
    res = linprog(c, A_eq=A, b_eq=qp.b_eq, bounds=bounds, method="highs")
    if res.status == 0 and res.fun > 1e-9 * (1 + np.abs(qp.b_eq).max()):
        y = np.asarray(res.eqlin.marginals)
        return {"kind": "equality_vs_bounds", "y": y.tolist(), "infeasibility": float(res.fun)}
    return None


def solve(qp: QpProblem, tol: float = DEFAULT_TOL, max_iter: int = 100, z0=None) -> QpSolution:
    """Solve a convex QP and certify the result through its KKT residuals."""
    qp.validate()
    nz = qp.nz
    if np.any(qp.lb > qp.ub):
        bad = int(np.argmax(qp.lb > qp.ub))
        return QpSolution(np.full(nz, np.nan), np.nan, "infeasible", {}, certificate={
            "kind": "empty_box", "index": bad, "lb": float(qp.lb[bad]), "ub": float(qp.ub[bad])})
    if qp.b_eq.size:
        z_ls, *_ = np.linalg.lstsq(qp.A_eq, qp.b_eq, rcond=None)
        r = qp.b_eq - qp.A_eq @ z_ls
        if np.max(np.abs(r)) > 1e-9 * (1 + np.max(np.abs(qp.b_eq))):
            return QpSolution(np.full(nz, np.nan), np.nan, "infeasible", {}, certificate={
                "kind": "inconsistent_equalities", "y": r.tolist(), "b_dot_y": float(qp.b_eq @ r)})

    z, y, ll, lu, iters, converged = _ipm(qp, min(tol, 1e-9), max_iter, z0)
    polished = _polish(qp, z, ll, lu, tol) if np.all(np.isfinite(z)) else None
    if polished is not None:
        zp, yp, llp, lup, _ = polished
        kkt = kkt_residuals(qp, zp, yp, llp, lup)
        if kkt_ok(qp, kkt, tol):
            return QpSolution(zp, qp.objective(zp), "optimal", kkt, yp, llp, lup, iters)
    if np.all(np.isfinite(z)):
        kkt = kkt_residuals(qp, z, y, ll, lu)
        if kkt_ok(qp, kkt, tol):
            return QpSolution(z, qp.objective(z), "optimal", kkt, y, ll, lu, iters)
    cert = _phase1_certificate(qp)
    if cert is not None:
        return QpSolution(z, np.nan, "infeasible", {}, certificate=cert, iterations=iters)
    kkt = kkt_residuals(qp, z, y, ll, lu) if np.all(np.isfinite(z)) else {}
    log.debug("QP stopped after %d iterations without certification: %s", iters, kkt)
    return QpSolution(z, qp.objective(z) if kkt else np.nan, "max_iter", kkt, y, ll, lu, iters)


# -- controller problem --------------------------------------------------

@dataclass(frozen=True)
class ControllerLayout:
    """Index ranges of ``[beta | w_hat over k=-n..L-1 | sigma]``."""

    n_beta: int
    n_w: int
    n_sigma: int

    @property
    def beta(self) -> slice:
        return slice(0, self.n_beta)

    @property
    def w(self) -> slice:
        return slice(self.n_beta, self.n_beta + self.n_w)

    @property
    def sigma(self) -> slice:
        return slice(self.n_beta + self.n_w, self.n_beta + self.n_w + self.n_sigma)

    @property
    def size(self) -> int:
        return self.n_beta + self.n_w + self.n_sigma


def assemble_controller_qp(P, window, setpoint, W, constraints, L: int, n: int, m: int, *,
                           robust: bool = False, eps_bar: float = 0.0, lambda_beta: float = 0.0,
                           lambda_sigma: float = 0.0, mu_beta: float = 0.5, mu_sigma: float = 0.5,
                           slack_policy: str = "full_q", soft_terminal: Optional[float] = None) -> QpProblem:
    """Map the predictive control problem onto :class:`QpProblem`.

    Equality rows, in order: prediction consistency ``w_hat + sigma = P beta``,
    the initial window, and the terminal window at the setpoint. Input boxes
    apply to ``u`` components of ``w_hat`` for ``k = 0..L-1``.
    """
    P = np.asarray(P, float)
    q = setpoint.w_s.size
    p = q - m
    Lt = L + n
    n_w = q * Lt
    if P.shape[0] != n_w:
        raise ConfigError(f"predictor has {P.shape[0]} rows, expected q(L+n) = {n_w}")
    window = np.asarray(window, float).ravel()
    if window.size != q * n:
        raise ConfigError(f"initial window must hold {n} samples ({q * n} values), got {window.size}")
    if not robust:
        slack_policy = "none"
    if slack_policy == "full_q":
        S = np.eye(n_w)
    elif slack_policy == "outputs_p":
        rows = [k * q + m + j for k in range(Lt) for j in range(p)]
        S = np.zeros((n_w, len(rows)))
        S[rows, np.arange(len(rows))] = 1.0
    elif slack_policy == "none":
        S = np.zeros((n_w, 0))
    else:
        raise ConfigError(f"unknown slack policy {slack_policy!r}")
    lay = ControllerLayout(P.shape[1], n_w, S.shape[1])
    nz = lay.size

    H = np.zeros((nz, nz))
    f = np.zeros(nz)
    w_s = setpoint.w_s
    W = np.asarray(W, float)
    c0 = 0.0
    for k in range(L):
        i0 = lay.w.start + (n + k) * q
        H[i0:i0 + q, i0:i0 + q] += 2 * W
        f[i0:i0 + q] -= 2 * W @ w_s
        c0 += float(w_s @ W @ w_s)
    if robust:
        if lambda_sigma > 0 and eps_bar <= 0:
            raise ConfigError("slack weight lambda_sigma / eps_bar^mu_sigma needs eps_bar > 0")
        if eps_bar > 0 and lambda_beta > 0:
            H[lay.beta, lay.beta] += 2 * lambda_beta * eps_bar ** mu_beta * np.eye(lay.n_beta)
        if lay.n_sigma and lambda_sigma > 0:
            H[lay.sigma, lay.sigma] += 2 * lambda_sigma / eps_bar ** mu_sigma * np.eye(lay.n_sigma)

    blocks = []
    rhs = []
    # w_hat + S sigma - P beta = 0
    Acons = np.zeros((n_w, nz))
    Acons[:, lay.beta] = -P
    Acons[:, lay.w] = np.eye(n_w)
    Acons[:, lay.sigma] = S
    blocks.append(Acons)
    rhs.append(np.zeros(n_w))
    # initial window
    Aini = np.zeros((q * n, nz))
    Aini[:, lay.w.start:lay.w.start + q * n] = np.eye(q * n)
    blocks.append(Aini)
    rhs.append(window)
    term_idx = np.arange(lay.w.start + q * L, lay.w.start + q * Lt)
    if soft_terminal is None:
        Aterm = np.zeros((q * n, nz))
        Aterm[np.arange(q * n), term_idx] = 1.0
        blocks.append(Aterm)
        rhs.append(setpoint.w_s_n(n))
    else:
        target = setpoint.w_s_n(n)
        H[term_idx, term_idx] += 2 * soft_terminal
        f[term_idx] -= 2 * soft_terminal * target
        c0 += soft_terminal * float(target @ target)

    lb = np.full(nz, -np.inf)
    ub = np.full(nz, np.inf)
    for k in range(L):
        i0 = lay.w.start + (n + k) * q
        lb[i0:i0 + m] = constraints.u_lower
        ub[i0:i0 + m] = constraints.u_upper
        lb[i0 + m:i0 + q] = constraints.y_lower
        ub[i0 + m:i0 + q] = constraints.y_upper
    labels = {"beta": lay.beta, "w": lay.w, "sigma": lay.sigma, "layout": lay}
    return QpProblem(H, f, np.vstack(blocks), np.concatenate(rhs), lb, ub, c0, labels)
