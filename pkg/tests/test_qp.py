import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from eddpc.core import ConstraintSet, Setpoint
from eddpc.qp import ConfigError, QpInputError, QpProblem, assemble_controller_qp, kkt_ok, solve


def qp(H, f, A=None, b=None, lb=None, ub=None):
    H = np.atleast_2d(np.asarray(H, float))
    nz = H.shape[0]
    A = np.zeros((0, nz)) if A is None else np.atleast_2d(np.asarray(A, float))
    b = np.zeros(0) if b is None else np.atleast_1d(np.asarray(b, float))
    lb = np.full(nz, -np.inf) if lb is None else np.asarray(lb, float)
    ub = np.full(nz, np.inf) if ub is None else np.asarray(ub, float)
    return QpProblem(H, np.asarray(f, float), A, b, lb, ub)


def brute_force(p: QpProblem):
    """Enumerate active sets of a small strictly convex QP; keep the feasible KKT point."""
    nz = p.nz
    best = None
    for pattern in itertools.product((0, -1, 1), repeat=nz):
        fixed = [i for i, s in enumerate(pattern) if s]
        if any(not np.isfinite(p.lb[i] if pattern[i] < 0 else p.ub[i]) for i in fixed):
            continue
        E = np.vstack([p.A_eq] + [np.eye(nz)[i] for i in fixed]) if (p.A_eq.size or fixed) else np.zeros((0, nz))
        e = np.concatenate([p.b_eq, [p.lb[i] if pattern[i] < 0 else p.ub[i] for i in fixed]])
        k = E.shape[0]
        if k > nz or (k and np.linalg.matrix_rank(E) < k):
            continue
        K = np.block([[p.H, -E.T], [E, np.zeros((k, k))]])
        try:
            sol = np.linalg.solve(K, np.concatenate([-p.f, e]))
        except np.linalg.LinAlgError:
            continue
        z, mult = sol[:nz], sol[nz:]
        if np.abs(E @ z - e).max(initial=0.0) > 1e-9:
            continue
        if np.any(z < p.lb - 1e-9) or np.any(z > p.ub + 1e-9):
            continue
        bm = mult[p.b_eq.size:]
        if any((pattern[i] < 0 and bm[j] < -1e-9) or (pattern[i] > 0 and bm[j] > 1e-9)
               for j, i in enumerate(fixed)):
            continue
        val = p.objective(z)
        if best is None or val < best[1] - 1e-12:
            best = (z, val)
    return best


def test_box_example():
    s = solve(qp([[1.0]], [-3.0], lb=[-10], ub=[10]))
    assert s.optimal and abs(s.z[0] - 3) < 1e-10 and abs(s.objective + 4.5) < 1e-10
    s = solve(qp([[1.0]], [-3.0], lb=[-1], ub=[1]))
    assert abs(s.z[0] - 1) < 1e-10 and s.lam_upper[0] > 1.9


def test_equality_example():
    s = solve(qp(np.eye(2), [0, 0], A=[[1, 1]], b=[2]))
    np.testing.assert_allclose(s.z, [1, 1], atol=1e-10)


@given(st.integers(0, 100_000), st.integers(1, 4), st.integers(0, 2))
def test_matches_active_set_enumeration(seed, nz, neq):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((nz, nz))
    H = M @ M.T + 0.1 * np.eye(nz)
    f = 3 * rng.standard_normal(nz)
    neq = min(neq, nz - 1)
    A = rng.standard_normal((neq, nz))
    b = A @ rng.uniform(-0.5, 0.5, nz)
    lb, ub = -np.ones(nz), np.ones(nz)
    lb[rng.random(nz) < 0.3] = -np.inf
    p = qp(H, f, A, b, lb, ub)
    ref = brute_force(p)
    s = solve(p)
    assert ref is not None and s.optimal
    assert abs(s.objective - ref[1]) <= 1e-7 * (1 + abs(ref[1]))
    np.testing.assert_allclose(s.z, ref[0], atol=1e-6)
    assert kkt_ok(p, s.kkt, 1e-8)


def test_degenerate_hessian_gives_min_norm():
    # H = 0 on the second coordinate: any z2 in [-1, 1] is optimal
    s = solve(qp([[1.0, 0], [0, 0]], [-1, 0], lb=[-1, -1], ub=[1, 1]))
    assert s.optimal
    np.testing.assert_allclose(s.z, [1, 0], atol=1e-8)


def test_infeasible_certificates():
    s = solve(qp(np.eye(2), [0, 0], A=[[1, 1], [1, 1]], b=[0, 1]))
    assert s.status == "infeasible" and s.certificate["kind"] == "inconsistent_equalities"
    s = solve(qp(np.eye(2), [0, 0], A=[[1, 1]], b=[5], lb=[-1, -1], ub=[1, 1]))
    assert s.status == "infeasible" and s.certificate["kind"] == "equality_vs_bounds"
    y = np.array(s.certificate["y"])
    assert abs(abs(y[0]) - 1) < 1e-9
    s = solve(qp(np.eye(1), [0], lb=[1], ub=[0]))
    assert s.certificate["kind"] == "empty_box"


def test_input_validation():
    with pytest.raises(QpInputError, match="NaN"):
        solve(qp([[1.0]], [np.nan]))
    with pytest.raises(QpInputError, match="symmetric"):
        solve(qp([[1.0, 1.0], [0.0, 1.0]], [0, 0]))
    with pytest.raises(QpInputError, match="shape"):
        solve(QpProblem(np.eye(2), np.zeros(3), np.zeros((0, 3)), np.zeros(0), np.zeros(3), np.ones(3)))


def _controller_case(robust=True, **kw):
    m, p, n, L = 1, 1, 1, 3
    P = np.linalg.qr(np.random.default_rng(0).standard_normal((2 * (L + n), 3)))[0]
    sp = Setpoint([0.0], [0.0])
    cons = ConstraintSet.box([-1], [1], p=1)
    return assemble_controller_qp(P, [0.0, 0.0], sp, np.eye(2), cons, L, n, m, robust=robust,
                                  eps_bar=1e-2, lambda_beta=1.0, lambda_sigma=1.0, **kw)


def test_controller_qp_layout():
    p = _controller_case(slack_policy="full_q")
    lay = p.labels["layout"]
    assert (lay.n_beta, lay.n_w, lay.n_sigma) == (3, 8, 8)
    assert p.A_eq.shape == (8 + 2 + 2, 19)
    assert np.all(np.isinf(p.lb[lay.beta])) and np.all(np.isinf(p.lb[lay.sigma]))
    # u bounds on k = 0..L-1 only
    assert p.lb[lay.w][[2, 4, 6]].tolist() == [-1, -1, -1] and np.isinf(p.lb[lay.w][0])
    p = _controller_case(slack_policy="outputs_p")
    assert p.labels["layout"].n_sigma == 4
    p = _controller_case(robust=False)
    assert p.labels["layout"].n_sigma == 0


def test_controller_qp_errors():
    with pytest.raises(ConfigError, match="slack policy"):
        _controller_case(slack_policy="bogus")
    with pytest.raises(ConfigError, match="rows"):
        assemble_controller_qp(np.zeros((5, 2)), [0, 0], Setpoint([0.0], [0.0]), np.eye(2),
                               ConstraintSet.box([-1], [1], p=1), 3, 1, 1)


def test_controller_qp_regularizer_scaling():
    p = _controller_case(slack_policy="full_q")
    lay = p.labels["layout"]
    np.testing.assert_allclose(np.diag(p.H)[lay.beta], 2 * 1e-2 ** 0.5)
    np.testing.assert_allclose(np.diag(p.H)[lay.sigma], 2 / 1e-2 ** 0.5)
