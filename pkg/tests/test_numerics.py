import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import ortho_group

from eddpc.core import DimensionError, HankelMatrix, build_hankel
from eddpc.numerics import (aligned_basis, cadzow_slra, hankelize, mirsky_check, nullspace, orth,
                            principal_angles, tsvd)


def test_plane_rotation_angle():
    for th in [0.0, 1e-9, 1e-4, 0.3, np.pi / 2]:
        a = np.array([[1.0], [0.0]])
        b = np.array([[np.cos(th)], [np.sin(th)]])
        assert abs(principal_angles(a, b).angles[0] - th) < 1e-15 + 1e-12 * th


@given(st.integers(0, 10_000))
def test_single_vector_angle_matches_closed_form(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((2, 6, 1))
    c = abs(float(a[:, 0] @ b[:, 0])) / (np.linalg.norm(a) * np.linalg.norm(b))
    want = np.arccos(min(c, 1.0))
    got = principal_angles(a, b).angles[0]
    assert abs(got - want) < 1e-7


def test_small_angle_precision():
    # arccos would round this to zero
    rng = np.random.default_rng(0)
    Q = np.linalg.qr(rng.standard_normal((8, 3)))[0]
    E = 1e-10 * rng.standard_normal((8, 3))
    pa = principal_angles(Q, Q + E)
    assert 1e-12 < pa.sin_frobenius < 1e-9


@given(st.integers(0, 10_000))
def test_angles_invariant_to_basis_change(seed):
    rng = np.random.default_rng(seed)
    A, B = rng.standard_normal((2, 7, 3))
    M = rng.standard_normal((3, 3)) + 3 * np.eye(3)
    np.testing.assert_allclose(principal_angles(A, B).angles, principal_angles(A @ M, B).angles, atol=1e-8)
    np.testing.assert_allclose(principal_angles(A, B).angles, principal_angles(B, A).angles, atol=1e-8)


def test_angle_dimension_mismatch():
    with pytest.raises(DimensionError):
        principal_angles(np.eye(4)[:, :2], np.eye(4)[:, :3])


@given(st.integers(0, 10_000), st.integers(0, 4))
def test_tsvd_eckart_young(seed, r):
    M = np.random.default_rng(seed).standard_normal((6, 5))
    s = np.linalg.svd(M, compute_uv=False)
    X = tsvd(M, r)
    assert np.linalg.matrix_rank(X) == r
    assert abs(np.linalg.norm(M - X) - np.sqrt(np.sum(s[r:] ** 2))) < 1e-10


def test_nullspace_examples():
    N = nullspace(np.array([[1.0, 1.0]]))
    assert N.shape == (2, 1)
    np.testing.assert_allclose(np.abs(N[:, 0]), [2 ** -0.5] * 2)
    M = np.random.default_rng(0).standard_normal((3, 7))
    N = nullspace(M)
    assert N.shape == (7, 4)
    np.testing.assert_allclose(M @ N, 0, atol=1e-12)
    np.testing.assert_allclose(N.T @ N, np.eye(4), atol=1e-12)
    assert nullspace(M, target_nullity=5).shape == (7, 5)
    with pytest.raises(DimensionError):
        nullspace(M, target_nullity=9)


@given(st.integers(0, 10_000))
def test_aligned_basis_is_procrustes_optimal(seed):
    rng = np.random.default_rng(seed)
    U_hat = np.linalg.qr(rng.standard_normal((9, 3)))[0]
    U = np.linalg.qr(U_hat + 0.2 * rng.standard_normal((9, 3)))[0]
    A = aligned_basis(U_hat, U)
    np.testing.assert_allclose(A.T @ A, np.eye(3), atol=1e-10)
    assert principal_angles(A, U).max_angle < 1e-7
    best = np.linalg.norm(A - U_hat)
    for _ in range(20):
        Q = ortho_group.rvs(3, random_state=rng)
        assert best <= np.linalg.norm(U @ Q - U_hat) + 1e-12


def test_aligned_basis_rejects_nonorthonormal():
    with pytest.raises(ValueError, match="orthonormal"):
        aligned_basis(2 * np.eye(3)[:, :2], np.eye(3)[:, :2])


def test_cadzow_keeps_low_rank_hankel():
    t = np.arange(30.0)
    w = np.c_[np.sin(0.3 * t), np.cos(0.3 * t)]
    H = build_hankel(w, 6)
    res = cadzow_slra(H, 2)
    assert res.converged and res.iterations <= 2
    np.testing.assert_allclose(res.H_hat, H.data, atol=1e-10)


def test_cadzow_output_is_hankel_and_inputs_fixed():
    rng = np.random.default_rng(2)
    w = rng.standard_normal((40, 3))
    H = build_hankel(w, 5)
    res = cadzow_slra(H, 8, max_iter=50, m=1)
    np.testing.assert_allclose(hankelize(res.H_hat, 3, 5), res.H_hat, atol=1e-12)
    np.testing.assert_array_equal(res.H_hat[0::3, :], H.data[0::3, :])
    assert np.linalg.norm(res.H_hat - H.data) > 0


@given(st.integers(0, 10_000))
def test_mirsky_inequality(seed):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((5, 6))
    r = mirsky_check(M, tsvd(M + 0.1 * rng.standard_normal(M.shape), 3))
    assert r.holds and r.lhs <= r.rhs + 1e-12


def test_orth_truncates():
    A = np.c_[np.eye(4)[:, :2], np.eye(4)[:, 0] + np.eye(4)[:, 1]]
    assert orth(A).shape == (4, 2)


def test_spec_examples():
    np.testing.assert_allclose(tsvd(np.diag([3.0, 2, 1]), 2), np.diag([3.0, 2, 0]))
    assert principal_angles(np.eye(2)[:, :1], np.eye(2)[:, 1:]).angles[0] == pytest.approx(np.pi / 2)
    assert principal_angles([[1.0], [0.0]], [[1.0], [1.0]]).angles[0] == pytest.approx(np.pi / 4)
    e1 = np.eye(3)[:, :1]
    np.testing.assert_array_equal(aligned_basis(-e1, e1), -e1)
    assert nullspace(np.eye(3), target_nullity=0).shape == (3, 0)
    assert not cadzow_slra(HankelMatrix(2, np.ones((2, 3))), 0).H_hat.any()


@given(st.integers(0, 100_000))
def test_wedin_and_basis_alignment(seed):
    from eddpc.numerics import basis_alignment_check, wedin_check
    rng = np.random.default_rng(seed)
    r = int(rng.integers(1, 5))
    M = rng.standard_normal((8, r)) @ rng.standard_normal((r, 7))
    M_hat = M + 10.0 ** rng.uniform(-6, 0) * rng.standard_normal(M.shape)
    assert wedin_check(M, M_hat, r).holds
    U = np.linalg.qr(rng.standard_normal((20, 5)))[0]
    U_hat = np.linalg.qr(U + 10.0 ** rng.uniform(-4, 0) * rng.standard_normal(U.shape))[0]
    rep = basis_alignment_check(U_hat, U)
    assert rep.holds and rep.lhs > 0


def test_denoising_examples(ft, ft_dims):
    from conftest import simulate_data
    noisy, clean = simulate_data(ft.model, 59, np.random.default_rng(0), eps=4e-3)
    Hn, Hc = build_hankel(noisy, 4), build_hankel(clean, 4)
    noise = np.linalg.norm(Hn.data - Hc.data)
    assert np.linalg.norm(tsvd(Hn.data, 12) - Hc.data) <= 2 * noise
    res = cadzow_slra(Hn, 12, tol=1e-10, max_iter=500)
    assert np.linalg.norm(res.H_hat - Hc.data) < noise
