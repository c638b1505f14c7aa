import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from eddpc.core import SystemDims, Trajectory, build_hankel
from eddpc.numerics import principal_angles
from eddpc.representation import (DegenerateDataError, Predictor, build_gamma, hankel_predictor, kernel_rep,
                                  min_samples_ddpc, min_samples_eddpc, predictor_from_data, run_pipeline,
                                  select_rows, svd_predictor)
from conftest import random_case, simulate_data


def behavior_basis(model, L_total, rng, T=400):
    _, clean = simulate_data(model, T, rng, u_range=1.0)
    U, s, _ = np.linalg.svd(build_hankel(clean, L_total).data, full_matrices=False)
    r = model.dims.m * L_total + model.dims.n
    return U[:, :r]


def test_minimum_sample_sizes(ft_dims):
    assert min_samples_eddpc(ft_dims, 4) == 23
    assert min_samples_ddpc(ft_dims, 16) == 71
    assert min_samples_eddpc(ft_dims, 8) == 35


def test_four_tank_exact_predictor(ft, ft_dims):
    rng = np.random.default_rng(0)
    _, clean = simulate_data(ft.model, 23, rng)
    res = run_pipeline(clean, ft_dims, 4, 16)
    P = res.predictor.P
    assert res.rep.R_d.shape == (4, 16)
    assert res.gamma.data.shape == (4 + 2 * 16, 80)
    assert P.shape == (80, 44)
    np.testing.assert_allclose(P.T @ P, np.eye(44), atol=1e-10)
    B = behavior_basis(ft.model, 20, np.random.default_rng(9))
    assert principal_angles(P, B).sin_frobenius < 1e-8


def test_kernel_rows_annihilate_windows(ft, ft_dims):
    _, clean = simulate_data(ft.model, 40, np.random.default_rng(1))
    H = build_hankel(clean, 5).data
    rep = kernel_rep(H, ft_dims, 5)
    assert rep.R_d.shape == (2 * 5 * 2 - 14, 20)
    np.testing.assert_allclose(rep.R_d @ H, 0, atol=1e-9 * np.linalg.norm(H))


def test_random_systems_predictor_spans_behavior():
    for seed in range(30):
        model, rng = random_case(seed)
        dims = model.dims
        d = dims.ell + 1 + int(rng.integers(0, 2))
        L = max(d, dims.ell + 2)
        T = min_samples_eddpc(dims, d) + 3
        _, clean = simulate_data(model, T, rng, u_range=1.0)
        pred = predictor_from_data(clean, dims, d, L)
        assert pred.P.shape == (dims.q * (L + dims.n), dims.m * (L + dims.n) + dims.n)
        B = behavior_basis(model, L + dims.n, rng)
        assert principal_angles(pred.P, B).sin_frobenius < 1e-6, (seed, dims)


def test_tsvd_and_slra_reduce_to_rank(ft, ft_dims):
    noisy, clean = simulate_data(ft.model, 59, np.random.default_rng(4), eps=4e-3)
    B = behavior_basis(ft.model, 20, np.random.default_rng(5))
    errs = {}
    for method in ("none", "tsvd", "slra"):
        kw = {"m": 2} if method == "slra" else {}
        res = run_pipeline(noisy, ft_dims, 4, 16, denoise=method, **kw)
        s = np.linalg.svd(res.H_hat, compute_uv=False)
        if method == "tsvd":
            assert s[12] < 1e-10 * s[0]
        elif method == "slra":
            # Cadzow stops at its iteration cap here, close to but not at rank 12
            assert s[12] < 1e-2 * s[11]
            np.testing.assert_array_equal(res.H_hat[0::4], build_hankel(noisy, 4).data[0::4])
        errs[method] = principal_angles(res.predictor.P, B).sin_frobenius
    assert all(0 < e < 1 for e in errs.values())


def test_degenerate_data(ft_dims):
    zero = Trajectory(np.zeros((23, 2)), np.zeros((23, 2)), ft_dims)
    with pytest.raises(DegenerateDataError, match="rank 0"):
        predictor_from_data(zero, ft_dims, 4, 16)


def test_parameter_validation(ft, ft_dims):
    _, clean = simulate_data(ft.model, 40, np.random.default_rng(0))
    with pytest.raises(ValueError, match="ell"):
        predictor_from_data(clean, ft_dims, 2, 16)
    with pytest.raises(ValueError, match="L\\+n"):
        predictor_from_data(clean, ft_dims, 8, 2)
    with pytest.warns(UserWarning, match="below the minimum"):
        predictor_from_data(Trajectory(clean.u[:30], clean.y[:30], ft_dims), ft_dims, 8, 16)


def test_row_selection_deterministic_and_best(ft, ft_dims):
    _, clean = simulate_data(ft.model, 40, np.random.default_rng(2))
    rep = kernel_rep(build_hankel(clean, 6).data, ft_dims, 6)
    rows = select_rows(rep, 20)
    assert rows == select_rows(rep, 20)
    import itertools
    conds = [build_gamma(rep, c, 20).condition_number for c in itertools.combinations(range(rep.R_d.shape[0]), 2)]
    assert build_gamma(rep, rows, 20).condition_number == min(conds)
    sampled = select_rows(rep, 20, budget=3, seed=1)
    assert sampled == select_rows(rep, 20, budget=3, seed=1)


def test_baseline_predictors(ft, ft_dims):
    _, clean = simulate_data(ft.model, 71, np.random.default_rng(3))
    H = hankel_predictor(clean, 20)
    S = svd_predictor(clean, 20)
    assert H.P.shape == (80, 52) and S.P.shape == (80, 44)
    assert principal_angles(S.P, predictor_from_data(clean, ft_dims, 4, 16).P).sin_frobenius < 1e-8


def test_predictor_json_roundtrip(ft, ft_dims):
    _, clean = simulate_data(ft.model, 23, np.random.default_rng(0))
    p = predictor_from_data(clean, ft_dims, 4, 16)
    back = Predictor.from_json(p.to_json())
    assert back.P.tobytes() == p.P.tobytes()
    assert (back.provenance, back.d, back.L, back.dims) == ("exact", 4, 16, ft_dims)
    assert json.loads(p.to_json())["metadata"]["T"] == 23
