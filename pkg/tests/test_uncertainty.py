import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from eddpc.core import DimensionError, build_hankel
from eddpc.representation import run_pipeline
from eddpc.uncertainty import (BoundInputs, bound_chain, bound_inputs_from_data, bound_thm5, constants,
                               delta1_bound, empirical_behavior_angle, oracle_quantities,
                               predictor_distance_bound)
from eddpc.numerics import principal_angles
from conftest import simulate_data


def test_constants_four_tank(ft_dims):
    # q=4, d=4, L+n-d+1=17, md+n=12, T-d+1=20 -> C = 8 sqrt(65280)
    k = constants(BoundInputs(ft_dims, 23, 4, 16, 1e-3, 1.0, 1.0))
    assert k["c_theta"] == pytest.approx(2043.996, abs=1e-3)
    assert k["c1"] == pytest.approx(math.sqrt(17))
    assert k["rho1"] == pytest.approx(4 * math.sqrt(17) * math.sqrt(7680))
    assert k["rho2"] == pytest.approx(2 * math.sqrt(320))


def test_angle_bound_formula_and_validity(ft_dims):
    r = bound_thm5(BoundInputs(ft_dims, 23, 4, 16, 1e-3, 2.0, 4.0))
    assert r.valid and r.bound_thm5 == pytest.approx(r.c_theta * 1e-3 / 8)
    r = bound_thm5(BoundInputs(ft_dims, 23, 4, 16, 1e-3, 0.0, 4.0))
    assert not r.valid and math.isnan(r.bound_thm5)
    assert json.loads(r.to_json())["bound_thm5"] is None


@given(st.floats(1e-6, 1.0), st.floats(1e-3, 10), st.floats(1e-3, 10))
def test_angle_bound_monotone(eps, d1, d2):
    from eddpc.core import SystemDims
    dims = SystemDims(2, 2, 4, 2)
    a = bound_thm5(BoundInputs(dims, 30, 4, 16, eps, d1, d2)).bound_thm5
    b = bound_thm5(BoundInputs(dims, 30, 4, 16, 2 * eps, d1, d2)).bound_thm5
    c = bound_thm5(BoundInputs(dims, 30, 4, 16, eps, 2 * d1, d2)).bound_thm5
    assert b == pytest.approx(2 * a) and c == pytest.approx(a / 2)


def test_input_validation(ft_dims):
    with pytest.raises(DimensionError):
        BoundInputs(ft_dims, 23, 30, 16, 1e-3)
    with pytest.raises(ValueError):
        BoundInputs(ft_dims, 23, 4, 16, -1.0)
    with pytest.raises(ValueError, match="oracle"):
        bound_chain(BoundInputs(ft_dims, 23, 4, 16, 1e-3, 1, 1))


def _draw(ft, ft_dims, T, eps, seed, d=4):
    noisy, clean = simulate_data(ft.model, T, np.random.default_rng(seed), eps=eps)
    res = run_pipeline(noisy, ft_dims, d, 16, denoise="tsvd")
    orc = oracle_quantities(res.rep, res.gamma.selected_rows, build_hankel(clean, d).data, 20)
    inp = bound_inputs_from_data(res.rep, res.gamma, res.H_hat, T, 16, eps, orc)
    return res, orc, inp


def test_bound_holds_and_chain(ft, ft_dims):
    for seed in range(5):
        res, orc, inp = _draw(ft, ft_dims, 23, 1e-3, seed)
        rep = bound_thm5(inp)
        emp = principal_angles(res.predictor.P, orc.P).sin_frobenius
        assert rep.valid and emp <= rep.bound_thm5
        rhs = delta1_bound(inp)
        if math.isfinite(rhs):
            assert 1 / inp.delta1 <= rhs * (1 + 1e-12)


def test_oracle_bound_vanishes_and_distance(ft, ft_dims):
    vals = []
    for eps in (1e-8, 1e-9):
        res, orc, inp = _draw(ft, ft_dims, 23, eps, 0)
        rep = bound_chain(inp)
        assert rep.valid
        vals.append(rep.bound_oracle)
        dist = predictor_distance_bound(inp)
        err = np.linalg.norm(res.predictor.P - orc.P)
        assert err <= dist
    # s_gamma of the aligned oracle Gamma moves with the noise draw, so the
    # decrease is only roughly tenfold
    assert vals[1] < vals[0] / 4


def test_oracle_matches_clean_pipeline(ft, ft_dims):
    res, orc, _ = _draw(ft, ft_dims, 23, 0.0, 1)
    np.testing.assert_allclose(orc.R_d, res.rep.R_d, atol=1e-8)
    assert principal_angles(orc.P, res.predictor.P).sin_frobenius < 1e-8
    assert empirical_behavior_angle(res.predictor, res.predictor).sin_frobenius < 1e-10
