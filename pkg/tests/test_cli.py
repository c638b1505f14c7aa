import json

import numpy as np
import pytest

from eddpc.cli import main, sample_requirements
from eddpc.systems import four_tank_dims


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_sample_requirements_values():
    rows = {r["scheme"]: r for r in sample_requirements(four_tank_dims(), 16, 71, 4)}
    assert rows["ddpc"] == {"scheme": "ddpc", "min_T": 71, "regressor_dim": 52}
    assert rows["eddpc"]["min_T"] == 23 and rows["eddpc"]["regressor_dim"] == 44


def test_pipeline_end_to_end(tmp_path, capsys):
    data, pred, res = tmp_path / "d.csv", tmp_path / "p.json", tmp_path / "r.json"
    code, _, err = run(capsys, "collect", "--T", 23, "--out", data, "--seed", 1)
    assert code == 0 and json.loads(err)["command"] == "collect"
    assert run(capsys, "predictor", "--data", data, "--d", 4, "--denoise", "tsvd", "--out", pred)[0] == 0
    assert json.loads(pred.read_text())["shape"] == [80, 44]
    args = ("run", "--predictor", pred, "--T-sim", 8, "--deterministic", "--out", res, "--seed", 2)
    assert run(capsys, *args)[0] == 0
    first = res.read_bytes()
    assert run(capsys, *args)[0] == 0
    assert res.read_bytes() == first
    r = json.loads(first)
    assert np.linalg.norm(np.array(r["meta"]["x0"]) - four_tank_x_s()) == pytest.approx(2.95)


def four_tank_x_s():
    from eddpc.systems import four_tank
    return four_tank().x_s


def test_missing_file_names_producer(tmp_path, capsys):
    code, _, err = run(capsys, "run", "--predictor", tmp_path / "nope.json")
    assert code == 2 and "eddpc predictor" in err
    code, _, err = run(capsys, "predictor", "--data", tmp_path / "x.csv", "--d", 4)
    assert code == 2 and "eddpc collect" in err


def test_bad_arguments(capsys):
    with pytest.raises(SystemExit):
        main(["collect", "--T", "-3"])
    code, _, err = run(capsys, "bound", "--T", 23, "--d", 4, "--eps", 1e-3)
    assert code == 2 and "--delta1" in err
    code, _, err = run(capsys, "predictor", "--data", "x", "--d", 4, "--dims", "1,2")
    assert code == 2


def test_bound_modes(capsys):
    code, out, _ = run(capsys, "bound", "--T", 23, "--d", 4, "--eps", 1e-3, "--delta1", 2, "--delta2", 4)
    r = json.loads(out)
    assert code == 0 and r["valid"] and r["bound_thm5"] == pytest.approx(r["c_theta"] * 1e-3 / 8)
    code, out, _ = run(capsys, "bound", "--T", 23, "--d", 4, "--eps", 1e-8, "--model", "fourtank")
    r = json.loads(out)
    assert code == 0 and r["empirical_sin_theta"] <= r["bound_thm5"]
    assert r["predictor_distance_bound"] is not None


def test_sweep_and_compare(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"schemes": ["eddpc"], "T_list": [23], "eps_list": [4e-3],
                               "repetitions": 1, "T_sim": 8}))
    code, out, _ = run(capsys, "sweep", "--config", cfg, "--out", tmp_path / "o")
    assert code == 0 and (tmp_path / "o" / "cost_vs_T.csv").exists()
    assert json.loads(out)["failures"] == 0
    cfg.write_text('{"schemes": ["eddpc"],\n "reps": 2}')
    code, _, err = run(capsys, "sweep", "--config", cfg)
    assert code == 2 and "unknown config keys" in err
    code, out, _ = run(capsys, "compare", "--T", 23, "--T-sim", 8)
    assert code == 0 and "not applicable: T below minimum 71" in out
