"""Compare the numba and pure-numpy kernel paths.

    python benchmarks/bench_kernels.py [--repeat 50] [--json out.json]

Kernel timings call both private implementations in one process. The
end-to-end row runs a short Cadzow denoise plus closed loop in subprocesses
with EDDPC_USE_NUMBA set to 1 and 0, so the module-level switch is exercised.
"""
import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from eddpc import _kernels

E2E = """
import time, warnings, numpy as np
from eddpc.bench import NoiseSpec, collect_data
from eddpc.controllers import ControllerSpec, run_closed_loop
from eddpc.representation import predictor_from_data
from eddpc.systems import LtiPlant, four_tank
warnings.simplefilter("ignore")
ft = four_tank(); dims = ft.model.dims
data = collect_data(ft.model, 200, NoiseSpec(4e-3), 0)
t0 = time.perf_counter()
pred = predictor_from_data(data.noisy, dims, 20, 16, "slra", m=2)
spec = ControllerSpec("eddpc", 16, ft.W, ft.setpoint, ft.constraints, mode="robust",
                      lambda_beta=0.01, lambda_sigma=10.0, eps_bar=4e-3)
run_closed_loop(spec, pred, LtiPlant(ft.model, ft.x_s + 1.0, 4e-3), 100)
print(time.perf_counter() - t0)
"""


def time_pair(fn_nb, fn_np, args, repeat):
    fn_nb(*args)  # compile
    t_nb = min(timeit.repeat(lambda: fn_nb(*args), number=1, repeat=repeat))
    t_np = min(timeit.repeat(lambda: fn_np(*args), number=1, repeat=repeat))
    return t_nb, t_np


def kernel_rows(repeat):
    rng = np.random.default_rng(0)
    w = rng.standard_normal((300, 4))
    H = _kernels._hankel_np(w, 20)
    A = np.diag(rng.uniform(0.5, 0.95, 4))
    B, C, D = rng.standard_normal((4, 2)), rng.standard_normal((2, 4)), np.zeros((2, 2))
    U = rng.standard_normal((2000, 2))
    cases = [
        ("hankel 300x4 depth 20", _kernels._hankel_nb, _kernels._hankel_np, (w, 20)),
        ("hankel_average 80x281", _kernels._hankel_average_nb, _kernels._hankel_average_np, (H, 4, 20)),
        ("simulate n=4 T=2000", _kernels._simulate_nb, _kernels._simulate_np, (A, B, C, D, np.zeros(4), U)),
    ]
    rows = []
    for name, f_nb, f_np, args in cases:
        t_nb, t_np = time_pair(f_nb, f_np, args, repeat)
        rows.append({"case": name, "numba_s": t_nb, "numpy_s": t_np, "speedup": t_np / t_nb})
    return rows


def end_to_end():
    out = {}
    for flag in ("1", "0"):
        env = {**os.environ, "EDDPC_USE_NUMBA": flag}
        res = subprocess.run([sys.executable, "-c", E2E], env=env, capture_output=True, text=True, check=True)
        out["numba_s" if flag == "1" else "numpy_s"] = float(res.stdout.strip().splitlines()[-1])
    out["case"] = "slra T=200 + 100-step robust loop"
    out["speedup"] = out["numpy_s"] / out["numba_s"]
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=50)
    ap.add_argument("--skip-e2e", action="store_true")
    ap.add_argument("--json", default=None)
    args = ap.parse_args()
    if not _kernels.NUMBA_ACTIVE:
        sys.exit("numba path inactive; unset EDDPC_USE_NUMBA=0 or install numba")
    rows = kernel_rows(args.repeat)
    if not args.skip_e2e:
        rows.append(end_to_end())
    print(f"{'case':<38}{'numba [ms]':>12}{'numpy [ms]':>12}{'speedup':>9}")
    for r in rows:
        print(f"{r['case']:<38}{1e3 * r['numba_s']:>12.3f}{1e3 * r['numpy_s']:>12.3f}{r['speedup']:>9.2f}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
