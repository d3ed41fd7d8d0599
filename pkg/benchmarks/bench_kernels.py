"""Compare the compiled kernels with the pure-Python fallback.

Times the sparse LDL^T factorization (on a refinement normal-equation matrix)
and the residual/Jacobian evaluation on simulated instances, checks that both
backends agree, and prints one line per kernel.

Usage::

    python benchmarks/bench_kernels.py [--robots 4] [--poses 200] [--repeat 3]
"""

from __future__ import annotations

import argparse
import json
import time

import numpy as np
import scipy.sparse as sp

from scoreslam import SimulationConfig, generate, kernels
from scoreslam.linalg import SparseLDL, fill_reducing_order
from scoreslam.refinement import _Structure


def _best_time(fn, repeat: int) -> float:
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench(robots: int, poses: int, repeat: int) -> dict:
    problem, truth = generate(
        SimulationConfig(num_robots=robots, num_beacons=1, poses_per_robot=poses, seed=7)
    )
    st = _Structure(problem)
    results = {"poses": robots * poses, "ranges": len(problem.range_edges)}

    def evaluate(backend):
        return st.evaluate(truth.solution, 1e-12, True, backend)

    ref = evaluate("python")
    out = evaluate("compiled")
    results["jacobian_max_abs_diff"] = float(
        max(np.max(np.abs(ref[0] - out[0])), np.max(np.abs(ref[3] - out[3])))
    )
    t_py = _best_time(lambda: evaluate("python"), repeat)
    t_c = _best_time(lambda: evaluate("compiled"), repeat)
    results["residual_jacobian"] = {"python_s": t_py, "compiled_s": t_c, "speedup": t_py / t_c}

    _, rows, cols, vals, _ = ref
    keep = ~np.isin(cols, st.fixed)
    J = sp.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(st.num_residuals, st.num_params))
    J = J[:, st.free]
    n = J.shape[1]
    H = sp.triu(J.T @ J + sp.diags(np.full(n, 1e-3))).tocoo()
    order = fill_reducing_order(n, H.row, H.col)
    rhs = np.random.default_rng(0).standard_normal(n)
    solutions = {}

    def factor_solve(backend):
        ldl = SparseLDL(n, H.row, H.col, backend=backend, order=order)
        ldl.factor(H.data, delta=1e-12, eps=0.0)
        solutions[backend] = ldl.solve(rhs)

    t_py = _best_time(lambda: factor_solve("python"), repeat)
    t_c = _best_time(lambda: factor_solve("compiled"), repeat)
    results["ldl_max_abs_diff"] = float(np.max(np.abs(solutions["python"] - solutions["compiled"])))
    results["ldl_factor_solve"] = {"python_s": t_py, "compiled_s": t_c, "speedup": t_py / t_c}
    return results


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--robots", type=int, default=4)
    parser.add_argument("--poses", type=int, default=200)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()
    if not kernels.compiled_available():
        raise SystemExit("compiled kernels are not built; run `pip install -e .` first")
    res = bench(args.robots, args.poses, args.repeat)
    for name in ("residual_jacobian", "ldl_factor_solve"):
        r = res[name]
        print(f"{name:18s} python {r['python_s']:.4f}s  compiled {r['compiled_s']:.4f}s  "
              f"speedup {r['speedup']:.1f}x")
    print(json.dumps(res))


if __name__ == "__main__":
    main()
