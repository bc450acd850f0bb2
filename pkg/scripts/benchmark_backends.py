#!/usr/bin/env python3
"""Compare the numba kernels against the pure-numpy fallbacks.

Runs representative workloads in subprocesses (the backend is fixed at
import time via FEDBIAS_BACKEND) and prints a timing table.

    python scripts/benchmark_backends.py
"""

import json
import os
import subprocess
import sys

WORKLOADS = {
    "single_sample_run": """
from fedbias.problems import gen_synthetic_noisy
from fedbias.fedavg import RunConfig
from fedbias.analysis_sto import mse_trace
p = gen_synthetic_noisy(0, 500)
mse_trace(p, RunConfig(0.01, 10, 1000, seed=0, algorithm="fedavg"), n_replicas=4)
""",
    "quadratic_stationary": """
from fedbias.problems import gen_random_quadratic, Problem, NoiseModel
from fedbias.analysis_sto import estimate_stationary
p = gen_random_quadratic(seed=7, dim=2, n_clients=4)
p = Problem(p.clients, NoiseModel.additive_iso(0.3, 2, 4))
estimate_stationary(p, 0.05, 10, n_chains=32, samples_per_chain=2000, seed=1)
""",
    "softplus_ensemble": """
from fedbias.problems import softplus_problem
from fedbias.analysis_sto import estimate_stationary
p = softplus_problem(mu=0.5, sigma=1.0)
estimate_stationary(p, 0.12, 1, n_chains=512, samples_per_chain=40000, seed=2)
""",
    "scaffold_run": """
from fedbias.problems import gen_synthetic_heterogeneous
from fedbias.fedavg import RunConfig
from fedbias.analysis_sto import mse_trace
p = gen_synthetic_heterogeneous(0, 500)
mse_trace(p, RunConfig(0.01, 100, 100, seed=0, algorithm="scaffold"), n_replicas=4)
""",
}

DRIVER = """
import json, time, sys
import fedbias.kernels as K
t0 = time.perf_counter()
exec(sys.stdin.read())
warm = time.perf_counter() - t0   # includes jit compilation on first call
t0 = time.perf_counter()
exec(WORK)
hot = time.perf_counter() - t0
print(json.dumps({"backend": K.BACKEND, "warm": warm, "hot": hot}))
"""


def run_one(backend: str, body: str) -> dict:
    env = dict(os.environ, FEDBIAS_BACKEND=backend)
    code = f"WORK = {body!r}\n" + DRIVER
    out = subprocess.run([sys.executable, "-c", code], input=body, text=True,
                         capture_output=True, env=env, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main():
    print(f"{'workload':24s} {'numba warm':>11s} {'numba hot':>10s} "
          f"{'numpy hot':>10s} {'speedup':>8s}")
    for name, body in WORKLOADS.items():
        nb = run_one("numba", body)
        np_ = run_one("numpy", body)
        speed = np_["hot"] / nb["hot"] if nb["hot"] > 0 else float("inf")
        print(f"{name:24s} {nb['warm']:10.2f}s {nb['hot']:9.2f}s "
              f"{np_['hot']:9.2f}s {speed:7.1f}x")


if __name__ == "__main__":
    main()
