"""Time the numba kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Each path runs in a fresh interpreter (the switch is read at import time),
so numba compilation is excluded by a warm-up call.
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, timeit
import numpy as np
from daeplan import _kernels, envs, models
from daeplan.planning import CemConfig, Plan, batch_objective, cem_optimize
from daeplan.control import objective_for

rng = np.random.default_rng(0)
out = {}
dense = _kernels.dense_numba if _kernels.NUMBA_ENABLED else _kernels.dense_numpy
W, b = rng.normal(size=(64, 64)) / 8, rng.normal(size=64) * 0.1
for rows in (400, 10400):
    x = rng.normal(size=(rows, 64))
    for name, act in (("swish", _kernels.ACT_SWISH), ("tanh", _kernels.ACT_TANH)):
        dense(x[:2], W, b, act)
        n = max(1, 20000 // rows)
        out[f"dense {name} {rows}x64"] = min(timeit.repeat(lambda: dense(x, W, b, act), number=n, repeat=REPEAT)) / n

cp = envs.make("cartpole")
S = np.stack([envs.initial_state(cp, rng) for _ in range(400)])
A = rng.uniform(-1, 1, (400, 1))
envs.step(cp, S[:2], A[:2])
out["cartpole step x400"] = min(timeit.repeat(lambda: envs.step(cp, S, A), number=50, repeat=REPEAT)) / 50

dyn = models.init_dynamics(5, 1, (64, 64, 64), seed=0)
spec = objective_for(cp, dyn)
s0 = S[0]
f = batch_objective(spec, s0)
init = Plan.midpoint(25, cp.action_low, cp.action_high)
cfg = CemConfig()
cem_optimize(f, init, CemConfig(population=40, elites=4, iterations=1), 0)
out["cem plan H=25 (400x5)"] = min(timeit.repeat(lambda: cem_optimize(f, init, cfg, 0), number=1, repeat=REPEAT))
print(json.dumps(out))
"""


def run(flag, repeat):
    env = {**os.environ, "DAEPLAN_NUMBA": flag}
    code = WORKER.replace("REPEAT", str(repeat))
    res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    return json.loads(res.stdout)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args()
    fast, slow = run("1", args.repeat), run("0", args.repeat)
    print(f"{'kernel':<26} {'numba ms':>10} {'numpy ms':>10} {'speedup':>8}")
    for k in fast:
        print(f"{k:<26} {fast[k] * 1e3:>10.2f} {slow[k] * 1e3:>10.2f} {slow[k] / fast[k]:>7.2f}x")


if __name__ == "__main__":
    main()
