# Refresh overhead as the refresh period shrinks.
#
# A conventional DDR4 controller stalls a whole rank for tRFC on every REF.
# A self-managing chip refreshes one small lock region at a time instead, so
# only accesses to that region wait. Halving the refresh period doubles the
# refresh load, which is where the difference shows.
#
#     python demos/refresh_overhead.py [instructions]

import sys

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from smdsim import ExperimentConfig, FrontendParams, Geometry, TimingParams, run

n = int(sys.argv[1]) if len(sys.argv) > 1 else 60_000

# every access misses the LLC: the trace is longer than the run and spans 1 GB
trace = f"gen:random:n={n // 5 + 5000}"
periods = [32, 16, 8]
modes = ["ddr4", "smd-fr", "smd-vr", "norefresh"]

ipc = np.zeros((len(modes), len(periods)))
for j, ms in enumerate(periods):
    for i, mode in enumerate(modes):
        cfg = ExperimentConfig(name="refresh", mode=mode, seed=1, traces=(trace,), geometry=Geometry.scaled(),
                               timing=TimingParams().with_refresh_period(ms),
                               frontend=FrontendParams(instructions=n, warmup=0))
        ipc[i, j] = run(cfg).ipc[0]
        print(f"{ms:>3} ms  {mode:<10} IPC {ipc[i, j]:.4f}")

# speedup over the DDR4 baseline at each period
speedup = ipc / ipc[0]
print()
print("period  " + "  ".join(f"{m:>10}" for m in modes[1:]))
for j, ms in enumerate(periods):
    print(f"{ms:>4} ms " + "  ".join(f"{speedup[i, j]:>10.3f}" for i in range(1, len(modes))))

fig, ax = plt.subplots(figsize=(5, 3.2))
for i, m in enumerate(modes[1:], 1):
    ax.plot(periods, speedup[i], marker="o", label=m)
ax.set_xscale("log", base=2)
ax.invert_xaxis()
ax.set_xlabel("refresh period (ms)")
ax.set_ylabel("speedup over ddr4")
ax.legend()
fig.tight_layout()
fig.savefig("refresh_overhead.svg")
print("wrote refresh_overhead.svg")
