# Lock region size.
#
# Each refresh operation locks one region of a bank. With one region per
# bank, every fixed-rate refresh locks the whole bank, and the chip loses its
# edge over DDR4. Variable-rate refresh skips most operations (only weak rows
# are refreshed every window), so it keeps the edge.

from smdsim import ExperimentConfig, FrontendParams, Geometry, run

n = 60_000
trace = f"gen:random:n={n // 5 + 5000}"

print("regions  " + "".join(f"{m:>10}" for m in ("ddr4", "smd-fr", "smd-vr")))
for regions in (1, 4, 16):
    g = Geometry.scaled().with_regions(regions)
    row = []
    for mode in ("ddr4", "smd-fr", "smd-vr"):
        cfg = ExperimentConfig(mode=mode, seed=1, traces=(trace,), geometry=g,
                               frontend=FrontendParams(instructions=n, warmup=0))
        row.append(run(cfg).ipc[0])
    print(f"{regions:>7}  " + "".join(f"{x:>10.4f}" for x in row))
