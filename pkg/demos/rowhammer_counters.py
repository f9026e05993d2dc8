# How many activation counters does deterministic RowHammer protection need?
#
# A Misra-Gries table with N counters misses no row that reaches ACT_max
# activations in a refresh window as long as N > ACT_tREFW / ACT_max - 1.
# Below we size the table for a few thresholds, then attack it: first with the
# formula's N, then with two counters fewer.
#
#     python demos/rowhammer_counters.py

import numpy as np

from smdsim import DDR4_3200, Geometry
from smdsim.maintenance import DeterministicRowProtection, DrpOracle, act_trefw, drp_required_counters

P = DDR4_3200
G = Geometry.scaled()
A = act_trefw(P)
print(f"at most {A} activations per bank per {P.tREFW} cycle window")

for act_max in (256, 512, 1024, 16384):
    print(f"ACT_max {act_max:>5}: {drp_required_counters(P, act_max):>5} counters")


def attack(act_max, counters, rows):
    drp = DeterministicRowProtection(G, P, act_max=act_max, counters=counters)
    drp.oracle = DrpOracle(act_max)
    for i in range(A):
        drp.on_act(0, int(rows[i]), i * P.tRC)
    return drp.triggers, drp.oracle.misses


print()
for act_max in (512, 1024):
    n = drp_required_counters(P, act_max)
    for size in (n, n - 2):
        # round-robin over one more row than the table holds keeps it thrashing
        rows = np.arange(A) % (size + 1)
        triggers, misses = attack(act_max, size, rows)
        print(f"ACT_max {act_max}, {size} counters: {triggers} neighbor refreshes, {misses} missed rows")
