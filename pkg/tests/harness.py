"""Chip-level drivers used by several tests: idle runs and a row-holding adversary."""

import heapq

from smdsim.chip import Chip, RefreshTracker
from smdsim.controller import row_open_cap


def make_chip(geometry, timing, engines, track=True):
    tracker = RefreshTracker(geometry.banks_per_rank, geometry.rows_per_bank) if track else None
    return Chip(geometry, timing, engines, smd=True, tracker=tracker, log=[])


def hold_adversary(chip, engine, until, rg=16):
    """Keep a row open in the region ``engine`` wants next, for as long as the controller may.

    Every bank re-activates immediately after tRP, always targeting the lock
    region counter of ``engine``; NACKed activations retry after ARI. Returns the
    number of accepted and NACKed activations.
    """
    g, p = chip.g, chip.p
    cap = row_open_cap(p, g, rg)
    ev = [(0, b, "act") for b in range(chip.nbanks)]
    heapq.heapify(ev)
    acts = nacks = 0
    while ev and ev[0][0] <= until:
        t, b, what = heapq.heappop(ev)
        chip.tick(t)
        if what == "act":
            row = engine.lrc[b] * g.rows_per_region + g.rows_per_region // 2
            if chip.handle_act(b, row, t):
                acts += 1
                heapq.heappush(ev, (t + cap, b, "pre"))
            else:
                nacks += 1
                heapq.heappush(ev, (t + p.ARI, b, "act"))
        else:
            chip.handle_pre(b, t)
            heapq.heappush(ev, (t + p.tRP, b, "act"))
    chip.tick(until)
    return acts, nacks
