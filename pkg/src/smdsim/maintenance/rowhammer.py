"""RowHammer protection engines: PRP, PRP+ (counting-Bloom gated) and DRP (Misra-Gries)."""

from __future__ import annotations

import random

from .base import Engine, Job, neighbors, refresh_row_cycles, require, split_by_region
from .filters import CountingBloomFilter
from .formulas import drp_required_counters
from .misra_gries import CounterTable


class _NeighborRefresher(Engine):
    """Queue of victim-row refreshes, one job per (bank, region)."""

    def __init__(self, geometry, timing, blast_distance: int = 1):
        super().__init__(geometry, timing)
        require(blast_distance >= 1, "blast distance must be >= 1")
        self.blast_distance = blast_distance
        self.queue = [[] for _ in range(self.nbanks)]
        self.neighbor_ops = 0
        self.rows_refreshed = 0

    def _enqueue(self, bank: int, aggressor: int, skip_region: int | None = None) -> None:
        victims = neighbors(aggressor, self.blast_distance, self.geometry.rows_per_bank)
        for reg, rows in split_by_region(victims, self.geometry.rows_per_region).items():
            if reg != skip_region:
                self.queue[bank].append((reg, rows))

    def _queued_jobs(self, bank: int) -> list[Job]:
        per_row = refresh_row_cycles(self.timing)
        out = []
        for entry in self.queue[bank]:
            reg, rows = entry
            out.append(Job(self.owner, bank, reg, rows, len(rows) * per_row, "neighbor", ("queued", entry)))
        return out

    def on_job_done(self, job, now):
        self.neighbor_ops += 1
        self.rows_refreshed += len(job.rows)
        if job.payload[0] == "queued":
            q = self.queue[job.bank]
            for i, e in enumerate(q):
                if e is job.payload[1]:
                    del q[i]
                    break

    def stats(self):
        return {"ops": self.neighbor_ops, "rows_refreshed": self.rows_refreshed}


class ProbabilisticRowProtection(_NeighborRefresher):
    """Marks each activated row with probability P_mark; refreshes its neighbors later.

    The marked-rows table holds one aggressor per region. Victims inside the
    aggressor's region are refreshed under that region's lock; victims across a
    region boundary are queued and refreshed under their own region's lock.
    """

    owner = "PRP"
    listens_to_acts = True

    def __init__(self, geometry, timing, p_mark: float = 0.01, blast_distance: int = 1,
                 rng: random.Random | None = None):
        super().__init__(geometry, timing, blast_distance)
        require(0.0 <= p_mark <= 1.0, "P_mark must be in [0, 1]")
        self.p_mark = p_mark
        self.rng = rng or random.Random(0)
        self.mrt = [[None] * geometry.regions_per_bank for _ in range(self.nbanks)]
        self.nmarked = [0] * self.nbanks
        self.marks = 0

    def on_act(self, bank, row, now):
        if self.rng.random() < self.p_mark:
            self.mark(bank, row)

    def mark(self, bank: int, row: int) -> None:
        reg = row // self.geometry.rows_per_region
        if self.mrt[bank][reg] is None:
            self.nmarked[bank] += 1
        self.mrt[bank][reg] = row
        self.marks += 1

    def candidates(self, bank):
        out = self._queued_jobs(bank)
        if self.nmarked[bank]:
            rpr = self.geometry.rows_per_region
            per_row = refresh_row_cycles(self.timing)
            for reg, aggr in enumerate(self.mrt[bank]):
                if aggr is None:
                    continue
                rows = tuple(v for v in neighbors(aggr, self.blast_distance, self.geometry.rows_per_bank)
                             if v // rpr == reg)
                out.append(Job(self.owner, bank, reg, rows, len(rows) * per_row, "neighbor",
                               ("mark", aggr)))
        return out

    def on_job_done(self, job, now):
        super().on_job_done(job, now)
        if job.payload[0] == "mark":
            aggr = job.payload[1]
            row_table = self.mrt[job.bank]
            if row_table[job.region] == aggr:
                row_table[job.region] = None
                self.nmarked[job.bank] -= 1
            self._enqueue(job.bank, aggr, skip_region=job.region)

    def stats(self):
        s = super().stats()
        s["marks"] = self.marks
        return s


class CbfRowProtection(ProbabilisticRowProtection):
    """PRP gated by two time-interleaved counting Bloom filters.

    Every activation is inserted into both filters; the row becomes eligible
    for marking once the active filter's estimate exceeds ACT_max. Every half
    window the active filter is cleared and the two swap roles, so the active
    filter always covers the last one to two half windows.
    """

    owner = "PRP+"

    def __init__(self, geometry, timing, p_mark: float = 0.01, act_max: int = 1024,
                 l_rtw: int | None = None, cbf_counters: int = 1024, cbf_hashes: int = 4,
                 blast_distance: int = 1, rng: random.Random | None = None, seed: int = 0):
        super().__init__(geometry, timing, p_mark, blast_distance, rng)
        require(act_max >= 1, "ACT_max must be >= 1")
        self.act_max = act_max
        self.l_rtw = l_rtw if l_rtw is not None else timing.tREFW
        require(self.l_rtw >= 2, "L_RTW too short")
        self.half = self.l_rtw // 2
        self.active = [CountingBloomFilter(cbf_counters, cbf_hashes, seed + 2 * b) for b in range(self.nbanks)]
        self.passive = [CountingBloomFilter(cbf_counters, cbf_hashes, seed + 2 * b + 1) for b in range(self.nbanks)]
        self._next_swap = self.half
        self.swaps = 0
        self.eligible = 0

    def next_timer(self):
        return self._next_swap

    def on_timer(self, now):
        while self._next_swap <= now:
            for b in range(self.nbanks):
                self.swap(b)
            self._next_swap += self.half
            self.swaps += 1

    def swap(self, bank: int) -> None:
        self.active[bank].clear()
        self.active[bank], self.passive[bank] = self.passive[bank], self.active[bank]

    def on_act(self, bank, row, now):
        est = self.active[bank].insert(row)
        self.passive[bank].insert(row)
        if est > self.act_max:
            self.eligible += 1
            if self.rng.random() < self.p_mark:
                self.mark(bank, row)


class DeterministicRowProtection(_NeighborRefresher):
    """Misra-Gries activation tracking; refreshes neighbors at every multiple of ACT_max."""

    owner = "DRP"
    listens_to_acts = True

    def __init__(self, geometry, timing, act_max: int = 512, counters: int | None = None,
                 act_trefw: int | None = None, blast_distance: int = 1):
        super().__init__(geometry, timing, blast_distance)
        self.act_max = act_max
        self.counters = counters if counters else drp_required_counters(timing, act_max, act_trefw)
        self.tables = [CounterTable(self.counters) for _ in range(self.nbanks)]
        self._next_reset = timing.tREFW
        self.triggers = 0
        self.on_trigger = None
        self.oracle: DrpOracle | None = None

    def next_timer(self):
        return self._next_reset

    def on_timer(self, now):
        while self._next_reset <= now:
            for t in self.tables:
                t.reset()
            if self.oracle is not None:
                self.oracle.reset()
            self._next_reset += self.timing.tREFW

    def on_act(self, bank, row, now):
        c = self.tables[bank].update(row)
        hit = c is not None and c % self.act_max == 0
        if hit:
            self.triggers += 1
            self._enqueue(bank, row)
            if self.on_trigger is not None:
                self.on_trigger(bank, row, now)
        if self.oracle is not None:
            self.oracle.observe(bank, row, hit)

    def candidates(self, bank):
        return self._queued_jobs(bank) if self.queue[bank] else []

    def stats(self):
        s = super().stats()
        s["triggers"] = self.triggers
        return s


class DrpOracle:
    """Exact per-row activation counts since the row's last trigger (or table reset).

    A miss is an activation that brings a row to ACT_max activations since its
    last neighbor refresh without triggering one.
    """

    def __init__(self, act_max: int):
        self.act_max = act_max
        self.counts: dict[tuple[int, int], int] = {}
        self.misses = 0
        self.max_count = 0

    def observe(self, bank: int, row: int, triggered: bool) -> bool:
        key = (bank, row)
        if triggered:
            self.counts[key] = 0
            return False
        c = self.counts.get(key, 0) + 1
        if c > self.max_count:
            self.max_count = c
        miss = c >= self.act_max
        if miss:
            self.misses += 1
            c = 0
        self.counts[key] = c
        return miss

    def reset(self) -> None:
        self.counts.clear()
