"""Periodic refresh engines: fixed-rate (FR) and retention-aware variable-rate (VR)."""

from __future__ import annotations

import numpy as np

from .base import Engine, Job, MaintenanceFault, refresh_row_cycles, require
from .filters import BloomFilter


class FixedRateRefresh(Engine):
    """Refreshes RG consecutive rows of one region per operation, cycling regions.

    A pending-operation counter per bank grows by one every interval and drops
    by one per completed operation. The lock region counter advances after every
    operation; its rollover advances the row pointer by RG.
    """

    owner = "FR"

    def __init__(self, geometry, timing, rg: int = 16, offset: int = 0,
                 start_region: int = 0, strict: bool = True):
        super().__init__(geometry, timing)
        rpr = geometry.rows_per_region
        require(rg >= 1 and rpr % rg == 0, f"RG={rg} must divide rows per region ({rpr})")
        self.rg = rg
        self.positions = rpr // rg
        self.ops_per_window = geometry.rows_per_bank // rg
        # equals tREFI when one operation per REF interval covers the bank
        self.interval = max(1, timing.tREFI * timing.refreshes_per_window // self.ops_per_window)
        self.max_pending = timing.max_postponed_refs
        self.strict = strict
        self.op_cycles = rg * refresh_row_cycles(timing)
        n = self.nbanks
        self.pending = [0] * n
        self.lrc = [start_region % geometry.regions_per_bank] * n
        self.rac = [0] * n
        self._next = offset + self.interval
        self.ops = 0
        self.rows_refreshed = 0
        self.max_pending_seen = 0
        self.faults = 0

    def next_timer(self):
        return self._next

    def on_timer(self, now):
        while self._next <= now:
            pend = self.pending
            for b in range(self.nbanks):
                v = pend[b] + 1
                if v > self.max_pending:
                    self.faults += 1
                    if self.strict:
                        raise MaintenanceFault(
                            f"{self.owner}: pending refresh counter of bank {b} would reach {v} at cycle {self._next}")
                    v = self.max_pending
                pend[b] = v
                if v > self.max_pending_seen:
                    self.max_pending_seen = v
            self._next += self.interval

    def group_rows(self, bank: int) -> range:
        start = self.lrc[bank] * self.geometry.rows_per_region + self.rac[bank] * self.rg
        return range(start, start + self.rg)

    def _advance(self, bank: int) -> None:
        self.pending[bank] -= 1
        lrc = self.lrc[bank] + 1
        if lrc == self.geometry.regions_per_bank:
            lrc = 0
            rac = self.rac[bank] + 1
            if rac == self.positions:
                rac = 0
                self._on_sweep_done(bank)
            self.rac[bank] = rac
        self.lrc[bank] = lrc

    def _on_sweep_done(self, bank: int) -> None:
        pass

    def candidates(self, bank):
        if not self.pending[bank]:
            return []
        rows = tuple(self.group_rows(bank))
        return [Job(self.owner, bank, self.lrc[bank], rows,
                    len(rows) * refresh_row_cycles(self.timing), "refresh")]

    def on_job_done(self, job, now):
        self.ops += 1
        self.rows_refreshed += len(job.rows)
        self._advance(job.bank)

    def stats(self):
        return {"ops": self.ops, "rows_refreshed": self.rows_refreshed,
                "max_pending": self.max_pending_seen, "faults": self.faults}


class VariableRateRefresh(FixedRateRefresh):
    """FR that refreshes rows outside the weak-row Bloom filter only every VR_factor sweeps."""

    owner = "VR"

    def __init__(self, geometry, timing, weak_rows, factor: int = 4, rg: int = 16,
                 bloom_bits: int = 8192, bloom_hashes: int = 6, seed: int = 0,
                 phase: str = "staggered", offset: int = 0, start_region: int = 0,
                 strict: bool = True):
        super().__init__(geometry, timing, rg=rg, offset=offset,
                         start_region=start_region, strict=strict)
        require(factor >= 1, "VR factor must be >= 1")
        require(phase in ("staggered", "zero"), f"unknown VR phase {phase!r}")
        require(len(weak_rows) == self.nbanks, "need one weak-row set per bank")
        self.factor = factor
        self.weak_rows = [np.asarray(w, dtype=np.int64) for w in weak_rows]
        self.filters = []
        for b, w in enumerate(self.weak_rows):
            bf = BloomFilter(bloom_bits, bloom_hashes, seed=(seed * 1_000_003 + b) & ((1 << 63) - 1))
            bf.add_many(w)
            self.filters.append(bf)
        self.cycle_ctr = [(b % factor) if phase == "staggered" else 0 for b in range(self.nbanks)]
        self.skipped = 0

    def should_refresh(self, bank: int, row: int) -> bool:
        return self.cycle_ctr[bank] % self.factor == 0 or row in self.filters[bank]

    def _on_sweep_done(self, bank):
        self.cycle_ctr[bank] += 1

    def candidates(self, bank):
        while self.pending[bank]:
            group = self.group_rows(bank)
            if self.cycle_ctr[bank] % self.factor == 0:
                rows = tuple(group)
            else:
                hit = self.filters[bank].contains_many(np.arange(group.start, group.stop))
                rows = tuple(group.start + int(i) for i in np.flatnonzero(hit))
            if rows:
                return [Job(self.owner, bank, self.lrc[bank], rows,
                            len(rows) * refresh_row_cycles(self.timing), "refresh")]
            # nothing to refresh in this group: no lock needed
            self.skipped += 1
            self._advance(bank)
        return []

    def stats(self):
        s = super().stats()
        s["skipped"] = self.skipped
        return s
