"""Periodic in-DRAM memory scrubbing (MS)."""

from __future__ import annotations

from .base import Engine, Job, require
from .formulas import scrub_row_cycles


class MemoryScrubber(Engine):
    """Scrubs one row per interval, visiting regions in the same order as FR.

    ``errors`` maps rows to the number of codewords with a correctable error;
    each corrected codeword lengthens the operation and is cleared by the scrub.
    """

    owner = "MS"

    def __init__(self, geometry, timing, scrub_period_s: float = 300.0, errors=None,
                 codewords_per_row: int = 128):
        super().__init__(geometry, timing)
        require(scrub_period_s > 0, "scrub period must be positive")
        rows = geometry.rows_per_bank
        self.interval = max(1, int(scrub_period_s * timing.clock_freq_mhz * 1e6 / rows))
        self.codewords_per_row = codewords_per_row
        self.errors = errors if errors is not None else [{} for _ in range(self.nbanks)]
        n = self.nbanks
        self.pending = [0] * n
        self.lrc = [0] * n
        self.rac = [0] * n
        self._next = self.interval
        self.scrubs = 0
        self.corrected = 0
        self.sweeps = 0

    def next_timer(self):
        return self._next

    def on_timer(self, now):
        while self._next <= now:
            for b in range(self.nbanks):
                self.pending[b] += 1
            self._next += self.interval

    def current_row(self, bank: int) -> int:
        return self.lrc[bank] * self.geometry.rows_per_region + self.rac[bank]

    def candidates(self, bank):
        if not self.pending[bank]:
            return []
        row = self.current_row(bank)
        e = self.errors[bank].get(row, 0)
        return [Job(self.owner, bank, self.lrc[bank], (row,),
                    scrub_row_cycles(self.timing, e, self.codewords_per_row), "scrub",
                    codewords=self.codewords_per_row, errors=e)]

    def on_job_done(self, job, now):
        b = job.bank
        self.scrubs += 1
        if job.errors:
            self.corrected += job.errors
            self.errors[b].pop(job.rows[0], None)
        self.pending[b] -= 1
        lrc = self.lrc[b] + 1
        if lrc == self.geometry.regions_per_bank:
            lrc = 0
            rac = self.rac[b] + 1
            if rac == self.geometry.rows_per_region:
                rac = 0
                self.sweeps += 1
            self.rac[b] = rac
        self.lrc[b] = lrc

    def stats(self):
        return {"ops": self.scrubs, "corrected": self.corrected, "sweeps": self.sweeps,
                "max_pending": max(self.pending) if self.pending else 0}
