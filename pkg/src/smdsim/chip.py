"""SMD DRAM chip model: geometry, lock regions, ACT_NACK and maintenance scheduling.

A :class:`Chip` is one logical chip of a rank. In lock-step mode it stands in
for every chip of the rank; in divergence mode a :class:`RankDevice` owns one
:class:`Chip` per physical chip and ORs their NACKs.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, fields, replace

import numpy as np

from .maintenance import Engine, Job
from .timing import Address, ConfigError, TimingParams

INF = float("inf")


class ProtocolError(RuntimeError):
    """The controller sent a command the device cannot legally accept."""


def _pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


@dataclass(frozen=True)
class Geometry:
    channels: int = 1
    ranks_per_channel: int = 1
    chips_per_rank: int = 8
    bankgroups: int = 2
    banks_per_group: int = 4
    regions_per_bank: int = 16
    subarrays_per_region: int = 16
    rows_per_subarray: int = 512
    row_size_bytes: int = 8192
    line_size_bytes: int = 64
    open_bitline: bool = True

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name != "open_bitline" and (not isinstance(v, int) or v < 1):
                raise ConfigError(f"geometry.{f.name} must be a positive integer, got {v!r}")
        if self.row_size_bytes % self.line_size_bytes:
            raise ConfigError("row size must be a multiple of the line size")

    @property
    def banks_per_rank(self) -> int:
        return self.bankgroups * self.banks_per_group

    @property
    def ranks(self) -> int:
        return self.channels * self.ranks_per_channel

    @property
    def rows_per_region(self) -> int:
        return self.subarrays_per_region * self.rows_per_subarray

    @property
    def rows_per_bank(self) -> int:
        return self.regions_per_bank * self.rows_per_region

    @property
    def subarrays_per_bank(self) -> int:
        return self.regions_per_bank * self.subarrays_per_region

    @property
    def columns_per_row(self) -> int:
        return self.row_size_bytes // self.line_size_bytes

    @property
    def capacity_bytes(self) -> int:
        return self.ranks * self.banks_per_rank * self.rows_per_bank * self.row_size_bytes

    def bank_index(self, bankgroup: int, bank: int) -> int:
        return bankgroup * self.banks_per_group + bank

    def bank_address(self, index: int) -> tuple[int, int]:
        return divmod(index, self.banks_per_group)

    def region_of(self, row: int) -> int:
        return row // self.rows_per_region

    def subarray_of(self, row: int) -> int:
        return row // self.rows_per_subarray

    def region_rows(self, region: int) -> range:
        s = region * self.rows_per_region
        return range(s, s + self.rows_per_region)

    def with_regions(self, regions_per_bank: int) -> "Geometry":
        """Same bank size split into a different number of lock regions."""
        sa = self.subarrays_per_bank
        if regions_per_bank < 1 or sa % regions_per_bank:
            raise ConfigError(f"{regions_per_bank} regions do not divide {sa} subarrays")
        return replace(self, regions_per_bank=regions_per_bank,
                       subarrays_per_region=sa // regions_per_bank)

    @classmethod
    def full(cls) -> "Geometry":
        """Full-size system: 4 channels, 2 ranks, 16 banks of 128K rows."""
        return cls(channels=4, ranks_per_channel=2, bankgroups=4, banks_per_group=4)

    @classmethod
    def desk(cls) -> "Geometry":
        """Desk-scale performance profile: 1 channel, 1 rank, 8 banks of 128K rows."""
        return cls()

    @classmethod
    def scaled(cls) -> "Geometry":
        """Desk profile for performance runs: 8 banks of 32K rows, 128-row subarrays."""
        return cls(rows_per_subarray=128)

    @classmethod
    def from_mapping(cls, values: dict, base: "Geometry | None" = None) -> "Geometry":
        known = {f.name for f in fields(cls)}
        kw = {}
        for k, v in values.items():
            if k == "profile":
                continue
            if k not in known:
                raise ConfigError(f"unknown geometry key {k!r}")
            if k == "open_bitline":
                kw[k] = v if isinstance(v, bool) else str(v).strip().lower() in ("1", "true", "yes", "on")
            else:
                try:
                    kw[k] = int(v)
                except ValueError:
                    raise ConfigError(f"geometry.{k} must be an integer") from None
        profile = str(values.get("profile", "")).strip()
        if base is None:
            base = {"": cls(), "default": cls(), "desk": cls.desk(), "full": cls.full(), "scaled": cls.scaled()}.get(profile)
            if base is None:
                raise ConfigError(f"unknown geometry profile {profile!r}")
        return replace(base, **kw)


def blocked_subarrays(geometry: Geometry, region: int) -> frozenset:
    """Subarrays made inaccessible by locking ``region``.

    With open bitlines a region shares sense amplifiers with the subarray on
    each side, so those are blocked too (clamped at the bank edges).
    """
    if not 0 <= region < geometry.regions_per_bank:
        raise ValueError(f"region {region} out of range")
    lo = region * geometry.subarrays_per_region
    hi = lo + geometry.subarrays_per_region
    if geometry.open_bitline:
        lo = max(0, lo - 1)
        hi = min(geometry.subarrays_per_bank, hi + 1)
    return frozenset(range(lo, hi))


def blocked_row_span(geometry: Geometry, region: int) -> tuple[int, int]:
    """Half-open row range covered by :func:`blocked_subarrays`."""
    sa = blocked_subarrays(geometry, region)
    return min(sa) * geometry.rows_per_subarray, (max(sa) + 1) * geometry.rows_per_subarray


class AddressMapper:
    """Physical address <-> DRAM coordinates with a configurable bit layout.

    ``layout`` lists fields from most to least significant above the line
    offset. The default keeps a whole row's columns contiguous (row-interleaved,
    column in the low bits) and interleaves consecutive rows across channels,
    bank groups, banks and ranks.
    """

    FIELDS = ("row", "rank", "bank", "bankgroup", "channel", "column")

    def __init__(self, geometry: Geometry, layout: tuple[str, ...] = FIELDS):
        if sorted(layout) != sorted(self.FIELDS):
            raise ConfigError(f"address layout must be a permutation of {self.FIELDS}")
        sizes = {"row": geometry.rows_per_bank, "rank": geometry.ranks_per_channel,
                 "bank": geometry.banks_per_group, "bankgroup": geometry.bankgroups,
                 "channel": geometry.channels, "column": geometry.columns_per_row}
        for k, n in sizes.items():
            if not _pow2(n):
                raise ConfigError(f"{k} count {n} must be a power of two for bit-sliced mapping")
        if not _pow2(geometry.line_size_bytes):
            raise ConfigError("line size must be a power of two")
        self.geometry = geometry
        self.offset_bits = geometry.line_size_bytes.bit_length() - 1
        self._slices = []
        shift = self.offset_bits
        for name in reversed(layout):
            bits = sizes[name].bit_length() - 1
            self._slices.append((name, shift, (1 << bits) - 1))
            shift += bits
        self.total_bits = shift

    def decompose(self, paddr: int) -> Address:
        paddr %= 1 << self.total_bits
        v = {name: (paddr >> sh) & mask for name, sh, mask in self._slices}
        return Address(v["channel"], v["rank"], v["bankgroup"], v["bank"], v["row"], v["column"])

    def compose(self, addr: Address) -> int:
        d = addr._asdict()
        out = 0
        for name, sh, mask in self._slices:
            out |= (d[name] & mask) << sh
        return out


class LockResult(enum.Enum):
    LOCKED = "Locked"
    BUSY_OPEN_ROW = "BusyOpenRow"
    BUSY_LOCKED = "BusyLocked"


class BankPhase(enum.Enum):
    PRECHARGED = "Precharged"
    ACTIVATING = "Activating"
    ACTIVE = "Active"
    PRECHARGING = "Precharging"


class RefreshTracker:
    """Per-row time of last refresh and the largest gap seen, per bank."""

    def __init__(self, nbanks: int, rows_per_bank: int, start: int = 0):
        self.last = np.full((nbanks, rows_per_bank), start, dtype=np.int64)
        self.max_gap = np.zeros((nbanks, rows_per_bank), dtype=np.int64)
        self.count = np.zeros((nbanks, rows_per_bank), dtype=np.int32)

    def record(self, bank: int, rows, t: int) -> None:
        if isinstance(rows, range):
            idx = slice(rows.start, rows.stop)
        else:
            idx = np.asarray(rows, dtype=np.int64)
        gap = t - self.last[bank, idx]
        np.maximum(self.max_gap[bank, idx], gap, out=gap)
        self.max_gap[bank, idx] = gap
        self.last[bank, idx] = t
        self.count[bank, idx] += 1

    def gaps(self, end: int) -> np.ndarray:
        """Per-row maximum gap including the open interval up to ``end``."""
        return np.maximum(self.max_gap, end - self.last)

    def worst(self, end: int) -> int:
        return int(self.gaps(end).max()) if self.last.size else 0


class Chip:
    """One logical SMD (or baseline DDR4) chip covering every bank of a rank."""

    def __init__(self, geometry: Geometry, timing: TimingParams, engines: list[Engine] = (),
                 *, smd: bool = True, chip_id: int = 0, channel: int = 0, rank: int = 0,
                 max_locks_per_bank: int = 1, tracker: RefreshTracker | None = None,
                 log: list | None = None, multiplicity: int = 1):
        self.g = geometry
        self.p = timing
        self.smd = smd
        self.engines = list(engines)
        if not smd and self.engines:
            raise ConfigError("baseline chips run no in-DRAM maintenance")
        self._act_engines = [e for e in self.engines if e.listens_to_acts]
        self.chip_id = chip_id
        self.channel = channel
        self.rank = rank
        self.max_locks = max_locks_per_bank
        self.tracker = tracker
        self.log = log
        self.multiplicity = multiplicity
        nb = geometry.banks_per_rank
        self.nbanks = nb
        self.spans = [blocked_row_span(geometry, r) for r in range(geometry.regions_per_bank)]
        self.open_row: list[int | None] = [None] * nb
        self.act_time = [0] * nb
        self.closed_row: list[int | None] = [None] * nb
        self.pre_ready = [0] * nb
        self.locks: list[dict[int, str]] = [{} for _ in range(nb)]
        self.jobs: list[Job | None] = [None] * nb
        self.job_end = [INF] * nb
        self.ref_ctr = 0
        self.busy_until = 0
        self.rows_per_ref = max(1, geometry.rows_per_bank // timing.refreshes_per_window)
        # statistics
        self.acts = 0
        self.nacks = 0
        self.lock_events = 0
        self.lock_fail_open_row = 0
        self.lock_fail_locked = 0
        self.lock_busy_cycles = 0
        self.internal_refresh_rows = 0
        self.scrub_codewords = 0
        self.scrub_errors = 0
        self.ops_by_owner: dict[str, int] = {}
        self.refs = 0

    # -- lock region table --------------------------------------------------------
    def _blocks(self, region: int, row: int) -> bool:
        lo, hi = self.spans[region]
        return lo <= row < hi

    def is_blocked(self, bank: int, row: int) -> bool:
        for reg in self.locks[bank]:
            lo, hi = self.spans[reg]
            if lo <= row < hi:
                return True
        return False

    def try_lock(self, bank: int, region: int, owner: str) -> LockResult:
        if not 0 <= region < self.g.regions_per_bank:
            raise ValueError(f"region {region} out of range")
        held = self.locks[bank]
        if region in held or len(held) >= self.max_locks:
            self.lock_fail_locked += 1
            return LockResult.BUSY_LOCKED
        row = self.open_row[bank]
        if row is not None and self._blocks(region, row):
            self.lock_fail_open_row += 1
            return LockResult.BUSY_OPEN_ROW
        held[region] = owner
        self.lock_events += 1
        return LockResult.LOCKED

    def release(self, bank: int, region: int, owner: str) -> None:
        held = self.locks[bank]
        if held.get(region) != owner:
            raise ProtocolError(f"{owner} releases region {region} of bank {bank} it does not hold")
        del held[region]

    def phase(self, bank: int, now: int) -> BankPhase:
        if self.open_row[bank] is not None:
            return BankPhase.ACTIVATING if now < self.act_time[bank] + self.p.tRCD else BankPhase.ACTIVE
        return BankPhase.PRECHARGING if now < self.pre_ready[bank] else BankPhase.PRECHARGED

    # -- MC-facing commands ---------------------------------------------------------
    def handle_act(self, bank: int, row: int, now: int) -> bool:
        """True if the activation is accepted, False if NACKed (arrives at now + T_nack)."""
        if self.open_row[bank] is not None:
            raise ProtocolError(f"ACT to bank {bank} with row {self.open_row[bank]} open")
        if now < self.busy_until:
            raise ProtocolError(f"ACT during refresh (busy until {self.busy_until})")
        if self.is_blocked(bank, row):
            self.nacks += 1
            return False
        self.open_row[bank] = row
        self.act_time[bank] = now
        self.acts += 1
        for e in self._act_engines:
            e.on_act(bank, row, now)
        return True

    def handle_pre(self, bank: int, now: int) -> None:
        row = self.open_row[bank]
        if row is None:
            return
        self.open_row[bank] = None
        self.closed_row[bank] = row
        self.pre_ready[bank] = now + self.p.tRP
        if self.smd:
            self._start(bank, now)

    def baseline_refresh(self, now: int) -> int:
        """All-bank REF: refresh the next rows_per_REF rows of every bank; returns busy_until."""
        if self.smd:
            raise ProtocolError("REF sent to an SMD chip")
        if any(r is not None for r in self.open_row):
            raise ProtocolError("REF with a bank open")
        self.busy_until = now + self.p.tRFC
        start = self.ref_ctr * self.rows_per_ref % self.g.rows_per_bank
        rows = range(start, start + self.rows_per_ref)
        if self.tracker is not None:
            for b in range(self.nbanks):
                self.tracker.record(b, rows, self.busy_until)
        self.ref_ctr = (self.ref_ctr + 1) % self.p.refreshes_per_window
        self.refs += 1
        return self.busy_until

    # -- maintenance scheduling -----------------------------------------------------
    def next_event(self) -> float:
        t = INF
        for e in self.engines:
            nt = e.next_timer()
            if nt is not None and nt < t:
                t = nt
        for je in self.job_end:
            if je < t:
                t = je
        return t

    def tick(self, now: int) -> None:
        """Process engine timers and job completions up to and including ``now``."""
        if not self.engines:
            return
        while True:
            t_timer, eng = INF, None
            for e in self.engines:
                nt = e.next_timer()
                if nt is not None and nt < t_timer:
                    t_timer, eng = nt, e
            t_job, jb = INF, -1
            for b, je in enumerate(self.job_end):
                if je < t_job:
                    t_job, jb = je, b
            if t_job <= t_timer:
                if t_job > now:
                    return
                self._finish(jb, t_job)
                self._start(jb, t_job)
            else:
                if t_timer > now:
                    return
                eng.on_timer(t_timer)
                for b in range(self.nbanks):
                    if self.jobs[b] is None:
                        self._start(b, t_timer)

    def poke(self, bank: int, now: int) -> None:
        self._start(bank, now)

    def _start(self, bank: int, now: int) -> None:
        if self.jobs[bank] is not None:
            return
        for e in self.engines:
            for job in e.candidates(bank):
                if self.try_lock(bank, job.region, job.owner) is LockResult.LOCKED:
                    self._begin(job, now)
                    return

    def _begin(self, job: Job, now: int) -> None:
        b = job.bank
        start = now
        closed = self.closed_row[b]
        if closed is not None and self.pre_ready[b] > now and self._blocks(job.region, closed):
            # locked while the MC's precharge is still in flight
            start = self.pre_ready[b]
        self.jobs[b] = job
        self.job_end[b] = start + job.duration
        self.lock_busy_cycles += job.duration
        if self.log is not None:
            self.log.append((start, "M", self.channel, self.rank, self.chip_id, b, job.region,
                             job.owner, job.kind, len(job.rows), job.duration, job.codewords,
                             job.errors, self.multiplicity))

    def _finish(self, bank: int, t: int) -> None:
        job = self.jobs[bank]
        self.jobs[bank] = None
        self.job_end[bank] = INF
        self.release(bank, job.region, job.owner)
        if job.kind == "scrub":
            self.scrub_codewords += job.codewords
            self.scrub_errors += job.errors
        else:
            self.internal_refresh_rows += len(job.rows)
        if self.tracker is not None and job.rows:
            self.tracker.record(bank, job.rows, t)
        self.ops_by_owner[job.owner] = self.ops_by_owner.get(job.owner, 0) + 1
        for e in self.engines:
            if e.owner == job.owner:
                e.on_job_done(job, t)
                break

    def engine_stats(self) -> dict:
        return {e.owner: e.stats() for e in self.engines}


class RankDevice:
    """The chips of one rank as seen by the controller.

    Returns, for each ACT, how many chips accepted it; the rank-level NACK is
    the OR of the per-chip NACKs.
    """

    def __init__(self, chips: list[Chip]):
        if not chips:
            raise ValueError("a rank needs at least one chip")
        self.chips = chips
        self.smd = chips[0].smd

    @property
    def nchips(self) -> int:
        return len(self.chips)

    def act(self, bank: int, row: int, now: int, only_closed: bool = False) -> int:
        """ACT on every chip (or only on chips without the row open); returns acceptances."""
        n = 0
        for c in self.chips:
            if only_closed and c.open_row[bank] is not None:
                n += 1
                continue
            if c.handle_act(bank, row, now):
                n += 1
        return n

    def pre(self, bank: int, now: int) -> None:
        for c in self.chips:
            c.handle_pre(bank, now)

    def ref(self, now: int) -> int:
        return max(c.baseline_refresh(now) for c in self.chips)

    def tick(self, now: int) -> None:
        for c in self.chips:
            c.tick(now)

    def next_event(self) -> float:
        return min(c.next_event() for c in self.chips)

    def lock_blocks(self, bank: int, row: int) -> bool:
        return any(c.is_blocked(bank, row) for c in self.chips)
