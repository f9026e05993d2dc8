"""Memory controller: FR-FCFS-Cap scheduling, ACT_NACK handling and DDR4 refresh.

One :class:`Controller` drives one channel. Per-bank earliest-issue times are
kept incrementally: every issued command raises the bounds of every bank in
the channel through the shared gap table, split into a bank-local part (the
bank's own commands) and a shared part (everyone else's), so a NACKed ACT can
roll back its bank-local effects.
"""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass, fields

from .chip import Geometry, RankDevice
from .maintenance import neighbors
from .timing import (Address, Command, CommandKind, ConfigError, Relation, TimingParams,
                     _table_for)

ACT, PRE, RD, WR, REF = (CommandKind.ACT, CommandKind.PRE, CommandKind.RD,
                         CommandKind.WR, CommandKind.REF)
_KINDS = (ACT, PRE, RD, WR, REF)
INF = float("inf")

# bank states
CLOSED, PENDING, OPEN, PARTIAL = 0, 1, 2, 3

POLICIES = ("precharge", "wait", "hybrid")


@dataclass(frozen=True)
class ControllerParams:
    read_queue: int = 64
    write_queue: int = 64
    cap: int = 16
    write_high: float = 0.75
    write_low: float = 0.25
    policy: str = "precharge"
    hybrid_threshold: int = 4
    closed_page_timeout: int = 0       # cycles; 0 keeps rows open
    row_open_guard: int = -1           # cycles subtracted from the 9 x tREFI cap; -1 = derive from FR
    para_p_mark: float = 0.01
    para_blast_distance: int = 1

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ConfigError(f"unknown divergence policy {self.policy!r}")
        if self.read_queue < 1 or self.write_queue < 1 or self.cap < 1:
            raise ConfigError("queue sizes and cap must be >= 1")
        if not 0.0 <= self.write_low < self.write_high <= 1.0:
            raise ConfigError("need 0 <= write_low < write_high <= 1")
        if not 0.0 <= self.para_p_mark <= 1.0:
            raise ConfigError("para_p_mark must be in [0, 1]")

    @classmethod
    def from_mapping(cls, values: dict) -> "ControllerParams":
        known = {f.name: f for f in fields(cls)}
        kw = {}
        for k, v in values.items():
            if k not in known:
                raise ConfigError(f"unknown controller key {k!r}")
            kw[k] = type(known[k].default)(v)
        return cls(**kw)


@dataclass(slots=True)
class MemRequest:
    is_write: bool
    paddr: int
    addr: Address
    core: int
    arrival: int
    token: object = None
    region: int = 0
    bank: int = 0          # flat bank index within the channel
    issued_at: int = -1
    done_at: int = -1


class NackLedger:
    """Earliest re-activation time per (bank, region) after a NACK."""

    def __init__(self, ari: int):
        self.ari = ari
        self._until: dict[tuple[int, int], int] = {}

    def record(self, bank: int, region: int, nack_time: int) -> int:
        t = nack_time + self.ari
        key = (bank, region)
        if self._until.get(key, -1) < t:
            self._until[key] = t
        return t

    def earliest(self, bank: int, region: int) -> int:
        return self._until.get((bank, region), 0)


class _Bank:
    __slots__ = ("idx", "rank", "bg", "ba", "state", "row", "act_time", "confirm_at",
                 "accepted", "hits", "local", "shared", "snapshot", "reads", "writes",
                 "para", "para_row", "last_access", "retry", "must_pre", "retry_at")

    def __init__(self, idx, rank, bg, ba):
        self.idx = idx
        self.rank = rank
        self.bg = bg
        self.ba = ba
        self.state = CLOSED
        self.row = None
        self.act_time = 0
        self.confirm_at = 0
        self.accepted = 0
        self.hits = 0
        self.local = [0] * 5
        self.shared = [0] * 5
        self.snapshot = None
        self.reads: list[MemRequest] = []
        self.writes: list[MemRequest] = []
        self.para: deque = deque()
        self.para_row = False
        self.last_access = 0
        self.retry = False
        self.must_pre = False
        self.retry_at = 0

    def ready(self, k: int) -> int:
        a = self.local[k]
        b = self.shared[k]
        return a if a > b else b


def row_open_cap(timing: TimingParams, geometry: Geometry, rg: int = 16, guard: int = -1) -> int:
    """Longest time the controller keeps a row open before a forced precharge.

    The hard limit is 9 x tREFI. With ``guard < 0`` the cap is also derived from
    fixed-rate refresh: a region blocked by an open row must clear before 8
    refresh intervals elapse, leaving room for the first operation of the drain,
    or the engine's pending counter would reach 9.
    """
    if guard >= 0:
        return max(timing.tRAS, timing.max_row_open - guard)
    op = rg * (timing.tRAS + timing.tRP)
    interval = timing.tREFI * timing.refreshes_per_window * rg // geometry.rows_per_bank
    cap = min(timing.max_row_open, 8 * min(interval, timing.tREFI) - 2 * op)
    return max(timing.tRAS, cap)


class Controller:
    """FR-FCFS-Cap controller for one channel.

    ``mode`` is one of ``smd`` (no REF, NACK-aware), ``ddr4`` (periodic REF with
    up to 8 postponed) or ``none`` (no refresh at all). ``para`` adds
    controller-side PARA, issuing explicit ACT+PRE pairs to neighbor rows.
    """

    def __init__(self, channel: int, geometry: Geometry, timing: TimingParams,
                 devices: list[RankDevice], params: ControllerParams = ControllerParams(),
                 mode: str = "smd", para: bool = False, rng: random.Random | None = None,
                 log: list | None = None, on_complete=None, rg: int = 16):
        if mode not in ("smd", "ddr4", "none"):
            raise ConfigError(f"unknown controller mode {mode!r}")
        if len(devices) != geometry.ranks_per_channel:
            raise ConfigError("need one device per rank")
        self.ch = channel
        self.g = geometry
        self.p = timing
        self.params = params
        self.devices = devices
        self.mode = mode
        self.para = para
        self.rng = rng or random.Random(0)
        self.log = log
        self.on_complete = on_complete
        self.table = _table_for(timing)
        bpr = geometry.banks_per_rank
        self.bpr = bpr
        self.banks = []
        for r in range(geometry.ranks_per_channel):
            for i in range(bpr):
                bg, ba = geometry.bank_address(i)
                self.banks.append(_Bank(r * bpr + i, r, bg, ba))
        nb = len(self.banks)
        # gap vectors: _gaps[kind][rel] -> per next-kind cycles
        self._gaps = {k: {rel: [self.table[(k, n, rel)].cycles for n in _KINDS] for rel in Relation}
                      for k in _KINDS}
        self._rel = [[self._relation(a, b) for b in self.banks] for a in self.banks]
        self.ledger = NackLedger(timing.ARI)
        self.faw = [deque(maxlen=4) for _ in range(geometry.ranks_per_channel)]
        self.last_issue = -1
        self.nreads = 0
        self.nwrites = 0
        self.draining = False
        self.row_open_cap = row_open_cap(timing, geometry, rg, params.row_open_guard)
        # DDR4 refresh bookkeeping per rank
        nr = geometry.ranks_per_channel
        self.backlog = [0] * nr
        self.next_refi = [timing.tREFI + r * timing.tREFI // nr for r in range(nr)]
        self.max_backlog = 0
        self._wake = 0
        self.stats = {k: 0 for k in ("reads", "writes", "acts", "nacked_acts", "partial_acts",
                                     "retry_acts", "pres", "refs", "row_hits", "row_misses",
                                     "forced_pres", "para_acts", "para_marks", "read_latency")}
        self.nacks_by_region: dict[tuple[int, int], int] = {}
        self._nb = nb

    @staticmethod
    def _relation(a: _Bank, b: _Bank) -> Relation:
        if a.rank != b.rank:
            return Relation.SAME_CHANNEL
        if a.bg != b.bg:
            return Relation.SAME_RANK
        if a.ba != b.ba:
            return Relation.SAME_BANKGROUP
        return Relation.SAME_BANK

    # -- request side -------------------------------------------------------------------
    def can_accept(self, is_write: bool) -> bool:
        if is_write:
            return self.nwrites < self.params.write_queue
        return self.nreads < self.params.read_queue

    def enqueue(self, req: MemRequest, now: int) -> bool:
        a = req.addr
        if a.channel != self.ch:
            raise ValueError("request routed to the wrong channel")
        if not self.can_accept(req.is_write):
            return False
        req.bank = a.rank * self.bpr + self.g.bank_index(a.bankgroup, a.bank)
        req.region = a.row // self.g.rows_per_region
        b = self.banks[req.bank]
        if req.is_write:
            b.writes.append(req)
            self.nwrites += 1
        else:
            b.reads.append(req)
            self.nreads += 1
        if self._wake > now:
            self._wake = now
        return True

    @property
    def pending(self) -> int:
        return self.nreads + self.nwrites

    def next_event(self) -> float:
        return self._wake

    # -- timing bookkeeping -------------------------------------------------------------
    def _apply(self, kind: CommandKind, b: _Bank, now: int) -> None:
        gaps = self._gaps[kind]
        rels = self._rel[b.idx]
        if kind == REF:
            g = self._gaps[REF][Relation.SAME_BANK]
            for o in self.banks:
                if o.rank == b.rank:
                    sh = o.shared
                    for k in range(5):
                        v = now + g[k]
                        if v > sh[k]:
                            sh[k] = v
            return
        for o in self.banks:
            rel = rels[o.idx]
            g = gaps[rel]
            arr = o.local if o is b else o.shared
            for k in range(5):
                v = now + g[k]
                if v > arr[k]:
                    arr[k] = v

    def _act_ready(self, b: _Bank) -> int:
        t = b.ready(0)
        f = self.faw[b.rank]
        if len(f) == 4:
            v = f[0] + self.p.tFAW
            if v > t:
                t = v
        return t

    def _ref_ready(self, rank: int) -> int:
        t = 0
        for o in self.banks:
            if o.rank == rank:
                v = o.ready(4)
                if v > t:
                    t = v
        return t

    # -- main step ------------------------------------------------------------------------
    def tick(self, now: int) -> Command | None:
        self._resolve(now)
        if self.mode == "ddr4":
            for r in range(len(self.backlog)):
                while self.next_refi[r] <= now:
                    self.backlog[r] += 1
                    self.next_refi[r] += self.p.tREFI
                    if self.backlog[r] > self.max_backlog:
                        self.max_backlog = self.backlog[r]
        best = None
        wake = INF
        floor = self.last_issue + 1
        for cand in self._candidates(now):
            t = cand[0]
            if t < floor:
                t = floor
            if t <= now:
                key = cand[1]
                if best is None or key < best[1]:
                    best = cand
            elif t < wake:
                wake = t
        cmd = None
        if best is not None:
            cmd = self._issue(now, best)
            wake = now + 1
        for b in self.banks:
            if b.state == PENDING and b.confirm_at < wake:
                wake = max(b.confirm_at, now + 1)
            elif b.state == PARTIAL and b.retry and b.retry_at < wake:
                wake = max(b.retry_at, now + 1)
        if self.mode == "ddr4":
            for t in self.next_refi:
                if t < wake:
                    wake = t
        self._wake = wake
        return cmd

    def _resolve(self, now: int) -> None:
        for b in self.banks:
            if b.state != PENDING or b.confirm_at > now:
                continue
            if b.accepted == self.devices[b.rank].nchips:
                b.state = OPEN
                b.retry = False
                continue
            nack_time = b.confirm_at
            self.ledger.record(b.idx, b.row // self.g.rows_per_region, nack_time)
            if b.accepted == 0:
                # nothing opened: drop the ACT's bank-local timing effects
                loc = b.snapshot
                for k in range(5):
                    if loc[k] < nack_time:
                        loc[k] = nack_time
                b.local = loc
                b.state = CLOSED
                b.row = None
                continue
            b.state = PARTIAL
            policy = self.params.policy
            if policy == "hybrid":
                region = b.row // self.g.rows_per_region
                others = sum(1 for q in (b.reads, b.writes) for r in q if r.region != region)
                policy = "precharge" if others >= self.params.hybrid_threshold else "wait"
            if policy == "precharge":
                b.must_pre = True
                b.retry = False
            else:
                b.must_pre = False
                b.retry = True
                b.retry_at = nack_time + self.p.ARI

    def _rank_needs_ref(self, rank: int) -> tuple[bool, bool]:
        """(wants REF now, forced)."""
        if self.mode != "ddr4" or not self.backlog[rank]:
            return False, False
        forced = self.backlog[rank] >= self.p.max_postponed_refs
        if forced:
            return True, True
        for b in self.banks:
            if b.rank == rank and (b.reads or b.writes or b.para):
                return False, False
        return True, False

    def _candidates(self, now: int):
        """Yield (earliest_time, priority_key, kind, bank, row, column, request, tag)."""
        p = self.p
        ref_rank = {}
        for r in range(len(self.backlog)):
            want, forced = self._rank_needs_ref(r)
            if want:
                ref_rank[r] = forced
                all_closed = True
                for b in self.banks:
                    if b.rank != r:
                        continue
                    if b.state == PENDING:
                        all_closed = False
                    elif b.state in (OPEN, PARTIAL):
                        all_closed = False
                        yield (b.ready(1), (0, b.act_time), PRE, b, b.row, 0, None, "ref")
                if all_closed:
                    yield (self._ref_ready(r), (0, -1), REF, self.banks[r * self.bpr], 0, 0, None, "ref")
        if self.draining:
            if self.nwrites <= self.params.write_low * self.params.write_queue:
                self.draining = False
        elif self.nwrites >= self.params.write_high * self.params.write_queue:
            self.draining = True
        use_writes = self.draining or not self.nreads
        for b in self.banks:
            if ref_rank.get(b.rank) is True:
                continue
            st = b.state
            if st == PENDING:
                continue
            if st == PARTIAL:
                if b.must_pre:
                    yield (b.ready(1), (1, b.act_time), PRE, b, b.row, 0, None, "partial")
                elif b.retry:
                    t = max(self._act_ready(b), b.retry_at)
                    yield (t, (2, b.act_time), ACT, b, b.row, 0, None, "retry")
                    yield (max(b.ready(1), b.act_time + self.row_open_cap), (1, b.act_time),
                           PRE, b, b.row, 0, None, "cap")
                continue
            if st == OPEN:
                if b.para_row:
                    yield (b.ready(1), (1, b.act_time), PRE, b, b.row, 0, None, "para")
                    continue
                deadline = b.act_time + self.row_open_cap
                yield (max(b.ready(1), deadline), (1, b.act_time), PRE, b, b.row, 0, None, "cap")
                if deadline <= now:
                    continue
                if b.para:
                    yield (b.ready(1), (1, b.act_time), PRE, b, b.row, 0, None, "para-close")
                    continue
                q = b.writes if use_writes else b.reads
                hit = None
                oldest = None
                row = b.row
                for r in q:
                    if oldest is None:
                        oldest = r
                    if r.addr.row == row:
                        hit = r
                        break
                if hit is not None and (b.hits < self.params.cap or hit is oldest):
                    kind = WR if hit.is_write else RD
                    yield (b.ready(3 if hit.is_write else 2), (3, 0, hit.arrival), kind, b, row,
                           hit.addr.column, hit, "hit")
                elif oldest is not None:
                    yield (b.ready(1), (3, 1, oldest.arrival), PRE, b, row, 0, oldest, "miss")
                elif not (b.reads or b.writes):
                    to = self.params.closed_page_timeout
                    if to:
                        yield (max(b.ready(1), b.last_access + to), (4, b.last_access), PRE, b, row,
                               0, None, "timeout")
                continue
            # CLOSED
            if b.para:
                yield (self._act_ready(b), (2, 0), ACT, b, b.para[0], 0, None, "para")
                continue
            q = b.writes if use_writes else b.reads
            if not q:
                continue
            act_t = self._act_ready(b)
            best = None
            for r in q:
                t = self.ledger.earliest(b.idx, r.region)
                t = t if t > act_t else act_t
                if best is None or t < best[0] or (t == best[0] and r.arrival < best[2].arrival):
                    best = (t, r.arrival, r)
                    if t <= now:
                        break
            t, _, r = best
            yield (t, (3, 1, r.arrival), ACT, b, r.addr.row, 0, r, "miss")

    def _issue(self, now: int, cand) -> Command:
        _, _, kind, b, row, col, req, tag = cand
        dev = self.devices[b.rank]
        addr = Address(self.ch, b.rank, b.bg, b.ba, row, col)
        cmd = Command(kind, addr, now)
        st = self.stats
        if kind == ACT:
            self.faw[b.rank].append(now)
            snap = list(b.local)
            retry = tag == "retry"
            n = dev.act(b.ba + b.bg * self.g.banks_per_group, row, now, only_closed=retry)
            self._apply(ACT, b, now)
            b.snapshot = snap
            b.row = row
            b.accepted = n
            b.confirm_at = now + self.p.T_nack
            b.retry = retry
            b.para_row = tag == "para"
            if tag == "para":
                b.para.popleft()
                st["para_acts"] += 1
            if not retry:
                b.act_time = now
                b.hits = 0
            st["acts"] += 1
            if retry:
                st["retry_acts"] += 1
                cmd.retry = True
            if n == 0:
                cmd.nacked = True
                st["nacked_acts"] += 1
                key = (b.idx, row // self.g.rows_per_region)
                self.nacks_by_region[key] = self.nacks_by_region.get(key, 0) + 1
            elif n < dev.nchips:
                cmd.partial = True
                st["partial_acts"] += 1
            b.state = PENDING if self.mode == "smd" else OPEN
            if tag == "miss" and n:
                st["row_misses"] += 1
            if self.para and tag != "para" and n == dev.nchips and self.params.para_p_mark > 0:
                if self.rng.random() < self.params.para_p_mark:
                    st["para_marks"] += 1
                    for v in neighbors(row, self.params.para_blast_distance, self.g.rows_per_bank):
                        b.para.append(v)
        elif kind == PRE:
            dev.pre(b.ba + b.bg * self.g.banks_per_group, now)
            self._apply(PRE, b, now)
            b.state = CLOSED
            b.row = None
            b.para_row = False
            b.must_pre = False
            b.retry = False
            st["pres"] += 1
            if tag in ("cap", "ref"):
                st["forced_pres"] += 1
        elif kind == REF:
            dev.ref(now)
            self._apply(REF, b, now)
            self.backlog[b.rank] -= 1
            st["refs"] += 1
        else:
            self._apply(kind, b, now)
            b.hits += 1
            b.last_access = now
            q = b.writes if kind == WR else b.reads
            q.remove(req)
            req.issued_at = now
            if kind == WR:
                self.nwrites -= 1
                st["writes"] += 1
                req.done_at = now
            else:
                self.nreads -= 1
                st["reads"] += 1
                req.done_at = now + self.p.tCL + self.p.tBL
                st["read_latency"] += req.done_at - req.arrival
            if b.hits > 1:
                st["row_hits"] += 1
            if self.on_complete is not None:
                self.on_complete(req)
        self.last_issue = now
        if self.log is not None:
            self.log.append(cmd)
        return cmd


def check_protocol(cmds, geometry: Geometry, timing: TimingParams, smd: bool = True) -> list[str]:
    """SMD-specific protocol rules not covered by the gap table.

    * no RD/WR to a row unless every chip has it open (no NACKed or partial ACT pending),
    * no ACT to a region before its NACK time + ARI,
    * no REF to SMD chips.
    """
    errors = []
    rpr = geometry.rows_per_region
    state: dict[tuple, tuple] = {}        # bank -> (row, complete)
    retry_at: dict[tuple, int] = {}
    ari = timing.ARI
    for i, c in enumerate(cmds):
        a = c.addr
        bk = (a.channel, a.rank, a.bankgroup, a.bank)
        if c.kind == CommandKind.REF:
            if smd:
                errors.append(f"#{i}: REF issued to an SMD device")
            continue
        if c.kind == CommandKind.ACT:
            key = bk + (a.row // rpr,)
            t = retry_at.get(key)
            if t is not None and c.issue_time < t:
                errors.append(f"#{i}: ACT to region {key} at {c.issue_time} before ARI expiry {t}")
            prev = state.get(bk)
            if c.retry:
                if prev is None or prev[0] != a.row:
                    errors.append(f"#{i}: retry ACT without a partial activation of row {a.row}")
                    continue
            elif prev is not None:
                errors.append(f"#{i}: ACT to bank with row {prev[0]} open")
            if c.nacked or c.partial:
                retry_at[key] = c.issue_time + timing.T_nack + ari
            if c.nacked and not c.retry:
                state.pop(bk, None)
            else:
                state[bk] = (a.row, not (c.nacked or c.partial))
        elif c.kind == CommandKind.PRE:
            state.pop(bk, None)
        elif c.kind in (CommandKind.RD, CommandKind.WR):
            s = state.get(bk)
            if s is None or s[0] != a.row:
                errors.append(f"#{i}: {c.kind.name} to row {a.row} which is not open")
            elif not s[1]:
                errors.append(f"#{i}: {c.kind.name} to partially activated row {a.row}")
    return errors
