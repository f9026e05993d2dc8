"""DRAM timing parameters, the command vocabulary and the command-gap rulebook.

The same gap table drives the controller's scheduler and :func:`check_stream`,
which re-validates a finished command log pairwise and is used as a test
oracle. All simulator time is integer bus cycles.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, fields, replace
from typing import Iterable, NamedTuple, Sequence


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class CommandKind(enum.IntEnum):
    ACT = 0
    PRE = 1
    RD = 2
    WR = 3
    REF = 4
    NOP = 5


class Address(NamedTuple):
    channel: int = 0
    rank: int = 0
    bankgroup: int = 0
    bank: int = 0
    row: int = 0
    column: int = 0


@dataclass(slots=True)
class Command:
    kind: CommandKind
    addr: Address
    issue_time: int
    # ACT rejected by every chip of the rank: no row was opened.
    nacked: bool = False
    # ACT re-issued to complete a partial activation (divergence Wait policy).
    retry: bool = False
    # ACT accepted by some chips of the rank and rejected by others.
    partial: bool = False

    def __str__(self) -> str:
        return format_command(self)


def format_command(cmd: Command) -> str:
    a = cmd.addr
    flag = ("N" if cmd.nacked else "") + ("P" if cmd.partial else "") + ("R" if cmd.retry else "")
    return (f"{cmd.issue_time} {cmd.kind.name} {a.channel} {a.rank} "
            f"{a.bankgroup} {a.bank} {a.row} {a.column} {flag or '-'}")


def parse_command(line: str) -> Command:
    parts = line.split()
    if len(parts) != 9:
        raise ValueError(f"bad command line: {line!r}")
    t, kind, ch, ra, bg, ba, row, col, flag = parts
    return Command(CommandKind[kind], Address(int(ch), int(ra), int(bg), int(ba), int(row), int(col)),
                   int(t), nacked="N" in flag, retry="R" in flag, partial="P" in flag)


@dataclass(frozen=True)
class TimingParams:
    """DDR4-3200 style timing profile.

    Cycle-valued fields are bus cycles; ``*_ns`` fields are nanoseconds and are
    converted with :func:`ns_to_cycles` (ceiling).
    """

    clock_freq_mhz: float = 1600.0
    tRCD: int = 22
    tRAS: int = 56
    tRP: int = 24
    tCL: int = 22
    tCWL: int = 16
    tBL: int = 4
    tWR: int = 24
    tRTP: int = 12
    tWTR_S: int = 4
    tWTR: int = 12
    tRTW: int = 12
    tCCD: int = 8
    tRRD_S: int = 4
    tRRD: int = 8
    tRTRS: int = 2
    tFAW: int = 34
    tRFC: int = 560
    tREFI_ns: float = 3900.0
    tREFW_ns: float = 32_000_000.0
    T_nack: int = 5
    ARI_ns: float = 60.0
    refreshes_per_window: int = 8192
    max_postponed_refs: int = 8
    row_open_cap_trefi: int = 9

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (int, float)) and f.name != "tRTRS" and v <= 0:
                raise ConfigError(f"{f.name} must be positive, got {v}")
        if self.tRAS < self.tRCD:
            raise ConfigError("tRAS must be >= tRCD")

    # -- derived cycle values -------------------------------------------------
    @property
    def tRC(self) -> int:
        return self.tRAS + self.tRP

    @property
    def tREFI(self) -> int:
        return ns_to_cycles(self.tREFI_ns, self)

    @property
    def tREFW(self) -> int:
        return ns_to_cycles(self.tREFW_ns, self)

    @property
    def ARI(self) -> int:
        return ns_to_cycles(self.ARI_ns, self)

    @property
    def max_row_open(self) -> int:
        return self.row_open_cap_trefi * self.tREFI

    def cycles_to_ns(self, cycles: float) -> float:
        return cycles * 1000.0 / self.clock_freq_mhz

    def with_refresh_period(self, period_ms: float) -> "TimingParams":
        """Same profile with tREFW = ``period_ms`` and tREFI = tREFW / refreshes_per_window."""
        refw = period_ms * 1e6
        return replace(self, tREFW_ns=refw, tREFI_ns=refw / self.refreshes_per_window)

    @classmethod
    def from_mapping(cls, values: dict) -> "TimingParams":
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for k, v in values.items():
            if k not in known:
                raise ConfigError(f"unknown timing key {k!r}")
            kwargs[k] = float(v) if (k.endswith("_ns") or k == "clock_freq_mhz") else int(v)
        return cls(**kwargs)


DDR4_3200 = TimingParams()


def ns_to_cycles(ns: float, p: TimingParams) -> int:
    """Ceiling conversion from nanoseconds to bus cycles."""
    if ns < 0:
        raise ValueError("ns must be >= 0")
    # round away float noise first so e.g. 7800 * 1.6 stays exactly 12480
    return math.ceil(round(ns * p.clock_freq_mhz / 1000.0, 9))


# -- the gap rulebook -----------------------------------------------------------

class Relation(enum.IntEnum):
    SAME_BANK = 0
    SAME_BANKGROUP = 1   # different bank, same bank group
    SAME_RANK = 2        # different bank group
    SAME_CHANNEL = 3     # different rank
    UNRELATED = 4        # different channel


def relation(a: Address, b: Address) -> Relation:
    if a.channel != b.channel:
        return Relation.UNRELATED
    if a.rank != b.rank:
        return Relation.SAME_CHANNEL
    if a.bankgroup != b.bankgroup:
        return Relation.SAME_RANK
    if a.bank != b.bank:
        return Relation.SAME_BANKGROUP
    return Relation.SAME_BANK


class GapRule(NamedTuple):
    cycles: int
    name: str


_K = CommandKind
_R = Relation
_NONE = GapRule(0, "")


def gap_table(p: TimingParams) -> dict:
    """Map (prev kind, next kind, relation) -> GapRule for every known pair."""
    t: dict = {}

    def put(prev, nxt, rels, cycles, name):
        for r in rels:
            t[(prev, nxt, r)] = GapRule(max(0, cycles), name)

    bank = (_R.SAME_BANK,)
    bank_bg = (_R.SAME_BANK, _R.SAME_BANKGROUP)
    rank_all = (_R.SAME_BANK, _R.SAME_BANKGROUP, _R.SAME_RANK)

    put(_K.ACT, _K.ACT, bank, p.tRC, "tRC")
    put(_K.ACT, _K.ACT, (_R.SAME_BANKGROUP,), p.tRRD, "tRRD_L")
    put(_K.ACT, _K.ACT, (_R.SAME_RANK,), p.tRRD_S, "tRRD_S")
    put(_K.ACT, _K.RD, bank, p.tRCD, "tRCD")
    put(_K.ACT, _K.WR, bank, p.tRCD, "tRCD")
    put(_K.ACT, _K.PRE, bank, p.tRAS, "tRAS")
    put(_K.ACT, _K.REF, rank_all, p.tRC, "tRC")

    put(_K.PRE, _K.ACT, bank, p.tRP, "tRP")
    put(_K.PRE, _K.REF, rank_all, p.tRP, "tRP")

    put(_K.RD, _K.RD, bank_bg, p.tCCD, "tCCD_L")
    put(_K.RD, _K.RD, (_R.SAME_RANK,), p.tBL, "tCCD_S")
    put(_K.RD, _K.RD, (_R.SAME_CHANNEL,), p.tBL + p.tRTRS, "tRTRS")
    put(_K.RD, _K.WR, rank_all + (_R.SAME_CHANNEL,), p.tRTW, "tRTW")
    put(_K.RD, _K.PRE, bank, p.tRTP, "tRTP")

    put(_K.WR, _K.WR, bank_bg, p.tCCD, "tCCD_L")
    put(_K.WR, _K.WR, (_R.SAME_RANK,), p.tBL, "tCCD_S")
    put(_K.WR, _K.WR, (_R.SAME_CHANNEL,), p.tBL + p.tRTRS, "tRTRS")
    put(_K.WR, _K.RD, bank_bg, p.tCWL + p.tBL + p.tWTR, "tWTR_L")
    put(_K.WR, _K.RD, (_R.SAME_RANK,), p.tCWL + p.tBL + p.tWTR_S, "tWTR_S")
    put(_K.WR, _K.RD, (_R.SAME_CHANNEL,), p.tCWL + p.tBL + p.tRTRS - p.tCL, "tRTRS")
    put(_K.WR, _K.PRE, bank, p.tCWL + p.tBL + p.tWR, "tWR")

    for nxt in (_K.ACT, _K.PRE, _K.RD, _K.WR, _K.REF):
        put(_K.REF, nxt, rank_all, p.tRFC, "tRFC")

    for prev in CommandKind:
        for nxt in CommandKind:
            for r in Relation:
                t.setdefault((prev, nxt, r), _NONE)
    return t


_TABLES: dict = {}


def _table_for(p: TimingParams) -> dict:
    tab = _TABLES.get(p)
    if tab is None:
        tab = _TABLES[p] = gap_table(p)
    return tab


def min_gap(prev: Command, nxt: Command, p: TimingParams) -> int:
    """Minimum legal issue-time separation between two commands (0 if unconstrained)."""
    if not isinstance(prev.kind, CommandKind) or not isinstance(nxt.kind, CommandKind):
        raise TypeError(f"unknown command pair {prev.kind!r} -> {nxt.kind!r}")
    rel = relation(prev.addr, nxt.addr)
    if (prev.kind == _K.REF or nxt.kind == _K.REF) and rel != _R.UNRELATED and rel != _R.SAME_CHANNEL:
        rel = _R.SAME_BANK
    return _table_for(p)[(prev.kind, nxt.kind, rel)].cycles


# -- stream checker -------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    index: int
    rule: str
    required: int
    actual: int
    prev_index: int | None = None

    def __str__(self) -> str:
        where = f" (after #{self.prev_index})" if self.prev_index is not None else ""
        return f"#{self.index}: {self.rule} needs {self.required} cycles, got {self.actual}{where}"


def check_stream(cmds: Sequence[Command], p: TimingParams) -> list[Violation]:
    """Validate a time-sorted command stream against the gap rules and tFAW.

    Only the latest prior command of each kind per bank can be binding, because
    every rule is a lower bound on the separation. A fully NACKed ACT opens no
    row: it constrains its own bank only for ``T_nack`` cycles, but still counts
    toward rank-level rules (tRRD, tFAW).
    """
    table = _table_for(p)
    violations: list[Violation] = []
    # per bank key: kind -> (time, index); "shared" includes NACKed ACTs
    last_bank: dict[tuple, dict] = {}
    last_shared: dict[tuple, dict] = {}
    nack_block: dict[tuple, tuple[int, int]] = {}
    faw: dict[tuple, list[tuple[int, int]]] = {}
    bus_last: dict[int, tuple[int, int]] = {}
    rank_ref: dict[tuple, tuple[int, int]] = {}
    prev_time = None

    for i, c in enumerate(cmds):
        if c.kind == _K.NOP:
            continue
        t = c.issue_time
        if prev_time is not None and t < prev_time:
            violations.append(Violation(i, "order", prev_time, t))
        prev_time = t
        a = c.addr
        b = bus_last.get(a.channel)
        if b is not None and b[0] == t:
            violations.append(Violation(i, "command-bus", 1, 0, b[1]))
        bus_last[a.channel] = (t, i)

        key = (a.channel, a.rank, a.bankgroup, a.bank)
        is_ref = c.kind == _K.REF
        rr = rank_ref.get((a.channel, a.rank))
        if rr is not None:
            rule = table[(_K.REF, c.kind, _R.SAME_BANK)]
            if rule.cycles and t - rr[0] < rule.cycles:
                violations.append(Violation(i, rule.name, rule.cycles, t - rr[0], rr[1]))
        for okey, kinds in last_shared.items():
            if okey[0] != a.channel:
                continue
            if is_ref:
                if okey[1] != a.rank:
                    continue
                rel = _R.SAME_BANK
            elif okey[1] != a.rank:
                rel = _R.SAME_CHANNEL
            elif okey[2] != a.bankgroup:
                rel = _R.SAME_RANK
            elif okey[3] != a.bank:
                rel = _R.SAME_BANKGROUP
            else:
                rel = _R.SAME_BANK
            src = last_bank.get(okey, {}) if rel == _R.SAME_BANK else kinds
            for pk, (pt, pi) in src.items():
                rule = table[(pk, c.kind, rel)]
                if rule.cycles and t - pt < rule.cycles:
                    violations.append(Violation(i, rule.name, rule.cycles, t - pt, pi))
        nb = nack_block.get(key)
        if nb is not None and t < nb[0] and not is_ref:
            violations.append(Violation(i, "T_nack", p.T_nack, t - (nb[0] - p.T_nack), nb[1]))

        if c.kind == _K.ACT:
            rk = (a.channel, a.rank)
            win = faw.setdefault(rk, [])
            if len(win) >= 4 and t - win[-4][0] < p.tFAW:
                violations.append(Violation(i, "tFAW", p.tFAW, t - win[-4][0], win[-4][1]))
            win.append((t, i))
            if len(win) > 4:
                del win[0]

        if is_ref:
            rank_ref[(a.channel, a.rank)] = (t, i)
            continue
        last_shared.setdefault(key, {})[c.kind] = (t, i)
        if c.kind == _K.ACT and c.nacked:
            nack_block[key] = (t + p.T_nack, i)
        else:
            last_bank.setdefault(key, {})[c.kind] = (t, i)
    return violations


def load_commands(lines: Iterable[str]) -> list[Command]:
    """Parse a dumped command log, skipping comments and maintenance lines."""
    out = []
    for line in lines:
        line = line.strip()
        if not line or line[0] in "#M":
            continue
        out.append(parse_command(line))
    return out
