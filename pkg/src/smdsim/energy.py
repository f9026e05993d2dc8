"""Integer-picojoule energy accounting and the run report.

All per-event energies are per physical chip; a command to a rank costs
``chips_per_rank`` times the per-chip value. Background energy is an idle
floor per chip per cycle plus a delta for every cycle a bank holds a row open.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, fields

from .timing import Command, CommandKind, ConfigError

CSV_COLUMNS = ("experiment", "mode", "metric", "value")


@dataclass(frozen=True)
class EnergyConfig:
    # DDR4-3200 x8 8Gb-class per-chip figures derived from typical IDD values at 1.2 V
    act_pj: int = 600
    pre_pj: int = 300
    rd_pj: int = 300
    wr_pj: int = 270
    nack_pj: int = 10
    ref_row_pj: int = 350
    int_refresh_row_pj: int = 350
    scrub_codeword_pj: int = 300
    bg_idle_pj_per_cycle: int = 26
    bg_active_bank_pj_per_cycle: int = 1

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, int) or v < 0:
                raise ConfigError(f"energy.{f.name} must be a non-negative integer (pJ)")

    @classmethod
    def from_mapping(cls, values: dict) -> "EnergyConfig":
        known = {f.name for f in fields(cls)}
        kw = {}
        for k, v in values.items():
            if k not in known:
                raise ConfigError(f"unknown energy key {k!r}")
            kw[k] = int(v)
        return cls(**kw)


class EnergyAccumulator:
    """Adds up command, maintenance and background energy by class."""

    CLASSES = ("act", "pre", "rd", "wr", "nack", "ref", "internal_refresh", "scrub", "background")

    def __init__(self, cfg: EnergyConfig, chips_per_rank: int, rows_per_ref: int, banks_per_rank: int,
                 ranks: int):
        self.cfg = cfg
        self.chips = chips_per_rank
        self.rows_per_ref = rows_per_ref
        self.banks_per_rank = banks_per_rank
        self.ranks = ranks
        self.by_class = {k: 0 for k in self.CLASSES}
        self._open: dict[tuple, int] = {}
        self.open_cycles = 0

    def command(self, cmd: Command) -> None:
        c = self.cfg
        a = cmd.addr
        bank = (a.channel, a.rank, a.bankgroup, a.bank)
        k = cmd.kind
        n = self.chips
        if k == CommandKind.ACT:
            if cmd.nacked:
                self.by_class["nack"] += n * c.nack_pj
                return
            self.by_class["act"] += n * c.act_pj
            if bank not in self._open:
                self._open[bank] = cmd.issue_time
        elif k == CommandKind.PRE:
            self.by_class["pre"] += n * c.pre_pj
            t0 = self._open.pop(bank, None)
            if t0 is not None:
                self.open_cycles += cmd.issue_time - t0
        elif k == CommandKind.RD:
            self.by_class["rd"] += n * c.rd_pj
        elif k == CommandKind.WR:
            self.by_class["wr"] += n * c.wr_pj
        elif k == CommandKind.REF:
            self.by_class["ref"] += n * self.rows_per_ref * self.banks_per_rank * c.ref_row_pj

    def maintenance(self, kind: str, rows: int, codewords: int, errors: int, multiplicity: int) -> None:
        c = self.cfg
        if kind == "scrub":
            self.by_class["scrub"] += multiplicity * (rows * c.int_refresh_row_pj + codewords * c.scrub_codeword_pj
                                                      + errors * c.wr_pj)
        else:
            self.by_class["internal_refresh"] += multiplicity * rows * c.int_refresh_row_pj

    def finalize(self, end: int) -> None:
        for t0 in self._open.values():
            self.open_cycles += end - t0
        self._open.clear()
        c = self.cfg
        self.by_class["background"] = (self.ranks * self.chips * end * c.bg_idle_pj_per_cycle
                                       + self.chips * self.open_cycles * c.bg_active_bank_pj_per_cycle)

    @property
    def total(self) -> int:
        return sum(self.by_class.values())


def weighted_speedup(ipc_shared, ipc_alone) -> float:
    """Sum over cores of shared IPC divided by alone IPC."""
    ipc_shared = list(ipc_shared)
    ipc_alone = list(ipc_alone)
    if len(ipc_shared) != len(ipc_alone) or not ipc_shared:
        raise ValueError("need equal, non-empty IPC vectors")
    if any(x <= 0 for x in ipc_alone) or any(x < 0 for x in ipc_shared):
        raise ValueError("IPC values must be positive")
    return sum(s / a for s, a in zip(ipc_shared, ipc_alone))


@dataclass
class StatsReport:
    experiment: str
    mode: str
    cycles: int
    ipc: list[float]
    instructions: list[int]
    weighted_speedup: float | None = None
    energy_pj: int = 0
    energy_breakdown: dict = field(default_factory=dict)
    commands: dict = field(default_factory=dict)
    nacks: int = 0
    retries: int = 0
    refresh_ops: dict = field(default_factory=dict)
    max_refresh_gap: int = 0
    lock_busy_cycles: int = 0
    llc_misses: int = 0
    requests: int = 0
    completions: int = 0
    mpki: list[float] = field(default_factory=list)
    extra: dict = field(default_factory=dict)
    faults: list[str] = field(default_factory=list)

    @property
    def ipc_total(self) -> float:
        return sum(self.ipc)

    def metrics(self) -> list[tuple[str, object]]:
        """Stable, ordered (metric, value) pairs for CSV output."""
        out: list[tuple[str, object]] = [("cycles", self.cycles)]
        for i, v in enumerate(self.ipc):
            out.append((f"ipc.core{i}", _fmt(v)))
        out.append(("ipc.total", _fmt(self.ipc_total)))
        if self.weighted_speedup is not None:
            out.append(("weighted_speedup", _fmt(self.weighted_speedup)))
        for i, v in enumerate(self.mpki):
            out.append((f"mpki.core{i}", _fmt(v)))
        out.append(("energy.total_pj", self.energy_pj))
        for k in sorted(self.energy_breakdown):
            out.append((f"energy.{k}_pj", self.energy_breakdown[k]))
        for k in sorted(self.commands):
            out.append((f"commands.{k}", self.commands[k]))
        out.append(("nacks", self.nacks))
        out.append(("retries", self.retries))
        for k in sorted(self.refresh_ops):
            out.append((f"maintenance_ops.{k}", self.refresh_ops[k]))
        out.append(("max_refresh_gap_cycles", self.max_refresh_gap))
        out.append(("lock_busy_cycles", self.lock_busy_cycles))
        out.append(("llc_misses", self.llc_misses))
        out.append(("requests", self.requests))
        out.append(("completions", self.completions))
        for k in sorted(self.extra):
            v = self.extra[k]
            out.append((k, _fmt(v) if isinstance(v, float) else v))
        out.append(("faults", len(self.faults)))
        return out


def _fmt(v: float) -> str:
    return f"{v:.6f}"


def reports_to_csv(reports) -> str:
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to write")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in reports:
        for name, value in r.metrics():
            w.writerow((r.experiment, r.mode, name, value))
    return buf.getvalue()
