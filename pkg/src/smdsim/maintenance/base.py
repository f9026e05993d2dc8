"""Shared pieces of the in-DRAM maintenance engines."""

from __future__ import annotations

from dataclasses import dataclass

from ..timing import ConfigError, TimingParams


class MaintenanceFault(RuntimeError):
    """An engine invariant broke (e.g. the pending refresh counter overflowed)."""


@dataclass(slots=True)
class Job:
    """One maintenance operation: lock ``region`` of ``bank`` for ``duration`` cycles."""

    owner: str
    bank: int
    region: int
    rows: tuple
    duration: int
    kind: str = "refresh"          # refresh | neighbor | scrub
    payload: object = None
    codewords: int = 0
    errors: int = 0


def refresh_row_cycles(timing: TimingParams) -> int:
    """Cycles to refresh one row internally (activate + restore + precharge)."""
    return timing.tRAS + timing.tRP


def neighbors(row: int, distance: int, rows_per_bank: int) -> list[int]:
    """Victim rows within ``distance`` of ``row``, clamped to the bank."""
    if distance < 1:
        raise ValueError("blast distance must be >= 1")
    out = []
    for d in range(distance, 0, -1):
        if row - d >= 0:
            out.append(row - d)
    for d in range(1, distance + 1):
        if row + d < rows_per_bank:
            out.append(row + d)
    return out


def split_by_region(rows, rows_per_region: int) -> dict[int, tuple]:
    """Group rows by lock region, preserving order."""
    out: dict[int, list] = {}
    for r in rows:
        out.setdefault(r // rows_per_region, []).append(r)
    return {k: tuple(v) for k, v in out.items()}


class Engine:
    """Base class for a per-chip maintenance engine covering every bank of the chip.

    The chip drives an engine through four hooks: ``next_timer``/``on_timer``
    for chip-local periodic events, ``candidates`` to ask for work on a bank,
    ``on_job_done`` when a locked operation finishes, and ``on_act`` for each
    activation the chip accepted.
    """

    owner = "engine"
    listens_to_acts = False

    def __init__(self, geometry, timing: TimingParams):
        self.geometry = geometry
        self.timing = timing
        self.nbanks = geometry.banks_per_rank

    def next_timer(self) -> int | None:
        return None

    def on_timer(self, now: int) -> None:
        pass

    def candidates(self, bank: int) -> list[Job]:
        return []

    def on_job_done(self, job: Job, now: int) -> None:
        pass

    def on_act(self, bank: int, row: int, now: int) -> None:
        pass

    def stats(self) -> dict:
        return {}


def require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)
