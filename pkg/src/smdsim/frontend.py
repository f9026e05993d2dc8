"""Trace ingestion, a limit-based multi-core model and synthetic trace generators.

Trace lines are ``<bubbles> 0x<vaddr> R|W``: the number of non-memory
instructions preceding one memory instruction. Cores run at bus-cycle
granularity; with a 4-wide core at 2.5x the bus clock, a core retires and
issues up to 10 instructions per bus cycle.
"""

from __future__ import annotations

import gzip
import io
import os
import random
from collections import deque
from typing import Iterable, NamedTuple

from .timing import ConfigError


class TraceError(ValueError):
    pass


class TraceRecord(NamedTuple):
    bubbles: int
    vaddr: int
    is_write: bool


def parse_trace(stream: Iterable[str]) -> list[TraceRecord]:
    out = []
    for n, line in enumerate(stream, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise TraceError(f"line {n}: expected 'bubbles vaddr R|W', got {line!r}")
        b, v, k = parts
        try:
            bubbles = int(b)
            vaddr = int(v, 16)
        except ValueError:
            raise TraceError(f"line {n}: bad number in {line!r}") from None
        if bubbles < 0 or vaddr < 0:
            raise TraceError(f"line {n}: negative value in {line!r}")
        if k not in ("R", "W"):
            raise TraceError(f"line {n}: access kind must be R or W, got {k!r}")
        out.append(TraceRecord(bubbles, vaddr, k == "W"))
    return out


def load_trace(path: str | os.PathLike) -> list[TraceRecord]:
    path = str(path)
    if path.endswith(".gz"):
        with gzip.open(path, "rt", encoding="utf-8") as f:
            return parse_trace(f)
    with open(path, encoding="utf-8") as f:
        return parse_trace(f)


def format_trace(records: Iterable[TraceRecord]) -> str:
    buf = io.StringIO()
    for r in records:
        buf.write(f"{r.bubbles} {r.vaddr:#x} {'W' if r.is_write else 'R'}\n")
    return buf.getvalue()


def write_trace(records: Iterable[TraceRecord], path: str | os.PathLike) -> None:
    text = format_trace(records)
    path = str(path)
    if path.endswith(".gz"):
        with gzip.open(path, "wt", encoding="utf-8") as f:
            f.write(text)
    else:
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)


class PageMapper:
    """Maps each new virtual page to a random, distinct physical frame."""

    def __init__(self, capacity_bytes: int, seed: int | str = 0, page_size: int = 4096):
        self.page_size = page_size
        self.frames = capacity_bytes // page_size
        if self.frames < 1:
            raise ConfigError("physical memory smaller than one page")
        self.rng = random.Random(f"{seed}:pages")
        self.table: dict[int, int] = {}
        self._used: set[int] = set()

    def translate(self, vaddr: int, space: int = 0) -> int:
        page, off = divmod(vaddr, self.page_size)
        key = (space, page)
        frame = self.table.get(key)
        if frame is None:
            if len(self._used) >= self.frames:
                raise MemoryError("out of physical frames")
            while True:
                frame = self.rng.randrange(self.frames)
                if frame not in self._used:
                    break
            self._used.add(frame)
            self.table[key] = frame
        return frame * self.page_size + off


class LLC:
    """Set-associative LRU cache keyed by line address (allocate on miss)."""

    def __init__(self, size_bytes: int, ways: int = 8, line: int = 64):
        nsets = size_bytes // (ways * line)
        if nsets < 1:
            raise ConfigError("cache smaller than one set")
        self.nsets = nsets
        self.ways = ways
        self.line = line
        self.sets: dict[int, list[int]] = {}
        self.hits = 0
        self.misses = 0

    def access(self, line_addr: int) -> bool:
        s = self.sets.get(line_addr % self.nsets)
        if s is None:
            self.sets[line_addr % self.nsets] = [line_addr]
            self.misses += 1
            return False
        if line_addr in s:
            if s[-1] != line_addr:
                s.remove(line_addr)
                s.append(line_addr)
            self.hits += 1
            return True
        s.append(line_addr)
        if len(s) > self.ways:
            del s[0]
        self.misses += 1
        return False

    def contains(self, line_addr: int) -> bool:
        s = self.sets.get(line_addr % self.nsets)
        return s is not None and line_addr in s


class _Entry:
    __slots__ = ("count", "ready")

    def __init__(self, count, ready):
        self.count = count
        self.ready = ready


class Core:
    """Instruction-window core: in-order retire, issue stalls on full window/MSHRs/queues."""

    def __init__(self, core_id: int, trace: list[TraceRecord], system, *, window: int = 128,
                 mshrs: int = 8, width: int = 10, hit_latency: int = 8, target: int = 100_000,
                 uncached: bool = False, start: int = 0):
        if not trace:
            raise ConfigError(f"core {core_id}: empty trace")
        self.id = core_id
        self.trace = trace
        self.sys = system
        self.window_cap = window
        self.mshr_cap = mshrs
        self.width = width
        self.hit_latency = hit_latency
        self.target = target
        self.uncached = uncached
        self.ptr = start % len(trace)
        self.bubbles_left = trace[self.ptr].bubbles
        self.window: deque[_Entry] = deque()
        self.occupancy = 0
        self.mshr: dict[int, list[_Entry]] = {}
        self.retired = 0
        self.done_at = None
        self.next_time = 0
        self.mem_instrs = 0
        self.llc_accesses = 0
        self.llc_misses = 0
        self.mshr_merges = 0
        self.requests = 0
        self.completions = 0

    def complete(self, line: int, t: int) -> None:
        waiters = self.mshr.pop(line, None)
        if waiters is None:
            raise RuntimeError(f"core {self.id}: completion for unknown line {line:#x}")
        for e in waiters:
            e.ready = t
        self.completions += 1
        if self.next_time > t:
            self.next_time = t

    def tick(self, now: int) -> None:
        width = self.width
        # retire
        budget = width
        win = self.window
        while win and budget:
            e = win[0]
            if e.ready is None or e.ready > now:
                break
            take = e.count if e.count < budget else budget
            e.count -= take
            budget -= take
            self.retired += take
            self.occupancy -= take
            if not e.count:
                win.popleft()
        if self.done_at is None and self.retired >= self.target:
            self.done_at = now
        # issue
        budget = width
        stalled = False
        trace = self.trace
        ntrace = len(trace)
        while budget and self.occupancy < self.window_cap:
            if self.bubbles_left:
                n = min(self.bubbles_left, budget, self.window_cap - self.occupancy)
                last = win[-1] if win else None
                if last is not None and last.ready == now:
                    last.count += n
                else:
                    win.append(_Entry(n, now))
                self.occupancy += n
                self.bubbles_left -= n
                budget -= n
                continue
            rec = trace[self.ptr]
            ready = self._memory(rec, now)
            if ready is False:
                stalled = True
                break
            self.mem_instrs += 1
            budget -= 1
            self.occupancy += 1
            if isinstance(ready, _Entry):
                win.append(ready)
            elif win and win[-1].ready == ready:
                win[-1].count += 1
            else:
                win.append(_Entry(1, ready))
            self.ptr += 1
            if self.ptr == ntrace:
                self.ptr = 0
            self.bubbles_left = trace[self.ptr].bubbles
        # next wake-up
        if not stalled and self.occupancy < self.window_cap:
            self.next_time = now + 1
        elif win and win[0].ready is not None:
            self.next_time = max(now + 1, win[0].ready)
        else:
            self.next_time = float("inf")

    def _memory(self, rec: TraceRecord, now: int):
        """Issue one memory instruction. Returns its ready time, a waiting entry, or False to stall."""
        s = self.sys
        paddr = s.mapper.translate(rec.vaddr, self.id)
        line = paddr // s.line_size
        if rec.is_write:
            if not self.uncached and s.llc.contains(line):
                self.llc_accesses += 1
                s.llc.access(line)
                return now
            if not s.can_send(paddr, True):
                return False
            self.llc_accesses += 1
            if not self.uncached:
                s.llc.access(line)
            self.llc_misses += 1
            self.requests += 1
            s.send(self, paddr, True, now, None)
            return now
        waiters = self.mshr.get(line)
        if waiters is not None:
            self.llc_accesses += 1
            self.mshr_merges += 1
            e = _Entry(1, None)
            waiters.append(e)
            return e
        if not self.uncached and s.llc.contains(line):
            self.llc_accesses += 1
            s.llc.access(line)
            return now + self.hit_latency
        if len(self.mshr) >= self.mshr_cap or not s.can_send(paddr, False):
            return False
        self.llc_accesses += 1
        if not self.uncached:
            s.llc.access(line)
        self.llc_misses += 1
        self.requests += 1
        e = _Entry(1, None)
        self.mshr[line] = [e]
        s.send(self, paddr, False, now, line)
        return e

    def warmup(self, instructions: int) -> None:
        """Functionally run ``instructions`` through the page mapper and LLC (no timing)."""
        s = self.sys
        n = 0
        trace = self.trace
        while n < instructions:
            rec = trace[self.ptr]
            n += rec.bubbles + 1
            if not self.uncached:
                s.llc.access(s.mapper.translate(rec.vaddr, self.id) // s.line_size)
            self.ptr = (self.ptr + 1) % len(trace)
        self.bubbles_left = trace[self.ptr].bubbles

    @property
    def mpki(self) -> float:
        return 1000.0 * self.llc_misses / self.retired if self.retired else 0.0


# -- workload classes ----------------------------------------------------------------

def classify_mpki(mpki: float) -> str:
    if mpki < 1:
        return "low"
    if mpki < 10:
        return "medium"
    return "high"


def measure_mpki(trace: list[TraceRecord], llc_bytes: int = 4 << 20, ways: int = 8,
                 warmup: int = 0, line: int = 64, uncached: bool = False) -> float:
    """Functional MPKI of a trace (virtual addresses, after ``warmup`` instructions)."""
    llc = LLC(llc_bytes, ways, line)
    insts = misses = 0
    for rec in trace:
        hit = False if uncached else llc.access(rec.vaddr // line)
        insts += rec.bubbles + 1
        if insts > warmup and not hit:
            misses += 1
    counted = insts - min(warmup, insts)
    return 1000.0 * misses / counted if counted else 0.0


def classify_trace(trace, llc_bytes: int = 4 << 20, warmup: int = 0, uncached: bool = False) -> str:
    return classify_mpki(measure_mpki(trace, llc_bytes, warmup=warmup, uncached=uncached))


# -- synthetic generators --------------------------------------------------------------

def _rng(seed, name):
    return random.Random(f"{seed}:{name}")


def streaming(n: int, seed: int = 0, bubbles: int = 4, footprint: int = 256 << 20,
              write_ratio: float = 0.0, base: int = 0x10000000, line: int = 64) -> list[TraceRecord]:
    """Sequential line-by-line sweep over ``footprint`` bytes."""
    r = _rng(seed, "streaming")
    lines = footprint // line
    return [TraceRecord(bubbles, base + (i % lines) * line, r.random() < write_ratio) for i in range(n)]


def random_uniform(n: int, seed: int = 0, bubbles: int = 4, footprint: int = 1 << 30,
                   write_ratio: float = 0.2, base: int = 0x10000000, line: int = 64) -> list[TraceRecord]:
    """Uniformly random lines over ``footprint`` bytes."""
    r = _rng(seed, "random")
    lines = footprint // line
    return [TraceRecord(bubbles, base + r.randrange(lines) * line, r.random() < write_ratio)
            for _ in range(n)]


def pointer_chase(n: int, seed: int = 0, bubbles: int = 128, footprint: int = 1 << 30,
                  base: int = 0x10000000, line: int = 64) -> list[TraceRecord]:
    """Random reads spaced by at least a window of bubbles, so misses serialize."""
    r = _rng(seed, "chase")
    lines = footprint // line
    return [TraceRecord(bubbles, base + r.randrange(lines) * line, False) for _ in range(n)]


def hot_row(n: int, seed: int = 0, bubbles: int = 2, hot_pages: int = 4, base: int = 0x10000000,
            page: int = 4096, line: int = 64, spread: int = 1 << 30) -> list[TraceRecord]:
    """Round-robin hammering of a few pages (meant to run uncached)."""
    r = _rng(seed, "hot")
    pages = [base + r.randrange(spread // page) * page for _ in range(hot_pages)]
    return [TraceRecord(bubbles, pages[i % hot_pages] + r.randrange(page // line) * line, False)
            for i in range(n)]


GENERATORS = {
    "streaming": streaming,
    "random": random_uniform,
    "pointer-chase": pointer_chase,
    "hot-row": hot_row,
}


def generate(name: str, n: int, seed: int = 0, **kw) -> list[TraceRecord]:
    try:
        gen = GENERATORS[name]
    except KeyError:
        raise ConfigError(f"unknown generator {name!r}; choose from {sorted(GENERATORS)}") from None
    return gen(n, seed, **kw)
