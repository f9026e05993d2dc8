"""Experiment configuration, system assembly, the event loop, sweeps and reports.

Config files are INI with one section per module: ``[experiment]``,
``[timing]``, ``[geometry]``, ``[maintenance]``, ``[controller]``,
``[frontend]`` and ``[energy]``.
"""

from __future__ import annotations

import configparser
import heapq
import math
import os
import random
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .chip import AddressMapper, Chip, Geometry, RankDevice, RefreshTracker
from .controller import Controller, ControllerParams, MemRequest, check_protocol
from .energy import EnergyAccumulator, EnergyConfig, StatsReport, reports_to_csv, weighted_speedup
from .frontend import LLC, Core, PageMapper, TraceRecord, generate, load_trace
from .maintenance import DrpOracle, MaintenanceFault, MaintenanceParams, build_engines
from .timing import ConfigError, TimingParams, check_stream, format_command

INF = float("inf")

# mode -> (controller refresh mode, SMD engines, controller-side PARA)
MODES: dict[str, tuple[str, tuple[str, ...], bool]] = {
    "ddr4": ("ddr4", (), False),
    "norefresh": ("none", (), False),
    "smd-fr": ("smd", ("fr",), False),
    "smd-vr": ("smd", ("vr",), False),
    "smd-prp": ("smd", ("fr", "prp"), False),
    "smd-prp-plus": ("smd", ("fr", "prp+"), False),
    "smd-drp": ("smd", ("fr", "drp"), False),
    "smd-ms": ("smd", ("fr", "ms"), False),
    "combined": ("smd", ("vr", "prp", "ms"), False),
    "mc-para": ("ddr4", (), True),
}

DIVERGENCE = ("lock-step", "common-case", "worst-case")

SWEEP_AXES = ("refresh_period", "regions_per_bank", "act_max", "blast_distance", "p_mark",
              "scrub_period", "ari")


@dataclass(frozen=True)
class FrontendParams:
    window: int = 128
    mshrs: int = 8
    issue_width: int = 4
    clock_ratio: float = 2.5
    hit_latency_core_cycles: int = 20
    llc_bytes_per_core: int = 4 << 20
    llc_ways: int = 8
    warmup: int = 100_000
    instructions: int = 100_000
    uncached: bool = False

    def __post_init__(self):
        if min(self.window, self.mshrs, self.issue_width, self.llc_ways, self.instructions) < 1:
            raise ConfigError("frontend sizes must be >= 1")
        if self.clock_ratio <= 0 or self.warmup < 0:
            raise ConfigError("bad frontend clock ratio or warmup")

    @property
    def width_per_bus_cycle(self) -> int:
        return max(1, round(self.issue_width * self.clock_ratio))

    @property
    def hit_latency_bus(self) -> int:
        return math.ceil(self.hit_latency_core_cycles / self.clock_ratio)

    @classmethod
    def from_mapping(cls, values: dict) -> "FrontendParams":
        known = {f.name: f for f in fields(cls)}
        kw = {}
        for k, v in values.items():
            if k not in known:
                raise ConfigError(f"unknown frontend key {k!r}")
            kw[k] = _coerce(v, known[k].default)
        return cls(**kw)


def _coerce(v, default):
    if isinstance(default, bool):
        return v if isinstance(v, bool) else str(v).strip().lower() in ("1", "true", "yes", "on")
    try:
        return type(default)(v)
    except ValueError:
        raise ConfigError(f"cannot read {v!r} as {type(default).__name__}") from None


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    mode: str = "smd-fr"
    seed: int = 0
    traces: tuple[str, ...] = ("gen:random:n=20000",)
    divergence: str = "lock-step"
    timing: TimingParams = field(default_factory=TimingParams)
    geometry: Geometry = field(default_factory=Geometry)
    maintenance: MaintenanceParams = field(default_factory=MaintenanceParams)
    controller: ControllerParams = field(default_factory=ControllerParams)
    frontend: FrontendParams = field(default_factory=FrontendParams)
    energy: EnergyConfig = field(default_factory=EnergyConfig)
    track_refresh: bool = True
    verify: bool = True
    alone_runs: bool = True
    max_cycles: int = 2_000_000_000
    explicit: frozenset = frozenset()

    def validate(self) -> "ExperimentConfig":
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; choose from {sorted(MODES)}")
        if self.divergence not in DIVERGENCE:
            raise ConfigError(f"unknown divergence {self.divergence!r}")
        if not self.traces:
            raise ConfigError("at least one trace is required")
        ctrl, engines, para = MODES[self.mode]
        if self.divergence != "lock-step" and ctrl != "smd":
            raise ConfigError("divergence modeling needs an SMD mode")
        ex = self.explicit
        if "maintenance.scrub_period_s" in ex and "ms" not in engines:
            raise ConfigError("scrub_period_s requires mode smd-ms or combined")
        if any(k.startswith("maintenance.drp_") for k in ex) and "drp" not in engines:
            raise ConfigError("drp_* parameters require mode smd-drp")
        if any(k.startswith("controller.para_") for k in ex) and not para:
            raise ConfigError("para_* parameters require mode mc-para")
        rg = self.maintenance.rg
        if ctrl == "smd" and self.geometry.rows_per_region % rg:
            raise ConfigError(f"RG={rg} must divide rows per region ({self.geometry.rows_per_region})")
        return self

    def with_mode(self, mode: str) -> "ExperimentConfig":
        return replace(self, mode=mode, explicit=frozenset()).validate()


# -- config file -------------------------------------------------------------------------

def _section(cp, name):
    return dict(cp.items(name)) if cp.has_section(name) else {}


def load_config(path: str | os.PathLike, overrides: dict | None = None) -> ExperimentConfig:
    """Read an INI experiment description."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        with open(path, encoding="utf-8") as f:
            cp.read_file(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    except configparser.Error as e:
        raise ConfigError(f"bad config {path}: {e}") from None
    base = Path(path).resolve().parent
    return config_from_sections({s: _section(cp, s) for s in cp.sections()}, base, overrides)


def config_from_sections(sections: dict, base_dir: Path | None = None,
                         overrides: dict | None = None) -> ExperimentConfig:
    allowed = {"experiment", "timing", "geometry", "maintenance", "controller", "frontend", "energy"}
    unknown = set(sections) - allowed
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")
    ex = dict(sections.get("experiment", {}))
    if overrides:
        ex.update({k: v for k, v in overrides.items() if v is not None})
    explicit = set()
    for s in ("timing", "geometry", "maintenance", "controller", "frontend", "energy"):
        explicit.update(f"{s}.{k}" for k in sections.get(s, {}))
    timing = TimingParams.from_mapping(sections.get("timing", {}))
    if "refresh_period_ms" in ex:
        timing = timing.with_refresh_period(float(ex.pop("refresh_period_ms")))
    geometry = Geometry.from_mapping(sections.get("geometry", {}))
    maint = MaintenanceParams.from_mapping(sections.get("maintenance", {}))
    ctrl = ControllerParams.from_mapping(sections.get("controller", {}))
    fe = FrontendParams.from_mapping(sections.get("frontend", {}))
    en = EnergyConfig.from_mapping(sections.get("energy", {}))
    kw = {}
    for k in ("name", "mode", "divergence"):
        if k in ex:
            kw[k] = str(ex.pop(k)).strip()
    if "seed" in ex:
        kw["seed"] = _coerce(ex.pop("seed"), 0)
    if "traces" in ex:
        raw = ex.pop("traces")
        items = raw if isinstance(raw, (list, tuple)) else str(raw).replace(",", " ").split()
        kw["traces"] = tuple(_resolve_trace(t, base_dir) for t in items)
    for k, d in (("track_refresh", True), ("verify", True), ("alone_runs", True), ("max_cycles", 0)):
        if k in ex:
            kw[k] = _coerce(ex.pop(k), d)
    if ex:
        raise ConfigError(f"unknown experiment keys {sorted(ex)}")
    return ExperimentConfig(timing=timing, geometry=geometry, maintenance=maint, controller=ctrl,
                            frontend=fe, energy=en, explicit=frozenset(explicit), **kw).validate()


def _resolve_trace(t: str, base_dir: Path | None) -> str:
    if t.startswith("gen:") or base_dir is None or os.path.isabs(t):
        return t
    return str((base_dir / t).resolve())


def materialize_trace(spec: str, seed: int, core: int) -> tuple[list[TraceRecord], bool]:
    """Load a trace file or run a generator spec ``gen:<name>[:key=value...]``.

    Returns the records and whether the trace bypasses the LLC (hot-row traces
    model cache-flushing hammer loops and do).
    """
    if not spec.startswith("gen:"):
        return load_trace(spec), False
    parts = spec[4:].split(":")
    name = parts[0]
    kw = {}
    for p in parts[1:]:
        if "=" not in p:
            raise ConfigError(f"bad generator option {p!r} in {spec!r}")
        k, v = p.split("=", 1)
        kw[k] = float(v) if k in ("write_ratio",) else int(v, 0)
    n = kw.pop("n", 20_000)
    uncached = bool(kw.pop("uncached", 1 if name == "hot-row" else 0))
    return generate(name, n, f"{seed}:{core}", **kw), uncached


# -- the simulated system ------------------------------------------------------------------

@dataclass
class RunResult:
    report: StatsReport
    commands: list
    maintenance: list
    end: int

    def command_log_lines(self) -> list[str]:
        lines = ["# smdsim command log: cycle kind channel rank bankgroup bank row column flags"]
        lines += [format_command(c) for c in self.commands]
        for m in sorted(self.maintenance):
            lines.append("M " + " ".join(str(x) for x in (m[0],) + m[2:]))
        lines.append(f"# end {self.end}")
        return lines


class System:
    def __init__(self, cfg: ExperimentConfig, traces: list[tuple[list[TraceRecord], bool]] | None = None):
        cfg.validate()
        self.cfg = cfg
        g, p = cfg.geometry, cfg.timing
        ctrl_mode, engine_names, para = MODES[cfg.mode]
        self.ctrl_mode = ctrl_mode
        smd = ctrl_mode == "smd"
        if traces is None:
            traces = [materialize_trace(t, cfg.seed, i) for i, t in enumerate(cfg.traces)]
        self.ncores = len(traces)
        self.line_size = g.line_size_bytes
        self.mapper = PageMapper(g.capacity_bytes, cfg.seed)
        self.addr = AddressMapper(g)
        self.llc = LLC(cfg.frontend.llc_bytes_per_core * self.ncores, cfg.frontend.llc_ways, g.line_size_bytes)
        self.commands: list = []
        self.maint_log: list = []
        self.oracles: list[DrpOracle] = []
        self.trackers: list[RefreshTracker] = []
        self.chips: list[Chip] = []
        self.devices: list[list[RankDevice]] = []
        nchips = 1 if cfg.divergence == "lock-step" else g.chips_per_rank
        mult = g.chips_per_rank if nchips == 1 else 1
        for ch in range(g.channels):
            devs = []
            for r in range(g.ranks_per_channel):
                chips = []
                for c in range(nchips):
                    engines = build_engines(
                        engine_names, cfg.maintenance, g, p, seed=f"{cfg.seed}:{ch}:{r}",
                        chip_index=c, worst_case=cfg.divergence == "worst-case") if smd else []
                    for e in engines:
                        if e.owner == "DRP":
                            e.oracle = DrpOracle(e.act_max)
                            self.oracles.append(e.oracle)
                    tracker = None
                    if cfg.track_refresh and ctrl_mode != "none" and c == 0:
                        tracker = RefreshTracker(g.banks_per_rank, g.rows_per_bank)
                        self.trackers.append(tracker)
                    chip = Chip(g, p, engines, smd=smd, chip_id=c, channel=ch, rank=r,
                                max_locks_per_bank=cfg.maintenance.max_locks_per_bank,
                                tracker=tracker, log=self.maint_log, multiplicity=mult)
                    chips.append(chip)
                    self.chips.append(chip)
                devs.append(RankDevice(chips))
            self.devices.append(devs)
        self.controllers = [
            Controller(ch, g, p, self.devices[ch], cfg.controller, ctrl_mode, para,
                       rng=random.Random(f"{cfg.seed}:para:{ch}"), log=self.commands,
                       on_complete=self._on_complete, rg=cfg.maintenance.rg)
            for ch in range(g.channels)]
        fe = cfg.frontend
        self.cores = []
        for i, (trace, uncached) in enumerate(traces):
            core = Core(i, trace, self, window=fe.window, mshrs=fe.mshrs,
                        width=fe.width_per_bus_cycle, hit_latency=fe.hit_latency_bus,
                        target=fe.instructions, uncached=uncached or fe.uncached)
            self.cores.append(core)
        for core in self.cores:
            core.warmup(fe.warmup)
        self.llc.hits = self.llc.misses = 0
        self._events: list = []
        self._seq = 0
        self.now = 0

    # -- plumbing used by cores ------------------------------------------------------------
    def can_send(self, paddr: int, is_write: bool) -> bool:
        return self.controllers[self.addr.decompose(paddr).channel].can_accept(is_write)

    def send(self, core: Core, paddr: int, is_write: bool, now: int, line) -> None:
        a = self.addr.decompose(paddr)
        req = MemRequest(is_write, paddr, a, core.id, now, token=line)
        if not self.controllers[a.channel].enqueue(req, now):
            raise RuntimeError("request rejected after can_send")

    def _on_complete(self, req: MemRequest) -> None:
        core = self.cores[req.core]
        if req.is_write:
            core.completions += 1
        else:
            heapq.heappush(self._events, (req.done_at, self._seq, req))
            self._seq += 1
        # queue space was freed: let stalled cores retry
        for c in self.cores:
            if c.next_time == INF:
                c.next_time = self.now + 1

    # -- main loop -------------------------------------------------------------------------
    def run(self) -> RunResult:
        cores, ctrls = self.cores, self.controllers
        devices = [d for devs in self.devices for d in devs]
        smd = self.ctrl_mode == "smd"
        events = self._events
        limit = self.cfg.max_cycles or 2_000_000_000
        while True:
            if all(c.done_at is not None for c in cores):
                break
            t = INF
            for c in cores:
                if c.next_time < t:
                    t = c.next_time
            for m in ctrls:
                if m._wake < t:
                    t = m._wake
            if smd:
                for d in devices:
                    nt = d.next_event()
                    if nt < t:
                        t = nt
            if events and events[0][0] < t:
                t = events[0][0]
            if t == INF:
                raise RuntimeError("simulation deadlocked: no pending events")
            if t > limit:
                raise RuntimeError(f"simulation exceeded max_cycles={limit}")
            now = self.now = int(t)
            if smd:
                for d in devices:
                    d.tick(now)
            while events and events[0][0] <= now:
                _, _, req = heapq.heappop(events)
                cores[req.core].complete(req.token, now)
            for c in cores:
                if c.next_time <= now:
                    c.tick(now)
            for m in ctrls:
                if m._wake <= now:
                    m.tick(now)
        # drain queued and in-flight requests so request/response counts balance
        while events or any(m.pending for m in ctrls):
            t = INF
            for m in ctrls:
                if m.pending and m._wake < t:
                    t = m._wake
            if smd:
                for d in devices:
                    nt = d.next_event()
                    if nt < t:
                        t = nt
            if events and events[0][0] < t:
                t = events[0][0]
            if t == INF or t > limit:
                raise RuntimeError("simulation could not drain outstanding requests")
            now = self.now = int(t)
            if smd:
                for d in devices:
                    d.tick(now)
            while events and events[0][0] <= now:
                _, _, req = heapq.heappop(events)
                cores[req.core].complete(req.token, now)
            for m in ctrls:
                if m._wake <= now:
                    m.tick(now)
        end = self.now
        return RunResult(self._report(end), self.commands, self.maint_log, end)

    def _report(self, end: int) -> StatsReport:
        cfg = self.cfg
        g = cfg.geometry
        ratio = cfg.frontend.clock_ratio
        ipc = [c.target / (c.done_at * ratio) if c.done_at else 0.0 for c in self.cores]
        acc = EnergyAccumulator(cfg.energy, g.chips_per_rank,
                                max(1, g.rows_per_bank // cfg.timing.refreshes_per_window),
                                g.banks_per_rank, g.ranks)
        counts = {"ACT": 0, "PRE": 0, "RD": 0, "WR": 0, "REF": 0}
        for cmd in self.commands:
            acc.command(cmd)
            counts[cmd.kind.name] += 1
        for m in self.maint_log:
            acc.maintenance(m[8], m[9], m[11], m[12], m[13])
        acc.finalize(end)
        st = {}
        for m in self.controllers:
            for k, v in m.stats.items():
                st[k] = st.get(k, 0) + v
        ops: dict[str, int] = {}
        lock_busy = 0
        for chip in self.chips:
            lock_busy += chip.lock_busy_cycles
            for k, v in chip.ops_by_owner.items():
                ops[k] = ops.get(k, 0) + v
        if self.ctrl_mode == "ddr4":
            ops["REF"] = counts["REF"]
        gap = max((t.worst(end) for t in self.trackers), default=0)
        extra = {
            "nacked_acts": st["nacked_acts"],
            "partial_acts": st["partial_acts"],
            "row_hits": st["row_hits"],
            "row_misses": st["row_misses"],
            "forced_pres": st["forced_pres"],
            "para_acts": st["para_acts"],
            "avg_read_latency": st["read_latency"] / st["reads"] if st["reads"] else 0.0,
            "max_ref_backlog": max(m.max_backlog for m in self.controllers),
        }
        engine_stats: dict[str, dict] = {}
        for chip in self.chips:
            for owner, s in chip.engine_stats().items():
                agg = engine_stats.setdefault(owner, {})
                for k, v in s.items():
                    agg[k] = max(agg.get(k, 0), v) if k.startswith("max") else agg.get(k, 0) + v
        for owner in sorted(engine_stats):
            for k in sorted(engine_stats[owner]):
                extra[f"engine.{owner}.{k}"] = engine_stats[owner][k]
        faults = []
        for o in self.oracles:
            if o.misses:
                faults.append(f"DRP security oracle: {o.misses} rows reached ACT_max without a neighbor refresh")
        if cfg.verify:
            v = check_stream(self.commands, cfg.timing)
            if v:
                faults.append(f"{len(v)} timing violations, first: {v[0]}")
            pv = check_protocol(self.commands, g, cfg.timing, smd=self.ctrl_mode == "smd")
            if pv:
                faults.append(f"{len(pv)} protocol violations, first: {pv[0]}")
        misses = sum(c.llc_misses for c in self.cores)
        return StatsReport(
            experiment=cfg.name, mode=cfg.mode, cycles=end, ipc=ipc,
            instructions=[c.retired for c in self.cores], energy_pj=acc.total,
            energy_breakdown=dict(acc.by_class), commands=counts, nacks=st["nacked_acts"] + st["partial_acts"],
            retries=st["retry_acts"], refresh_ops=ops, max_refresh_gap=gap, lock_busy_cycles=lock_busy,
            llc_misses=misses, requests=sum(c.requests for c in self.cores),
            completions=sum(c.completions for c in self.cores),
            mpki=[c.mpki for c in self.cores], extra=extra, faults=faults)


def simulate(cfg: ExperimentConfig, traces=None) -> RunResult:
    return System(cfg, traces).run()


def run(cfg: ExperimentConfig, traces=None, dump_commands: str | os.PathLike | None = None) -> StatsReport:
    """Run one experiment; multi-core runs also get a weighted speedup from alone runs."""
    cfg.validate()
    if traces is None:
        traces = [materialize_trace(t, cfg.seed, i) for i, t in enumerate(cfg.traces)]
    res = simulate(cfg, traces)
    rep = res.report
    if dump_commands is not None:
        write_command_log(res, dump_commands)
    if len(traces) > 1 and cfg.alone_runs:
        alone = [simulate(replace(cfg, verify=False), [t]).report.ipc[0] for t in traces]
        rep.weighted_speedup = weighted_speedup(rep.ipc, alone)
        rep.extra["ipc_alone"] = ",".join(f"{x:.6f}" for x in alone)
    elif len(traces) == 1:
        rep.weighted_speedup = 1.0
    return rep


def write_command_log(res: RunResult, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(res.command_log_lines()) + "\n")


# -- sweeps ----------------------------------------------------------------------------------

def apply_axis(cfg: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    """Copy of ``cfg`` with one sensitivity-study parameter changed."""
    _, engines, para = MODES[cfg.mode]
    v = float(value)
    if axis == "refresh_period":
        return replace(cfg, timing=cfg.timing.with_refresh_period(v))
    if axis == "regions_per_bank":
        return replace(cfg, geometry=cfg.geometry.with_regions(int(v)))
    if axis == "act_max":
        if "drp" not in engines and "prp+" not in engines:
            raise ConfigError("act_max sweeps need smd-drp or smd-prp-plus")
        return replace(cfg, maintenance=replace(cfg.maintenance, drp_act_max=int(v), prp_plus_act_max=int(v)))
    if axis == "blast_distance":
        return replace(cfg, maintenance=replace(cfg.maintenance, blast_distance=int(v)),
                       controller=replace(cfg.controller, para_blast_distance=int(v)))
    if axis == "p_mark":
        if not (para or "prp" in engines or "prp+" in engines):
            raise ConfigError("p_mark sweeps need a PRP mode or mc-para")
        return replace(cfg, maintenance=replace(cfg.maintenance, p_mark=v),
                       controller=replace(cfg.controller, para_p_mark=v))
    if axis == "scrub_period":
        if "ms" not in engines:
            raise ConfigError("scrub_period sweeps need smd-ms or combined")
        return replace(cfg, maintenance=replace(cfg.maintenance, scrub_period_s=v))
    if axis == "ari":
        return replace(cfg, timing=replace(cfg.timing, ARI_ns=v))
    raise ConfigError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")


def sweep(cfg: ExperimentConfig, axis: str, values) -> list[StatsReport]:
    values = list(values)
    if not values:
        raise ConfigError("sweep needs at least one value")
    traces = [materialize_trace(t, cfg.seed, i) for i, t in enumerate(cfg.traces)]
    out = []
    for v in values:
        c = apply_axis(cfg, axis, v)
        c = replace(c, name=f"{cfg.name}[{axis}={v}]").validate()
        rep = run(c, traces)
        rep.extra[f"sweep.{axis}"] = float(v)
        out.append(rep)
    return out


def emit_report(reports, out_dir: str | os.PathLike, formats=("csv", "svg"), stem: str = "report") -> list[Path]:
    """Write ``<stem>.csv`` and, for multi-point sweeps, ``<stem>.svg``."""
    reports = list(reports)
    if not reports:
        raise ValueError("empty report list")
    for f in formats:
        if f not in ("csv", "svg"):
            raise ValueError(f"unknown report format {f!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    p = out / f"{stem}.csv"
    p.write_text(reports_to_csv(reports), encoding="utf-8")
    written.append(p)
    if "svg" in formats and len(reports) > 1:
        written.append(_plot(reports, out / f"{stem}.svg"))
    return written


def _plot(reports, path: Path) -> Path:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    axis = next((k for k in reports[0].extra if k.startswith("sweep.")), None)
    xs = [r.extra[axis] for r in reports] if axis else list(range(len(reports)))
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(xs, [r.ipc_total for r in reports], marker="o")
    ax.set_xlabel(axis[len("sweep."):] if axis else "point")
    ax.set_ylabel("IPC (sum over cores)")
    ax.set_title(f"{reports[0].mode}")
    if axis in ("sweep.regions_per_bank",):
        ax.set_xscale("log", base=2)
    fig.tight_layout()
    # fixed metadata keeps the SVG byte-stable across runs
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": "smdsim"})
    plt.close(fig)
    return path
