"""In-DRAM maintenance engines and the factory that assembles them per chip."""

from __future__ import annotations

import random
from dataclasses import dataclass, fields

from ..timing import ConfigError, TimingParams
from .base import Engine, Job, MaintenanceFault, neighbors, refresh_row_cycles, split_by_region
from .filters import BloomFilter, CountingBloomFilter
from .formulas import (PAPER_ACT_TREFW, act_trefw, act_trefw_interval, drp_required_counters,
                       scrub_row_cycles, scrub_row_latency, vr_factor)
from .misra_gries import CounterTable
from .refresh import FixedRateRefresh, VariableRateRefresh
from .rowhammer import (CbfRowProtection, DeterministicRowProtection, DrpOracle,
                        ProbabilisticRowProtection)
from .scrub import MemoryScrubber

MECHANISMS = ("fr", "vr", "prp", "prp+", "drp", "ms")
# lower index wins the bank's lock first
_PRIORITY = {"fr": 0, "vr": 0, "drp": 1, "prp+": 2, "prp": 3, "ms": 4}


@dataclass(frozen=True)
class MaintenanceParams:
    rg: int = 16
    rt_weak_row_ms: float = 128.0
    weak_row_fraction: float = 0.001
    bloom_bits: int = 8192
    bloom_hashes: int = 6
    vr_phase: str = "staggered"
    p_mark: float = 0.01
    blast_distance: int = 1
    prp_plus_act_max: int = 1024
    l_rtw_ms: float = 0.0            # 0 means "equal to the refresh period"
    cbf_counters: int = 1024
    cbf_hashes: int = 4
    drp_act_max: int = 512
    drp_counters: int = 0            # 0 means "from the counter formula"
    drp_act_trefw: int = 0           # 0 means floor(tREFW / tRC)
    scrub_period_s: float = 300.0
    scrub_error_row_fraction: float = 0.0
    scrub_errors_per_row: int = 1
    codewords_per_row: int = 128
    max_locks_per_bank: int = 1
    strict: bool = True

    def __post_init__(self):
        if self.rg < 1 or self.blast_distance < 1 or self.max_locks_per_bank < 1:
            raise ConfigError("rg, blast_distance and max_locks_per_bank must be >= 1")
        if not 0.0 <= self.p_mark <= 1.0 or not 0.0 <= self.weak_row_fraction <= 1.0:
            raise ConfigError("probabilities must be in [0, 1]")
        if not 0.0 <= self.scrub_error_row_fraction <= 1.0:
            raise ConfigError("scrub_error_row_fraction must be in [0, 1]")
        if not 0 <= self.scrub_errors_per_row <= self.codewords_per_row:
            raise ConfigError("scrub_errors_per_row out of range")
        if self.vr_phase not in ("staggered", "zero"):
            raise ConfigError(f"unknown vr_phase {self.vr_phase!r}")

    @classmethod
    def from_mapping(cls, values: dict) -> "MaintenanceParams":
        known = {f.name: f for f in fields(cls)}
        kw = {}
        for k, v in values.items():
            if k not in known:
                raise ConfigError(f"unknown maintenance key {k!r}")
            default = known[k].default
            if isinstance(default, bool):
                kw[k] = v if isinstance(v, bool) else str(v).strip().lower() in ("1", "true", "yes", "on")
            else:
                kw[k] = type(default)(v)
        return cls(**kw)


def sample_weak_rows(rows_per_bank: int, fraction: float, rng: random.Random) -> list[int]:
    k = round(rows_per_bank * fraction)
    return sorted(rng.sample(range(rows_per_bank), k))


def build_engines(names, params: MaintenanceParams, geometry, timing: TimingParams,
                  seed: int = 0, chip_index: int = 0, worst_case: bool = False) -> list[Engine]:
    """Instantiate the named engines for one chip, ordered by lock priority.

    ``worst_case`` staggers refresh engines across chips: chip i delays its
    first refresh by i operation latencies and starts at region i.
    """
    names = list(names)
    for n in names:
        if n not in MECHANISMS:
            raise ConfigError(f"unknown mechanism {n!r}")
    if "fr" in names and "vr" in names:
        raise ConfigError("fr and vr are alternative refresh engines")
    if len(set(names)) != len(names):
        raise ConfigError("duplicate mechanism")

    def rng(tag):
        return random.Random(f"{seed}:{tag}:{chip_index}")

    offset = chip_index * params.rg * refresh_row_cycles(timing) if worst_case else 0
    start_region = chip_index if worst_case else 0
    nb = geometry.banks_per_rank
    out = []
    for n in sorted(names, key=lambda x: _PRIORITY[x]):
        if n == "fr":
            out.append(FixedRateRefresh(geometry, timing, params.rg, offset, start_region, params.strict))
        elif n == "vr":
            factor = vr_factor(params.rt_weak_row_ms, timing.tREFW_ns / 1e6)
            r = rng("weak")
            weak = [sample_weak_rows(geometry.rows_per_bank, params.weak_row_fraction, r) for _ in range(nb)]
            out.append(VariableRateRefresh(
                geometry, timing, weak, factor, params.rg, params.bloom_bits, params.bloom_hashes,
                seed=rng("bloom").getrandbits(62), phase=params.vr_phase, offset=offset,
                start_region=start_region, strict=params.strict))
        elif n == "prp":
            out.append(ProbabilisticRowProtection(geometry, timing, params.p_mark,
                                                  params.blast_distance, rng("prp")))
        elif n == "prp+":
            l_rtw = (timing.tREFW if params.l_rtw_ms <= 0
                     else round(params.l_rtw_ms * 1000 * timing.clock_freq_mhz))
            out.append(CbfRowProtection(geometry, timing, params.p_mark, params.prp_plus_act_max, l_rtw,
                                        params.cbf_counters, params.cbf_hashes, params.blast_distance,
                                        rng("prp+"), seed=rng("cbf").getrandbits(62)))
        elif n == "drp":
            out.append(DeterministicRowProtection(geometry, timing, params.drp_act_max,
                                                  params.drp_counters or None,
                                                  params.drp_act_trefw or None, params.blast_distance))
        elif n == "ms":
            errors = [{} for _ in range(nb)]
            if params.scrub_error_row_fraction > 0 and params.scrub_errors_per_row > 0:
                r = rng("errors")
                for b in range(nb):
                    for row in sample_weak_rows(geometry.rows_per_bank, params.scrub_error_row_fraction, r):
                        errors[b][row] = params.scrub_errors_per_row
            out.append(MemoryScrubber(geometry, timing, params.scrub_period_s, errors, params.codewords_per_row))
    return out


__all__ = [
    "BloomFilter", "CbfRowProtection", "CounterTable", "CountingBloomFilter",
    "DeterministicRowProtection", "DrpOracle", "Engine", "FixedRateRefresh", "Job", "MECHANISMS",
    "MaintenanceFault", "MaintenanceParams", "MemoryScrubber", "PAPER_ACT_TREFW",
    "ProbabilisticRowProtection", "VariableRateRefresh", "act_trefw", "act_trefw_interval",
    "build_engines", "drp_required_counters", "neighbors", "refresh_row_cycles",
    "sample_weak_rows", "scrub_row_cycles", "scrub_row_latency", "split_by_region", "vr_factor",
]
