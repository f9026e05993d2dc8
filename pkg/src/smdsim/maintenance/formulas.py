"""Closed-form sizing and latency calculators for the maintenance engines."""

from __future__ import annotations

import math

from ..timing import ConfigError, TimingParams

# Activations per bank per refresh window implied by 1224 counters at ACT_max=512
# (the hardware-accounting datum); see act_trefw_interval.
PAPER_ACT_TREFW = 626_944


def vr_factor(rt_weak_row_ms: float, refresh_period_ms: float) -> int:
    """How many refresh periods a strong row may skip between refreshes."""
    if rt_weak_row_ms <= 0 or refresh_period_ms <= 0:
        raise ConfigError("retention time and refresh period must be positive")
    q = rt_weak_row_ms / refresh_period_ms
    n = round(q)
    if n < 1 or not math.isclose(q, n, rel_tol=0, abs_tol=1e-9):
        raise ConfigError(f"{rt_weak_row_ms} ms is not a multiple of {refresh_period_ms} ms")
    return n


def act_trefw(timing: TimingParams) -> int:
    """Maximum activations one bank can receive in a refresh window."""
    return timing.tREFW // (timing.tRAS + timing.tRP)


def drp_required_counters(timing: TimingParams | None, act_max: int,
                          act_trefw_override: int | None = None) -> int:
    """Smallest N with N > ACT_tREFW / ACT_max - 1."""
    if act_max < 1:
        raise ConfigError("ACT_max must be >= 1")
    a = act_trefw_override if act_trefw_override is not None else act_trefw(timing)
    # floor(A/M - 1) + 1, exact in integers
    return (a - act_max) // act_max + 1


def act_trefw_interval(counters: int, act_max: int) -> tuple[int, int]:
    """Half-open range of ACT_tREFW values for which the formula yields ``counters``."""
    return counters * act_max, (counters + 1) * act_max


def scrub_row_cycles(timing: TimingParams, error_codewords: int = 0,
                     codewords_per_row: int = 128) -> int:
    if not 0 <= error_codewords <= codewords_per_row:
        raise ValueError("error codeword count out of range")
    # one extra burst per corrected codeword to write it back
    return timing.tRCD + codewords_per_row * timing.tBL + timing.tRP + error_codewords * timing.tBL


def scrub_row_latency(error_codewords: int = 0, timing: TimingParams | None = None,
                      codewords_per_row: int = 128) -> float:
    """Scrub latency of one row in nanoseconds."""
    timing = timing or TimingParams()
    return timing.cycles_to_ns(scrub_row_cycles(timing, error_codewords, codewords_per_row))
