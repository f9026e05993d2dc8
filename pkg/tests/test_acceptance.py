"""Acceptance criteria, one test group per criterion.

Run with ``pytest tests/test_acceptance.py``; the terminal summary prints one
PASS/FAIL line per criterion. Performance checks use a non-looping random trace
(every access misses the LLC) on the scaled geometry with a fixed seed.
"""

import math
import time
from dataclasses import replace

import numpy as np
import pytest

from harness import hold_adversary, make_chip
from smdsim.chip import Geometry
from smdsim.controller import ControllerParams
from smdsim.energy import EnergyConfig
from smdsim.experiment import MODES, ExperimentConfig, FrontendParams, emit_report, run
from smdsim.maintenance import (PAPER_ACT_TREFW, CbfRowProtection, DeterministicRowProtection, DrpOracle,
                                FixedRateRefresh, MaintenanceParams, VariableRateRefresh, act_trefw,
                                drp_required_counters, sample_weak_rows, scrub_row_latency, vr_factor)
from smdsim.maintenance.filters import CountingBloomFilter
from smdsim.timing import DDR4_3200, TimingParams, check_stream, load_commands

P = DDR4_3200
G = Geometry.scaled()
TRACE_KINDS = ("streaming", "random", "pointer-chase", "hot-row")


# -- 1. timing compliance ------------------------------------------------------------------------

@pytest.mark.criterion(1)
def test_every_mode_and_trace_is_timing_clean(tmp_path):
    """[DERIVED] 10 modes x 4 traces x 5 seeds, 8 ms refresh period, dumped logs re-checked."""
    t0 = time.perf_counter()
    runs = 0
    for mode in MODES:
        for kind in TRACE_KINDS:
            for seed in range(5):
                cfg = ExperimentConfig(mode=mode, seed=seed, traces=(f"gen:{kind}:n=3000",), geometry=G,
                                       timing=P.with_refresh_period(8), verify=False,
                                       frontend=FrontendParams(instructions=4000, warmup=0))
                log = tmp_path / "cmd.log"
                rep = run(cfg, dump_commands=log)
                cmds = load_commands(log.read_text().splitlines())
                assert cmds, (mode, kind, seed)
                assert check_stream(cmds, P.with_refresh_period(8)) == [], (mode, kind, seed)
                assert rep.faults == []
                runs += 1
    assert runs == 200
    assert time.perf_counter() - t0 <= 60


# -- 2. fixed-rate refresh safety ----------------------------------------------------------------

@pytest.mark.criterion(2)
def test_fr_refresh_gap_under_row_holding_adversary():
    """[DERIVED] 3 x tREFW with every bank holding rows open in the next refresh region."""
    fr = FixedRateRefresh(G, P)
    chip = make_chip(G, P, [fr])
    end = 3 * P.tREFW
    acts, nacks = hold_adversary(chip, fr, end)
    assert acts > 0 and nacks > 0
    gaps = chip.tracker.gaps(end)
    assert gaps.max() <= P.tREFW + 17 * P.tREFI
    assert fr.max_pending_seen <= 8
    assert fr.faults == 0
    assert (chip.tracker.count >= 2).all()


@pytest.mark.criterion(2)
def test_fr_refresh_gap_idle():
    """[DERIVED]"""
    fr = FixedRateRefresh(G, P)
    chip = make_chip(G, P, [fr])
    end = 3 * P.tREFW
    chip.tick(end)
    assert chip.tracker.gaps(end).max() <= P.tREFW + 17 * P.tREFI
    assert fr.max_pending_seen <= 8 and fr.faults == 0


# -- 3. variable refresh safety ------------------------------------------------------------------

def _vr_chip(seed=3):
    rng = np.random.default_rng(seed)
    import random
    r = random.Random(seed)
    weak = [sample_weak_rows(G.rows_per_bank, 0.001, r) for _ in range(G.banks_per_rank)]
    factor = vr_factor(128, 32)
    vr = VariableRateRefresh(G, P, weak, factor=factor, seed=seed)
    return vr, make_chip(G, P, [vr]), weak, factor, rng


@pytest.mark.criterion(3)
def test_vr_weak_rows_every_period_strong_rows_every_fourth():
    """[DERIVED] exact weak-row sets against per-row refresh gaps over 9 periods."""
    vr, chip, weak, factor, _ = _vr_chip()
    assert factor == 4
    end = 9 * P.tREFW
    chip.tick(end)
    gaps = chip.tracker.gaps(end)
    slack = vr.op_cycles
    for b in range(G.banks_per_rank):
        is_weak = np.zeros(G.rows_per_bank, dtype=bool)
        is_weak[list(weak[b])] = True
        assert is_weak.sum() > 0
        assert gaps[b][is_weak].max() <= P.tREFW + slack
        assert gaps[b][~is_weak].max() <= factor * P.tREFW + slack
    assert vr.faults == 0


@pytest.mark.criterion(3)
def test_vr_weak_rows_under_adversary():
    """[DERIVED]"""
    vr, chip, weak, factor, _ = _vr_chip(seed=5)
    end = 5 * P.tREFW
    hold_adversary(chip, vr, end)
    gaps = chip.tracker.gaps(end)
    for b in range(G.banks_per_rank):
        assert gaps[b][list(weak[b])].max() <= P.tREFW + 17 * P.tREFI
    assert vr.max_pending_seen <= 8 and vr.faults == 0


@pytest.mark.criterion(3)
def test_vr_bloom_filter_has_no_false_negatives():
    """[DERIVED]"""
    vr, _, weak, _, rng = _vr_chip(seed=7)
    probes = 0
    misses = 0
    while probes < 100_000:
        b = int(rng.integers(G.banks_per_rank))
        rows = np.asarray(weak[b])
        sample = rows[rng.integers(len(rows), size=1000)]
        misses += int((~vr.filters[b].contains_many(sample)).sum())
        probes += len(sample)
    assert probes >= 100_000 and misses == 0


# -- 4. DRP security oracle ----------------------------------------------------------------------

def _drp_attack(act_max, counters, rows_of):
    """Feed one full window of back-to-back activations (one per tRC) to bank 0."""
    drp = DeterministicRowProtection(G, P, act_max=act_max, counters=counters)
    drp.oracle = DrpOracle(act_max)
    n = act_trefw(P)
    rows = rows_of(n)
    for i in range(n):
        drp.on_act(0, int(rows[i]), i * P.tRC)
    drp.on_timer(P.tREFW)
    return drp.oracle.misses, n


@pytest.mark.criterion(4)
@pytest.mark.parametrize("act_max", [256, 512, 1024])
def test_drp_formula_counters_never_miss(act_max):
    """[DERIVED] round-robin, Zipf and single-row adversaries, about 1.9M activations per ACT_max."""
    n_counters = drp_required_counters(P, act_max)
    rng = np.random.default_rng(act_max)
    patterns = {
        "round-robin": lambda n: np.arange(n) % (n_counters + 1),
        "zipf": lambda n: (rng.zipf(1.3, size=n) - 1) % G.rows_per_bank,
        "single": lambda n: np.full(n, 1234),
    }
    total = 0
    for name, fn in patterns.items():
        misses, n = _drp_attack(act_max, n_counters, fn)
        assert misses == 0, name
        total += n
    assert total >= 1_000_000


@pytest.mark.criterion(4)
@pytest.mark.parametrize("act_max", [256, 512, 1024])
def test_drp_undersized_table_misses(act_max):
    """[DERIVED] negative control: N-2 counters against a round-robin over table size + 1 rows."""
    small = drp_required_counters(P, act_max) - 2
    misses, _ = _drp_attack(act_max, small, lambda n: np.arange(n) % (small + 1))
    assert misses >= 1


# -- 5. counting Bloom filter bound --------------------------------------------------------------

@pytest.mark.criterion(5)
def test_cbf_never_undercounts_and_swaps_reset_history():
    """[DERIVED] 10^5 activations, exact counts per half window, filters rebuilt from scratch."""
    half = 10_000
    eng = CbfRowProtection(G, P, p_mark=0.0, act_max=10**9, l_rtw=2 * half, seed=11)
    rng = np.random.default_rng(0)
    rows = (rng.zipf(1.2, size=100_000) - 1) % 3000
    cur: dict[int, int] = {}    # since the last swap
    prev: dict[int, int] = {}   # the half window before it
    cur_keys: list[int] = []
    for i, row in enumerate(rows.tolist()):
        t = i
        if t and t % half == 0:
            eng.on_timer(t)
            prev, cur = cur, {}
            act, pas = eng.active[0], eng.passive[0]
            # interleaving contract: active holds exactly the last half window, passive is empty
            ref = CountingBloomFilter(act.m, act.k, act.seed)
            for r in cur_keys:
                ref.insert(r)
            assert act.counters == ref.counters
            assert not any(pas.counters)
            for r in range(3000):
                assert act.estimate(r) >= prev.get(r, 0)
            cur_keys = []
        eng.on_act(0, row, t)
        cur[row] = cur.get(row, 0) + 1
        cur_keys.append(row)
        exact = cur[row] + prev.get(row, 0)
        assert eng.active[0].estimate(row) >= exact
        assert eng.passive[0].estimate(row) >= cur[row]
        if i % 5000 == 0:
            for r in set(cur) | set(prev):
                assert eng.active[0].estimate(r) >= cur.get(r, 0) + prev.get(r, 0)
    assert eng.swaps == 9


# -- 6. formulas ----------------------------------------------------------------------------------

@pytest.mark.criterion(6)
def test_formula_reproduction():
    """[PAPER] four-period skip, ~350 ns scrub, 38 counters at ACT_max = 16K."""
    assert vr_factor(128, 32) == 4
    assert 340 <= scrub_row_latency(0) <= 360
    assert drp_required_counters(P, 512, PAPER_ACT_TREFW) == 1224
    assert abs(drp_required_counters(P, 16 * 1024, PAPER_ACT_TREFW) - 38) <= 2


@pytest.mark.criterion(6)
def test_counter_formula_strict_inequality():
    """[DERIVED] N > A/M - 1: exact multiples of ACT_max sit on the boundary."""
    for m in (256, 512, 1024, 16384):
        for k in (1, 2, 38, 1250):
            a = k * m
            assert drp_required_counters(P, m, a) == k
            assert drp_required_counters(P, m, a - 1) == k - 1 if k > 1 else True
            assert drp_required_counters(P, m, a + m - 1) == k
            n = drp_required_counters(P, m, a)
            assert n > a / m - 1 and not (n - 1 > a / m - 1)


# -- 7. directional performance trends ------------------------------------------------------------

INSTR = 200_000
PERF_TRACE = f"gen:random:n={INSTR // 5 + 5000}"


def _perf_cfg(mode, period_ms=32, geometry=G, maint=MaintenanceParams(), ctrl=ControllerParams()):
    return ExperimentConfig(name="trend", mode=mode, seed=1, traces=(PERF_TRACE,), geometry=geometry,
                            timing=TimingParams().with_refresh_period(period_ms), maintenance=maint,
                            controller=ctrl, frontend=FrontendParams(instructions=INSTR, warmup=0))


@pytest.fixture(scope="module")
def perf(tmp_path_factory):
    cache = {}
    out = tmp_path_factory.mktemp("perf")

    def get(key, **kw):
        if key not in cache:
            log = out / f"{len(cache)}.log"
            t0 = time.perf_counter()
            rep = run(_perf_cfg(**kw), dump_commands=log)
            dt = time.perf_counter() - t0
            assert dt <= 30, f"{key} took {dt:.1f} s"
            assert rep.faults == []
            cache[key] = (rep, log)
        return cache[key][0]

    get.log = lambda key: cache[key][1]
    return get


def ipc(perf, mode, period_ms=32, **kw):
    return perf((mode, period_ms, tuple(sorted(kw.items()))), mode=mode, period_ms=period_ms, **kw).ipc[0]


@pytest.mark.criterion(7)
def test_7a_refresh_free_bound_and_ordering(perf):
    """[PAPER]"""
    for ms in (32, 8):
        assert ipc(perf, "norefresh", ms) >= ipc(perf, "smd-fr", ms) >= ipc(perf, "ddr4", ms)
    assert ipc(perf, "norefresh", 8) > ipc(perf, "smd-fr", 8) > ipc(perf, "ddr4", 8)


@pytest.mark.criterion(7)
def test_7b_fr_speedup_grows_as_period_shrinks(perf):
    """[PAPER]"""
    s = [ipc(perf, "smd-fr", ms) / ipc(perf, "ddr4", ms) for ms in (32, 16, 8)]
    assert s[0] < s[1] < s[2]


@pytest.mark.criterion(7)
def test_7c_one_region_per_bank(perf):
    """[PAPER]"""
    one = G.with_regions(1)
    base = ipc(perf, "ddr4", 32, geometry=one)
    assert ipc(perf, "smd-fr", 32, geometry=one) < base < ipc(perf, "smd-vr", 32, geometry=one)


@pytest.mark.criterion(7)
@pytest.mark.parametrize("p", [0.01, 0.2])
def test_7d_prp_cheaper_than_para(perf, p):
    """[PAPER]"""
    prp = 1 - ipc(perf, "smd-prp", maint=MaintenanceParams(p_mark=p)) / ipc(perf, "smd-fr")
    para = 1 - ipc(perf, "mc-para", ctrl=ControllerParams(para_p_mark=p)) / ipc(perf, "ddr4")
    assert prp < para


@pytest.mark.criterion(7)
def test_7e_scrub_overhead_grows_with_rate(perf):
    """[PAPER]"""
    # full-size banks: a 32K-row bank scrubs four times less often per row walk
    desk = Geometry.desk()
    fr = ipc(perf, "smd-fr", geometry=desk)
    over = {s: 1 - ipc(perf, "smd-ms", geometry=desk, maint=MaintenanceParams(scrub_period_s=s)) / fr
            for s in (300, 10)}
    assert over[300] <= 0.02
    assert over[10] > over[300]


# -- 8. determinism -------------------------------------------------------------------------------

@pytest.mark.criterion(8)
@pytest.mark.parametrize("mode", list(MODES))
def test_identical_runs_are_byte_identical(mode, tmp_path):
    """[DERIVED]"""
    cfg = ExperimentConfig(name="det", mode=mode, seed=9, traces=("gen:random:n=3000", "gen:hot-row:n=2000"),
                           geometry=G, timing=P.with_refresh_period(8),
                           frontend=FrontendParams(instructions=3000, warmup=1000))
    outs = []
    for k in range(2):
        d = tmp_path / str(k)
        rep = run(cfg, dump_commands=tmp_path / f"{k}.log")
        (csv,) = emit_report([rep], d, formats=("csv",))
        outs.append((csv.read_bytes(), (tmp_path / f"{k}.log").read_bytes()))
    assert outs[0] == outs[1]
    assert len(outs[0][1]) > 100


# -- 9. energy accounting -------------------------------------------------------------------------

def energy_from_log(lines, cfg: EnergyConfig, geometry: Geometry, timing: TimingParams) -> int:
    """Independent integer-pJ recomputation from a dumped command log."""
    n = geometry.chips_per_rank
    rows_per_ref = max(1, geometry.rows_per_bank // timing.refreshes_per_window)
    total = 0
    opened = {}
    open_cycles = 0
    end = None
    for line in lines:
        if line.startswith("# end "):
            end = int(line.split()[2])
            continue
        if not line or line.startswith("#"):
            continue
        f = line.split()
        if f[0] == "M":
            kind, rows, codewords, errors, mult = f[8], int(f[9]), int(f[11]), int(f[12]), int(f[13])
            if kind == "scrub":
                total += mult * (rows * cfg.int_refresh_row_pj + codewords * cfg.scrub_codeword_pj
                                 + errors * cfg.wr_pj)
            else:
                total += mult * rows * cfg.int_refresh_row_pj
            continue
        t, kind, bank, flags = int(f[0]), f[1], tuple(f[2:6]), f[8]
        if kind == "ACT":
            if "N" in flags:
                total += n * cfg.nack_pj
                continue
            total += n * cfg.act_pj
            opened.setdefault(bank, t)
        elif kind == "PRE":
            total += n * cfg.pre_pj
            if bank in opened:
                open_cycles += t - opened.pop(bank)
        elif kind == "RD":
            total += n * cfg.rd_pj
        elif kind == "WR":
            total += n * cfg.wr_pj
        elif kind == "REF":
            total += n * rows_per_ref * geometry.banks_per_rank * cfg.ref_row_pj
    open_cycles += sum(end - t0 for t0 in opened.values())
    total += geometry.ranks * n * end * cfg.bg_idle_pj_per_cycle + n * open_cycles * cfg.bg_active_bank_pj_per_cycle
    return total


@pytest.mark.criterion(9)
@pytest.mark.parametrize("mode", ["ddr4", "smd-fr", "combined"])
def test_energy_recomputed_from_log_matches_report(perf, mode):
    """[DERIVED]"""
    rep = perf((mode, 32, ()), mode=mode, period_ms=32)
    lines = perf.log((mode, 32, ())).read_text().splitlines()
    assert energy_from_log(lines, EnergyConfig(), G, P) == rep.energy_pj


@pytest.mark.criterion(9)
def test_fr_uses_less_energy_than_ddr4(perf):
    """[PAPER]"""
    fr = perf(("smd-fr", 32, ()), mode="smd-fr", period_ms=32)
    ddr4 = perf(("ddr4", 32, ()), mode="ddr4", period_ms=32)
    assert fr.energy_pj < ddr4.energy_pj
