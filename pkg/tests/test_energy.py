import pytest
from hypothesis import given
from hypothesis import strategies as st

from smdsim.energy import EnergyAccumulator, EnergyConfig, StatsReport, reports_to_csv, weighted_speedup
from smdsim.timing import Address, Command, CommandKind, ConfigError

K = CommandKind
A = Address(0, 0, 0, 0, 7, 0)


def acc(cfg=EnergyConfig(), chips=8):
    return EnergyAccumulator(cfg, chips_per_rank=chips, rows_per_ref=16, banks_per_rank=8, ranks=1)


def test_background_only_is_idle_floor():
    """[DERIVED]"""
    e = acc()
    e.finalize(1000)
    assert e.total == e.by_class["background"] == 8 * 1000 * 26


def test_one_activation_cycle():
    """[DERIVED]"""
    e = acc(chips=1)
    for c in (Command(K.ACT, A, 0), Command(K.RD, A, 22), Command(K.PRE, A, 56)):
        e.command(c)
    e.finalize(100)
    assert e.open_cycles == 56
    assert e.by_class["act"] == 600 and e.by_class["rd"] == 300 and e.by_class["pre"] == 300
    assert e.by_class["background"] == 100 * 26 + 56 * 1
    assert e.total == 600 + 300 + 300 + 2600 + 56


def test_nack_costs_only_nack_energy_and_opens_nothing():
    """[DERIVED]"""
    e = acc(chips=1)
    e.command(Command(K.ACT, A, 0, nacked=True))
    e.finalize(10)
    assert e.by_class["nack"] == 10 and e.by_class["act"] == 0 and e.open_cycles == 0


def test_ref_and_maintenance_energy():
    """[DERIVED]"""
    e = acc(chips=1)
    e.command(Command(K.REF, A, 0))
    e.maintenance("refresh", rows=16, codewords=0, errors=0, multiplicity=2)
    e.maintenance("scrub", rows=1, codewords=128, errors=1, multiplicity=1)
    assert e.by_class["ref"] == 16 * 8 * 350
    assert e.by_class["internal_refresh"] == 2 * 16 * 350
    assert e.by_class["scrub"] == 350 + 128 * 300 + 270


@given(st.lists(st.sampled_from([K.RD, K.WR]), max_size=50), st.integers(1, 4))
def test_energy_is_linear_in_command_counts(kinds, scale):
    """[DERIVED] doubling every per-event energy doubles the event part of the total."""
    base = EnergyConfig()
    big = EnergyConfig(**{k: v * scale for k, v in vars(base).items()})
    totals = []
    for cfg in (base, big):
        e = acc(cfg)
        for i, k in enumerate(kinds):
            e.command(Command(k, A, i))
        totals.append(e.total)
    assert totals[1] == scale * totals[0]


def test_energy_config_validation():
    """[TRIVIAL]"""
    with pytest.raises(ConfigError):
        EnergyConfig(act_pj=-1)
    with pytest.raises(ConfigError):
        EnergyConfig.from_mapping({"bogus": 1})
    assert EnergyConfig.from_mapping({"act_pj": "5"}).act_pj == 5


def test_weighted_speedup_examples():
    """[TRIVIAL]"""
    assert weighted_speedup([1.0, 1.0], [2.0, 1.0]) == pytest.approx(1.5)
    assert weighted_speedup([0.5], [0.5]) == 1.0
    with pytest.raises(ValueError):
        weighted_speedup([1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        weighted_speedup([1.0], [0.0])


@given(st.lists(st.floats(0.01, 10), min_size=1, max_size=8))
def test_weighted_speedup_of_alone_run_is_core_count(ipcs):
    """[DERIVED]"""
    assert weighted_speedup(ipcs, ipcs) == pytest.approx(len(ipcs))


def test_csv_layout():
    """[TRIVIAL]"""
    r = StatsReport("exp", "ddr4", 10, [0.5], [5], energy_pj=3)
    text = reports_to_csv([r])
    lines = text.splitlines()
    assert lines[0] == "experiment,mode,metric,value"
    assert "exp,ddr4,ipc.core0,0.500000" in lines
    assert lines[-1] == "exp,ddr4,faults,0"
    with pytest.raises(ValueError):
        reports_to_csv([])
