import subprocess
import sys

import pytest

from smdsim.cli import main

BASE = """
[experiment]
name = t
mode = {mode}
traces = gen:random:n=2000
[geometry]
profile = scaled
[frontend]
instructions = 2000
warmup = 0
"""


def ini(tmp_path, text, name="c.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_run_writes_csv_and_command_log(tmp_path, capsys):
    """[TRIVIAL]"""
    cfg = ini(tmp_path, BASE.format(mode="smd-fr"))
    rc = main(["run", "--config", cfg, "--out", str(tmp_path), "--dump-commands", str(tmp_path / "cmd.log")])
    assert rc == 0
    assert (tmp_path / "t.csv").read_text().startswith("experiment,mode,metric,value\n")
    log = (tmp_path / "cmd.log").read_text().splitlines()
    assert log[0].startswith("#") and log[-1].startswith("# end ")
    assert "t smd-fr: ipc=" in capsys.readouterr().out


def test_mode_trace_and_seed_overrides(tmp_path):
    """[TRIVIAL]"""
    cfg = ini(tmp_path, BASE.format(mode="smd-fr"))
    rc = main(["run", "--config", cfg, "--out", str(tmp_path), "--mode", "ddr4", "--seed", "3",
               "--trace", "gen:streaming:n=1000"])
    assert rc == 0
    assert "t,ddr4,cycles," in (tmp_path / "t.csv").read_text()


def test_sweep_writes_csv_and_svg(tmp_path):
    """[TRIVIAL]"""
    cfg = ini(tmp_path, BASE.format(mode="smd-fr"))
    rc = main(["sweep", "--config", cfg, "--out", str(tmp_path), "--axis", "refresh_period", "--values", "32,16"])
    assert rc == 0
    assert (tmp_path / "t-refresh_period.csv").exists() and (tmp_path / "t-refresh_period.svg").exists()


@pytest.mark.parametrize("text", [BASE.format(mode="nonsense"), "[experiment]\ntraces = missing.trace\n"])
def test_config_errors_exit_2(tmp_path, text, capsys):
    """[TRIVIAL]"""
    assert main(["run", "--config", ini(tmp_path, text), "--out", str(tmp_path)]) == 2
    assert capsys.readouterr().err.startswith("error:")


def test_missing_config_exits_2(tmp_path):
    """[TRIVIAL]"""
    assert main(["run", "--config", str(tmp_path / "none.ini")]) == 2


def test_invalid_sweep_axis_for_mode_exits_2(tmp_path):
    """[TRIVIAL]"""
    cfg = ini(tmp_path, BASE.format(mode="ddr4"))
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path), "--axis", "scrub_period",
                 "--values", "10"]) == 2


def test_refresh_overflow_exits_1(tmp_path, capsys):
    """[DERIVED]"""
    # one region per bank and a row-open cap of a full 9 tREFI: an idle open row starves FR
    cfg = ini(tmp_path, """
[experiment]
mode = smd-fr
traces = gen:pointer-chase:n=50:bubbles=400000
[geometry]
regions_per_bank = 1
subarrays_per_region = 256
[controller]
row_open_guard = 0
[frontend]
instructions = 8000000
warmup = 0
""")
    assert main(["run", "--config", cfg, "--out", str(tmp_path)]) == 1
    assert "pending refresh counter" in capsys.readouterr().err


def test_module_entry_point(tmp_path):
    """[TRIVIAL]"""
    cfg = ini(tmp_path, BASE.format(mode="norefresh"))
    p = subprocess.run([sys.executable, "-m", "smdsim", "run", "--config", cfg, "--out", str(tmp_path)],
                       capture_output=True, text=True)
    assert p.returncode == 0, p.stderr
    assert "wrote" in p.stdout
