import subprocess
import sys

import pytest

from metronome_sim.cli import EXIT_CONFIG, EXIT_FAILED, EXIT_IO, EXIT_OK, OUTPUT_ENV, main
from metronome_sim.harness import CONSERVATION_OK

FAST = ["--horizon", "30ms", "--warmup", "5ms"]


def test_preset_list(capsys):
    assert main(["preset", "--list"]) == EXIT_OK
    out = capsys.readouterr().out
    for name in ("fig3", "fig4", "fig5", "fig7-ramp", "table1", "table4-unbalanced"):
        assert name in out


def test_preset_show_applies_flags(capsys):
    assert main(["preset", "table1-row2", "--show", "--t-long", "300us"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "t_long = 300000ns" in out and "target_vacation = 10000ns" in out


def test_run_file_with_flag_override(tmp_path, capsys):
    cfg = tmp_path / "s.cfg"
    cfg.write_text("m_threads = 3\ntarget_vacation = 10us\nhorizon = 1s\narrival_rate = 5mpps\n")
    assert main(["run", str(cfg), *FAST, "--set", "t_long=200us"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "horizon = 30000000ns" in out and "t_long = 200000ns" in out
    assert CONSERVATION_OK in out


def test_output_flag_beats_env(tmp_path, monkeypatch, capsys):
    env_dir, flag_dir = tmp_path / "env", tmp_path / "flag"
    monkeypatch.setenv(OUTPUT_ENV, str(env_dir))
    assert main(["preset", "fig4", *FAST]) == EXIT_OK
    assert (env_dir / "summary.txt").exists()
    assert main(["preset", "fig4", *FAST, "-o", str(flag_dir)]) == EXIT_OK
    assert (flag_dir / "cycles.csv").exists()


def test_config_errors_exit_nonzero(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("m_threads = 3\nn_queues = 4\ntarget_vacation = 10\nhorizon = 1s\n")
    assert main(["run", str(bad)]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "line 3" in err and "line 1" in err


def test_missing_file_is_io_error(tmp_path, capsys):
    assert main(["run", str(tmp_path / "none.cfg")]) == EXIT_IO


def test_unwritable_output_is_io_error(tmp_path, capsys):
    blocker = tmp_path / "f"
    blocker.write_text("")
    assert main(["preset", "fig4", *FAST, "-o", str(blocker / "x")]) == EXIT_IO


def test_unknown_preset(capsys):
    assert main(["preset", "nope"]) == EXIT_CONFIG


def test_sweep(tmp_path, capsys):
    code = main(["sweep", "--preset", "fig4", "--key", "t_long", "--values", "100us,500us", *FAST,
                 "-o", str(tmp_path)])
    assert code == EXIT_OK
    assert (tmp_path / "sweep.csv").exists() and (tmp_path / "t_long=100us" / "summary.txt").exists()


def test_sweep_point_failure_nonzero(capsys):
    code = main(["sweep", "--preset", "fig4", "--key", "t_long", "--values", "100us,oops", *FAST])
    assert code == EXIT_FAILED
    assert "oops" in capsys.readouterr().err


@pytest.mark.parametrize("argv,expect", [
    (["busy", "--v", "10", "--rho", "0.5"], "10.0"),
    (["load", "--busy", "1", "--vacation", "1"], "0.5"),
    (["cdf-low", "--m", "2", "--t-short", "10us", "--t-long", "500us", "--x", "5us"], "0.75"),
    (["ts", "--m", "3", "--rho", "0", "--target", "10us"], "30000.0"),
])
def test_analytic(argv, expect, capsys):
    assert main(["analytic", *argv]) == EXIT_OK
    assert capsys.readouterr().out.strip() == expect


def test_analytic_missing_arg(capsys):
    assert main(["analytic", "busy", "--v", "1"]) == EXIT_CONFIG
    assert "--rho" in capsys.readouterr().err


def test_analytic_out_of_domain(capsys):
    assert main(["analytic", "busy", "--v", "1", "--rho", "1.5"]) == EXIT_CONFIG


def test_entry_point_module():
    res = subprocess.run([sys.executable, "-m", "metronome_sim.cli", "preset", "--list"],
                         capture_output=True, text=True, check=False)
    assert res.returncode == 0 and "fig3" in res.stdout
