import csv
import io
import math
import subprocess
import sys

import pytest

from epaloha.analytic import n_ep_approx
from epaloha.cli import SCHEMA, SweepSpec, UsageError, _fmt, main


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    rows = list(csv.DictReader(io.StringIO(captured.out))) if captured.out else []
    return code, rows, captured


def column(rows, name):
    return [float(r[name]) for r in rows]


def test_sweep_grid_is_inclusive():
    assert SweepSpec("alpha", 0.0, 1.0, 0.25).grid() == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert SweepSpec("K", 1, 3, 1).grid() == [1, 2, 3]
    assert SweepSpec("lambda", 2.0, 2.0, 1.0).grid() == [2.0]


@pytest.mark.parametrize("kwargs", [dict(start=1.0, stop=0.0, step=1.0),
                                    dict(start=0.0, stop=1.0, step=0.0),
                                    dict(start=0.0, stop=1.0, step=-1.0)])
def test_sweep_rejects_bad_ranges(kwargs):
    with pytest.raises(UsageError):
        SweepSpec("alpha", **kwargs)


def test_number_format():
    assert _fmt(1 / 3) == "0.333333333"
    assert _fmt(True) == "1"
    assert _fmt(7) == "7"
    assert _fmt(math.nan) == "nan"


def test_analytic_psi_sweep(capsys):
    code, rows, _ = run(capsys, "analytic", "--which", "psi",
                        "--start", "0", "--stop", "1", "--step", "0.01")
    assert code == 0
    assert len(rows) == 101
    assert rows[0]["schema"] == SCHEMA
    assert max(column(rows, "psi")) == pytest.approx(0.6149, abs=1e-3)


def test_analytic_single_point_grid(capsys):
    code, rows, _ = run(capsys, "analytic", "--which", "psi",
                        "--start", "0.4", "--stop", "0.4", "--step", "0.1")
    assert code == 0 and len(rows) == 1


def test_analytic_ratio_is_constant(capsys):
    code, rows, _ = run(capsys, "analytic", "--which", "ratio",
                        "--start", "0", "--stop", "1", "--step", "0.5")
    assert code == 0
    assert {r["ratio"] for r in rows} == {"1.63212056"}


def test_analytic_other_formulas(capsys):
    for argv in (["--which", "users", "--var", "K", "--start", "1", "--stop", "5", "--step", "1"],
                 ["--which", "poisson", "--start", "0.1", "--stop", "0.5", "--step", "0.2"],
                 ["--which", "poisson", "--var", "M", "--lam", "20",
                  "--start", "20", "--stop", "40", "--step", "10"],
                 ["--which", "fixed_point", "--var", "lambda0",
                  "--start", "10", "--stop", "40", "--step", "10"],
                 ["--which", "pool", "--start", "0.2", "--stop", "0.2", "--step", "1"],
                 ["--which", "overhead", "--var", "M", "--start", "10", "--stop", "10",
                  "--step", "1"],
                 ["--which", "eta_sa", "--var", "K", "--start", "1", "--stop", "3",
                  "--step", "1"]):
        code, rows, captured = run(capsys, "analytic", *argv)
        assert code == 0, captured.err
        assert rows
    code, rows, _ = run(capsys, "analytic", "--which", "fixed_point", "--var", "lambda0",
                        "--start", "20", "--stop", "20", "--step", "1")
    assert float(rows[0]["lam_ep"]) == pytest.approx(20.1602546, rel=1e-7)


def test_analytic_M_override(capsys):
    code, rows, _ = run(capsys, "analytic", "--which", "users", "--var", "K", "--M", "10",
                        "--start", "10", "--stop", "10", "--step", "1")
    assert rows[0]["M"] == "10"
    assert float(rows[0]["n_ma"]) == pytest.approx(10 * 0.9**9)


def test_unknown_formula_is_usage_error(capsys):
    code, rows, captured = run(capsys, "analytic", "--which", "nope",
                               "--start", "0", "--stop", "1", "--step", "1")
    assert code == 2 and not rows
    assert "unknown formula" in captured.err


def test_bad_sweep_is_usage_error(capsys):
    code, _, _ = run(capsys, "analytic", "--which", "psi",
                     "--start", "1", "--stop", "0", "--step", "1")
    assert code == 2


def test_simulate_single_trial_is_reproducible(capsys):
    argv = ["simulate", "--var", "K", "--start", "5", "--stop", "5", "--step", "1",
            "--trials", "1", "--seed", "42", "--M", "4"]
    _, first, a = run(capsys, *argv)
    _, second, b = run(capsys, *argv)
    assert a.out == b.out
    assert [r["scheme"] for r in first] == ["ConventionalMA", "MultichannelEP"]


def test_simulate_columns_and_values(capsys):
    code, rows, _ = run(capsys, "simulate", "--var", "alpha", "--start", "0.3", "--stop", "0.3",
                        "--step", "1", "--trials", "4000", "--scheme", "ep")
    assert code == 0
    assert list(rows[0])[:5] == ["schema", "scheme", "M", "variable", "x"]
    assert float(rows[0]["mean"]) == pytest.approx(n_ep_approx(30.0, 100), abs=1.0)


def test_simulate_fast_retrial_flags_divergence(capsys):
    code, rows, _ = run(capsys, "simulate", "--var", "lambda0", "--start", "5", "--stop", "60",
                        "--step", "55", "--slots", "400", "--warmup", "50", "--M", "20",
                        "--scheme", "ma")
    assert code == 0
    assert [r["status"] for r in rows] == ["ok", "diverged"]


def test_phy_pool_report_and_noiseless_accuracy(capsys):
    code, rows, _ = run(capsys, "phy", "--t-p", "5", "--k", "1", "--noiseless",
                        "--start", "10", "--stop", "10", "--step", "1", "--trials", "200")
    assert code == 0
    assert rows[0]["pool_size"] == "25"
    assert float(rows[0]["accuracy"]) == 1.0
    code, rows, _ = run(capsys, "phy", "--t-p", "11", "--k", "2", "--noiseless",
                        "--start", "10", "--stop", "10", "--step", "1", "--trials", "300")
    assert float(rows[0]["accuracy"]) == 1.0
    assert float(rows[0]["coherence"]) == pytest.approx(1 / math.sqrt(11), rel=1e-6)


def test_phy_accuracy_rises_with_snr(capsys, tmp_path):
    confusion = tmp_path / "pairs.csv"
    code, rows, _ = run(capsys, "phy", "--t-p", "5", "--start", "0", "--stop", "30",
                        "--step", "10", "--trials", "1500", "--confusion", str(confusion))
    assert code == 0
    acc = column(rows, "accuracy")
    se = 0.5 / math.sqrt(1500)
    assert all(b >= a - 3 * se for a, b in zip(acc, acc[1:]))
    assert acc[-1] > acc[0]
    assert len(confusion.read_text().splitlines()) == 1 + 4 * 1500


def test_phy_rejects_non_prime_length(capsys):
    code, _, captured = run(capsys, "phy", "--t-p", "9", "--start", "0", "--stop", "0",
                            "--step", "1")
    assert code == 2 and "prime" in captured.err


def test_config_file_and_invalid_config(capsys, tmp_path):
    cfg = tmp_path / "sys.cfg"
    cfg.write_text("M = 7\n")
    code, rows, _ = run(capsys, "analytic", "--config", str(cfg), "--which", "users",
                        "--var", "K", "--start", "3", "--stop", "3", "--step", "1")
    assert rows[0]["M"] == "7"
    cfg.write_text("t_p = 200\n")
    code, _, captured = run(capsys, "analytic", "--config", str(cfg), "--which", "psi",
                            "--start", "0", "--stop", "0", "--step", "1")
    assert code == 2 and "t_p < t_d" in captured.err


def test_out_file(capsys, tmp_path):
    out = tmp_path / "psi.csv"
    code, rows, _ = run(capsys, "analytic", "--which", "psi", "--out", str(out),
                        "--start", "0", "--stop", "0.5", "--step", "0.5")
    assert code == 0 and not rows
    assert out.read_text().splitlines()[0].startswith("schema,variable,x,psi")


def test_figure1_and_figure3(capsys):
    code, rows, _ = run(capsys, "figure1")
    assert code == 0 and len(rows) == 20
    code, rows, _ = run(capsys, "figure3", "--trials", "200")
    assert code == 0 and len(rows) == 20
    for name in ("sim_ma", "sim_ep", "ep_lower", "ep_approx", "psi"):
        assert name in rows[0]


def test_figure4_5_6_shapes(capsys):
    _, rows, _ = run(capsys, "figure4", "--trials", "100")
    assert [int(r["M"]) for r in rows] == list(range(20, 101, 10))
    assert {r["lam"] for r in rows} == {"20"}
    _, rows, _ = run(capsys, "figure5", "--trials", "100")
    assert all(float(r["lam"]) == pytest.approx(0.8 * int(r["M"])) for r in rows)
    _, rows, _ = run(capsys, "figure6", "--slots", "100", "--warmup", "20")
    assert len(rows) == 20
    assert {"lam_ma_sim", "q_ep_sim", "lam_ep_analytic"} <= set(rows[0])


def test_module_entry_point_selftest():
    proc = subprocess.run([sys.executable, "-m", "epaloha", "selftest"],
                          capture_output=True, text=True, timeout=300)
    assert proc.returncode == 0, proc.stdout + proc.stderr
    assert "FAIL" not in proc.stdout
