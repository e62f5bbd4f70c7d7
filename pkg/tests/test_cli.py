import math

import pytest

from twogrid_ns import cli
from twogrid_ns.cli import (
    BENCH_COLUMNS,
    STUDY_COLUMNS,
    ConfigError,
    StudyFailure,
    main,
    parse_config,
    read_csv,
    report_csv,
    run_benchmark,
    run_study,
)

SMALL = "levels=2:4 tfinal=0.125 krule=fixed:0.0625"


def test_empty_config_gives_defaults():
    plan = parse_config("")
    assert plan.example == 1 and plan.T == 1.0 and plan.nu == 1.0
    assert plan.mode == "twogrid" and plan.krule == "h2"
    assert plan.levels == [(2, 4, 1 / 16), (3, 8, 1 / 64), (4, 16, 1 / 256)]


def test_h2_pairing_ladder():
    plan = parse_config("example=1 levels=4,16,64 krule=h2")
    assert plan.levels == [(2, 4, 1 / 16), (4, 16, 1 / 256), (8, 64, 1 / 4096)]


def test_comments_multiline_and_overrides():
    text = "# study\nexample=2   # second case\nlevels=3:9 krule=fixed:0.125\nnu=0.5 tfinal=0.5\n"
    plan = parse_config(text, {"tfinal": "0.25", "mode": None})
    assert plan.example == 2 and plan.nu == 0.5 and plan.T == 0.25
    assert plan.levels == [(3, 9, 0.125)]


@pytest.mark.parametrize(
    "text, line",
    [
        ("krule=bogus", 1),
        ("example=1\nbogus=3", 2),
        ("example=1\n\nexample=7", 3),
        ("levels=4\nmode=fast", 2),
        ("levels=8,4", 1),
        ("levels=4\njunk", 2),
    ],
)
def test_config_errors_carry_line(text, line):
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    assert err.value.line == line
    assert f"line {line}" in str(err.value)


def test_time_step_must_divide_final_time():
    with pytest.raises(ConfigError, match="divide|divisible|multiple"):
        parse_config("levels=4 krule=fixed:0.3 tfinal=1")


def test_unknown_override_rejected():
    with pytest.raises(ConfigError):
        parse_config("", {"colour": "red"})


def test_csv_round_trip_exact():
    rows = [
        {"level": 0, "n_H": 2, "n_h": 4, "H": 0.5, "h": 0.25, "k": 1 / 16, "N": 98,
         "err_l2_vel": 0.1 + 0.2, "rate_l2_vel": None, "err_h1_vel": math.pi, "rate_h1_vel": None,
         "err_l2_p": 1e-300 / 3, "rate_l2_p": None, "wall_seconds": 1 / 7},
        {"level": 1, "n_H": 3, "n_h": 8, "H": 1 / 3, "h": 0.125, "k": 1 / 64, "N": 418,
         "err_l2_vel": 2 / 3, "rate_l2_vel": math.e, "err_h1_vel": 5e-17, "rate_h1_vel": -0.0,
         "err_l2_p": 12345.678901234567, "rate_l2_p": 1.0, "wall_seconds": 0.0},
    ]
    text = report_csv(rows, STUDY_COLUMNS)
    assert text.splitlines()[0] == ",".join(STUDY_COLUMNS)
    assert text.endswith("\r\n")
    back = read_csv(text)
    assert back == rows


def test_two_level_study(tmp_path, capsys):
    out = tmp_path / "rates.csv"
    plan = parse_config(f"levels=4,8 tfinal=0.125 krule=fixed:0.0625 out={out}")
    report = run_study(plan)
    rows = read_csv(out.read_text())
    assert len(rows) == 2 and list(rows[0]) == STUDY_COLUMNS
    for col in ("rate_l2_vel", "rate_h1_vel", "rate_l2_p"):
        assert rows[0][col] is None
        assert rows[1][col] is not None
    assert rows[1]["N"] == 2 * (2 * 8 - 1) ** 2 + 2 * 8 * 8
    assert rows[0]["H"] == 0.5 and rows[1]["h"] == 0.125
    assert [r["err_l2_vel"] for r in report.rows] == [r["err_l2_vel"] for r in rows]


def test_study_is_deterministic():
    plan = parse_config(SMALL)
    cols = ("err_l2_vel", "err_h1_vel", "err_l2_p")
    a = run_study(plan).rows
    b = run_study(plan).rows
    assert [[r[c] for c in cols] for r in a] == [[r[c] for c in cols] for r in b]


def test_benchmark_factorization_counts():
    rows = run_benchmark(parse_config("levels=2:8 tfinal=0.125 krule=fixed:0.0625"))
    (row,) = rows
    assert list(row) == BENCH_COLUMNS
    assert row["twogrid_fine_factorizations_per_step"] == 1
    assert row["onegrid_fine_factorizations_per_step"] == row["onegrid_mean_newton_iterations"] >= 1
    assert 0.2 <= row["twogrid_err_l2_vel"] / row["onegrid_err_l2_vel"] <= 5


def test_solver_failure_marks_level():
    plan = parse_config("levels=4,8 tfinal=0.125 krule=fixed:0.0625 newton_max_iter=1 newton_tol=1e-30")
    with pytest.raises(StudyFailure) as err:
        run_study(plan)
    assert err.value.level == 0


def test_main_exit_codes(tmp_path, capsys):
    out = tmp_path / "s.csv"
    assert main(["solve", "--levels", "2:4", "--tfinal", "0.125", "--krule", "fixed:0.0625", "--out", str(out)]) == 0
    assert out.exists()
    assert "err_l2_vel" in capsys.readouterr().out

    assert main(["study", "--krule", "bogus"]) == cli.EXIT_CONFIG
    assert main(["study", "--config", str(tmp_path / "missing.cfg")]) == cli.EXIT_CONFIG
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("levels=4\nnewton_max_iter=1 newton_tol=1e-30 tfinal=0.125 krule=fixed:0.0625\n")
    assert main(["study", "--config", str(cfg)]) == cli.EXIT_SOLVER
    assert "level 0" in capsys.readouterr().err


def test_main_study_prints_table(capsys):
    assert main(["study", "--levels", "2:4,3:8", "--tfinal", "0.125", "--krule", "fixed:0.0625"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].split() == STUDY_COLUMNS
    assert len(lines) == 3
