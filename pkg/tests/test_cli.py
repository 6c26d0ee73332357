import csv
import io
import json
import subprocess
import sys

import pytest

from biot_split.cli import (
    BM_HEADER,
    CONVERGE_HEADER,
    EXIT_CONFIG,
    EXIT_INSTABILITY,
    EXIT_OK,
    SNAPSHOT_HEADER,
    ConfigError,
    config_from_dict,
    fmt,
    main,
    parse_config,
    shipped_config,
)
from biot_split.schemes import Discretization, SchemeKind

PHYSICS = {"mu": 2.0, "lam": 1.0, "alpha": 1.0, "c0": 0.01, "k": 1.0}


def write_json(tmp_path, obj, name="cfg.json"):
    path = tmp_path / name
    path.write_text(obj if isinstance(obj, str) else json.dumps(obj))
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def small_converge(**extra):
    cfg = {"experiment": "converge", "physics": PHYSICS, "levels": [[4, 0.25], [8, 0.125]], "final_time": 0.5}
    cfg.update(extra)
    return cfg


# --- configuration parsing ---------------------------------------------------


def test_empty_file_rejected(tmp_path):
    with pytest.raises(ConfigError, match="empty"):
        parse_config(write_json(tmp_path, ""))


def test_malformed_json_reports_position(tmp_path):
    with pytest.raises(ConfigError, match=r"line 2, column"):
        parse_config(write_json(tmp_path, '{"experiment": "converge",\n  "levels": [1,, 2]}'))


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        parse_config(tmp_path / "nope.json")


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="tolerance"):
        config_from_dict(small_converge(tolerance=1e-3))
    with pytest.raises(ConfigError, match="physics"):
        config_from_dict(small_converge(physics=dict(PHYSICS, beta=1.0)))


def test_negative_tau_rejected():
    with pytest.raises(ConfigError, match="levels"):
        config_from_dict(small_converge(levels=[[4, -0.1]]))


@pytest.mark.parametrize(
    "patch",
    [
        {"physics": dict(PHYSICS, mu=-1.0)},
        {"physics": dict(PHYSICS, alpha=1.5)},
        {"physics": {"E": 1.0, "nu": 0.5, "alpha": 1.0, "c0": 0.0, "k": 1.0}},
        {"levels": []},
        {"levels": [[0, 0.1]]},
        {"scheme": "explicit_stabilized_p1p1"},
        {"discretization": "p1p1_stabilized", "scheme": "explicit_fixed_stress"},
        {"scheme": "monolithic"},
        {"omega": 0.5},
        {"final_time": 0.0},
        {"inner_tol": 2.0},
        {"experiment": "optimize"},
        {"levels": [[4, "0.1"]]},
    ],
)
def test_invalid_values_rejected(patch):
    with pytest.raises(ConfigError):
        config_from_dict(small_converge(**patch))


def test_missing_required_keys():
    with pytest.raises(ConfigError, match="physics"):
        config_from_dict({"experiment": "converge", "levels": [[4, 0.1]]})
    with pytest.raises(ConfigError, match="levels"):
        config_from_dict({"experiment": "converge", "physics": PHYSICS})
    with pytest.raises(ConfigError):
        config_from_dict([1, 2])


def test_young_poisson_physics():
    cfg = config_from_dict(small_converge(physics={"E": 1e5, "nu": 0.1, "alpha": 1.0, "c0": 0.0, "k": 1e-2}))
    assert cfg.params.lam == pytest.approx(11363.6364, abs=1e-4)
    assert cfg.params.mu == pytest.approx(45454.5455, abs=1e-4)


def test_shipped_table_configs():
    t1 = parse_config(shipped_config("table1.json"))
    assert t1.discretization is Discretization.MINI
    assert t1.scheme is SchemeKind.EXPLICIT_FIXED_STRESS
    assert t1.levels == ((40, 0.1), (80, 0.05), (160, 0.025))
    assert t1.final_time == 1.0 and t1.omega == 1.0
    assert (t1.params.mu, t1.params.lam, t1.params.alpha, t1.params.c0, t1.params.k) == (2.0, 1.0, 1.0, 0.01, 1.0)
    assert [t1.n_steps(tau) for _, tau in t1.levels] == [10, 20, 40]
    t2 = parse_config(shipped_config("table2.json"))
    assert t2.discretization is Discretization.P1P1_STABILIZED
    assert t2.scheme is SchemeKind.EXPLICIT_STABILIZED_P1P1
    assert t2.omega == 1.5


def test_shipped_barry_mercer_configs():
    for name, disc in (("barry_mercer_mini.json", Discretization.MINI), ("barry_mercer_p1p1.json", Discretization.P1P1_STABILIZED)):
        cfg = parse_config(shipped_config(name))
        assert cfg.discretization is disc
        assert cfg.problem == "barry_mercer"
        assert cfg.levels[0][0] == 64
        assert cfg.n_steps(cfg.levels[0][1]) == 20
        assert cfg.final_time == pytest.approx(cfg.bm_config().quarter_period)
        assert cfg.params.c0 == 0.0


def test_fmt():
    assert fmt(0.0010270) == "1.02700e-03"
    assert fmt(2.5) == "2.50000e+00"


# --- drivers -----------------------------------------------------------------


def test_converge_csv(tmp_path):
    out = tmp_path / "t.csv"
    assert main(["converge", "--config", str(write_json(tmp_path, small_converge())), "--out", str(out)]) == EXIT_OK
    rows = read_csv(out)
    assert rows[0] == CONVERGE_HEADER
    assert len(rows) == 3
    assert rows[1][4] == "" and rows[1][7] == ""  # no rate on the coarsest level
    assert float(rows[1][0]) == pytest.approx(0.25) and float(rows[2][1]) == pytest.approx(0.125)
    for r in rows[1:]:
        assert all(float(r[i]) > 0 for i in (2, 3, 5, 6))
    assert float(rows[2][3]) < float(rows[1][3])  # refinement reduces the error


def test_single_level_has_empty_rates(tmp_path):
    out = tmp_path / "one.csv"
    cfg = small_converge(levels=[[4, 0.25]])
    assert main(["converge", "--config", str(write_json(tmp_path, cfg)), "--out", str(out)]) == EXIT_OK
    rows = read_csv(out)
    assert len(rows) == 2 and rows[1][4] == "" and rows[1][7] == ""


def test_repeat_runs_are_byte_identical(tmp_path):
    path = write_json(tmp_path, small_converge())
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    main(["converge", "--config", str(path), "--out", str(a)])
    main(["converge", "--config", str(path), "--out", str(b), "--threads", "2"])
    assert a.read_bytes() == b.read_bytes()


def test_config_error_exit_code(tmp_path, capsys):
    path = write_json(tmp_path, small_converge(levels=[[4, -1.0]]))
    assert main(["converge", "--config", str(path)]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_command_experiment_mismatch(tmp_path):
    path = write_json(tmp_path, small_converge())
    assert main(["barry-mercer", "--config", str(path)]) == EXIT_CONFIG


def test_bad_thread_count(tmp_path):
    assert main(["converge", "--config", str(write_json(tmp_path, small_converge())), "--threads", "0"]) == EXIT_CONFIG


def test_instability_exit_code(tmp_path):
    cfg = {
        "experiment": "single_run",
        "scheme": "explicit_naive",
        "physics": {"mu": 1.0, "lam": 0.0, "alpha": 1.0, "c0": 0.0, "k": 1.0},
        "levels": [[8, 0.01]],
        "final_time": 20.0,
    }
    out = tmp_path / "bad.csv"
    assert main(["run", "--config", str(write_json(tmp_path, cfg)), "--out", str(out)]) == EXIT_INSTABILITY
    rows = read_csv(out)
    assert rows[0] == SNAPSHOT_HEADER
    assert rows[1][2] == "error:instability" and int(rows[1][0]) > 1


def test_run_snapshot(tmp_path):
    out = tmp_path / "snap.csv"
    assert main(["run", "--config", str(shipped_config("single_run.json")), "--out", str(out)]) == EXIT_OK
    rows = read_csv(out)
    assert rows[0] == SNAPSHOT_HEADER
    steps = sorted({int(r[0]) for r in rows[1:]})
    assert steps == list(range(6))
    # MINI on an 8x8 grid: 2*81 + 2*128 displacement and 81 pressure dofs per state
    per_step = [r for r in rows[1:] if r[0] == "3"]
    assert sum(r[2] == "u" for r in per_step) == 2 * 81 + 2 * 128
    assert sum(r[2] == "p" for r in per_step) == 81
    assert all(float(r[4]) == 0.0 for r in rows[1:] if r[0] == "0" and r[2] == "u")


def test_barry_mercer_csv(tmp_path):
    cfg = {
        "experiment": "barry_mercer",
        "physics": {"E": 1e5, "nu": 0.1, "alpha": 1.0, "c0": 0.0, "k": 1e-2},
        "barry_mercer": {"nx": 8, "n_steps": 4, "n_modes": 16, "samples": 9},
    }
    out = tmp_path / "bm.csv"
    assert main(["barry-mercer", "--config", str(write_json(tmp_path, cfg)), "--out", str(out)]) == EXIT_OK
    rows = read_csv(out)
    assert rows[0] == BM_HEADER
    assert len(rows) == 10
    ys = [float(r[0]) for r in rows[1:]]
    assert ys[0] == 0.0 and ys[-1] == pytest.approx(1.0)
    for col in range(1, 4):  # drained ends
        assert float(rows[1][col]) == 0.0 and float(rows[-1][col]) == 0.0
    assert max(float(r[1]) for r in rows[1:]) > 0


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "biot_split.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    assert "converge" in res.stdout and "barry-mercer" in res.stdout


def test_stdout_output(tmp_path, capsys):
    assert main(["converge", "--config", str(write_json(tmp_path, small_converge(levels=[[4, 0.25]])))]) == EXIT_OK
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert rows[0] == CONVERGE_HEADER and len(rows) == 2
