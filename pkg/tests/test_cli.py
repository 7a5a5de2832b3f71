import csv
import json

import pytest

from wickthermo.cli import main
from wickthermo.report import VOLATILE_FIELDS, Report, aggregate_status, dumps, exit_code, format_float

SMALL = """
seed = 11

[[scenario]]
id = "minimality"
kind = "ground_minimality"
[scenario.grid]
points = 4
[scenario.states]
perturbed_count = 3

[[scenario]]
id = "oracle"
kind = "reduction_oracle"
[scenario.output]
plot = false
"""


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.toml"
    path.write_text(SMALL)
    return path


def strip_volatile(obj):
    if isinstance(obj, dict):
        return {k: strip_volatile(v) for k, v in obj.items() if k not in VOLATILE_FIELDS}
    if isinstance(obj, list):
        return [strip_volatile(v) for v in obj]
    return obj


def test_list_shows_every_default_scenario(capsys):
    assert main(["list"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert len(out) == 8
    assert out[0].split()[:2] == ["monotonicity", "monotonicity"]


def test_validate_good_and_malformed(tmp_path, small_config, capsys):
    assert main(["validate", str(small_config)]) == 0
    bad = tmp_path / "bad.toml"
    bad.write_text("[[scenario]]\nkind = \"positive_compact\"\n[scenario.field]\nxi = [0.2]\n")
    assert main(["validate", str(bad)]) == 3
    err = capsys.readouterr().err
    assert "scenario[0].field.xi[0]" in err and "line 4" in err


def test_usage_error_prints_schema(capsys):
    assert main(["run", "--jobs", "many"]) == 3
    assert "configuration schema" in capsys.readouterr().err
    assert main([]) == 3


def test_failing_check_exits_one(tmp_path):
    # an order ratio bound of 4.5 cannot be met by a second-order scheme
    path = tmp_path / "strict.toml"
    path.write_text(SMALL.split("[[scenario]]")[0] + "[[scenario]]" + SMALL.split("[[scenario]]")[2]
                    + "[scenario.checks]\nmin_order_ratio = 4.5\n")
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "o")]) == 1
    summary = json.loads((tmp_path / "o" / "report.json").read_text())
    assert summary["status"] == "fail"


def test_unknown_scenario_id(small_config, tmp_path):
    assert main(["run", "--config", str(small_config), "--scenario", "nope", "--out", str(tmp_path)]) == 3


def test_run_writes_reports(small_config, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--config", str(small_config), "--out", str(out)]) == 0
    summary = json.loads((out / "report.json").read_text())
    assert summary["status"] == "pass"
    assert [s["id"] for s in summary["scenarios"]] == ["minimality", "oracle"]
    rep = json.loads((out / "oracle" / "report.json").read_text())
    assert rep["provenance"]["seed"] == 11
    assert all(c["status"] == "pass" for c in rep["checks"])
    assert not list((out / "oracle").glob("*.png"))
    assert "overall: PASS" in capsys.readouterr().out


def test_reports_reproducible(small_config, tmp_path):
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["run", "--config", str(small_config), "--out", str(out), "--jobs", "2"]) == 0
        runs.append([json.loads((out / s / "report.json").read_text()) for s in ("minimality", "oracle")])
    assert strip_volatile(runs[0]) == strip_volatile(runs[1])
    text = [(tmp_path / n / "minimality" / "report.json").read_text().splitlines() for n in ("a", "b")]
    keep = [[ln for ln in t if not any(f'"{v}"' in ln for v in VOLATILE_FIELDS)] for t in text]
    assert keep[0] == keep[1]


def test_seed_flag_changes_random_scenarios(small_config, tmp_path):
    main(["run", "--config", str(small_config), "--scenario", "minimality", "--out", str(tmp_path / "a")])
    main(["run", "--config", str(small_config), "--scenario", "minimality", "--out", str(tmp_path / "b"),
          "--seed", "12"])
    a = json.loads((tmp_path / "a" / "minimality" / "report.json").read_text())
    b = json.loads((tmp_path / "b" / "minimality" / "report.json").read_text())
    assert a["provenance"]["seed"] == 11 and b["provenance"]["seed"] == 12
    assert a["checks"][0]["detail"] != b["checks"][0]["detail"]


def test_sweep_subcommand(tmp_path):
    out = tmp_path / "sw"
    code = main(["sweep", "--points", "6", "--count", "6", "--beta-min", "0.5", "--beta-max", "4",
                 "--out", str(out), "--no-plot"])
    assert code == 0
    with open(out / "sweep" / "sweep.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["beta", "w", "w_error", "temperature", "defined_flag"]
    assert len(rows) == 7
    assert all(r[4] == "true" for r in rows[1:])
    w = [float(r[1]) for r in rows[1:]]
    assert all(a > b for a, b in zip(w, w[1:]))
    with open(out / "sweep" / "plot_data.csv", newline="") as fh:
        assert next(csv.reader(fh)) == ["beta", "w", "T"]


def test_sweep_rejects_bad_grid(tmp_path):
    assert main(["sweep", "--beta-min", "2", "--beta-max", "1", "--out", str(tmp_path)]) == 3


class TestReportFormat:
    def test_seventeen_digits(self):
        assert format_float(0.1) == "0.10000000000000001"
        assert format_float(float("nan")) == '"nan"'

    def test_json_round_trip(self):
        text = dumps({"x": 1 / 3, "y": [1e-300, -2.5], "z": None, "t": True})
        back = json.loads(text)
        assert back["x"] == 1 / 3 and back["y"] == [1e-300, -2.5] and back["t"] is True

    @pytest.mark.parametrize("statuses, agg, code", [
        (["pass", "info"], "pass", 0),
        (["pass", "inconclusive"], "inconclusive", 2),
        (["inconclusive", "fail"], "fail", 1),
    ])
    def test_exit_taxonomy(self, statuses, agg, code):
        assert aggregate_status(statuses) == agg
        assert exit_code(agg) == code

    def test_unknown_status_rejected(self):
        rep = Report("x", "comparison", "claim")
        with pytest.raises(ValueError):
            rep.add("c", "claim", 1.0, 0.0, "maybe")
