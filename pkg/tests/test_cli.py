import json

import numpy as np
import pandas as pd
import pytest

from app.core.ballmeasure import ScheduleKind
from app.core.errors import ConfigError, DomainError
from app.core.experiments import (
    build_context, build_defect_params, build_schedule, decreasing_beyond_sigma, decreasing_over_grid,
)
from app.core.meanlab import REPORT_COLUMNS, DefectReport
from app.main import main, parse_assignments
from app.utils.data_utils import reports_to_frame
from app.utils.file_handlers import emit
from app.utils.validators import ExperimentName, apply_overrides, parse_ini, validate_config

QUICK_SELFTEST = ["--set", "selftest.checks=liegroup,overlap,witness"]


def _write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


# Config validation

def test_parse_ini_reports_line_numbers():
    with pytest.raises(ConfigError) as caught:
        parse_ini("[sweep]\nN_list = 16 32 64\nthis line has no equals sign\n")
    assert any(d.startswith("line 3") for d in caught.value.diagnostics)


def test_key_outside_section_rejected():
    with pytest.raises(ConfigError) as caught:
        parse_ini("seed = 3\n")
    assert "line 1" in caught.value.diagnostics[0]


def test_unknown_key_rejected():
    raw = {"experiment": {"name": "witness"}, "witness": {"epsilon": "0.1"}}
    with pytest.raises(ConfigError) as caught:
        validate_config(raw)
    assert any(d.startswith("witness.epsilon") for d in caught.value.diagnostics)


def test_defect_experiment_needs_alpha_and_sweep():
    with pytest.raises(ConfigError):
        validate_config({"experiment": {"name": "translation"}, "schedule": {"c": "1.0"},
                         "sweep": {"N_list": "16 32 64"}})
    with pytest.raises(ConfigError):
        validate_config({"experiment": {"name": "rotation"}})


def test_sweep_grid_must_ascend():
    with pytest.raises(ConfigError) as caught:
        validate_config({"experiment": {"name": "star"}, "sweep": {"N_list": "32 16 64"}})
    assert any(d.startswith("sweep.N_list") for d in caught.value.diagnostics)


def test_overrides_beat_file_values():
    raw = parse_ini("[experiment]\nname = witness\nseed = 1\n[witness]\nR_list = 10 100\n")
    cfg = validate_config(apply_overrides(raw, {"experiment.seed": "5", "group.spec": "su2", "sweep.M": None}))
    assert cfg.experiment.name == ExperimentName.WITNESS
    assert cfg.experiment.seed == 5
    assert cfg.group.spec == "SU(2)"
    assert cfg.witness.R_list == [10.0, 100.0]
    assert cfg.sweep is None


def test_table_schedule_from_config():
    cfg = validate_config({"experiment": {"name": "translation"},
                           "schedule": {"kind": "table", "table": "16:4 32:6 64:9"},
                           "sweep": {"N_list": "16 32 64"}})
    schedule = build_schedule(cfg)
    assert schedule.kind == ScheduleKind.TABLE
    assert schedule.radius_for(32) == 6.0


@pytest.mark.parametrize("table", ["16:4 32:6", "16:4 32 64:9", "16:4 32:-6 64:9"])
def test_bad_table_schedule_rejected(table):
    with pytest.raises(ConfigError) as caught:
        validate_config({"experiment": {"name": "translation"},
                         "schedule": {"kind": "table", "table": table},
                         "sweep": {"N_list": "16 32 64"}})
    assert caught.value.diagnostics


def test_brownian_observation_times_in_unit_interval():
    cfg = validate_config({"experiment": {"name": "brownian"}, "brownian": {"at": "0.5 1"}})
    assert cfg.brownian.at == [0.5, 1.0]
    with pytest.raises(ConfigError) as caught:
        validate_config({"experiment": {"name": "brownian"}, "brownian": {"at": "0.5 1.5"}})
    assert any(d.startswith("brownian.at") for d in caught.value.diagnostics)


def test_rotation_control_defaults_to_plain():
    cfg = validate_config({"experiment": {"name": "rotation"}, "sweep": {"N_list": "16 32 64"}})
    assert cfg.rotation.control == "plain"
    assert build_defect_params(cfg, build_context(cfg)).control == "plain"


def test_parse_assignments():
    assert parse_assignments(["sweep.M=500", " rotation.kind = constant"]) == {
        "sweep.M": "500", "rotation.kind": "constant"}
    with pytest.raises(ConfigError):
        parse_assignments(["M=500"])


# Serialization

def test_empty_report_is_header_only():
    data = emit(reports_to_frame([]), "csv")
    assert data.decode() == ",".join(REPORT_COLUMNS) + "\n"


def test_report_row_serializes_every_column():
    report = DefectReport("translation", "SO(3)", 16, 8.0, 0.75, 20000, 7, -0.25, 0.01, wall_ms=12.5)
    df = reports_to_frame([report])
    lines = emit(df, "csv").decode().splitlines()
    assert lines[0].split(",") == REPORT_COLUMNS
    cells = dict(zip(REPORT_COLUMNS, lines[1].split(",")))
    assert cells["N"] == "16" and cells["seed"] == "7"
    assert cells["wall_ms"] == ""
    assert float(cells["estimate"]) == -0.25

    records = json.loads(emit(reports_to_frame([report], timings=True), "json"))
    assert records[0]["wall_ms"] == 12.5
    assert set(records[0]) == set(REPORT_COLUMNS)


def test_json_maps_non_finite_to_null():
    doc = json.loads(emit({"ratio": np.nan, "n": np.int64(3), "ok": np.bool_(True)}, "json"))
    assert doc == {"n": 3, "ok": True, "ratio": None}


def test_json_floats_survive_bit_exact():
    values = [0.1 + 0.2, 1.0 / 3.0, 5e-324, 1e308, -0.0, -2.5e-17]
    reports = [DefectReport("rotation", "SO(3)", 16 * (i + 1), 8.0, 0.75, 100, 1, v, abs(v))
               for i, v in enumerate(values)]
    records = json.loads(emit(reports_to_frame(reports), "json"))
    assert [r["estimate"].hex() for r in records] == [v.hex() for v in values]

    summary = json.loads(emit({"values": values, "ratio": np.float64(values[1])}, "json"))
    assert [v.hex() for v in summary["values"]] == [v.hex() for v in values]
    assert summary["ratio"].hex() == values[1].hex()


def _reports(estimates, std_error=0.01):
    return [DefectReport("translation", "SO(3)", 16 << i, 1.0, 0.75, 100, 1, e, std_error)
            for i, e in enumerate(estimates)]


def test_decreasing_over_grid_needs_every_step():
    assert decreasing_over_grid(_reports([0.4, -0.2, 0.1]))
    assert decreasing_over_grid(_reports([0.0, 0.0, 0.0]))
    assert not decreasing_over_grid(_reports([0.4, 0.5, 0.1]))
    assert not decreasing_over_grid(_reports([0.4, 0.4, 0.1]))


def test_decreasing_beyond_sigma_uses_combined_error():
    # neighbour gaps of 0.1 against 3 * sqrt(2) * 0.02 = 0.085
    assert decreasing_beyond_sigma(_reports([0.3, 0.2, 0.1], std_error=0.02))
    assert not decreasing_beyond_sigma(_reports([0.3, 0.2, 0.1], std_error=0.03))
    assert not decreasing_beyond_sigma(_reports([0.3, 0.35, 0.1], std_error=0.001))
    assert decreasing_beyond_sigma(_reports([0.0, 0.0, 0.0], std_error=0.0))


def test_unknown_format_rejected():
    with pytest.raises(ValueError):
        emit(pd.DataFrame(), "xml")


# Command line

def test_selftest_exit_zero(tmp_path, capsys):
    out = tmp_path / "selftest"
    assert main(["selftest", "--out", str(out), *QUICK_SELFTEST]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["passed"] is True
    assert manifest["wall_ms"] is None
    assert set(manifest["digests"]) == {"selftest_checks.csv", "selftest_summary.json"}
    checks = pd.read_csv(out / "selftest_checks.csv")
    assert set(checks["check"]) == {"liegroup", "overlap", "witness"}
    assert str(out / "manifest.json") in capsys.readouterr().out


def test_runs_are_byte_identical(tmp_path):
    digests = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["witness", "--seed", "3", "--out", str(out)]) == 0
        digests.append(json.loads((out / "manifest.json").read_text())["digests"])
    assert digests[0] == digests[1]


def test_malformed_config_exits_2_without_outputs(tmp_path, capsys):
    out = tmp_path / "bad"
    config = _write(tmp_path, "bad.ini",
                    f"[experiment]\nname = translation\noutput = {out}\n"
                    "[schedule]\nalpha = fast\n[sweep]\nN_list = 16 32 64\n")
    assert main(["run", config]) == 2
    assert not out.exists()
    assert "schedule.alpha" in capsys.readouterr().err


def test_missing_config_file_exits_2(tmp_path):
    assert main(["run", str(tmp_path / "nope.ini")]) == 2


def test_bad_set_flag_exits_2(tmp_path):
    assert main(["witness", "--out", str(tmp_path), "--set", "oops"]) == 2


def test_axis_outside_basis_exits_2(tmp_path):
    out = tmp_path / "rotation"
    code = main(["defect", "rotation", "--N-list", "16 32 64", "--M", "100", "--out", str(out),
                 "--set", "rotation.axis=7"])
    assert code == 2
    assert not out.exists()


def test_domain_error_exits_3(tmp_path, monkeypatch):
    def explode(cfg, threads=1, timings=False):
        raise DomainError("increment outside the logarithm radius")

    monkeypatch.setattr("app.agents.experiment_runner.run_experiment", explode)
    assert main(["witness", "--out", str(tmp_path / "w")]) == 3


def test_failed_selftest_exits_1_but_writes_outputs(tmp_path, monkeypatch):
    from app.core import experiments

    def failing(ctx, cfg, rng):
        return [experiments._check_row("liegroup", "forced", 1.0, 0.0, False)]

    monkeypatch.setitem(experiments.SELFTEST_CHECKS, "liegroup", failing)
    out = tmp_path / "selftest"
    assert main(["selftest", "--out", str(out), "--set", "selftest.checks=liegroup"]) == 1
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["passed"] is False
    summary = json.loads((out / "selftest_summary.json").read_text())
    assert summary["failed"] == ["liegroup.forced"]


def test_json_format_and_su2(tmp_path):
    out = tmp_path / "witness"
    assert main(["witness", "--group", "SU(2)", "--format", "json", "--out", str(out)]) == 0
    rows = json.loads((out / "witness_witness.json").read_text())
    assert [r["R"] for r in rows] == [10.0, 100.0]
    summary = json.loads((out / "witness_summary.json").read_text())
    assert summary["group"] == "SU(2)"
    assert summary["checks"]["growth_linear_in_R"] is True


def test_timings_fill_wall_ms(tmp_path):
    out = tmp_path / "witness"
    assert main(["witness", "--timings", "--out", str(out)]) == 0
    assert json.loads((out / "manifest.json").read_text())["wall_ms"] > 0


def test_table_schedule_sweep_from_flags(tmp_path):
    out = tmp_path / "table"
    code = main(["defect", "translation", "--N-list", "16 32 64", "--M", "100", "--out", str(out),
                 "--set", "schedule.kind=table", "--set", "schedule.table=16:4 32:6 64:9"])
    assert code == 0
    reports = pd.read_csv(out / "translation_reports.csv")
    assert list(reports["R"]) == [4.0, 6.0, 9.0]
    assert reports["alpha"].isna().all()


def test_table_schedule_missing_N_exits_2(tmp_path):
    out = tmp_path / "table"
    code = main(["defect", "translation", "--N-list", "16 32 64", "--M", "100", "--out", str(out),
                 "--set", "schedule.kind=table", "--set", "schedule.table=16:4 32:6"])
    assert code == 2
    assert not out.exists()


def test_witness_off_axis_direction(tmp_path):
    out = tmp_path / "witness"
    assert main(["witness", "--out", str(out), "--set", "witness.y=1 1 0"]) == 0
    summary = json.loads((out / "witness_summary.json").read_text())
    assert summary["checks"]["growth_linear_in_R"] is True


def test_witness_direction_of_wrong_length_exits_2(tmp_path):
    out = tmp_path / "witness"
    assert main(["witness", "--out", str(out), "--set", "witness.y=1 1"]) == 2
    assert not out.exists()
