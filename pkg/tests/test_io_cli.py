import json

import numpy as np
import pytest

from dcflex import io as rio
from dcflex import plotting
from dcflex.cli import (EXIT_INFEASIBLE, EXIT_INPUT, EXIT_OK, EXIT_SOLVER, InputError, main, parse_dp_grid,
                        parse_t0_grid)
from dcflex.config import dump_facility_config, replace


@pytest.fixture(scope="module")
def opt_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("opt")
    assert main(["optimise", "--out", str(out)]) == EXIT_OK
    return out


def test_help_lists_flags(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["flex", "--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    for flag in ("--baseline-dir", "--t0-grid", "--dp-grid", "--jobs", "--verify-linear-scan", "--config",
                 "--tables"):
        assert flag in text


def test_base_prints_cost(tmp_path, capsys):
    assert main(["base", "--out", str(tmp_path)]) == EXIT_OK
    line = capsys.readouterr().out.strip().splitlines()[-1]
    key, val = line.split()
    assert key == "total_base_cost_gbp" and 1600 < float(val) < 1720
    rio.validate_csv(tmp_path / "base_schedule.csv", "schedule")
    man = json.loads((tmp_path / rio.MANIFEST_NAME).read_text())
    assert set(man["files"]) == {"base_schedule.csv", "base_utilisation.csv"}
    assert man["anomalies"]  # configured overhead differs from the recomputed one


def test_missing_table_is_input_error(tmp_path, capsys):
    code = main(["base", "--out", str(tmp_path / "o"), "--tables", str(tmp_path)])
    assert code == EXIT_INPUT
    assert code not in (EXIT_INFEASIBLE, EXIT_SOLVER)
    assert "workload table missing" in capsys.readouterr().err


def test_infeasible_plant_is_solver_exit(tmp_path, cfg):
    weak = replace(cfg, cooling={"p_chiller_max_kw": 40.0, "q_tes_ch_max_kw": 100.0})
    path = tmp_path / "weak.toml"
    dump_facility_config(weak, path)
    assert main(["base", "--out", str(tmp_path / "o"), "--config", str(path)]) == EXIT_INFEASIBLE


def test_flex_needs_baseline(tmp_path):
    assert main(["flex", "--out", str(tmp_path), "--baseline-dir", str(tmp_path)]) == EXIT_INPUT


def test_optimise_outputs_validate(opt_dir):
    for name, kind in (("schedule.csv", "schedule"), ("base_schedule.csv", "schedule"),
                       ("shift_histogram.csv", "shift_histogram"), ("utilisation.csv", "utilisation"),
                       ("cost_summary.csv", "cost_summary")):
        rio.validate_csv(opt_dir / name, kind)
    man = json.loads((opt_dir / rio.MANIFEST_NAME).read_text())
    for f, digest in man["files"].items():
        assert rio.file_sha256(opt_dir / f) == digest
    assert {"cost_comparison.svg", "decomposition.svg", "shift_histogram.svg"} <= set(man["files"])
    assert man["n_segments"] == 16 and man["linearization_max_abs_error_kw"] < 2.0


def test_schedule_columns_match_interface():
    assert rio.schema_columns("schedule") == [
        "slot", "price_gbp_per_mwh", "p_grid_it_kw", "p_grid_od_kw", "p_ups_ch_kw", "p_ups_disch_kw",
        "p_chil_crac_kw", "p_chil_tes_kw", "e_ups_kwh", "e_tes_kwh", "t_it_c", "t_r_c", "t_ca_c", "t_ha_c",
        "t_ain_c"]
    assert rio.schema_columns("heatmap") == ["t0_slot", "delta_p_kw", "tau_hours", "status"]
    assert rio.schema_columns("breakdown") == ["slot", "d_it_kw", "d_ups_kw", "d_crac_kw", "d_tes_kw",
                                               "d_total_kw"]


def test_schema_validation_catches_bad_rows(tmp_path):
    p = tmp_path / "h.csv"
    p.write_text("t0_slot,delta_p_kw,tau_hours,status\n1,-100,0.5,maybe\n")
    with pytest.raises(rio.SchemaError):
        rio.validate_csv(p, "heatmap")
    p.write_text("t0,delta_p_kw,tau_hours,status\n")
    with pytest.raises(rio.SchemaError):
        rio.validate_csv(p, "heatmap")


def test_baseline_json_round_trip(opt_dir, tmp_path):
    sol = rio.load_solution(opt_dir / rio.BASELINE_JSON)
    rio.save_solution(sol, tmp_path / "again.json")
    assert (tmp_path / "again.json").read_bytes() == (opt_dir / rio.BASELINE_JSON).read_bytes()
    assert sol.slots == range(108) and sol.e_ups_kwh.shape == (109,)


def test_replotting_is_byte_identical(opt_dir, tmp_path):
    plotting.plot_decomposition(opt_dir / "schedule.csv", tmp_path / "a.svg")
    plotting.plot_decomposition(opt_dir / "schedule.csv", tmp_path / "b.svg")
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()
    assert (tmp_path / "a.svg").read_bytes() == (opt_dir / "decomposition.svg").read_bytes()


def test_single_segment_records_larger_error(tmp_path, opt_dir):
    assert main(["optimise", "--out", str(tmp_path), "--segments", "1", "--no-plots"]) == EXIT_OK
    coarse = json.loads((tmp_path / rio.MANIFEST_NAME).read_text())
    fine = json.loads((opt_dir / rio.MANIFEST_NAME).read_text())
    assert coarse["linearization_max_abs_error_kw"] > 80 > fine["linearization_max_abs_error_kw"]


def test_flex_zero_deviation_reaches_cap(opt_dir, tmp_path, capsys):
    out = tmp_path / "fx"
    code = main(["flex", "--out", str(out), "--baseline-dir", str(opt_dir), "--t0-grid", "20,94",
                 "--dp-grid", "0", "--no-plots"])
    assert code == EXIT_OK
    rows = rio.read_csv(out / "heatmap.csv", "heatmap")
    assert list(rows["status"]) == ["horizon-capped", "horizon-capped"]
    assert list(rows["tau_hours"]) == [(108 - 12 - 20) * 0.25, (108 - 12 - 94) * 0.25]
    for f in out.glob("breakdown_*.csv"):
        rio.validate_csv(f, "breakdown")


def test_flex_with_linear_scan_check(opt_dir, tmp_path, capsys):
    out = tmp_path / "fx"
    code = main(["flex", "--out", str(out), "--baseline-dir", str(opt_dir), "--t0-grid", "16:00",
                 "--dp-grid=-100,100", "--verify-linear-scan"])
    assert code == EXIT_OK
    assert "linear_scan_check ok" in capsys.readouterr().out
    man = json.loads((out / rio.MANIFEST_NAME).read_text())
    assert man["linear_scan_check"]["mismatches"] == []
    assert "heatmap.svg" in man["files"]


def test_grid_parsers():
    assert parse_t0_grid("0:96:24") == [0, 24, 48, 72]
    assert parse_t0_grid("00:15,17:30,5") == [1, 70, 5]
    assert parse_dp_grid("-50:50:25") == [-50.0, -25.0, 0.0, 25.0, 50.0]
    assert parse_dp_grid("0") == [0.0]
    with pytest.raises(InputError):
        parse_t0_grid("00:10")
    with pytest.raises(InputError):
        parse_dp_grid("a,b")


def test_csv_writer_rejects_wrong_width(tmp_path):
    with pytest.raises(rio.SchemaError):
        rio.write_csv(tmp_path / "x.csv", "heatmap", [(1, 2.0, 3.0)])


def test_negative_zero_not_written(tmp_path):
    rio.write_csv(tmp_path / "z.csv", "cost_summary", [("x", -0.0), ("y", np.float64(-1e-12) * 0)])
    assert "-0.000000" not in (tmp_path / "z.csv").read_text()
