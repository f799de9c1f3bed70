import json
import math

import numpy as np
import pytest

from anmloc import bench
from anmloc.bench import (ConfigError, ExperimentConfig, TrialRecord, load_config, median_abs, rmse, run_experiment,
                          summarize, trial_seed)
from anmloc.cli import main
from anmloc.geometry import reference_scene
from anmloc.signal import SystemConfig


def small_config(**kw):
    d = {
        "system": {"fc_hz": 60e9, "bw_hz": 100e6, "n_sub": 7, "n_rx": 8, "n_tx": 8, "n_pilot": 8, "n_nlos": 1},
        "scene": {"bs_m": [0, 0], "target_m": [6.0, 2.0], "orientation_rad": 0.3, "scatterers_m": [[3.0, 4.0]]},
        "snr_db": [20],
        "trials": 2,
        "seed": 7,
    }
    d.update(kw)
    return d


def test_defaults_reproduce_reference_setup():
    cfg = load_config()
    assert cfg.system == SystemConfig()
    assert cfg.scene == reference_scene()
    assert cfg.snr_db == [0, 5, 10, 15, 20]
    assert cfg.trials == 50
    assert cfg.solver.epsilon_scale == bench.DEFAULT_EPSILON_SCALE


def test_config_round_trip():
    cfg = ExperimentConfig.from_dict(small_config(snr_db=[10, "inf"]))
    again = ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg
    assert math.isinf(again.snr_db[1])


@pytest.mark.parametrize("patch", [{"trials": 0}, {"snr_db": []}, {"weighting": "flat"}, {"system": {}},
                                   {"scene": {"bs_m": [0, 0], "target_m": [6, 2], "orientation_rad": 0.3}}])
def test_config_errors(patch):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(small_config(**patch))


def test_seed_scheme_independent_of_grid_order():
    a = trial_seed(5, 10.0, 3).generate_state(4)
    b = trial_seed(5, 10.0, 3).generate_state(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, trial_seed(5, 15.0, 3).generate_state(4))
    assert not np.array_equal(a, trial_seed(5, 10.0, 4).generate_state(4))
    assert not np.array_equal(a, trial_seed(6, 10.0, 3).generate_state(4))


def _rec(snr, err, status="ok"):
    return TrialRecord(snr, 0, 0, status, toa_err=[err], aod_err=[err], aoa_err=[err], pos_err={"hessian": err},
                       ori_err={"hessian": err})


def test_summarize_single_and_symmetric():
    (row,) = summarize([_rec(10, 0.3)])
    assert row["rmse_toa"] == pytest.approx(0.3)
    (row,) = summarize([_rec(10, 0.3), _rec(10, -0.3)])
    assert row["rmse_aod"] == pytest.approx(0.3)
    assert row["median_abs_aod"] == pytest.approx(0.3)


def test_summarize_hand_computed_and_exclusions():
    errs = [1.0, -2.0, 3.0, 0.5]
    recs = [_rec(5, e) for e in errs] + [_rec(5, math.nan, "failed")]
    (row,) = summarize(recs)
    # sqrt((1 + 4 + 9 + 0.25) / 4) and median(|e|) = (1 + 2) / 2
    assert row["rmse_pos_hessian"] == pytest.approx(math.sqrt(14.25 / 4))
    assert row["median_abs_pos_hessian"] == pytest.approx(1.5)
    assert row["n_ok"] == 4 and row["n_failed"] == 1


def test_summarize_omits_empty_point(caplog):
    rows = summarize([_rec(0, 0.0, "failed"), _rec(5, 0.1)])
    assert [r["snr_db"] for r in rows] == [5]
    assert "no successful trials" in caplog.text


def test_rmse_helpers():
    assert rmse([3.0, -4.0]) == pytest.approx(math.sqrt(12.5))
    assert median_abs([-1.0, 2.0, -3.0]) == 2.0
    assert math.isnan(rmse([]))


def test_noiseless_single_trial(tmp_path):
    cfg = ExperimentConfig.from_dict(small_config(snr_db=["inf"], trials=1))
    records, rows = run_experiment(cfg, str(tmp_path))
    (rec,) = records
    assert rec.ok, rec.message
    assert max(abs(e) for e in rec.toa_err) < 1e-4 * cfg.system.delay_span
    assert max(abs(e) for e in rec.aod_err + rec.aoa_err) < 1e-4
    assert rec.pos_err["hessian"] < 1e-3
    assert rows[0]["rmse_pos_hessian"] < 1e-3
    for name in ("trials.csv", "aggregate.csv", "timing.csv", "manifest.json"):
        assert (tmp_path / name).exists()
    header = (tmp_path / "aggregate.csv").read_text().splitlines()[0]
    assert "rmse_toa[s]" in header and "rmse_pos_hessian[m]" in header and "rmse_aod[rad]" in header


def test_same_seed_byte_identical(tmp_path):
    cfg = ExperimentConfig.from_dict(small_config(extra_weightings=["identity"]))
    run_experiment(cfg, str(tmp_path / "a"))
    run_experiment(cfg, str(tmp_path / "b"))
    for name in ("trials.csv", "aggregate.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert len(manifest["trial_seeds"]) == 2
    assert manifest["code_version"]


def test_failed_trial_recorded(tmp_path):
    # a delay beyond the observable span makes every trial fail
    cfg = ExperimentConfig.from_dict(small_config(scene={"bs_m": [0, 0], "target_m": [60.0, 2.0],
                                                         "orientation_rad": 0.3, "scatterers_m": [[3.0, 4.0]]},
                                                  trials=1))
    records, rows = run_experiment(cfg, str(tmp_path))
    assert records[0].status == "failed"
    assert records[0].error_class == "DelayRangeError"
    assert rows == []
    assert "DelayRangeError" in (tmp_path / "trials.csv").read_text()


def test_cli_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(small_config(trials=0)))
    assert main(["run", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert main(["crlb", "--config", str(tmp_path / "missing.json")]) == 2
    (tmp_path / "garbled.json").write_text("{")
    assert main(["crlb", "--config", str(tmp_path / "garbled.json")]) == 2
    assert "config error" in capsys.readouterr().err


def test_cli_crlb(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(small_config(snr_db=[0, 10, 20])))
    out = tmp_path / "bounds.csv"
    assert main(["crlb", "--config", str(cfg), "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("snr_db,crlb_toa[s]")
    pos = [float(line.split(",")[4]) for line in lines[1:]]
    assert pos[0] > pos[1] > pos[2]


def test_cli_run_seed_override(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(small_config(snr_db=["inf"], trials=1)))
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o"), "--seed", "11"]) == 0
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["config"]["seed"] == 11
    assert "rmse_pos_hessian[m]" in capsys.readouterr().out
