import json

import numpy as np
import pandas as pd
import pytest

from src.cli import config_from_dict, load_schedule, main, parse_config, run
from src.errors import ConfigError, ScheduleMismatchError


def make_dict(tmp_path, **overrides):
    data = {
        "protocol": "tea",
        "target": "w",
        "n_qubits": 3,
        "k_mhz": 1.0,
        "t_final_us": 0.05,
        "n_traj": 3,
        "seed": 42,
        "output_dir": str(tmp_path / "out"),
    }
    data.update(overrides)
    return data


def write_config(tmp_path, name="run.json", **overrides):
    path = tmp_path / name
    path.write_text(json.dumps(make_dict(tmp_path, **overrides)), encoding="utf-8")
    return path


def test_valid_config_maps_fields(tmp_path):
    """Keys in us and MHz land on the config with defaults filled in."""
    config = config_from_dict(make_dict(tmp_path, dt_us=5e-4, protocol="baseline-no-feedback"))
    assert config.method == "baseline"
    assert config.k == 1.0 and config.dt == 5e-4 and config.t_final == 0.05
    assert config.n_steps == 100
    assert config.observable == "symmetric" and config.representation == "auto"
    assert config.angle_grid is None and config.quadrature_order == 16


def test_tangle_config_defaults_and_grid_floor(tmp_path):
    """Tangle runs default to 128 angles and refuse fewer than 64."""
    config = config_from_dict(make_dict(tmp_path, protocol="tangle", target="ghz"))
    assert config.angle_grid == 128
    with pytest.raises(ConfigError) as exc:
        config_from_dict(make_dict(tmp_path, protocol="tangle", target="ghz", angle_grid=32))
    assert exc.value.key == "angle_grid"


def test_step_size_error_names_dt(tmp_path):
    """dt = 1 us at k = 1/us violates k dt <= 0.01."""
    with pytest.raises(ConfigError) as exc:
        config_from_dict(make_dict(tmp_path, dt_us=1.0, t_final_us=3.0))
    assert exc.value.key == "dt_us"
    assert "k·dt exceeds 0.01" in str(exc.value)


@pytest.mark.parametrize(
    "overrides, key",
    [
        ({"target": "dicke", "n_qubits": 5, "excitation": 7}, "excitation"),
        ({"excitation": 2}, "excitation"),
        ({"observable": "onebody-nonsym"}, "observable"),
        ({"n_qubits": True}, "n_qubits"),
        ({"n_qubits": 1}, "n_qubits"),
        ({"k_mhz": -1.0}, "k_mhz"),
        ({"protocol": "annealing"}, "protocol"),
        ({"representation": "sparse"}, "representation"),
        ({"global_check": "yes"}, "global_check"),
        ({"colour": "blue"}, "colour"),
        ({"t_final_us": 1e-4}, "t_final_us"),
    ],
)
def test_invalid_values_name_their_key(tmp_path, overrides, key):
    """Every rejection carries the offending key."""
    with pytest.raises(ConfigError) as exc:
        config_from_dict(make_dict(tmp_path, **overrides))
    assert exc.value.key == key


def test_missing_key_and_bad_json(tmp_path):
    """Missing required keys and malformed files are configuration errors."""
    data = make_dict(tmp_path)
    del data["seed"]
    with pytest.raises(ConfigError) as exc:
        config_from_dict(data)
    assert exc.value.key == "seed"
    broken = tmp_path / "broken.json"
    broken.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigError) as exc:
        parse_config(broken)
    assert exc.value.key == "config"


def test_aslo_writes_series_schedule_and_manifest(tmp_path):
    """aslo emits fidelity.csv, schedule.csv, the sidecar and manifest.json."""
    config = parse_config(write_config(tmp_path, protocol="aslo"))
    manifest = run("aslo", config)
    out = tmp_path / "out"
    assert (out / "fidelity.csv").read_text(encoding="utf-8").splitlines()[0] == "time_us,mean_fidelity,sem"
    assert (out / "schedule.csv").read_text(encoding="utf-8").splitlines()[0] == "time_us,a1,a2,recenter"
    meta = json.loads((out / "schedule.meta.json").read_text(encoding="utf-8"))
    assert meta["fingerprint"] == manifest.config_hash and meta["n_steps"] == 50
    assert len(pd.read_csv(out / "schedule.csv")) == 50
    written = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    assert sorted(written["artifacts"]) == ["fidelity.csv", "schedule.csv"]
    assert "max_abs_a2" in written["summary"] and "final_mean_fidelity" in written["summary"]
    assert written["n_aborted"] == 0


def test_schedule_replays_through_cli(tmp_path):
    """A saved schedule replays on its own config and is refused by another."""
    config = parse_config(write_config(tmp_path, protocol="aslo"))
    run("schedule", config)
    schedule_path = tmp_path / "out" / "schedule.csv"
    assert not (tmp_path / "out" / "fidelity.csv").exists()

    replay_config = parse_config(write_config(tmp_path, protocol="replay", output_dir=str(tmp_path / "replay")))
    manifest = run("replay", replay_config, schedule_path=schedule_path)
    assert manifest.n_aborted == 0
    assert "fidelity.csv" in manifest.artifacts

    other = parse_config(write_config(tmp_path, protocol="replay", k_mhz=2.0, output_dir=str(tmp_path / "x")))
    with pytest.raises(ScheduleMismatchError):
        run("replay", other, schedule_path=schedule_path)
    (tmp_path / "out" / "schedule.meta.json").unlink()
    with pytest.raises(ScheduleMismatchError):
        load_schedule(schedule_path)


def test_load_schedule_reads_recenter_column(tmp_path):
    """The recenter column is read back; a file without it replays with zero re-centring."""
    config = parse_config(write_config(tmp_path, protocol="aslo"))
    run("schedule", config)
    schedule_path = tmp_path / "out" / "schedule.csv"
    frame = pd.read_csv(schedule_path)
    loaded = load_schedule(schedule_path)
    assert np.array_equal(loaded.recenter, frame["recenter"].to_numpy())

    frame.drop(columns="recenter").to_csv(schedule_path, index=False)
    legacy = load_schedule(schedule_path)
    assert np.array_equal(legacy.recenter, np.zeros(len(frame)))
    assert np.allclose(legacy.a2, loaded.a2, rtol=1e-12, atol=0.0)


def test_runs_are_byte_reproducible(tmp_path):
    """Same config and seed give identical CSV digests."""
    first = run("tea", parse_config(write_config(tmp_path, output_dir=str(tmp_path / "a"))))
    second = run("tea", parse_config(write_config(tmp_path, output_dir=str(tmp_path / "b"))))
    assert first.artifacts == second.artifacts
    assert first.config_hash == second.config_hash


def test_main_exit_codes(tmp_path, monkeypatch):
    """0 on success, 1 on configuration errors."""
    monkeypatch.delenv("PAQS_SIM_WORKERS", raising=False)
    good = write_config(tmp_path, "good.json")
    assert main(["tea", "--config", str(good), "--workers", "1"]) == 0
    assert (tmp_path / "out" / "manifest.json").exists()

    bad = write_config(tmp_path, "bad.json", dt_us=1.0, t_final_us=3.0)
    assert main(["tea", "--config", str(bad), "--workers", "1"]) == 1
    assert main(["replay", "--config", str(good), "--workers", "1"]) == 1
    assert main(["tea", "--config", str(tmp_path / "absent.json")]) == 1
