"""Command-line entry point: paqs-sim <command> --config run.json

Commands:
  tea       trajectory-ensemble feedback       -> fidelity.csv
  aslo      averaged-state feedback            -> fidelity.csv, schedule.csv
  schedule  averaged-state schedule only       -> schedule.csv
  replay    schedule replay on trajectories    -> fidelity.csv   (needs --schedule)
  baseline  pre-rotation, measurement only     -> fidelity.csv
  tangle    three-tangle feedback, ghz(3)      -> fidelity.csv, tangle.csv, histogram.csv

Every run writes manifest.json with the config echo, its fingerprint and the
MD5 of each artifact. Schedules carry a <name>.meta.json sidecar holding the
fingerprint that replay checks.

Exit codes: 0 success, 1 configuration/physics/I-O error, 2 aborted trajectories.
"""

import argparse
import json
import logging
import time
from dataclasses import asdict, replace
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Union

import numpy as np
import pandas as pd

from src import __version__
from src.errors import ConfigError, EnsembleAbortedError, PaqsError, ScheduleMismatchError, StepSizeError
from src.protocols import (
    collapse_statistics,
    replay_schedule,
    resolve_workers,
    run_aslo,
    run_baseline,
    run_tea,
)
from src.tangle import HISTOGRAM_BINS, HISTOGRAM_SNAPSHOTS, TANGLE_GRID, run_tangle
from src.types import EnsembleStats, FeedbackSchedule, ProtocolConfig, RunManifest, StepParams
from src.utils import config_fingerprint, downsample, write_csv

logger = logging.getLogger(__name__)

COMMANDS = ("tea", "aslo", "schedule", "replay", "baseline", "tangle")
COMMAND_METHODS = {
    "tea": "tea",
    "aslo": "aslo",
    "schedule": "aslo",
    "replay": "aslo",
    "baseline": "baseline",
    "tangle": "tangle",
}
PROTOCOL_NAMES = {
    "tea": "tea",
    "aslo": "aslo",
    "schedule": "aslo",
    "replay": "aslo",
    "baseline": "baseline",
    "baseline-no-feedback": "baseline",
    "tangle": "tangle",
}
REQUIRED_KEYS = ("protocol", "target", "n_qubits", "k_mhz", "t_final_us", "n_traj", "seed", "output_dir")
OPTIONAL_KEYS = (
    "excitation", "observable", "dt_us", "representation",
    "global_check", "diagnostics", "quadrature_order", "angle_grid", "snapshots", "bins",
)
TARGETS = ("w", "dicke", "ghz")
OBSERVABLES = ("symmetric", "onebody-nonsym")
REPRESENTATIONS = ("auto", "full", "symmetric")
MIN_ANGLE_GRID = 16
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def _int(data: Dict[str, Any], key: str, minimum: int) -> int:
    value = data[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(key, f"must be an integer, got {value!r}")
    if value < minimum:
        raise ConfigError(key, f"must be >= {minimum}, got {value}")
    return value


def _positive(data: Dict[str, Any], key: str) -> float:
    value = data[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not np.isfinite(value) or value <= 0:
        raise ConfigError(key, f"must be a positive number, got {value!r}")
    return float(value)


def _choice(data: Dict[str, Any], key: str, choices: Sequence[str]) -> str:
    value = data[key]
    if value not in choices:
        raise ConfigError(key, f"must be one of {', '.join(choices)}, got {value!r}")
    return value


def _flag(data: Dict[str, Any], key: str) -> bool:
    value = data[key]
    if not isinstance(value, bool):
        raise ConfigError(key, f"must be true or false, got {value!r}")
    return value


def config_from_dict(data: Dict[str, Any]) -> ProtocolConfig:
    """Validate a decoded JSON config; every failure names its key."""
    if not isinstance(data, dict):
        raise ConfigError("config", "top level must be a JSON object")
    for key in data:
        if key not in REQUIRED_KEYS and key not in OPTIONAL_KEYS:
            raise ConfigError(key, "unknown key")
    for key in REQUIRED_KEYS:
        if key not in data:
            raise ConfigError(key, "missing required key")

    method = PROTOCOL_NAMES.get(data["protocol"])
    if method is None:
        raise ConfigError("protocol", f"unknown protocol {data['protocol']!r}")
    target = _choice(data, "target", TARGETS)
    n_qubits = _int(data, "n_qubits", 2)
    observable = _choice(data, "observable", OBSERVABLES) if "observable" in data else "symmetric"

    excitation = 1
    if "excitation" in data:
        excitation = _int(data, "excitation", 0)
    if target == "dicke" and not 0 <= excitation <= n_qubits:
        raise ConfigError("excitation", f"must lie in [0, {n_qubits}], got {excitation}")
    if target == "w" and excitation != 1:
        raise ConfigError("excitation", "w targets have exactly one excitation")
    if observable == "onebody-nonsym" and (target != "ghz" or n_qubits != 3):
        raise ConfigError("observable", "onebody-nonsym is defined for ghz with n_qubits = 3")

    k = _positive(data, "k_mhz")
    dt = _positive(data, "dt_us") if "dt_us" in data else 1e-3
    try:
        StepParams(dt=dt, k=k)
    except StepSizeError as exc:
        raise ConfigError("dt_us", str(exc))
    t_final = _positive(data, "t_final_us")
    if t_final < dt:
        raise ConfigError("t_final_us", f"shorter than one step ({dt} us)")

    output_dir = data["output_dir"]
    if not isinstance(output_dir, str) or not output_dir:
        raise ConfigError("output_dir", "must be a non-empty path string")

    default_grid = TANGLE_GRID if method == "tangle" else None
    angle_grid = _int(data, "angle_grid", MIN_ANGLE_GRID) if "angle_grid" in data else default_grid
    if method == "tangle" and angle_grid < 64:
        raise ConfigError("angle_grid", "tangle protocol needs at least 64 angles")

    return ProtocolConfig(
        method=method,
        target=target,
        n_qubits=n_qubits,
        excitation=excitation,
        observable=observable,
        k=k,
        dt=dt,
        t_final=t_final,
        n_traj=_int(data, "n_traj", 1),
        seed=_int(data, "seed", 0),
        representation=_choice(data, "representation", REPRESENTATIONS) if "representation" in data else "auto",
        output_dir=output_dir,
        global_check=_flag(data, "global_check") if "global_check" in data else False,
        diagnostics=_flag(data, "diagnostics") if "diagnostics" in data else False,
        angle_grid=angle_grid,
        quadrature_order=_int(data, "quadrature_order", 8) if "quadrature_order" in data else 16,
        snapshots=_int(data, "snapshots", 1) if "snapshots" in data else HISTOGRAM_SNAPSHOTS,
        bins=_int(data, "bins", 1) if "bins" in data else HISTOGRAM_BINS,
    )


def parse_config(path: Union[str, Path]) -> ProtocolConfig:
    """Read and validate a JSON run configuration.

    Raises:
      ConfigError: malformed JSON or any invalid key
      OSError: unreadable file
    """
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON: {exc}")
    return config_from_dict(data)


def _meta_path(schedule_path: Path) -> Path:
    return schedule_path.with_suffix(".meta.json")


def save_schedule(schedule: FeedbackSchedule, path: Union[str, Path]) -> Dict[str, str]:
    """schedule CSV at full resolution plus its fingerprint sidecar; returns artifact digests."""
    path = Path(path)
    digests = {path.name: write_csv(schedule.to_frame(), path)}
    meta = _meta_path(path)
    meta.write_text(json.dumps({"fingerprint": schedule.fingerprint, "n_steps": len(schedule.times)},
                               sort_keys=True) + "\n", encoding="utf-8")
    return digests


def load_schedule(path: Union[str, Path]) -> FeedbackSchedule:
    """Read a schedule CSV and its sidecar.

    Raises:
      ScheduleMismatchError: sidecar missing or columns malformed
    """
    path = Path(path)
    meta = _meta_path(path)
    if not meta.exists():
        raise ScheduleMismatchError(f"no fingerprint sidecar next to {path}")
    fingerprint = json.loads(meta.read_text(encoding="utf-8"))["fingerprint"]
    df = pd.read_csv(path)
    if list(df.columns) not in (["time_us", "a1", "a2"], ["time_us", "a1", "a2", "recenter"]):
        raise ScheduleMismatchError(f"unexpected schedule columns {list(df.columns)}")
    return FeedbackSchedule.from_frame(df, fingerprint)


def _write_series(frame: pd.DataFrame, path: Path, raw_steps: bool) -> str:
    return write_csv(frame if raw_steps else downsample(frame), path)


def _summary(stats: EnsembleStats) -> Dict[str, Any]:
    summary = {
        "final_mean_fidelity": float(stats.mean_fidelity[-1]),
        "final_sem": float(stats.sem[-1]),
        "n_traj": stats.n_traj,
        "large_angle_fraction": stats.large_angle_fraction,
    }
    if stats.success_probability is not None:
        summary["success_probability"] = stats.success_probability
    if stats.mean_tangle is not None:
        summary["final_mean_tangle"] = float(stats.mean_tangle[-1])
    summary.update(stats.diagnostics)
    return summary


def run(
    command: str,
    config: ProtocolConfig,
    workers: int = 1,
    schedule_path: Optional[Union[str, Path]] = None,
    raw_steps: bool = False,
) -> RunManifest:
    """Dispatch one command, write its artifacts and manifest.json into config.output_dir."""
    if command not in COMMANDS:
        raise ConfigError("command", f"unknown command {command!r}")
    config = replace(config, method=COMMAND_METHODS[command])
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    artifacts: Dict[str, str] = {}
    summary: Dict[str, Any] = {}
    stats: Optional[EnsembleStats] = None

    if command == "tea":
        stats = run_tea(config, workers)
    elif command == "baseline":
        stats = run_baseline(config, workers)
        p, p_sem = collapse_statistics(stats)
        summary.update({"collapse_probability": p, "collapse_sem": p_sem})
    elif command in ("aslo", "schedule"):
        aslo_stats, schedule = run_aslo(config)
        artifacts.update(save_schedule(schedule, out / "schedule.csv"))
        if command == "aslo":
            stats = aslo_stats
        summary["max_abs_a2"] = float(np.max(np.abs(schedule.a2))) if len(schedule.a2) else 0.0
    elif command == "replay":
        if schedule_path is None:
            raise ConfigError("schedule", "replay needs --schedule")
        stats = replay_schedule(load_schedule(schedule_path), config, workers)
    else:
        stats = run_tangle(config, workers)
        tangle_frame = stats.tangle_frame()
        artifacts["tangle.csv"] = _write_series(tangle_frame, out / "tangle.csv", raw_steps)
        artifacts["histogram.csv"] = write_csv(stats.histograms, out / "histogram.csv")

    if stats is not None:
        artifacts["fidelity.csv"] = _write_series(stats.to_frame(), out / "fidelity.csv", raw_steps)
        summary.update(_summary(stats))

    manifest = RunManifest(
        command=command,
        config=asdict(config),
        config_hash=config_fingerprint(config),
        version=__version__,
        wall_time_s=time.perf_counter() - start,
        artifacts=artifacts,
        n_aborted=stats.n_aborted if stats is not None else 0,
        summary=summary,
    )
    (out / "manifest.json").write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    for name in sorted(artifacts):
        logger.info("wrote %s (md5 %s)", out / name, artifacts[name])
    return manifest


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="paqs-sim",
        description="Continuous-measurement feedback simulations for W, Dicke and GHZ state generation.",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--workers", type=int, default=None,
                        help="worker processes (default: CPU count; PAQS_SIM_WORKERS overrides)")
    parser.add_argument("--schedule", default=None, help="schedule CSV for replay")
    parser.add_argument("--raw-steps", action="store_true", help="write every step instead of <= 2000 rows")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format=LOG_FORMAT)

    try:
        config = parse_config(args.config)
        workers = resolve_workers(args.workers)
        manifest = run(args.command, config, workers, args.schedule, args.raw_steps)
    except EnsembleAbortedError as exc:
        logger.error("%s failed: %s", args.command, exc)
        return 2
    except (PaqsError, OSError) as exc:
        logger.error("%s failed: %s", args.command, exc)
        return 1

    if manifest.n_aborted:
        logger.error("%d trajectories aborted", manifest.n_aborted)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
