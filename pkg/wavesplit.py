#!/usr/bin/env python3
# wavesplit.py
"""
Command-line entry point.

    wavesplit simulate  --config scenario.toml [--out DIR]
    wavesplit calibrate --config scenario.toml [--out DIR] [--trials N]
    wavesplit diagnose  --config scenario.toml [--out DIR] [--calibration FILE]
    wavesplit sweep     --config scenario.toml --axis NAME --values v1,v2,... [--workers N]

Exit codes: 0 success, 2 config error, 3 precondition violation, 4 I/O failure.
"""
import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from dotenv import load_dotenv

from data_access import RunsDatabase
from diagnose import (
    DIRECTED_MODES,
    STENCIL_MATCH_TOL,
    closed_loop_errors,
    left_residual,
    mode_track,
    mode_weights_functional,
    report_to_json,
    right_residual,
    run_diagnostics,
    waveform_csv,
)
from grid_ops import ANTIDERIVATIVE_MEAN_TOL
from observe import (
    MIN_CALIBRATION_TRIALS,
    PURITY_TOLERANCE,
    CalibrationResult,
    calibrate_delta,
    clean_samples,
    series_to_csv,
    synthesize,
)
from projectors import (
    COMPONENT_NAMES,
    Mode,
    SystemKind,
    commutator_norm,
    hyperbolic_idempotency_residual,
    projector_residuals,
)
from propagate import CHARACTERISTIC_STEP_FRACTION, SEAM_TOLERANCE, evolve
from runs_schema import setup_runs_database
from scenario_config import GUARD_WIDTHS, SWEEP_AXES, ScenarioConfig, load_config
from splines import BISECTION_STEPS, LAMBDA_RANGE
from utils import (
    TOOLKIT_VERSION,
    ConfigError,
    OutputStage,
    PreconditionError,
    WavesplitError,
    config_digest,
    csv_text,
    exit_code_for,
    format_number,
    get_calibration_trials,
    get_output_dir,
    get_runs_db_path,
    get_workers,
    json_text,
    setup_logger,
)

# Load environment variables
load_dotenv()

# Configure logging
logger = setup_logger('wavesplit')

COMMANDS = ("simulate", "calibrate", "diagnose", "sweep")
# Lowest nonzero wavenumbers at which sweeps evaluate the acoustic projector symbols
PROJECTOR_WAVENUMBERS = 8

TOLERANCES = {
    "seam_tolerance": SEAM_TOLERANCE,
    "guard_widths": GUARD_WIDTHS,
    "purity_tolerance": PURITY_TOLERANCE,
    "antiderivative_mean_tol": ANTIDERIVATIVE_MEAN_TOL,
    "stencil_match_tol": STENCIL_MATCH_TOL,
    "characteristic_step_fraction": CHARACTERISTIC_STEP_FRACTION,
    "min_calibration_trials": MIN_CALIBRATION_TRIALS,
    "spline_lambda_range": list(LAMBDA_RANGE),
    "spline_bisection_steps": BISECTION_STEPS,
}


def build_manifest(config: ScenarioConfig, command: str, arguments: Dict[str, Any],
                   files: Sequence[str]) -> Dict[str, Any]:
    """Everything needed to re-run a command: config echo, arguments, version, tolerances"""
    return {
        "toolkit_version": TOOLKIT_VERSION,
        "command": command,
        "scenario": config.name,
        "config_digest": config_digest(config.to_dict()),
        "config": config.to_dict(),
        "arguments": arguments,
        "tolerances": dict(TOLERANCES),
        "files": sorted(files),
    }


def resolve_output_dir(config: ScenarioConfig, out: Optional[str]) -> str:
    """--out wins over output.directory, which wins over WAVESPLIT_OUTPUT_DIR/<scenario>"""
    if out:
        return out
    if config.output.directory:
        return config.output.directory
    return os.path.join(get_output_dir(), config.name)


def state_csv(state) -> str:
    header = ["x"] + list(COMPONENT_NAMES[state.system])
    return csv_text(header, np.column_stack([state.grid.x] + [c.values for c in state.components]))


def cmd_simulate(config: ScenarioConfig, out_dir: str) -> Dict[str, Any]:
    """
    Evolve the scenario and store its frames.

    Writes state_<i>.csv per frame, norms.csv and manifest.json.
    """
    times = config.simulation_times()
    logger.info(f"Simulating {config.system.value} scenario {config.name!r} over {len(times)} frames")
    result = evolve(config.build_initial_state(), times)

    header = ["t", "norm"]
    columns = [result.times, result.norms]
    if result.energy_parts is not None:
        header += ["E_a", "E_s"]
        columns += [result.energy_parts["E_a"], result.energy_parts["E_s"]]

    with OutputStage(out_dir) as stage:
        width = len(str(len(result.states) - 1))
        for index, state in enumerate(result.states):
            stage.write_text(f"state_{index:0{width}d}.csv", state_csv(state))
        stage.write_text("norms.csv", csv_text(header, np.column_stack(columns)))
        stage.write_text("manifest.json", json_text(build_manifest(
            config, "simulate", {}, stage.files + ["manifest.json"]
        )))

    norm0 = float(result.norms[0])
    drift = float(np.max(np.abs(result.norms - norm0)) / norm0) if norm0 > 0 else 0.0
    logger.info(f"Wrote {len(result.states)} frames to {out_dir} (relative norm drift {drift:.3e})")
    return {"frames": len(result.states), "norm_drift": drift}


def _require_right_pulses(config: ScenarioConfig):
    for index, pulse in enumerate(config.pulses):
        if pulse.mode is not Mode.RIGHT:
            raise ConfigError(
                f"pulses[{index}].mode: calibration needs a pure right-wave scenario, got {pulse.mode.value}"
            )


def cmd_calibrate(config: ScenarioConfig, trials: int, out_dir: str) -> Dict[str, Any]:
    """Measure the baseline residual delta of a pure right-wave scenario; writes calibration.json"""
    _require_right_pulses(config)
    if trials < MIN_CALIBRATION_TRIALS:
        raise ConfigError(f"--trials: at least {MIN_CALIBRATION_TRIALS} are required, got {trials}")
    calibration = calibrate_delta(config.build_initial_state(), config.plan, trials, config.settings)

    with OutputStage(out_dir) as stage:
        stage.write_text("calibration.json", json_text(calibration.to_dict()))
        stage.write_text("manifest.json", json_text(build_manifest(
            config, "calibrate", {"trials": trials}, stage.files + ["manifest.json"]
        )))
    logger.info(f"Wrote calibration.json to {out_dir}")
    return {"delta": calibration.delta, "trials": trials}


def load_calibration(path: str) -> CalibrationResult:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            payload = json.load(handle)
    except FileNotFoundError as e:
        raise ConfigError(f"--calibration: file {path} not found (run 'wavesplit calibrate' first)") from e
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"--calibration: cannot read {path}: {e}") from e
    try:
        return CalibrationResult.from_dict(payload)
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"--calibration: {path} is not a calibration file: {e}") from e


def gnuplot_script(modes: Sequence[Mode], components: int) -> str:
    """Plot script for the emitted data files; renders nothing by itself"""
    lines = [
        "# gnuplot script for the wavesplit plot data",
        "set datafile separator ','",
        "set key autotitle columnhead",
        "set xlabel 't'",
        "set terminal pngcairo size 900,600",
        "",
        "set output 'series.png'",
        "plot " + ", ".join(f"'series.csv' using 1:{j + 2} with lines" for j in range(components)),
        "",
        "set output 'projections.png'",
        "plot 'projections.csv' using 1:2 with lines, '' using 1:3 with lines",
    ]
    if modes:
        lines += ["", "set output 'reconstruction.png'"]
        curves = []
        for index, _ in enumerate(modes):
            curves.append(f"'reconstruction.csv' using 1:{2 * index + 2} with lines")
            curves.append(f"'' using 1:{2 * index + 3} with points pointsize 0.4")
        lines.append("plot " + ", ".join(curves))
    return "\n".join(lines) + "\n"


def cmd_diagnose(config: ScenarioConfig, calibration_path: str, out_dir: str) -> Dict[str, Any]:
    """
    Truth simulation, measurement synthesis, detection, reconstruction and localisation.

    Writes report.json, waveform.csv, series.csv and manifest.json; with
    output.emit_plots also projections.csv, reconstruction.csv and plot.gp.
    """
    calibration = load_calibration(calibration_path)
    initial = config.build_initial_state()
    series = synthesize(initial, config.plan)
    report = run_diagnostics(series, calibration, config.params, config.settings)

    with OutputStage(out_dir) as stage:
        stage.write_text("report.json", report_to_json(report))
        stage.write_text("waveform.csv", waveform_csv(report, series.times))
        stage.write_text("series.csv", series_to_csv(series))
        if config.output.emit_plots:
            tracks = [mode_track(series, mode, config.params, config.settings) for mode in DIRECTED_MODES]
            stage.write_text("projections.csv", csv_text(
                ["t"] + [mode.value for mode in DIRECTED_MODES], np.column_stack([series.times] + tracks)
            ))
            truth = replace(series, phi=clean_samples(initial, config.plan), noise_sigma=0.0)
            modes = [mode for mode in DIRECTED_MODES if mode in report.waveform]
            header = ["t"]
            columns = [series.times]
            for mode in modes:
                header += [mode.value, f"{mode.value}_truth"]
                columns += [report.waveform[mode](series.times),
                            mode_track(truth, mode, config.params, config.settings)]
            stage.write_text("reconstruction.csv", csv_text(header, np.column_stack(columns)))
            stage.write_text("plot.gp", gnuplot_script(modes, series.components))
        stage.write_text("manifest.json", json_text(build_manifest(
            config, "diagnose", {"calibration": calibration.to_dict()}, stage.files + ["manifest.json"]
        )))

    logger.info(f"Wrote diagnostics for {config.name!r} to {out_dir}")
    summary = {
        "detected": [mode.value for mode in report.detected],
        "arrival_time": report.arrival_time,
        "source_position": report.source_position,
    }
    if config.system is SystemKind.STRING and report.dominant_mode is not None:
        dominant = report.dominant_mode
        try:
            loop = closed_loop_errors(series, report.waveform[dominant], dominant, config.params, config.grid)
        except PreconditionError as e:
            logger.warning(f"Closed-loop check skipped: {e}")
        else:
            logger.info(
                f"Closed loop: re-measured series differs by {loop['loop_error']:.4g} "
                f"(reconstruction error {loop['reconstruction_error']:.4g})"
            )
            summary["closed_loop"] = loop
    return summary


def sweep_metrics(config: ScenarioConfig) -> Dict[str, float]:
    """Residual and ratio columns of one sweep point"""
    initial = config.build_initial_state()
    result = evolve(initial, config.simulation_times())
    norm0 = float(result.norms[0])
    metrics = {
        "norm_drift": float(np.max(np.abs(result.norms - norm0)) / norm0) if norm0 > 0 else 0.0,
    }
    if config.system is SystemKind.HYPERBOLIC:
        metrics["commutator_norm"] = commutator_norm(config.params, config.grid)
        metrics["idempotency"] = hyperbolic_idempotency_residual(config.params, config.grid)
    elif config.system is SystemKind.ACOUSTIC:
        k = config.grid.wavenumbers[1:PROJECTOR_WAVENUMBERS + 1]
        residuals = projector_residuals(config.params, k)
        metrics["idempotency"] = residuals["idempotency"]
        metrics["eigen"] = residuals["eigen"]
        metrics["completeness"] = residuals["completeness"]

    series = synthesize(initial, config.plan)
    metrics["residual_left"] = left_residual(series, config.params, config.settings)
    metrics["residual_right"] = right_residual(series, config.params, config.settings)
    weights = mode_weights_functional(series, config.params, config.settings)
    metrics["alpha_hat"] = weights["alpha_hat"]
    metrics["beta_hat"] = weights["beta_hat"]
    return metrics


def _sweep_point(raw: Dict[str, Any]) -> Dict[str, float]:
    # re-parsed in the worker so only plain data crosses the process boundary
    from scenario_config import parse_config
    return sweep_metrics(parse_config(raw))


def parse_values(text: Optional[str]) -> List[float]:
    if text is None:
        raise ConfigError("--values: required for sweep")
    items = [item.strip() for item in text.split(",") if item.strip()]
    if not items:
        raise ConfigError("--values: at least one value is required")
    values = []
    for item in items:
        try:
            values.append(float(item))
        except ValueError as e:
            raise ConfigError(f"--values: {item!r} is not a number") from e
    return values


def sweep_csv(axis: str, values: Sequence[float], rows: Sequence[Dict[str, float]]) -> str:
    """One row per value; each metric gets a <name>_ratio column holding previous/current"""
    names = list(rows[0])
    header = [axis] + names + [f"{name}_ratio" for name in names]
    lines = [",".join(header)]
    for index, (value, row) in enumerate(zip(values, rows)):
        cells = [format_number(value)] + [format_number(row[name]) for name in names]
        for name in names:
            if index == 0 or row[name] == 0:
                cells.append("")
            else:
                cells.append(format_number(rows[index - 1][name] / row[name]))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def cmd_sweep(config: ScenarioConfig, axis: str, values: Sequence[float], out_dir: str,
              workers: int = 1) -> Dict[str, Any]:
    """
    Run the scenario once per axis value; points are independent and may run in parallel.

    Writes point_<i>/metrics.json, sweep.csv (input order) and manifest.json.
    """
    if not values:
        raise ConfigError("--values: at least one value is required")
    if axis not in SWEEP_AXES:
        raise ConfigError(f"--axis: unknown sweep axis {axis!r} (expected one of {', '.join(SWEEP_AXES)})")
    if workers < 1:
        raise ConfigError(f"--workers: must be at least 1, got {workers}")
    # every point is validated before any of them runs
    points = [config.with_value(axis, value) for value in values]
    logger.info(f"Sweeping {axis} over {len(points)} values with {workers} worker(s)")

    raws = [point.to_dict() for point in points]
    if workers > 1 and len(points) > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            rows = list(executor.map(_sweep_point, raws))
    else:
        rows = [sweep_metrics(point) for point in points]

    with OutputStage(out_dir) as stage:
        width = len(str(len(points) - 1))
        for index, (value, row) in enumerate(zip(values, rows)):
            stage.write_text(os.path.join(f"point_{index:0{width}d}", "metrics.json"),
                             json_text({"axis": axis, "value": value, "metrics": row}))
        stage.write_text("sweep.csv", sweep_csv(axis, values, rows))
        stage.write_text("manifest.json", json_text(build_manifest(
            config, "sweep", {"axis": axis, "values": list(values)}, stage.files + ["manifest.json"]
        )))
    logger.info(f"Wrote sweep.csv with {len(rows)} rows to {out_dir}")
    return {"axis": axis, "values": list(values), "rows": rows}


def record_run(command: str, config: ScenarioConfig, status: str, exit_code: int, out_dir: Optional[str],
               summary: Dict[str, Any]):
    """Append the run to the SQLite ledger when RUNS_DB_PATH is set"""
    db_path = get_runs_db_path()
    if not db_path:
        return
    try:
        setup_runs_database(db_path)
        db = RunsDatabase(db_path)
        run_id = db.record_run(command, config.name, config_digest(config.to_dict()), status, exit_code,
                               out_dir, json.dumps(summary, sort_keys=True, default=str))
        if command == "sweep" and status == "ok":
            db.record_sweep(run_id, summary["axis"], [
                (index, value, json.dumps(row, sort_keys=True))
                for index, (value, row) in enumerate(zip(summary["values"], summary["rows"]))
            ])
        logger.debug(f"Recorded run {run_id} in {db_path}")
    except Exception as e:
        logger.warning(f"Could not record the run in {db_path}: {e}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wavesplit", description="Directed-wave diagnostics toolkit")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="Scenario TOML file")
    parser.add_argument("--out", help="Output directory")
    parser.add_argument("--trials", type=int, help="Calibration trials (default CALIBRATION_TRIALS)")
    parser.add_argument("--axis", help="Sweep axis: " + ", ".join(SWEEP_AXES))
    parser.add_argument("--values", help="Comma-separated sweep values")
    parser.add_argument("--calibration", help="calibration.json for diagnose (default <out>/calibration.json)")
    parser.add_argument("--workers", type=int, help="Parallel sweep points (default WAVESPLIT_WORKERS)")
    return parser


def run_command(args: argparse.Namespace, config: ScenarioConfig, out_dir: str) -> Dict[str, Any]:
    if args.command == "simulate":
        return cmd_simulate(config, out_dir)
    if args.command == "calibrate":
        trials = args.trials if args.trials is not None else get_calibration_trials()
        return cmd_calibrate(config, trials, out_dir)
    if args.command == "diagnose":
        calibration = args.calibration or os.path.join(out_dir, "calibration.json")
        return cmd_diagnose(config, calibration, out_dir)
    if not args.axis:
        raise ConfigError("--axis: required for sweep")
    workers = args.workers if args.workers is not None else get_workers()
    return cmd_sweep(config, args.axis, parse_values(args.values), out_dir, workers)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    config = None
    out_dir = None
    try:
        config = load_config(args.config)
        out_dir = resolve_output_dir(config, args.out)
        logger.info(f"Starting {args.command} for scenario {config.name!r}")
        summary = run_command(args, config, out_dir)
        record_run(args.command, config, "ok", 0, out_dir, summary)
        return 0
    except WavesplitError as e:
        code = exit_code_for(e)
        logger.error(f"{args.command} failed: {e}")
        if config is not None:
            record_run(args.command, config, "failed", code, out_dir, {"error": str(e)})
        return code


if __name__ == "__main__":
    sys.exit(main())
