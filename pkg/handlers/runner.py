"""
Experiment runner for dirac-loc
Dispatches a command, writes its data file, plot data and manifest, and maps
failures to exit codes
"""

from pathlib import Path
import logging
import time

import numpy as np

from config import CODE_VERSION
from handlers.experiment import ExperimentConfig, load_experiment
from handlers.green import green_command, ildse_command
from handlers.group import group_check_command
from handlers.lie import critical_command, lie_command, threshold_command
from handlers.lyapunov import ldp_command, lyapunov_command, scan_command
from handlers.spectrum import ids_command, thouless_command, wegner_command
from services.errors import ConfigError, DiracLocError, NumericalError
from storage import CommandResult, emit_plot_data, format_value, task_hashes, write_manifest, write_table
from templates.headers import data_header

logger = logging.getLogger(__name__)

COMMAND_HANDLERS = {
    "lyapunov": lyapunov_command,
    "scan": scan_command,
    "lie": lie_command,
    "threshold": threshold_command,
    "critical": critical_command,
    "ids": ids_command,
    "thouless": thouless_command,
    "green": green_command,
    "ildse": ildse_command,
    "ldp": ldp_command,
    "wegner": wegner_command,
    "group-check": group_check_command,
}


def output_names(command: str) -> tuple:
    return f"{command}.csv", f"{command}.manifest"


def write_outputs(config: ExperimentConfig, result: CommandResult, wall_time: float) -> dict:
    """Data file, plot files and manifest; returns the manifest entries."""
    data_name, manifest_name = output_names(config.command)
    out = Path(config.output_path)
    summary = {key: format_value(value) for key, value in result.summary.items()}
    model = {key: format_value(value) for key, value in config.model.describe().items()}

    header = data_header(config.command, config.seed, model, manifest_name, summary)
    data_sha = write_table(out / data_name, result.table, header)

    entries = {
        "command": config.command,
        "code_version": CODE_VERSION,
        "seed": str(config.seed),
        **{f"config_{key}": value for key, value in sorted(config.values.items())},
        "workers": str(config.workers),
        "wall_time": f"{wall_time:.3f}",
        "data_file": data_name,
        "data_sha256": data_sha,
        **{f"task_sha256_{k}": digest for k, digest in enumerate(task_hashes(result.table))},
        **{f"result_{key}": value for key, value in summary.items()},
    }
    for kind, table in result.plots:
        path = emit_plot_data(table, kind, out / f"{config.command}_{kind}.dat", manifest_name)
        entries[f"plot_{kind}"] = path.name
    write_manifest(out / manifest_name, entries)
    return entries


def execute(config: ExperimentConfig) -> dict:
    start = time.perf_counter()
    logger.info(f"Running {config.command} with seed {config.seed} on {config.workers} workers")
    try:
        result = COMMAND_HANDLERS[config.command](config)
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"Linear algebra failure: {e}")
    entries = write_outputs(config, result, time.perf_counter() - start)
    logger.info(f"Finished {config.command} in {entries['wall_time']} s")
    return entries


def run(command: str, config_path, seed: int | None = None, out=None) -> int:
    """Run one command end to end; returns the process exit code."""
    try:
        execute(load_experiment(command, config_path, seed, out))
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return e.exit_code
    except DiracLocError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    return 0
