"""
Lyapunov command handlers for dirac-loc
lyapunov, scan and ldp
"""

import logging

import numpy as np

from config import DEFAULT_BATCHES, DEFAULT_REORTH_PERIOD
from handlers.experiment import ExperimentConfig
from services.errors import ConfigError
from services.lyapunov import (
    FrameFlavor,
    degeneracy_residual,
    energy_scan,
    lagrangian_frame,
    ldp_probability,
    lyapunov_spectrum,
    symmetry_residual,
    upper_sum,
    vanishing_count,
)
from storage import CommandResult, Table
from templates.columns import data_columns

logger = logging.getLogger(__name__)


def _gamma_row(est) -> dict:
    row = {f"gamma_{p}": g for p, g in enumerate(est.gamma, start=1)}
    row.update({f"stderr_{p}": s for p, s in enumerate(est.stderr, start=1)})
    return row


def _estimator_options(config: ExperimentConfig) -> dict:
    return {
        "reorth_period": config.integer("reorth_period", DEFAULT_REORTH_PERIOD),
        "batches": config.integer("batches", DEFAULT_BATCHES),
    }


def lyapunov_command(config: ExperimentConfig) -> CommandResult:
    spec = config.model
    E = config.number("energy")
    est = lyapunov_spectrum(spec, E, config.steps, config.seed, **_estimator_options(config))

    table = Table(data_columns("lyapunov", spec.N))
    table.add(
        energy=E,
        **_gamma_row(est),
        symmetry_residual=symmetry_residual(est),
        degeneracy_residual=degeneracy_residual(est),
        vanishing=vanishing_count(est),
    )
    logger.info(f"Lyapunov spectrum at E={E}: {est.gamma}")
    return CommandResult(table=table)


def scan_command(config: ExperimentConfig) -> CommandResult:
    spec = config.model
    scan = energy_scan(
        spec, config.grid(), config.steps, config.seed, workers=config.workers, **_estimator_options(config),
    )
    table = Table(data_columns("scan", spec.N))
    for est in scan.estimates:
        table.add(
            energy=est.energy,
            **_gamma_row(est),
            sum_gamma=upper_sum(est),
            sum_stderr=float(np.sqrt(np.sum(est.stderr[: spec.N] ** 2))),
            vanishing=vanishing_count(est),
        )
    summary = {
        "holder_exponent": scan.holder.exponent,
        "holder_constant": scan.holder.constant,
        "holder_r_squared": scan.holder.r_squared,
        "flagged_energies": len(scan.flags),
    }
    return CommandResult(table=table, summary=summary, plots=[("gamma_vs_E", table)])


def ldp_command(config: ExperimentConfig) -> CommandResult:
    """
    Deviation frequencies for each n in n_cells. Without eps the threshold is
    half the reference exponent, which must then be positive.
    """
    spec = config.model
    E = config.number("energy")
    p = config.integer("p", 1)
    frame = None
    if config.has("frame"):
        try:
            frame = lagrangian_frame(spec.N, FrameFlavor(config.values["frame"]))
        except ValueError:
            raise ConfigError(f"Unknown frame {config.values['frame']!r}")

    reference = lyapunov_spectrum(spec, E, config.steps, config.seed, **_estimator_options(config))
    gamma_ref = float(reference.gamma[p - 1]) if p <= reference.size else float("nan")
    if config.has("eps"):
        eps = config.number("eps", positive=True)
    elif gamma_ref > 0:
        eps = 0.5 * gamma_ref
    else:
        raise ConfigError(f"eps is required when gamma_{p} = {gamma_ref} is not positive")

    table = Table(data_columns("ldp", spec.N))
    for n_cells in config.integers("n_cells"):
        result = ldp_probability(
            spec, E, p, eps, n_cells, config.samples, config.seed, reference.gamma,
            frame=frame, workers=config.workers,
        )
        table.add(
            n_cells=n_cells, p=p, eps=eps, gamma_ref=gamma_ref, p_hat=result.p_hat,
            ci_low=result.ci_low, ci_high=result.ci_high,
            exceedances=result.exceedances, samples=result.samples,
        )
    return CommandResult(table=table, summary={"eps": eps, "gamma_ref": gamma_ref})
