"""
Lie algebra command handlers for dirac-loc
lie, threshold and critical
"""

import logging

from config import CLOSURE_TOL, DEFAULT_D_LOG_O
from handlers.experiment import ExperimentConfig
from services.liealgebra import classify, critical_energy_scan, disorder_threshold, generate_algebra, vertex_generators
from storage import CommandResult, Table
from templates.columns import data_columns

logger = logging.getLogger(__name__)


def lie_command(config: ExperimentConfig) -> CommandResult:
    spec = config.model
    E = config.number("energy")
    tol = config.number("tol", CLOSURE_TOL, positive=True)
    max_dim = config.integer("max_dim") if config.has("max_dim") else None

    basis = generate_algebra(vertex_generators(spec, E), tol, max_dim)
    classification = classify(basis, spec.N)

    table = Table(data_columns("lie", spec.N))
    table.add(
        energy=E,
        dim=basis.dim,
        classification=classification.value,
        closed=basis.closed,
        sp_dim=2 * spec.N * spec.N + spec.N,
        spo_dim=spec.N * spec.N,
    )
    logger.info(f"Lie algebra at E={E}: dim {basis.dim}, {classification.value}")
    return CommandResult(table=table)


def threshold_command(config: ExperimentConfig) -> CommandResult:
    report = disorder_threshold(config.model, config.number("d_log_o", DEFAULT_D_LOG_O, positive=True))
    low, high = report.interval if report.interval is not None else (None, None)

    table = Table(data_columns("threshold", config.model.N))
    table.add(
        lambda_max=report.lambda_max,
        lambda_min=report.lambda_min,
        ell_c=report.ell_c,
        ell=report.ell,
        d_log_o=report.d_log_O,
        interval_low=low,
        interval_high=high,
        empty=report.is_empty,
    )
    return CommandResult(table=table)


def critical_command(config: ExperimentConfig) -> CommandResult:
    """Grid dimensions (refined=false) followed by the refined drop energies (refined=true)."""
    scan = critical_energy_scan(
        config.model, config.grid(), config.number("tol", CLOSURE_TOL, positive=True), workers=config.workers,
    )
    table = Table(data_columns("critical", config.model.N))
    for E, dim in scan.points:
        table.add(energy=E, dim=dim, refined=False)
    for E, dim in scan.drops:
        table.add(energy=E, dim=dim, refined=True)
    summary = {"generic_dim": scan.generic_dim, "drops": len(scan.drops)}
    return CommandResult(table=table, summary=summary, plots=[("dim_vs_E", table.where(refined=False))])
