"""
Spectral command handlers for dirac-loc
ids, thouless and wegner
"""

import logging
import math

from config import THOULESS_MARGIN
from handlers.experiment import ExperimentConfig
from services.lyapunov import energy_scan
from services.spectrum import GammaCurve, free_ids, ids_deviation_bound, ids_estimate, thouless_residual, wegner_probability
from storage import CommandResult, Table
from templates.columns import data_columns

logger = logging.getLogger(__name__)


def ids_command(config: ExperimentConfig) -> CommandResult:
    spec = config.model
    curve = ids_estimate(spec, config.integer("l"), config.samples, config.grid(), config.seed, workers=config.workers)
    reference = free_ids(spec.N, curve.energies)

    table = Table(data_columns("ids", spec.N))
    for E, F, err, F0 in zip(curve.energies, curve.F, curve.stderr, reference.F):
        table.add(energy=E, F=F, stderr=err, F0=F0)
    summary = {"deviation_bound": ids_deviation_bound(curve, spec.N)}
    return CommandResult(table=table, summary=summary, plots=[("ids", table)])


def thouless_command(config: ExperimentConfig) -> CommandResult:
    """
    Lyapunov sums on eval_min..eval_max (step e_step) against an IDS on
    ids_min..ids_max (step ids_step).
    """
    spec = config.model
    E_eval = config.grid("eval_min", "eval_max", "e_step")
    t = config.grid("ids_min", "ids_max", "ids_step")
    margin = config.number("margin", THOULESS_MARGIN, positive=True)

    scan = energy_scan(spec, E_eval, config.steps, config.seed, workers=config.workers)
    ids = ids_estimate(spec, config.integer("l"), config.samples, t, config.seed, workers=config.workers)
    report = thouless_residual(GammaCurve.from_scan(scan), ids, free_ids(spec.N, t), E_eval, margin)

    table = Table(data_columns("thouless", spec.N))
    table.add(
        a_fit=report.a_fit,
        max_residual=report.max_residual,
        truncation_bound=report.truncation_bound,
        ids_min=report.ids_window[0],
        ids_max=report.ids_window[1],
        eval_min=report.eval_window[0],
        eval_max=report.eval_window[1],
    )
    return CommandResult(table=table)


def wegner_command(config: ExperimentConfig) -> CommandResult:
    """One row per box size in l_values, or the single size l."""
    spec = config.model
    E = config.number("energy")
    sigma = config.number("sigma", positive=True)
    beta = config.number("wegner_beta", 0.5)
    Ls = config.integers("l_values") if config.has("l_values") else [config.integer("l")]

    table = Table(data_columns("wegner", spec.N))
    for L in Ls:
        p_hat, (low, high) = wegner_probability(
            spec, E, L, sigma, beta, config.samples, config.seed, workers=config.workers,
        )
        table.add(L=L, radius=math.exp(-sigma * L ** beta), p_hat=p_hat, ci_low=low, ci_high=high,
                  samples=config.samples)
    return CommandResult(table=table, summary={"sigma": sigma, "beta": beta})
