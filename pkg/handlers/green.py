"""
Green kernel command handlers for dirac-loc
green and ildse
"""

import logging

from config import COLLAR
from handlers.experiment import ExperimentConfig
from services.errors import ConfigError
from services.green import green_decay_fit, regularity_probability
from storage import CommandResult, Table
from templates.columns import data_columns

logger = logging.getLogger(__name__)


def green_command(config: ExperimentConfig) -> CommandResult:
    spec = config.model
    E = config.number("energy")
    fit = green_decay_fit(spec, E, config.integers("l_list"), config.samples, config.seed, workers=config.workers)

    table = Table(data_columns("green", spec.N))
    for L, median, q25, q75 in zip(fit.Ls, fit.medians, fit.q25, fit.q75):
        table.add(L=L, median=median, q25=q25, q75=q75, singular=fit.singular[L])
    summary = {"slope": fit.slope, "ci_low": fit.ci[0], "ci_high": fit.ci[1]}
    return CommandResult(table=table, summary=summary, plots=[("decay", table)])


def _collar(config: ExperimentConfig) -> tuple:
    if not config.has("collar"):
        return COLLAR
    parts = config.values["collar"].split(",")
    try:
        near, far = (int(p) for p in parts)
    except ValueError:
        raise ConfigError(f"collar must be two integers 'near,far', got {config.values['collar']!r}")
    return near, far


def ildse_command(config: ExperimentConfig) -> CommandResult:
    spec = config.model
    E = config.number("energy")
    m = config.number("m", 0.0)
    L = config.integer("l")
    p_hat, (low, high) = regularity_probability(
        spec, E, m, L, config.samples, config.seed, collar=_collar(config), workers=config.workers,
    )
    table = Table(data_columns("ildse", spec.N))
    table.add(L=L, m=m, p_hat=p_hat, ci_low=low, ci_high=high, samples=config.samples)
    return CommandResult(table=table)
