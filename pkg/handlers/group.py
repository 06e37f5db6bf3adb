"""
Group check command handler for dirac-loc
"""

from handlers.experiment import ExperimentConfig
from services.matgroup import GroupTag
from services.model import group_check
from storage import CommandResult, Table
from templates.columns import data_columns


def group_check_command(config: ExperimentConfig) -> CommandResult:
    """Tag counts over sampled cell transfers, one row per tag in enum order."""
    counts = group_check(config.model, config.number("energy"), config.samples, config.seed)
    table = Table(data_columns("group-check", config.model.N))
    for tag in GroupTag:
        table.add(tag=tag.value, count=counts.get(tag.value, 0))
    return CommandResult(table=table)
