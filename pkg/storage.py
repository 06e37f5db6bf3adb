"""
Result-file operations for dirac-loc
CSV data tables, key=value manifests and whitespace plot data
"""

from dataclasses import dataclass, field
from pathlib import Path
import csv
import hashlib
import io
import logging

import numpy as np

from config import TASK_HASH_ROWS
from services.errors import ConfigError
from templates.columns import PLOT_COLUMNS
from templates.headers import manifest_lines, plot_header

logger = logging.getLogger(__name__)


@dataclass
class Table:
    columns: list
    rows: list = field(default_factory=list)  # one dict per row, keyed by column

    def add(self, **row):
        unknown = set(row) - set(self.columns)
        if unknown:
            raise ConfigError(f"Row has columns outside the schema: {sorted(unknown)}")
        self.rows.append(row)

    def where(self, **match) -> "Table":
        return Table(self.columns, [row for row in self.rows if all(row.get(k) == v for k, v in match.items())])


@dataclass
class CommandResult:
    table: Table
    summary: dict = field(default_factory=dict)
    plots: list = field(default_factory=list)  # (kind, Table) pairs


def format_value(value) -> str:
    """Floats use repr so that they read back exactly."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _render_rows(table: Table) -> list:
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=table.columns, lineterminator="\n")
    lines = []
    for row in table.rows:
        writer.writerow({key: format_value(row.get(key)) for key in table.columns})
        lines.append(buffer.getvalue())
        buffer.seek(0)
        buffer.truncate()
    return lines


def render_table(table: Table, header: list) -> str:
    text = "".join(f"{line}\n" for line in header)
    text += ",".join(table.columns) + "\n"
    return text + "".join(_render_rows(table))


def task_hashes(table: Table) -> list:
    """Hash of each block of TASK_HASH_ROWS consecutive rows."""
    rows = _render_rows(table)
    return [
        sha256("".join(rows[i:i + TASK_HASH_ROWS]).encode("utf-8"))
        for i in range(0, len(rows), TASK_HASH_ROWS)
    ]


def _write(path: Path, text: str) -> str:
    data = text.encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)
    logger.info(f"Wrote {path}")
    return sha256(data)


def write_table(path: Path, table: Table, header: list) -> str:
    """Write the table as CSV under its header comments; returns the file hash."""
    return _write(Path(path), render_table(table, header))


def write_manifest(path: Path, entries: dict) -> str:
    return _write(Path(path), "".join(f"{line}\n" for line in manifest_lines(entries)))


def read_manifest(path: Path) -> dict:
    entries = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line and not line.startswith("#"):
            key, _, value = line.partition("=")
            entries[key] = value
    return entries


def emit_plot_data(table: Table, kind: str, path: Path, manifest_name: str) -> Path:
    """Whitespace-separated plot columns for one of the known plot kinds."""
    if kind not in PLOT_COLUMNS:
        raise ConfigError(f"Unknown plot kind {kind!r}, expected one of {sorted(PLOT_COLUMNS)}")
    source, names = PLOT_COLUMNS[kind]
    missing = [column for column in source if column not in table.columns]
    if missing:
        raise ConfigError(f"Table does not fit plot kind {kind}: missing {missing}")

    lines = plot_header(kind, names, manifest_name)
    for row in table.rows:
        lines.append(" ".join(format_value(row.get(column)) for column in source))
    path = Path(path)
    _write(path, "".join(f"{line}\n" for line in lines))
    return path
