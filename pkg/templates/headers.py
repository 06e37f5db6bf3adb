"""
Header comment and manifest templates for dirac-loc output files
"""

from config import CODE_VERSION


def _echo(values: dict) -> str:
    return " ".join(f"{key}={value}" for key, value in values.items())


def data_header(command: str, seed: int, model: dict, manifest_name: str, summary: dict | None = None) -> list:
    """`#`-prefixed lines that open every data and plot file."""
    lines = [
        f"# command={command}",
        f"# code_version={CODE_VERSION}",
        f"# seed={seed}",
        f"# model {_echo(model)}",
        f"# manifest={manifest_name}",
    ]
    for key, value in (summary or {}).items():
        lines.append(f"# result {key}={value}")
    return lines


def plot_header(kind: str, columns, manifest_name: str) -> list:
    return [f"# plot={kind}", f"# manifest={manifest_name}", f"# {' '.join(columns)}"]


def manifest_lines(entries: dict) -> list:
    return [f"{key}={value}" for key, value in entries.items()]
