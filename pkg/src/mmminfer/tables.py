"""Published reference tables shipped with the package.

The CSV fixtures under ``data/published/`` hold the reported results that
the reproduction scripts and the acceptance suite compare against: the
case-study inference table and the familywise-error-rate and power tables
of the simulation study.  Values are stored exactly as printed.
"""

from __future__ import annotations

import csv
from importlib import resources

__all__ = ["published_rows", "published_names"]


def _coerce(cell: str):
    cell = cell.strip()
    if cell == "":
        return None
    try:
        return float(cell)
    except ValueError:
        return cell


def published_names() -> list[str]:
    """Names accepted by :func:`published_rows`."""
    root = resources.files("mmminfer.data.published")
    return sorted(
        entry.name[: -len(".csv")]
        for entry in root.iterdir()
        if entry.name.endswith(".csv")
    )


def published_rows(name: str) -> list[dict]:
    """Rows of one published table, numeric cells coerced to float."""
    root = resources.files("mmminfer.data.published")
    path = root.joinpath(f"{name}.csv")
    if not path.is_file():
        raise KeyError(f"no published table {name!r}; have {published_names()}")
    with path.open(newline="") as handle:
        return [
            {k: _coerce(v) for k, v in row.items()} for row in csv.DictReader(handle)
        ]
