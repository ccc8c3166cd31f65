"""Reader for the simulation CSV dialect.

Dialect: UTF-8, LF line endings, comma separator, '.' decimal point,
'#'-prefixed ``key: value`` metadata lines before a single header row,
float data rows.  This module is self-contained so the plotting tool
depends only on the on-disk format, not on the simulation package.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class CsvFormatError(Exception):
    """Raised when an input file violates the dialect or lacks data."""


@dataclass
class Table:
    columns: list
    data: np.ndarray
    metadata: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        if name not in self.columns:
            raise CsvFormatError(f"missing column {name!r}")
        return self.data[:, self.columns.index(name)]


def read_table(path) -> Table:
    metadata = {}
    header = None
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if ":" in body:
                    key, val = body.split(":", 1)
                    metadata[key.strip()] = val.strip()
                continue
            if header is None:
                header = line.split(",")
                continue
            try:
                rows.append([float(v) for v in line.split(",")])
            except ValueError:
                raise CsvFormatError(
                    f"{path}: non-numeric data row {line!r}") from None
    if header is None:
        raise CsvFormatError(f"{path}: no header line")
    if not rows:
        raise CsvFormatError(f"{path}: no data rows")
    widths = {len(r) for r in rows}
    if widths != {len(header)}:
        raise CsvFormatError(f"{path}: ragged rows (header has "
                             f"{len(header)} columns)")
    return Table(columns=header, data=np.array(rows), metadata=metadata)


def require_columns(table: Table, names, path="input") -> None:
    missing = [n for n in names if n not in table.columns]
    if missing:
        raise CsvFormatError(f"{path}: missing columns {missing}")
