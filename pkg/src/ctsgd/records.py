"""Tabular time-series records produced by simulations and experiments."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError


@dataclass
class TrajectoryRecord:
    """Decimated time series with named columns and a metadata header.

    The first column is always time and must be strictly increasing.
    Metadata is a flat str->str mapping written as '#'-prefixed comment
    lines when the record is serialized.
    """

    columns: list[str]
    data: np.ndarray
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim == 1:
            self.data = self.data.reshape(0, len(self.columns)) if self.data.size == 0 \
                else self.data.reshape(1, -1)
        if self.data.size and self.data.shape[1] != len(self.columns):
            raise DimensionError(
                f"record has {self.data.shape[1]} columns, expected {len(self.columns)}")
        if self.data.shape[0] > 1:
            t = self.data[:, 0]
            if not np.all(np.diff(t) > 0):
                raise DimensionError("time column must be strictly increasing")

    @property
    def n_rows(self) -> int:
        return self.data.shape[0]

    def column(self, name: str) -> np.ndarray:
        try:
            j = self.columns.index(name)
        except ValueError:
            raise KeyError(f"no column named {name!r}; have {self.columns}") from None
        return self.data[:, j]

    @property
    def times(self) -> np.ndarray:
        return self.data[:, 0]
