"""Training data layout shared by the learners."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

NUMERIC = "numeric"
CATEGORICAL = "categorical"
UNSEEN = -1.0


def stable_mean(values) -> float:
    """Mean taken about the first value, so constant input returns it exactly."""
    values = np.asarray(values, dtype=np.float64)
    first = values[0]
    return float(first + math.fsum(values - first) / values.shape[0])


@dataclass(frozen=True)
class ColumnSpec:
    """How a model reads a raw row.

    ``names``/``kinds``/``vocab`` describe the predictor columns in order.
    ``target_index`` is where the target sits in a full row; rows passed to
    ``predict`` may include it (it is dropped) or omit it.
    """

    names: tuple[str, ...]
    kinds: tuple[str, ...]
    vocab: tuple[tuple[str, ...] | None, ...]
    target_name: str
    target_kind: str
    target_index: int
    classes: tuple[str, ...] | None = None

    @property
    def width(self) -> int:
        return len(self.names) + 1

    def encode(self, row: Sequence) -> np.ndarray:
        if len(row) == self.width:
            row = list(row[:self.target_index]) + list(row[self.target_index + 1:])
        elif len(row) != len(self.names):
            raise ValueError(f"row has {len(row)} values; expected {len(self.names)} "
                             f"(or {self.width} including the target)")
        out = np.empty(len(self.names))
        for j, (value, kind) in enumerate(zip(row, self.kinds)):
            if kind == CATEGORICAL:
                vocab = self.vocab[j]
                out[j] = vocab.index(value) if value in vocab else UNSEEN
            else:
                out[j] = float(value)
        return out

    def encode_many(self, rows) -> np.ndarray:
        if len(rows) == 0:
            return np.empty((0, len(self.names)))
        return np.vstack([self.encode(r) for r in rows])


@dataclass(frozen=True)
class TrainingMatrix:
    """Rectangular training data with one column designated as the target.

    Categorical columns are stored as indices into their sorted vocabulary.
    """

    names: tuple[str, ...]
    kinds: tuple[str, ...]
    values: np.ndarray
    vocab: tuple[tuple[str, ...] | None, ...]
    target: int

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[1] != len(self.names):
            raise ValueError("values must be an (n_rows, n_columns) matrix")
        if len(self.kinds) != len(self.names) or len(self.vocab) != len(self.names):
            raise ValueError("names, kinds and vocab must align")
        if not 0 <= self.target < len(self.names):
            raise ValueError(f"target index {self.target} out of range")

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence], names: Sequence[str], kinds: Sequence[str],
                  target: int) -> "TrainingMatrix":
        names, kinds = tuple(names), tuple(kinds)
        for r in rows:
            if len(r) != len(names):
                raise ValueError(f"row has {len(r)} values, expected {len(names)}")
        values = np.empty((len(rows), len(names)))
        vocab = []
        for j, kind in enumerate(kinds):
            column = [r[j] for r in rows]
            if kind == CATEGORICAL:
                tokens = tuple(sorted({str(v) for v in column}))
                index = {t: i for i, t in enumerate(tokens)}
                values[:, j] = [index[str(v)] for v in column]
                vocab.append(tokens)
            elif kind == NUMERIC:
                values[:, j] = np.asarray(column, dtype=np.float64) if column else []
                vocab.append(None)
            else:
                raise ValueError(f"unknown column kind {kind!r}")
        if not np.all(np.isfinite(values)):
            raise ValueError("training values must be finite")
        return cls(names, kinds, values, tuple(vocab), int(target))

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def target_kind(self) -> str:
        return self.kinds[self.target]

    @property
    def predictor_index(self) -> list[int]:
        return [j for j in range(len(self.names)) if j != self.target]

    @property
    def X(self) -> np.ndarray:
        return self.values[:, self.predictor_index]

    @property
    def y(self) -> np.ndarray:
        return self.values[:, self.target]

    def column_spec(self) -> ColumnSpec:
        idx = self.predictor_index
        classes = self.vocab[self.target] if self.target_kind == CATEGORICAL else None
        return ColumnSpec(
            names=tuple(self.names[j] for j in idx),
            kinds=tuple(self.kinds[j] for j in idx),
            vocab=tuple(self.vocab[j] for j in idx),
            target_name=self.names[self.target],
            target_kind=self.target_kind,
            target_index=self.target,
            classes=classes,
        )
