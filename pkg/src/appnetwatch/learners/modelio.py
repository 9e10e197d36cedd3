"""Plain-text serialization of trained learners.

A learner block is a run of ``keyword <json>`` lines opened by
``learner <kind>`` and closed by ``end``. Floats go through ``repr`` (JSON's
float encoding), so a load after a dump reproduces predictions exactly.
See docs/model_format.md for the full layout.
"""

from __future__ import annotations

import json
from typing import Iterator

import numpy as np

from .base import ColumnSpec
from .table import DECISION_TABLE, DecisionTableModel
from .tree import CLASSIFICATION_TREE, REGRESSION_TREE, TreeModel

KINDS = (REGRESSION_TREE, CLASSIFICATION_TREE, DECISION_TABLE)


class ModelFormatError(ValueError):
    pass


def _line(key, value) -> str:
    return f"{key} {json.dumps(value, allow_nan=False)}"


def dump_learner(model) -> list[str]:
    c = model.columns
    out = [f"learner {model.kind}"]
    out.append(_line("target", [c.target_name, c.target_kind, c.target_index]))
    out.append(_line("columns", [[n, k, list(v) if v is not None else None]
                                 for n, k, v in zip(c.names, c.kinds, c.vocab)]))
    if c.classes is not None:
        out.append(_line("classes", list(c.classes)))
    out.append(_line("params", [[k, v] for k, v in model.params]))
    if isinstance(model, TreeModel):
        out.append(_line("nodes", model.n_nodes))
        for i in range(model.n_nodes):
            rec = [int(model.feature[i]), float(model.threshold[i]), bool(model.is_cat[i]),
                   int(model.left[i]), int(model.right[i]), float(model.value[i])]
            if model.counts is not None:
                rec.append([float(v) for v in model.counts[i]])
            out.append(_line("node", rec))
    elif isinstance(model, DecisionTableModel):
        out.append(_line("selected", list(model.selected)))
        out.append(_line("edges", [None if e is None else [float(v) for v in e] for e in model.edges]))
        out.append(_line("default", model.default))
        out.append(_line("cells", len(model.table)))
        for key in sorted(model.table):
            out.append(_line("cell", [list(key), model.table[key]]))
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    out.append("end")
    return out


def _expect(lines: Iterator[tuple[int, str]], key: str):
    try:
        lineno, text = next(lines)
    except StopIteration:
        raise ModelFormatError(f"unexpected end of model, wanted {key!r}") from None
    word, _, rest = text.partition(" ")
    if word != key:
        raise ModelFormatError(f"line {lineno}: expected {key!r}, found {word!r}")
    try:
        return json.loads(rest) if rest else None
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"line {lineno}: bad value for {key!r}: {exc}") from None


def _peek_optional(lines, key):
    """Consume ``key`` if it is next; the iterator must support ``peek``."""
    lineno, text = lines.peek()
    if text.partition(" ")[0] == key:
        return _expect(lines, key)
    return None


class LineReader:
    """Iterator over ``(lineno, text)`` pairs with one-item lookahead."""

    def __init__(self, numbered):
        self._it = iter(numbered)
        self._buf = []

    def __iter__(self):
        return self

    def __next__(self):
        if self._buf:
            return self._buf.pop()
        return next(self._it)

    def peek(self):
        if not self._buf:
            try:
                self._buf.append(next(self._it))
            except StopIteration:
                return (0, "")
        return self._buf[-1]


def load_learner(lines) -> object:
    """Read one learner block from ``lines`` (an iterator of ``(lineno, text)``)."""
    if not isinstance(lines, LineReader):
        lines = LineReader(lines)
    try:
        lineno, header = next(lines)
    except StopIteration:
        raise ModelFormatError("missing learner block") from None
    word, _, kind = header.partition(" ")
    if word != "learner" or kind not in KINDS:
        raise ModelFormatError(f"line {lineno}: expected 'learner <kind>', found {header!r}")
    try:
        target_name, target_kind, target_index = _expect(lines, "target")
        cols = _expect(lines, "columns")
        classes = _peek_optional(lines, "classes")
        params = tuple((str(k), float(v)) for k, v in _expect(lines, "params"))
        columns = ColumnSpec(
            names=tuple(c[0] for c in cols),
            kinds=tuple(c[1] for c in cols),
            vocab=tuple(tuple(c[2]) if c[2] is not None else None for c in cols),
            target_name=target_name, target_kind=target_kind, target_index=int(target_index),
            classes=tuple(classes) if classes is not None else None,
        )
        if kind == DECISION_TABLE:
            selected = tuple(int(j) for j in _expect(lines, "selected"))
            edges = tuple(None if e is None else np.asarray(e, dtype=np.float64)
                          for e in _expect(lines, "edges"))
            default = float(_expect(lines, "default"))
            n = int(_expect(lines, "cells"))
            table = {}
            for _ in range(n):
                key, value = _expect(lines, "cell")
                table[tuple(int(k) for k in key)] = float(value)
            model = DecisionTableModel(columns, selected, edges, table, default, params)
        else:
            n = int(_expect(lines, "nodes"))
            recs = [_expect(lines, "node") for _ in range(n)]
            if n == 0:
                raise ModelFormatError("tree has no nodes")
            counts = None
            if kind == CLASSIFICATION_TREE:
                counts = np.array([r[6] for r in recs], dtype=np.float64)
            model = TreeModel(
                kind, columns,
                feature=np.array([r[0] for r in recs], dtype=np.int64),
                threshold=np.array([r[1] for r in recs], dtype=np.float64),
                is_cat=np.array([r[2] for r in recs], dtype=np.bool_),
                left=np.array([r[3] for r in recs], dtype=np.int64),
                right=np.array([r[4] for r in recs], dtype=np.int64),
                value=np.array([r[5] for r in recs], dtype=np.float64),
                counts=counts, params=params,
            )
            _check_tree(model)
    except (TypeError, IndexError, KeyError) as exc:
        raise ModelFormatError(f"malformed {kind} block: {exc}") from None
    _expect(lines, "end")
    return model


def _check_tree(model: TreeModel):
    n = model.n_nodes
    width = len(model.columns.names)
    for i in range(n):
        l, r = model.left[i], model.right[i]
        if (l < 0) != (r < 0):
            raise ModelFormatError(f"node {i} has exactly one child")
        if l >= 0:
            if not (i < l < n and i < r < n):
                raise ModelFormatError(f"node {i} has out-of-range children")
            if not 0 <= model.feature[i] < width:
                raise ModelFormatError(f"node {i} splits on unknown column {model.feature[i]}")


def dumps(model) -> str:
    return "\n".join(dump_learner(model)) + "\n"


def loads(text: str):
    numbered = ((i, line) for i, line in enumerate(text.splitlines(), 1) if line.strip())
    lines = LineReader(numbered)
    model = load_learner(lines)
    if lines.peek() != (0, ""):
        raise ModelFormatError(f"line {lines.peek()[0]}: trailing content after learner")
    return model
