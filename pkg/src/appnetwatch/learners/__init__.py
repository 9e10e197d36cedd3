"""Learners used as per-feature predictors."""

from .base import CATEGORICAL, NUMERIC, ColumnSpec, TrainingMatrix
from .modelio import ModelFormatError, dump_learner, dumps, load_learner, loads
from .table import DECISION_TABLE, DecisionTableModel, train_decision_table
from .tree import (
    CLASSIFICATION_TREE,
    REGRESSION_TREE,
    TreeModel,
    train_classification_tree,
    train_regression_tree,
)

__all__ = [
    "CATEGORICAL", "NUMERIC", "ColumnSpec", "TrainingMatrix",
    "DECISION_TABLE", "DecisionTableModel", "train_decision_table",
    "REGRESSION_TREE", "CLASSIFICATION_TREE", "TreeModel",
    "train_regression_tree", "train_classification_tree",
    "ModelFormatError", "dump_learner", "load_learner", "dumps", "loads",
    "predict", "predict_many",
]


def predict(model, row):
    return model.predict(row)


def predict_many(model, rows):
    return model.predict_many(rows)
