"""Cross-feature anomaly scoring.

For every active feature a regressor (or classifier, for categorical
features) learns to predict it from the remaining active features. A vector
is scored by how well each feature agrees with its prediction: each feature
contributes ``log(1 - d_i)`` where ``d_i`` is a capped, mean-normalized
distance, and the sum is compared against a calibrated threshold.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .features import FEATURES, AggregatedVector, FeatureSchema
from .learners import (
    CATEGORICAL,
    NUMERIC,
    ModelFormatError,
    TrainingMatrix,
    dump_learner,
    load_learner,
    train_classification_tree,
    train_decision_table,
    train_regression_tree,
)
from .learners.modelio import LineReader

DISTANCE_CAP = 0.999
PROB_FLOOR = 0.001
DEFAULT_MAX_TRAIN = 150
MIN_TRAIN = 10
DEFAULT_CALIBRATION_FRACTION = 0.2
MODEL_MAGIC = "# appnetwatch-model v1"

# base learner id -> trainer for numeric targets; categorical targets always
# use the classification tree
LEARNERS = {
    "decision_table": train_decision_table,
    "reptree": train_regression_tree,
}
DEFAULT_LEARNER = "decision_table"


def check_learner(name: str) -> str:
    if name not in LEARNERS:
        raise KeyError(f"unknown learner {name!r}; valid: {', '.join(LEARNERS)}")
    return name


@dataclass(frozen=True, eq=False)
class CrossFeatureModel:
    schema: FeatureSchema
    predictors: tuple
    feature_means: dict
    base_learner: str
    threshold_logp: float | None = None
    distance_cap: float = DISTANCE_CAP

    @property
    def calibrated(self) -> bool:
        return self.threshold_logp is not None

    def with_threshold(self, threshold_logp: float) -> "CrossFeatureModel":
        if not threshold_logp <= 0:
            raise ValueError(f"threshold must be <= 0, got {threshold_logp!r}")
        return dataclasses.replace(self, threshold_logp=float(threshold_logp))


@dataclass(frozen=True)
class Verdict:
    log_probability: float
    is_anomalous: bool
    per_feature_distances: tuple[float, ...]
    app_id: str | None = None
    window_end_ts: int | None = None


def feature_distance(predicted, actual, kind: str, training_mean: float | None = None) -> float:
    if kind == CATEGORICAL:
        return 0.0 if predicted == actual else DISTANCE_CAP
    diff = abs(float(predicted) - float(actual))
    if diff == 0.0:
        return 0.0
    scale = abs(training_mean) if training_mean is not None else 0.0
    if scale == 0.0 or diff > scale:
        return DISTANCE_CAP
    return min(diff / scale, DISTANCE_CAP)


def log_probability_of(distances: Sequence[float]) -> float:
    return math.fsum(math.log(max(1.0 - d, PROB_FLOOR)) for d in distances)


def _as_row(model: CrossFeatureModel, vector) -> list:
    if isinstance(vector, AggregatedVector):
        return model.schema.row(vector)
    row = list(vector)
    if len(row) != len(model.schema.active):
        raise ValueError(f"vector has {len(row)} values; schema {model.schema.subset_id!r} "
                         f"has {len(model.schema.active)} active features")
    return row


def feature_distances(model: CrossFeatureModel, vector) -> tuple[float, ...]:
    row = _as_row(model, vector)
    out = []
    for (name, kind), predictor, actual in zip(model.schema.active_features, model.predictors, row):
        out.append(feature_distance(predictor.predict(row), actual, kind, model.feature_means.get(name)))
    return tuple(out)


def normality_log_probability(model: CrossFeatureModel, vector) -> float:
    return log_probability_of(feature_distances(model, vector))


def score_many(model: CrossFeatureModel, vectors) -> np.ndarray:
    """Log probabilities of a batch, predicting column-wise."""
    rows = [_as_row(model, v) for v in vectors]
    if not rows:
        return np.empty(0)
    logp = np.zeros(len(rows))
    for i, ((name, kind), predictor) in enumerate(zip(model.schema.active_features, model.predictors)):
        preds = predictor.predict_many(rows)
        mean = model.feature_means.get(name)
        for r, (p, row) in enumerate(zip(preds, rows)):
            d = feature_distance(p, row[i], kind, mean)
            logp[r] += math.log(max(1.0 - d, PROB_FLOOR))
    return logp


def _training_values(rows, kinds):
    values = np.empty((len(rows), len(kinds)))
    vocab = []
    for j, kind in enumerate(kinds):
        column = [r[j] for r in rows]
        if kind == CATEGORICAL:
            tokens = tuple(sorted({str(v) for v in column}))
            index = {t: k for k, t in enumerate(tokens)}
            values[:, j] = [index[str(v)] for v in column]
            vocab.append(tokens)
        else:
            values[:, j] = np.asarray(column, dtype=np.float64)
            vocab.append(None)
    if not np.all(np.isfinite(values)):
        raise ValueError("training vectors contain non-finite values")
    return values, tuple(vocab)


def train_cross_feature(vectors: Sequence, schema: FeatureSchema, base_learner: str = DEFAULT_LEARNER,
                        max_train: int = DEFAULT_MAX_TRAIN, **learner_params) -> CrossFeatureModel:
    """One predictor per active feature, trained on the first ``max_train`` vectors.

    The returned model has no threshold yet; see :func:`calibrate_threshold`.
    """
    check_learner(base_learner)
    if len(schema.active) < 2:
        raise ValueError("cross-feature analysis needs at least 2 active features")
    vectors = list(vectors)[:max_train]
    if len(vectors) < MIN_TRAIN:
        raise ValueError(f"need at least {MIN_TRAIN} training vectors, got {len(vectors)}")
    names = schema.active
    kinds = tuple(kind for _, kind in schema.active_features)
    rows = [schema.row(v) if isinstance(v, AggregatedVector) else list(v) for v in vectors]
    values, vocab = _training_values(rows, kinds)
    trainer = LEARNERS[base_learner]
    predictors = []
    for i, kind in enumerate(kinds):
        data = TrainingMatrix(names, kinds, values, vocab, i)
        if kind == CATEGORICAL:
            predictors.append(train_classification_tree(data))
        else:
            predictors.append(trainer(data, **learner_params))
    means = {name: float(values[:, i].mean()) for i, (name, kind) in enumerate(zip(names, kinds))
             if kind == NUMERIC}
    return CrossFeatureModel(schema, tuple(predictors), means, base_learner)


def youden_threshold(normal_scores, anomalous_scores) -> tuple[float, int, int]:
    """Threshold maximizing TPR - FPR for the rule ``score < threshold``.

    Returns ``(threshold, tp, fp)``. Candidates are midpoints between
    consecutive distinct scores; equal J goes to the higher threshold.
    """
    normal = np.sort(np.asarray(normal_scores, dtype=np.float64))
    anomalous = np.sort(np.asarray(anomalous_scores, dtype=np.float64))
    if normal.size == 0 or anomalous.size == 0:
        raise ValueError("calibration needs both normal and anomalous vectors")
    distinct = np.unique(np.concatenate([normal, anomalous]))
    if distinct.size == 1:
        return float(distinct[0]), 0, 0
    candidates = distinct[:-1] + (distinct[1:] - distinct[:-1]) / 2.0
    tp = np.searchsorted(anomalous, candidates, side="left")
    fp = np.searchsorted(normal, candidates, side="left")
    # J compared exactly on integers: tp/nA - fp/nN scaled by nA*nN
    j = tp.astype(np.int64) * normal.size - fp.astype(np.int64) * anomalous.size
    best = int(np.flatnonzero(j == j.max())[-1])
    return float(candidates[best]), int(tp[best]), int(fp[best])


def calibrate_threshold(model: CrossFeatureModel, normal_vectors, anomalous_vectors) -> float:
    if not normal_vectors or not anomalous_vectors:
        raise ValueError("calibration needs both normal and anomalous vectors")
    threshold, _, _ = youden_threshold(score_many(model, normal_vectors), score_many(model, anomalous_vectors))
    return min(threshold, 0.0)


def classify_instance(model: CrossFeatureModel, vector) -> Verdict:
    if model.threshold_logp is None:
        raise ValueError("model is not calibrated")
    distances = feature_distances(model, vector)
    logp = log_probability_of(distances)
    if isinstance(vector, AggregatedVector):
        return Verdict(logp, logp < model.threshold_logp, distances, vector.app_id, vector.window_end_ts)
    return Verdict(logp, logp < model.threshold_logp, distances)


def classify_many(model: CrossFeatureModel, vectors) -> list[Verdict]:
    return [classify_instance(model, v) for v in vectors]


DISPLACEMENT_FACTOR = 1.1


def displace(vector: AggregatedVector, schema: FeatureSchema, means: dict,
             factor: float | None = None) -> AggregatedVector:
    """Shift every numeric active feature past its training mean.

    The shift is ``factor * |mean| + 1``; any factor above 1 would be capped
    under a perfect prediction.
    """
    factor = DISPLACEMENT_FACTOR if factor is None else factor
    changes = {}
    for name, kind in schema.active_features:
        if kind == NUMERIC:
            changes[name] = getattr(vector, name) + factor * abs(means[name]) + 1.0
    return dataclasses.replace(vector, **changes)


def split_for_calibration(vectors: Sequence, fraction: float = DEFAULT_CALIBRATION_FRACTION):
    """(train, calibration) with the calibration slice taken from the end."""
    vectors = list(vectors)
    n_cal = int(round(len(vectors) * fraction))
    if n_cal < 1 and fraction > 0 and len(vectors) > MIN_TRAIN:
        n_cal = 1
    return vectors[:len(vectors) - n_cal], vectors[len(vectors) - n_cal:]


def train_and_calibrate(vectors: Sequence[AggregatedVector], schema: FeatureSchema,
                        base_learner: str = DEFAULT_LEARNER, max_train: int = DEFAULT_MAX_TRAIN,
                        calibration_fraction: float = DEFAULT_CALIBRATION_FRACTION,
                        **learner_params) -> CrossFeatureModel:
    """Train on benign vectors and set the threshold from a held-out tail.

    The tail supplies normal calibration examples; displaced copies of it
    supply the anomalous ones.
    """
    vectors = list(vectors)[:max_train]
    train, cal = split_for_calibration(vectors, calibration_fraction)
    if not cal:
        raise ValueError("too few vectors to hold out a calibration slice")
    model = train_cross_feature(train, schema, base_learner, max_train, **learner_params)
    anomalous = [displace(v, schema, model.feature_means) for v in cal]
    return model.with_threshold(calibrate_threshold(model, cal, anomalous))


# ---------------------------------------------------------------------------
# model files
# ---------------------------------------------------------------------------

def _line(key, value):
    return f"{key} {json.dumps(value, allow_nan=False)}"


def dumps_model(model: CrossFeatureModel) -> str:
    lines = [
        MODEL_MAGIC,
        _line("subset", model.schema.subset_id),
        _line("active", [[n, k] for n, k in model.schema.active_features]),
        _line("base_learner", model.base_learner),
        _line("distance_cap", model.distance_cap),
        _line("means", [[n, model.feature_means[n]] for n in model.schema.active if n in model.feature_means]),
        _line("threshold", model.threshold_logp),
        _line("predictors", len(model.predictors)),
    ]
    for p in model.predictors:
        lines.extend(dump_learner(p))
    return "\n".join(lines) + "\n"


def _header(lines, key):
    try:
        lineno, text = next(lines)
    except StopIteration:
        raise ModelFormatError(f"unexpected end of model, wanted {key!r}") from None
    word, _, rest = text.partition(" ")
    if word != key:
        raise ModelFormatError(f"line {lineno}: expected {key!r}, found {word!r}")
    try:
        return json.loads(rest)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"line {lineno}: bad value for {key!r}: {exc}") from None


def loads_model(text: str) -> CrossFeatureModel:
    raw = text.splitlines()
    if not raw or raw[0].strip() != MODEL_MAGIC:
        found = raw[0].strip() if raw else ""
        raise ModelFormatError(f"line 1: expected {MODEL_MAGIC!r}, found {found!r}")
    lines = LineReader((i, s) for i, s in enumerate(raw, 1) if i > 1 and s.strip())
    subset = _header(lines, "subset")
    active = _header(lines, "active")
    base_learner = _header(lines, "base_learner")
    cap = _header(lines, "distance_cap")
    means = {str(n): float(v) for n, v in _header(lines, "means")}
    threshold = _header(lines, "threshold")
    n = int(_header(lines, "predictors"))
    known = dict(FEATURES)
    for name, kind in active:
        if known.get(name) != kind:
            raise ModelFormatError(f"unknown feature {name!r} of kind {kind!r}")
    try:
        check_learner(base_learner)
        schema = FeatureSchema(active=tuple(name for name, _ in active), subset_id=str(subset))
    except (KeyError, ValueError) as exc:
        raise ModelFormatError(str(exc)) from None
    if n != len(active):
        raise ModelFormatError(f"{n} predictors for {len(active)} active features")
    predictors = tuple(load_learner(lines) for _ in range(n))
    for (name, _), p in zip(active, predictors):
        if p.columns.target_name != name:
            raise ModelFormatError(f"predictor for {p.columns.target_name!r} where {name!r} expected")
    if lines.peek() != (0, ""):
        raise ModelFormatError(f"line {lines.peek()[0]}: trailing content")
    return CrossFeatureModel(schema, predictors, means, base_learner,
                             None if threshold is None else float(threshold), float(cap))


def save_model(model: CrossFeatureModel, path) -> None:
    Path(path).write_text(dumps_model(model))


def load_model(path) -> CrossFeatureModel:
    return loads_model(Path(path).read_text())
