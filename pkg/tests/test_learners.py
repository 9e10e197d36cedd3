import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from appnetwatch.learners import (CATEGORICAL, NUMERIC, ModelFormatError, TrainingMatrix, dumps,
                                  loads, predict, predict_many, train_classification_tree,
                                  train_decision_table, train_regression_tree)
from appnetwatch.learners.tree import pessimistic_extra_errors

N, C = NUMERIC, CATEGORICAL


def matrix(X, y, kinds=None, target_kind=N):
    X = [list(r) for r in X]
    k = list(kinds or [N] * len(X[0]))
    names = [f"x{i}" for i in range(len(k))] + ["y"]
    return TrainingMatrix.from_rows([r + [t] for r, t in zip(X, y)], names, k + [target_kind], len(k))


def step_data(n=100, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0, 10, size=(n, 2))
    y = np.where(X[:, 0] < 5, 10.0, 20.0)
    return X, y


def test_constant_target_single_leaf():
    X = np.random.default_rng(1).normal(size=(30, 3))
    tree = train_regression_tree(matrix(X, [7.0] * 30))
    assert tree.n_leaves == 1
    assert predict(tree, [100.0, -5.0, 0.0]) == 7.0


def test_piecewise_constant_recovered_exactly():
    X, y = step_data()
    tree = train_regression_tree(matrix(X, y))
    assert predict_many(tree, X.tolist()) == y.tolist()


def test_pruning_collapses_noise():
    rng = np.random.default_rng(0)
    X, y = rng.normal(size=(200, 3)), rng.normal(size=200)
    pruned = train_regression_tree(matrix(X, y))
    full = train_regression_tree(matrix(X, y), prune_fraction=0)
    assert pruned.n_leaves <= 3 < full.n_leaves


def test_unpruned_tree_reproduces_training_targets():
    rng = np.random.default_rng(2)
    X = rng.permutation(60).reshape(30, 2).astype(float)
    y = rng.normal(size=30)
    tree = train_regression_tree(matrix(X, y), min_leaf=1, prune_fraction=0)
    assert predict_many(tree, X.tolist()) == y.tolist()


def test_sentinel_routes_like_a_number():
    X = [[-1.0], [-1.0], [-1.0], [4.0], [5.0], [6.0]]
    tree = train_regression_tree(matrix(X, [1.0, 1.0, 1.0, 9.0, 9.0, 9.0]), min_leaf=1, prune_fraction=0)
    assert predict(tree, [-1.0]) == 1.0
    assert predict(tree, [-0.5]) == 1.0
    assert predict(tree, [5.5]) == 9.0


def test_single_class_single_leaf():
    tree = train_classification_tree(matrix([[1.0], [2.0], [3.0]], ["wifi"] * 3, target_kind=C))
    assert tree.n_leaves == 1 and predict(tree, [9.0]) == "wifi"


def test_classification_separable():
    rng = np.random.default_rng(3)
    states = rng.choice(["wifi", "cellular", "none"], size=120)
    other = rng.normal(size=120)
    target = ["yes" if s == "wifi" else "no" for s in states]
    rows = [[s, o] for s, o in zip(states, other)]
    tree = train_classification_tree(matrix(rows, target, kinds=[C, N], target_kind=C))
    assert predict_many(tree, rows) == target


def test_classification_tie_goes_to_smallest_token():
    rows = [[1.0]] * 4
    tree = train_classification_tree(matrix(rows, ["zeta", "alpha", "zeta", "alpha"], target_kind=C))
    assert predict(tree, [1.0]) == "alpha"


def test_pessimistic_errors_grow_with_uncertainty():
    assert pessimistic_extra_errors(10, 0) > pessimistic_extra_errors(100, 0) / 10
    assert pessimistic_extra_errors(10, 2) > 0


def test_decision_table_constant_target():
    X = np.random.default_rng(4).normal(size=(40, 3))
    table = train_decision_table(matrix(X, [3.5] * 40))
    assert {predict(table, r) for r in X.tolist()} == {3.5}


def test_decision_table_unseen_key_is_training_mean():
    # both inputs matter, but the (high, high) corner never occurs in training
    rng = np.random.default_rng(5)
    X = rng.uniform(0, 10, size=(300, 2))
    X = X[~((X[:, 0] > 5) & (X[:, 1] > 5))]
    y = 10.0 * (X[:, 0] > 5) + 5.0 * (X[:, 1] > 5)
    table = train_decision_table(matrix(X, y))
    assert sorted(table.selected) == [0, 1]
    assert table.key_of(np.array([9.5, 9.5])) not in table.table
    assert predict(table, [9.5, 9.5]) == pytest.approx(float(np.mean(y)))


def test_decision_table_unseen_category_is_training_mean():
    rows = [["a", 1.0], ["b", 2.0]] * 10
    y = [1.0, 5.0] * 10
    table = train_decision_table(matrix(rows, y, kinds=[C, N]))
    assert predict(table, ["never-seen", 1.0]) == pytest.approx(3.0)


def test_decision_table_rejects_single_bin():
    X, y = step_data(20)
    with pytest.raises(ValueError):
        train_decision_table(matrix(X, y), bins=1)


def planted_recovered(seed):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0, 10, size=(150, 5))
    y = 3.0 * X[:, 2] + rng.normal(0, 1.0, size=150)
    return 2 in train_decision_table(matrix(X, y)).selected


def test_decision_table_finds_planted_feature():
    assert sum(planted_recovered(seed) for seed in range(10)) >= 9


def _fuzz_rows(rng, n, kinds):
    cols = []
    for k in kinds:
        if k == C:
            cols.append(rng.choice(["wifi", "cellular", "none", "mixed"], size=n).tolist())
        else:
            v = rng.normal(0, 100, size=n)
            v[rng.random(n) < 0.1] = -1.0
            cols.append(v.tolist())
    return [list(r) for r in zip(*cols)]


@pytest.mark.parametrize("trainer, target_kind", [
    (train_regression_tree, N),
    (train_decision_table, N),
    (train_classification_tree, C),
])
def test_serialization_round_trip_on_fuzz_rows(trainer, target_kind):
    rng = np.random.default_rng(11)
    kinds = [N, C, N, N]
    X = _fuzz_rows(rng, 200, kinds)
    y = (["a", "b", "c"] * 70)[:200] if target_kind == C else rng.normal(size=200).tolist()
    model = trainer(matrix(X, y, kinds=kinds, target_kind=target_kind))
    back = loads(dumps(model))
    fuzz = _fuzz_rows(rng, 1000, kinds)
    assert predict_many(back, fuzz) == predict_many(model, fuzz)
    assert dumps(back) == dumps(model)


def test_loads_rejects_garbage():
    X, y = step_data(40)
    text = dumps(train_regression_tree(matrix(X, y)))
    with pytest.raises(ModelFormatError):
        loads("learner nonsense\n")
    with pytest.raises(ModelFormatError, match="line"):
        loads(text.replace("nodes", "nodez", 1))
    with pytest.raises(ModelFormatError):
        loads(text.replace("\nend\n", "\n"))
    with pytest.raises(ModelFormatError, match="trailing"):
        loads(text + text)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6)), min_size=4, max_size=60))
def test_tree_predictions_lie_within_target_range(pairs):
    X = [[a] for a, _ in pairs]
    y = [b for _, b in pairs]
    tree = train_regression_tree(matrix(X, y))
    for p in predict_many(tree, X):
        assert min(y) - 1e-6 <= p <= max(y) + 1e-6
