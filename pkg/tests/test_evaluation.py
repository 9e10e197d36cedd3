import random

import pytest

from appnetwatch import evaluation as ev, sim
from appnetwatch.evaluation import DatasetResult, DatasetSpec, Metrics


def spec(name, label, perturbation=None, relevant=True, profile="mail"):
    return DatasetSpec(name, profile, profile, label, 1, perturbation, duration_secs=3600,
                       network_relevant=relevant)


def result(d, fraction):
    return DatasetResult("decision_table", "1", d, 100, 100, fraction)


def test_perfect_confusion():
    rs = [result(spec(f"p{i}", ev.MALWARE, "beacon"), 0.9) for i in range(8)]
    rs += [result(spec(f"n{i}", ev.SAME_VERSION), 0.0) for i in range(8)]
    m = Metrics("decision_table", "1", 0.2, *ev.confusion(rs, 0.2))
    assert (m.tpr, m.fpr, m.accuracy) == (1.0, 0.0, 1.0)


def test_confusion_arithmetic():
    m = Metrics("decision_table", "1", 0.2, tp=4, fn=1, fp=0, tn=11)
    assert m.tpr == 0.8 and m.fpr == 0.0
    assert m.accuracy == pytest.approx(15 / 16)
    assert round(m.accuracy, 2) == 0.94


def test_undefined_metrics_are_none():
    m = Metrics("decision_table", "1", 0.2, tp=0, fn=0, fp=1, tn=3)
    assert m.tpr is None and m.fpr == 0.25
    assert Metrics("decision_table", "1", 0.2, 0, 0, 0, 0).accuracy is None


def test_confusion_matches_recount():
    rnd = random.Random(4)
    labels = [ev.SAME_VERSION, ev.DIFFERENT_VERSION, ev.MALWARE]
    rs = []
    for i in range(200):
        label = rnd.choice(labels)
        d = spec(f"d{i}", label, None if label == ev.SAME_VERSION else "beacon", rnd.random() < 0.8)
        rs.append(result(d, rnd.random()))
    for rate in (0.05, 0.2, 0.5):
        counted = [r for r in rs if r.dataset.label != ev.DIFFERENT_VERSION or r.dataset.network_relevant]
        pos = [r.detected_fraction > rate for r in counted if r.dataset.label != ev.SAME_VERSION]
        neg = [r.detected_fraction > rate for r in counted if r.dataset.label == ev.SAME_VERSION]
        want = (sum(pos), len(pos) - sum(pos), sum(neg), len(neg) - sum(neg))
        assert ev.confusion(rs, rate) == want


def test_irrelevant_versions_are_excluded():
    d = spec("cosmetic", ev.DIFFERENT_VERSION, "version_cosmetic", relevant=False)
    assert ev.confusion([result(d, 0.0)], 0.2) == (0, 0, 0, 0)


def test_size_grid():
    assert ev.size_grid(400) == list(range(10, 101, 10)) + list(range(125, 401, 25))
    assert ev.size_grid(55) == [10, 20, 30, 40, 50]


def test_dataset_spec_rules():
    with pytest.raises(ValueError, match="valid"):
        spec("x", "benign")
    with pytest.raises(ValueError):
        spec("x", ev.SAME_VERSION, "beacon")
    with pytest.raises(ValueError):
        spec("x", ev.MALWARE)


def test_split_layout():
    cache = ev.TraceCache(*_presets())
    d = DatasetSpec("m", "mail", "mail", ev.MALWARE, 2, "beacon", duration_secs=3600)
    train, test = cache.split(d)
    benign = cache.vectors("mail", None, 2, 3600)
    bad = cache.vectors("mail", "beacon", 2, 3600)
    assert train == benign[10:len(benign) // 2]
    assert test == bad[len(bad) // 2:]


def _presets():
    return sim.preset_profiles(), sim.preset_perturbations()


def test_small_evaluation_and_report():
    datasets = [
        DatasetSpec("mail_same", "mail", "mail", ev.SAME_VERSION, 1, duration_secs=7200),
        DatasetSpec("snake_beacon", "snake", "snake", ev.MALWARE, 1, "beacon", duration_secs=7200),
        DatasetSpec("mail_cosmetic", "mail", "mail", ev.DIFFERENT_VERSION, 1, "version_cosmetic",
                    duration_secs=7200, network_relevant=False),
    ]
    report = ev.run_evaluation(datasets, ["decision_table"], ["1"], [0.2])
    m = report.metric("decision_table", "1", 0.2)
    assert (m.tp, m.fn, m.fp, m.tn) == (1, 0, 0, 1)
    text = report.to_text()
    assert text.index("Different versions") < text.index("Same version") < text.index("Malware")
    assert "~" in text
    assert report.chosen() == m
    assert report.to_text() == ev.run_evaluation(datasets, ["decision_table"], ["1"], [0.2]).to_text()


def test_manifest_parsing(tmp_path):
    path = tmp_path / "m.ini"
    path.write_text("[manifest]\nlearners = reptree\nsubsets = 2\nacceptance_rates = 0.1\n\n"
                    "[dataset a]\nprofile = mail\nlabel = same_version\nseed = 3\n")
    m = ev.read_manifest(path)
    assert (m.learners, m.subsets, m.acceptance_rates) == (("reptree",), ("2",), (0.1,))
    assert m.datasets[0].seed == 3 and m.datasets[0].duration_secs == ev.DEFAULT_DURATION


@pytest.mark.parametrize("body, match", [
    ("[dataset a]\nprofile = mail\nlabel = same_version\nseed = 1\n", "manifest"),
    ("[manifest]\n", "no datasets"),
    ("[manifest]\n[dataset a]\nprofile = mail\nlabel = same_version\n", "seed"),
    ("[manifest]\n[dataset a]\nprofile = nope\nlabel = same_version\nseed = 1\n", "profile"),
    ("[manifest]\n[dataset a]\nprofile = mail\nlabel = malware\nseed = 1\nperturbation = x\n", "perturbation"),
    ("[manifest]\n[dataset a]\nprofile = mail\nlabel = same_version\nseed = 1\ncolour = red\n", "unknown"),
    ("[manifest]\n[other]\n", "unexpected"),
])
def test_manifest_errors(tmp_path, body, match):
    path = tmp_path / "m.ini"
    path.write_text(body)
    with pytest.raises(ValueError, match=match):
        ev.read_manifest(path)


def test_manifest_rejects_unknown_ids(tmp_path):
    path = tmp_path / "m.ini"
    path.write_text("[manifest]\nsubsets = 7\n[dataset a]\nprofile = mail\nlabel = same_version\nseed = 1\n")
    with pytest.raises(KeyError, match="valid"):
        ev.read_manifest(path)


@pytest.mark.parametrize("name, n, labels", [
    ("calibration", 16, {ev.SAME_VERSION, ev.DIFFERENT_VERSION}),
    ("test", 12, set(ev.LABELS)),
])
def test_bundled_manifests(name, n, labels):
    m = ev.read_manifest(ev.bundled_manifest_path(name))
    assert len(m.datasets) == n
    assert {d.label for d in m.datasets} == labels


def test_constant_profile_is_quiet_at_size_ten():
    profiles, perturbations = _presets()
    profiles = dict(profiles, still=sim.AppProfile("still", periodic_sync_interval_secs=60,
                                                   periodic_sync_bytes=100))
    cache = ev.TraceCache(profiles, perturbations)
    d = DatasetSpec("still", "still", "still", ev.SAME_VERSION, 1, duration_secs=7200)
    curve = ev.training_size_curve(d, cache=cache)
    assert curve[0] == (10, 0.0)


def test_benchmark_shape():
    out = ev.benchmark_timing(n_apps=2, repeats=2)
    assert out["n_apps"] == 2
    assert out["train_ms_per_model"] > 0 and out["test_ms_per_instance"] > 0
    assert out["noop_ms_per_instance"] < out["test_ms_per_instance"]
