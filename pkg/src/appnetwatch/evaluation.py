"""Calibration/test protocol over simulated datasets.

A dataset pairs a benign training trace with a test trace from the same
profile, a version-updated profile or a beacon-injected profile. Both traces
share a seed and are aggregated from t = 0; training uses the first half of
the benign windows (after a warm-up) and testing uses the second half of the
test trace, so same-version datasets train and test on disjoint halves of one
trace.
"""

from __future__ import annotations

import configparser
import csv
import io
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from . import crossfeature as cf
from . import features, sim
from .detection import ACCEPTANCE_RATES, DEFAULT_ACCEPTANCE, dataset_decision

SAME_VERSION = "same_version"
DIFFERENT_VERSION = "different_version"
MALWARE = "malware"
LABELS = (DIFFERENT_VERSION, SAME_VERSION, MALWARE)
POSITIVE_LABELS = frozenset({DIFFERENT_VERSION, MALWARE})

MAX_TRAIN = 150
MAX_TEST = 400
DEFAULT_DURATION = 21600
DEFAULT_WARMUP = 10


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    app: str
    profile: str
    label: str
    seed: int
    perturbation: str | None = None
    duration_secs: int = DEFAULT_DURATION
    warmup_windows: int = DEFAULT_WARMUP
    network_relevant: bool = True

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(f"dataset {self.name!r}: unknown label {self.label!r}; valid: {', '.join(LABELS)}")
        if self.label == SAME_VERSION and self.perturbation:
            raise ValueError(f"dataset {self.name!r}: same_version datasets take no perturbation")
        if self.label != SAME_VERSION and not self.perturbation:
            raise ValueError(f"dataset {self.name!r}: {self.label} needs a perturbation")

    @property
    def counts_for_metrics(self) -> bool:
        return self.label != DIFFERENT_VERSION or self.network_relevant


@dataclass
class Manifest:
    datasets: list[DatasetSpec]
    learners: tuple[str, ...] = (cf.DEFAULT_LEARNER,)
    subsets: tuple[str, ...] = ("1",)
    acceptance_rates: tuple[float, ...] = ACCEPTANCE_RATES
    profiles: dict = field(default_factory=dict)
    perturbations: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# manifest files
# ---------------------------------------------------------------------------

def _split_list(raw: str) -> list[str]:
    return [item.strip() for item in raw.replace("\n", ",").split(",") if item.strip()]


def _parse_bool(raw: str) -> bool:
    value = raw.strip().lower()
    if value in {"1", "true", "yes", "on"}:
        return True
    if value in {"0", "false", "no", "off"}:
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def read_manifest(path) -> Manifest:
    """Parse an INI manifest: a ``[manifest]`` section plus ``[dataset NAME]`` sections.

    ``config`` in ``[manifest]`` names a profile file relative to the manifest;
    the bundled presets are used when it is absent.
    """
    path = Path(path)
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    with open(path, encoding="utf-8") as fh:
        parser.read_file(fh)
    if not parser.has_section("manifest"):
        raise ValueError(f"{path}: missing [manifest] section")
    head = parser["manifest"]
    config = head.get("config")
    config_path = sim.bundled_config_path() if config in (None, "", "bundled") else path.parent / config
    profiles, perturbations = sim.load_config(config_path)
    defaults = {
        "duration_secs": int(head.get("duration_secs", DEFAULT_DURATION)),
        "warmup_windows": int(head.get("warmup_windows", DEFAULT_WARMUP)),
    }
    learners = tuple(_split_list(head.get("learners", cf.DEFAULT_LEARNER)))
    for name in learners:
        cf.check_learner(name)
    subsets = tuple(_split_list(head.get("subsets", "1")))
    for s in subsets:
        features.get_schema(s)
    rates = tuple(float(r) for r in _split_list(head.get("acceptance_rates", ",".join(map(str, ACCEPTANCE_RATES)))))
    datasets = []
    for section in parser.sections():
        prefix, _, name = section.partition(" ")
        if prefix == "manifest":
            continue
        if prefix != "dataset" or not name:
            raise ValueError(f"{path}: unexpected section [{section}]")
        body = parser[section]
        known = {"app", "profile", "label", "seed", "perturbation", "duration_secs",
                 "warmup_windows", "network_relevant"}
        unknown = set(body) - known
        if unknown:
            raise ValueError(f"{path}: dataset {name!r}: unknown keys {sorted(unknown)}")
        try:
            spec = DatasetSpec(
                name=name,
                app=body.get("app", body["profile"]),
                profile=body["profile"],
                label=body["label"],
                seed=int(body["seed"]),
                perturbation=body.get("perturbation") or None,
                duration_secs=int(body.get("duration_secs", defaults["duration_secs"])),
                warmup_windows=int(body.get("warmup_windows", defaults["warmup_windows"])),
                network_relevant=_parse_bool(body.get("network_relevant", "true")),
            )
        except KeyError as exc:
            raise ValueError(f"{path}: dataset {name!r}: missing key {exc.args[0]!r}") from None
        if spec.profile not in profiles:
            raise ValueError(f"{path}: dataset {name!r}: unknown profile {spec.profile!r}")
        if spec.perturbation and spec.perturbation not in perturbations:
            raise ValueError(f"{path}: dataset {name!r}: unknown perturbation {spec.perturbation!r}")
        datasets.append(spec)
    if not datasets:
        raise ValueError(f"{path}: manifest lists no datasets")
    return Manifest(datasets, learners, subsets, rates, profiles, perturbations)


def bundled_manifest_path(name: str) -> Path:
    return Path(__file__).with_name("data") / f"{name}.ini"


# ---------------------------------------------------------------------------
# dataset construction
# ---------------------------------------------------------------------------

class TraceCache:
    """Aggregated vectors per (profile, perturbation, seed, duration)."""

    def __init__(self, profiles, perturbations):
        self.profiles = profiles
        self.perturbations = perturbations
        self._vectors = {}

    def vectors(self, profile: str, perturbation: str | None, seed: int, duration: int):
        key = (profile, perturbation, seed, duration)
        if key not in self._vectors:
            p = self.profiles[profile]
            if perturbation:
                p = sim.perturb_profile(p, self.perturbations[perturbation])
            events = sim.simulate_trace(p, duration, seed)
            self._vectors[key] = features.build_vectors(
                events, days_since_modified=p.days_since_modified, end_ts=duration)
        return self._vectors[key]

    def split(self, spec: DatasetSpec, max_train: int | None = MAX_TRAIN, max_test: int | None = MAX_TEST):
        """(train, test) vectors for ``spec`` with caps applied by truncation."""
        benign = self.vectors(spec.profile, None, spec.seed, spec.duration_secs)
        half = len(benign) // 2
        train = benign[spec.warmup_windows:half]
        if spec.perturbation:
            other = self.vectors(spec.profile, spec.perturbation, spec.seed, spec.duration_secs)
            test = other[len(other) // 2:]
        else:
            test = benign[half:]
        return train[:max_train], test[:max_test]


def detected_fraction(model: cf.CrossFeatureModel, vectors) -> float:
    verdicts = cf.classify_many(model, vectors)
    return dataset_decision(verdicts, DEFAULT_ACCEPTANCE).detected_anomalous_fraction


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DatasetResult:
    learner: str
    subset: str
    dataset: DatasetSpec
    n_train: int
    n_test: int
    detected_fraction: float


@dataclass(frozen=True)
class Metrics:
    learner: str
    subset: str
    acceptance_rate: float
    tp: int
    fn: int
    fp: int
    tn: int

    @property
    def tpr(self) -> float | None:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else None

    @property
    def fpr(self) -> float | None:
        return self.fp / (self.fp + self.tn) if self.fp + self.tn else None

    @property
    def accuracy(self) -> float | None:
        total = self.tp + self.fn + self.fp + self.tn
        return (self.tp + self.tn) / total if total else None


def confusion(results: Iterable[DatasetResult], rate: float):
    tp = fn = fp = tn = 0
    for r in results:
        if not r.dataset.counts_for_metrics:
            continue
        flagged = r.detected_fraction > rate
        if r.dataset.label in POSITIVE_LABELS:
            tp, fn = (tp + 1, fn) if flagged else (tp, fn + 1)
        else:
            fp, tn = (fp + 1, tn) if flagged else (fp, tn + 1)
    return tp, fn, fp, tn


@dataclass
class EvalReport:
    results: list[DatasetResult]
    metrics: list[Metrics]

    def configurations(self) -> list[tuple[str, str]]:
        seen = []
        for r in self.results:
            if (r.learner, r.subset) not in seen:
                seen.append((r.learner, r.subset))
        return seen

    def metric(self, learner: str, subset: str, rate: float) -> Metrics:
        for m in self.metrics:
            if m.learner == learner and m.subset == subset and abs(m.acceptance_rate - rate) < 1e-12:
                return m
        raise KeyError((learner, subset, rate))

    def chosen(self) -> Metrics | None:
        """Highest accuracy, then TPR, then lowest FPR; manifest order breaks ties."""
        best, best_key = None, None
        for m in self.metrics:
            if m.accuracy is None:
                continue
            key = (m.accuracy, m.tpr or 0.0, -(m.fpr or 0.0))
            if best is None or key > best_key:
                best, best_key = m, key
        return best

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["section", "learner", "subset", "dataset", "app", "label", "network_relevant",
                    "n_train", "n_test", "detected_pct", "acceptance_rate", "tp", "fn", "fp", "tn",
                    "tpr", "fpr", "accuracy"])
        for r in self.results:
            d = r.dataset
            w.writerow(["dataset", r.learner, r.subset, d.name, d.app, d.label, int(d.network_relevant),
                        r.n_train, r.n_test, f"{100 * r.detected_fraction:.1f}", "", "", "", "", "", "", "", ""])
        for m in self.metrics:
            w.writerow(["metrics", m.learner, m.subset, "", "", "", "", "", "", "", f"{m.acceptance_rate:.2f}",
                        m.tp, m.fn, m.fp, m.tn, _opt(m.tpr), _opt(m.fpr), _opt(m.accuracy)])
        return out.getvalue()

    def to_text(self) -> str:
        configs = self.configurations()
        chosen = self.chosen()
        rate = chosen.acceptance_rate if chosen else DEFAULT_ACCEPTANCE
        by_key = {(r.learner, r.subset, r.dataset.name): r for r in self.results}
        datasets = []
        for r in self.results:
            if r.dataset not in datasets:
                datasets.append(r.dataset)
        heads = [f"{learner}/{subset}" for learner, subset in configs]
        name_w = max([len("Application")] + [len(d.app) + 2 for d in datasets])
        col_w = max([10] + [len(h) for h in heads])
        lines = ["Detected anomalous records (%)",
                 "Application".ljust(name_w) + "".join(h.rjust(col_w + 2) for h in heads)]
        sections = (("Different versions", DIFFERENT_VERSION), ("Same version", SAME_VERSION),
                    ("Malware", MALWARE))
        for title, label in sections:
            rows = [d for d in datasets if d.label == label]
            if not rows:
                continue
            lines.append(title)
            for d in rows:
                cells = []
                for learner, subset in configs:
                    r = by_key[(learner, subset, d.name)]
                    wrong = d.counts_for_metrics and ((r.detected_fraction > rate) != (label in POSITIVE_LABELS))
                    mark = "*" if wrong else ("~" if not d.counts_for_metrics else " ")
                    cells.append(f"{100 * r.detected_fraction:.1f}{mark}".rjust(col_w + 2))
                lines.append(f"  {d.app}".ljust(name_w) + "".join(cells))
        lines.append("")
        lines.append(f"* decision error at acceptance rate {rate:.2f}; ~ version without network changes "
                     f"(excluded from metrics)")
        lines.append("")
        lines.append("learner/subset".ljust(name_w) + "rate".rjust(8) + "TPR".rjust(8) + "FPR".rjust(8)
                     + "accuracy".rjust(10))
        for m in self.metrics:
            lines.append(f"{m.learner}/{m.subset}".ljust(name_w) + f"{m.acceptance_rate:8.2f}"
                         + _opt(m.tpr).rjust(8) + _opt(m.fpr).rjust(8) + _opt(m.accuracy).rjust(10))
        if chosen:
            lines.append("")
            lines.append(f"chosen: {chosen.learner} subset {chosen.subset} at acceptance rate "
                         f"{chosen.acceptance_rate:.2f} (TPR {_opt(chosen.tpr)}, FPR {_opt(chosen.fpr)}, "
                         f"accuracy {_opt(chosen.accuracy)})")
        return "\n".join(lines) + "\n"

    def write(self, out_dir) -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_path, txt_path = out_dir / "report.csv", out_dir / "report.txt"
        csv_path.write_text(self.to_csv())
        txt_path.write_text(self.to_text())
        return csv_path, txt_path


def _opt(value: float | None) -> str:
    return "NA" if value is None else f"{value:.3f}"


def run_evaluation(datasets: Sequence[DatasetSpec], learners: Sequence[str] = (cf.DEFAULT_LEARNER,),
                   subsets: Sequence[str] = ("1",), acceptance_rates: Sequence[float] = ACCEPTANCE_RATES,
                   *, profiles=None, perturbations=None, cache: TraceCache | None = None) -> EvalReport:
    if cache is None:
        if profiles is None or perturbations is None:
            profiles, perturbations = sim.preset_profiles(), sim.preset_perturbations()
        cache = TraceCache(profiles, perturbations)
    results = []
    for learner in learners:
        cf.check_learner(learner)
        for subset in subsets:
            schema = features.get_schema(subset)
            for spec in datasets:
                train, test = cache.split(spec)
                model = cf.train_and_calibrate(train, schema, learner, max_train=MAX_TRAIN)
                results.append(DatasetResult(learner, subset, spec, len(train), len(test),
                                             detected_fraction(model, test)))
    metrics = []
    for learner in learners:
        for subset in subsets:
            cell = [r for r in results if r.learner == learner and r.subset == subset]
            for rate in acceptance_rates:
                metrics.append(Metrics(learner, subset, float(rate), *confusion(cell, rate)))
    return EvalReport(results, metrics)


def evaluate_manifest(manifest: Manifest, cache: TraceCache | None = None) -> EvalReport:
    cache = cache or TraceCache(manifest.profiles, manifest.perturbations)
    return run_evaluation(manifest.datasets, manifest.learners, manifest.subsets,
                          manifest.acceptance_rates, cache=cache)


# ---------------------------------------------------------------------------
# training-size curve and timing
# ---------------------------------------------------------------------------

def size_grid(available: int) -> list[int]:
    grid = list(range(10, 101, 10)) + list(range(125, 401, 25))
    return [k for k in grid if k <= available]


def training_size_curve(spec: DatasetSpec, learner: str = cf.DEFAULT_LEARNER, subset: str = "1",
                        *, cache: TraceCache | None = None) -> list[tuple[int, float]]:
    """Detected percentage on the test half for growing training prefixes.

    The calibration slice is the tail of the available training windows and
    stays fixed; each size k trains from scratch on the first k windows.
    """
    cache = cache or TraceCache(sim.preset_profiles(), sim.preset_perturbations())
    train, test = cache.split(spec, max_train=None)
    if len(train) < 10:
        raise ValueError(f"dataset {spec.name!r} has only {len(train)} training vectors")
    body, cal = cf.split_for_calibration(train)
    schema = features.get_schema(subset)
    test = test[:MAX_TEST]
    curve = []
    for k in size_grid(len(body)):
        model = cf.train_cross_feature(body[:k], schema, learner, max_train=k)
        anomalous = [cf.displace(v, schema, model.feature_means) for v in cal]
        model = model.with_threshold(cf.calibrate_threshold(model, cal, anomalous))
        curve.append((k, 100.0 * detected_fraction(model, test)))
    return curve


def benchmark_timing(learner: str = cf.DEFAULT_LEARNER, subset: str = "2", n_train: int = 50,
                     n_apps: int = 10, repeats: int = 10, seed: int = 7, duration_secs: int = 7200) -> dict:
    """Median wall-clock cost of training one model and of scoring one vector.

    Training time includes threshold calibration, i.e. everything the
    ``train`` command does before writing the model.

    Every configuration is run once untimed first, so one-off compilation is
    not counted.
    """
    profiles = list(sim.preset_profiles().values())[:n_apps]
    schema = features.get_schema(subset)
    workloads = []
    for i, p in enumerate(profiles):
        vectors = features.build_vectors(sim.simulate_trace(p, duration_secs, seed + i), end_ts=duration_secs)
        body = vectors[DEFAULT_WARMUP:]
        workloads.append((body[:n_train], body[n_train:n_train + 20]))
    models = []
    for train, probe in workloads:
        models.append(cf.train_and_calibrate(train, schema, learner))
    train_times, test_times, floor = [], [], []
    for _ in range(repeats):
        for (train, probe), model in zip(workloads, models):
            t0 = time.perf_counter()
            cf.train_and_calibrate(train, schema, learner, max_train=n_train)
            t1 = time.perf_counter()
            for v in probe:
                cf.classify_instance(model, v)
            t2 = time.perf_counter()
            for v in probe:
                pass
            t3 = time.perf_counter()
            train_times.append((t1 - t0) * 1e3)
            test_times.append((t2 - t1) * 1e3 / max(len(probe), 1))
            floor.append((t3 - t2) * 1e3 / max(len(probe), 1))
    return {
        "learner": learner,
        "subset": subset,
        "n_train": n_train,
        "n_apps": len(workloads),
        "repeats": repeats,
        "train_ms_per_model": statistics.median(train_times),
        "test_ms_per_instance": statistics.median(test_times),
        "noop_ms_per_instance": statistics.median(floor),
    }
