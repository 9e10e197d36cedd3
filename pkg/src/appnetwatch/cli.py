"""Command-line entry point: ``appnetwatch <subcommand> ...``.

Exit status is 0 on success, 1 for usage errors and 2 for unreadable or
malformed input data.
"""

from __future__ import annotations

import argparse
import configparser
import sys
from pathlib import Path

from . import crossfeature as cf
from . import detection, evaluation, features, kernels, sim
from .learners.modelio import ModelFormatError

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 by default, which we reserve for bad data
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _subset(value: str) -> str:
    if value not in features.SUBSETS:
        raise argparse.ArgumentTypeError(
            f"unknown subset {value!r}; valid: {', '.join(features.SUBSETS)}")
    return value


def _learner(value: str) -> str:
    if value not in cf.LEARNERS:
        raise argparse.ArgumentTypeError(
            f"unknown learner {value!r}; valid: {', '.join(cf.LEARNERS)}")
    return value


def _rate(value: str) -> float:
    try:
        rate = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {value!r}") from None
    if not 0 <= rate <= 1:
        raise argparse.ArgumentTypeError(f"acceptance rate must lie in [0, 1], got {rate}")
    return rate


def _positive(value: str) -> int:
    try:
        n = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {value!r}") from None
    if n < 1:
        raise argparse.ArgumentTypeError(f"must be positive, got {n}")
    return n


def _config(path):
    if path is None:
        return sim.preset_profiles(), sim.preset_perturbations()
    return sim.load_config(path)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="appnetwatch", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate a raw event trace")
    p.add_argument("--profile", action="append", required=True,
                   help="profile name; repeat to merge several apps into one trace")
    p.add_argument("--perturbation", help="perturbation applied to every profile")
    p.add_argument("--config", help="profile INI file (default: bundled presets)")
    p.add_argument("--duration", type=_positive, default=evaluation.DEFAULT_DURATION)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("aggregate", help="turn an event trace into per-window vectors")
    p.add_argument("trace")
    p.add_argument("--period", type=_positive, default=features.DEFAULT_PERIOD_SECS)
    p.add_argument("--window", type=_positive, default=features.DEFAULT_WINDOW_SECS)
    p.add_argument("--end", type=int, help="trace end time in seconds (default: last event)")
    p.add_argument("--days", type=float,
                   help="days since the app was modified (default: from the profile of the same name)")
    p.add_argument("--config", help="profile INI file used to look up --days")
    p.add_argument("--label")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train and calibrate a model from benign vectors")
    p.add_argument("vectors")
    p.add_argument("--app", help="use only this app's vectors")
    p.add_argument("--subset", type=_subset, default="1")
    p.add_argument("--learner", type=_learner, default=cf.DEFAULT_LEARNER)
    p.add_argument("--skip", type=int, default=evaluation.DEFAULT_WARMUP,
                   help="leading warm-up windows to drop")
    p.add_argument("--max-train", type=_positive, default=cf.DEFAULT_MAX_TRAIN)
    p.add_argument("--model", "--out", dest="model", required=True)

    p = sub.add_parser("detect", help="stream verdicts and alarms for vectors")
    p.add_argument("vectors")
    p.add_argument("--model", required=True)
    p.add_argument("--app", help="use only this app's vectors")
    p.add_argument("--acceptance", type=_rate, default=detection.DEFAULT_ACCEPTANCE)
    p.add_argument("--out", help="alarm log (default: standard error)")

    p = sub.add_parser("evaluate", help="run a manifest of datasets")
    p.add_argument("--manifest", default="test",
                   help="manifest path or bundled name (calibration, test)")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("bench", help="time training and per-instance testing")
    p.add_argument("--learner", type=_learner, default=cf.DEFAULT_LEARNER)
    p.add_argument("--subset", type=_subset, default="2")
    p.add_argument("--n-train", type=_positive, default=50)
    p.add_argument("--repeats", type=_positive, default=10)
    p.add_argument("--seed", type=int, default=7)
    return parser


def cmd_simulate(args, out):
    profiles, perturbations = _config(args.config)
    traces = []
    for i, name in enumerate(args.profile):
        if name not in profiles:
            raise UsageError(f"unknown profile {name!r}; valid: {', '.join(profiles)}")
        profile = profiles[name]
        if args.perturbation:
            if args.perturbation not in perturbations:
                raise UsageError(f"unknown perturbation {args.perturbation!r}; "
                                 f"valid: {', '.join(perturbations)}")
            profile = sim.perturb_profile(profile, perturbations[args.perturbation])
        traces.append(sim.simulate_trace(profile, args.duration, args.seed + i))
    events = traces[0] if len(traces) == 1 else sim.merge_traces(*traces)
    sim.write_trace(events, args.out)
    print(f"wrote {len(events)} events to {args.out}", file=out)


def cmd_aggregate(args, out):
    if args.window % args.period:
        raise UsageError(f"--window {args.window} is not a multiple of --period {args.period}")
    events = sim.read_trace(args.trace)
    if args.days is not None:
        days = args.days
    else:
        profiles, _ = _config(args.config)
        days = {p.app_id: p.days_since_modified for p in profiles.values()}
    vectors = features.build_vectors(events, period_secs=args.period, window_secs=args.window,
                                     days_since_modified=days, end_ts=args.end, label=args.label)
    features.write_vectors(vectors, args.out)
    print(f"wrote {len(vectors)} vectors to {args.out}", file=out)


def _select_app(vectors, app):
    apps = sorted({v.app_id for v in vectors})
    if app is None:
        if len(apps) > 1:
            raise UsageError(f"vectors cover several apps ({', '.join(apps)}); pick one with --app")
        return vectors
    if app not in apps:
        raise UsageError(f"no vectors for app {app!r}; present: {', '.join(apps) or 'none'}")
    return [v for v in vectors if v.app_id == app]


def cmd_train(args, out):
    vectors = _select_app(features.read_vectors(args.vectors), args.app)
    train = vectors[max(args.skip, 0):][:args.max_train]
    if len(train) < cf.MIN_TRAIN:
        raise ValueError(f"{args.vectors}: only {len(train)} training vectors after skipping "
                         f"{args.skip}; need at least {cf.MIN_TRAIN}")
    model = cf.train_and_calibrate(train, features.get_schema(args.subset), args.learner,
                                   max_train=args.max_train)
    cf.save_model(model, args.model)
    print(f"trained {args.learner}/{args.subset} on {len(train)} vectors, "
          f"threshold {model.threshold_logp!r}; wrote {args.model}", file=out)


def cmd_detect(args, out):
    model = cf.load_model(args.model)
    if not model.calibrated:
        raise ValueError(f"{args.model}: model has no calibrated threshold")
    vectors = _select_app(features.read_vectors(args.vectors), args.app)
    alarm_fh = open(args.out, "w", encoding="utf-8") if args.out else sys.stderr
    try:
        state = detection.AlarmState()
        first_days = {}
        flags = []
        for v in vectors:
            verdict = cf.classify_instance(model, v)
            flags.append(verdict.is_anomalous)
            out.write(f"{v.window_end_ts}\t{v.app_id}\t{verdict.log_probability!r}\t"
                      f"{'anomalous' if verdict.is_anomalous else 'normal'}\n")
            # a drop in days-since-modified means the app was reinstalled or updated
            updated = v.days_since_modified < first_days.setdefault(v.app_id, v.days_since_modified)
            state, alarm = detection.update_alarm(state, verdict, version_update_seen=updated)
            if alarm is not None:
                detection.write_alarm(alarm_fh, alarm)
        out.flush()
    finally:
        if args.out:
            alarm_fh.close()
    if flags:
        d = detection.dataset_decision(flags, args.acceptance)
        out.write(f"# anomalous {d.n_anomalous}/{d.n_total} ({d.detected_anomalous_fraction:.4f}); "
                  f"acceptance {d.acceptance_rate:.2f}; "
                  f"meaningful deviation: {'yes' if d.is_meaningful_deviation else 'no'}\n")


def _manifest_path(name: str) -> Path:
    path = Path(name)
    if path.exists():
        return path
    bundled = evaluation.bundled_manifest_path(name)
    if bundled.exists():
        return bundled
    raise UsageError(f"no manifest at {name!r} and no bundled manifest of that name "
                     f"(bundled: calibration, test)")


def cmd_evaluate(args, out):
    manifest = evaluation.read_manifest(_manifest_path(args.manifest))
    report = evaluation.evaluate_manifest(manifest)
    csv_path, txt_path = report.write(args.out)
    out.write(report.to_text())
    print(f"wrote {csv_path} and {txt_path}", file=sys.stderr)


def cmd_bench(args, out):
    r = evaluation.benchmark_timing(args.learner, args.subset, n_train=args.n_train,
                                    repeats=args.repeats, seed=args.seed)
    rows = [("backend", kernels.backend()), ("learner", r["learner"]), ("subset", r["subset"]),
            ("train vectors", r["n_train"]), ("apps", r["n_apps"]), ("repeats", r["repeats"]),
            ("train ms/model (median)", f"{r['train_ms_per_model']:.3f}"),
            ("test ms/instance (median)", f"{r['test_ms_per_instance']:.4f}"),
            ("loop overhead ms/instance", f"{r['noop_ms_per_instance']:.5f}")]
    width = max(len(k) for k, _ in rows)
    for k, v in rows:
        out.write(f"{k.ljust(width)}  {v}\n")


COMMANDS = {
    "simulate": cmd_simulate,
    "aggregate": cmd_aggregate,
    "train": cmd_train,
    "detect": cmd_detect,
    "evaluate": cmd_evaluate,
    "bench": cmd_bench,
}


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        COMMANDS[args.command](args, out)
    except UsageError as exc:
        print(f"appnetwatch {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (sim.FormatError, ModelFormatError, configparser.Error, OSError, ValueError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"appnetwatch {args.command}: {msg}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
