"""Periodic measurement and windowed aggregation of per-app traffic.

Two stages turn a raw event stream into learning instances:

``extract_samples``
    one :class:`NetworkSample` per app per extraction period (default 5 s).
    Periods are aligned to multiples of the period length and are closed on
    the right, ``(end - period, end]``; events at ``t = 0`` fall in the first
    period.

``aggregate_window`` / ``aggregate_samples``
    one :class:`AggregatedVector` per app per aggregation window (default
    60 s), aligned the same way. Interval features come in a *local* variant
    (gaps between events inside the window) and a *global* variant (running
    average of every gap since monitoring started, carried in
    :class:`GlobalState`).

Undefined values (no qualifying gap, never sent, never active) use the
sentinel ``-1``.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .sim import (ACTIVE, FG_ENTER, FG_EXIT, INACTIVE, NET_STATE_CHANGE, RECEIVE, SEND,
                  FormatError, NetworkEvent)

SENTINEL = -1.0
DEFAULT_PERIOD_SECS = 5
DEFAULT_WINDOW_SECS = 60
DEFAULT_BOUNDARY_SECS = 30.0
DEFAULT_CONTINUITY_SECS = 30.0

NUMERIC = "numeric"
CATEGORICAL = "categorical"

MIXED = "mixed"
FOREGROUND, BACKGROUND = "foreground", "background"
ACTIVE_STATE, NONACTIVE_STATE = "active", "nonactive"
EVENTUAL, CONTINUOUS = "eventual", "continuous"

VECTORS_MAGIC = "# appnetwatch-vectors v1"
SAMPLES_MAGIC = "# appnetwatch-samples v1"


@dataclass(frozen=True, slots=True)
class NetworkSample:
    window_end_ts: int
    app_id: str
    sent_bytes: int
    recv_bytes: int
    sent_pct: float
    recv_pct: float
    net_state: str
    secs_since_last_send: float
    secs_since_last_recv: float
    send_mode: str
    recv_mode: str
    fg_state: bool
    active_state: bool
    fg_time_total_secs: int
    bg_time_total_secs: int
    mins_since_last_active: float
    days_since_modified: float
    send_times: tuple[int, ...] = ()
    recv_times: tuple[int, ...] = ()


@dataclass(frozen=True, slots=True)
class AggregatedVector:
    app_id: str
    window_end_ts: int
    avg_sent_bytes: float
    std_sent_bytes: float
    min_sent_bytes: float
    max_sent_bytes: float
    avg_recv_bytes: float
    std_recv_bytes: float
    min_recv_bytes: float
    max_recv_bytes: float
    avg_sent_pct: float
    std_sent_pct: float
    min_sent_pct: float
    max_sent_pct: float
    avg_recv_pct: float
    std_recv_pct: float
    min_recv_pct: float
    max_recv_pct: float
    pct_sent_bytes: float
    pct_recv_bytes: float
    local_inner_avg_send_interval: float
    local_inner_avg_recv_interval: float
    local_outer_avg_send_interval: float
    local_outer_avg_recv_interval: float
    global_inner_avg_send_interval: float
    global_inner_avg_recv_interval: float
    global_outer_avg_send_interval: float
    global_outer_avg_recv_interval: float
    net_state: str
    mins_since_last_send: float
    mins_since_last_recv: float
    app_state1: str
    app_state2: str
    fg_time_total_secs: float
    bg_time_total_secs: float
    fg_time_local_secs: float
    bg_time_local_secs: float
    mins_since_last_active: float
    days_since_modified: float
    label: str | None = None


CATEGORICAL_FEATURES = frozenset({"net_state", "app_state1", "app_state2"})
FEATURE_NAMES = tuple(f.name for f in dataclasses.fields(AggregatedVector)
                      if f.name not in ("app_id", "window_end_ts", "label"))
FEATURES = tuple((name, CATEGORICAL if name in CATEGORICAL_FEATURES else NUMERIC)
                 for name in FEATURE_NAMES)


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered feature list plus the active subset used for learning."""

    active: tuple[str, ...]
    subset_id: str = "custom"
    features: tuple[tuple[str, str], ...] = FEATURES

    def __post_init__(self):
        names = [name for name, _ in self.features]
        if len(set(names)) != len(names):
            raise ValueError("feature names must be unique")
        if len(set(self.active)) != len(self.active):
            raise ValueError("active feature names must be unique")
        unknown = [name for name in names if name not in FEATURE_NAMES]
        if unknown:
            raise ValueError(f"not aggregated-vector fields: {unknown}")
        missing = [name for name in self.active if name not in names]
        if missing:
            raise ValueError(f"active features not in schema: {missing}")

    @property
    def kinds(self) -> dict[str, str]:
        return dict(self.features)

    @property
    def active_features(self) -> tuple[tuple[str, str], ...]:
        kinds = self.kinds
        return tuple((name, kinds[name]) for name in self.active)

    def row(self, vector: AggregatedVector) -> list:
        return [getattr(vector, name) for name in self.active]


_SUBSET_1 = (
    "avg_sent_bytes",
    "avg_recv_bytes",
    "pct_recv_bytes",
    "global_inner_avg_send_interval",
    "global_inner_avg_recv_interval",
    "global_outer_avg_send_interval",
    "global_outer_avg_recv_interval",
)

SUBSETS = {
    "1": FeatureSchema(active=_SUBSET_1, subset_id="1"),
    "2": FeatureSchema(active=_SUBSET_1 + ("avg_sent_pct", "avg_recv_pct"), subset_id="2"),
    "full": FeatureSchema(active=FEATURE_NAMES, subset_id="full"),
}


def get_schema(subset_id: str) -> FeatureSchema:
    try:
        return SUBSETS[str(subset_id)]
    except KeyError:
        raise KeyError(f"unknown feature subset {subset_id!r}; valid: {', '.join(SUBSETS)}") from None


# ---------------------------------------------------------------------------
# extraction
# ---------------------------------------------------------------------------

@dataclass
class _Tracker:
    start: int
    cursor: int
    fg: bool = False
    active: bool = False
    net: str = "none"
    fg_total: int = 0
    bg_total: int = 0
    last_send: int | None = None
    last_recv: int | None = None
    inactive_since: int | None = None

    def advance(self, t):
        if self.fg:
            self.fg_total += t - self.cursor
        else:
            self.bg_total += t - self.cursor
        self.cursor = t


def _period_index(t, period):
    return max(1, -(-t // period))


def extract_samples(
    events: Sequence[NetworkEvent],
    extraction_period_secs: int = DEFAULT_PERIOD_SECS,
    *,
    continuity_secs: float = DEFAULT_CONTINUITY_SECS,
    days_since_modified: float | Mapping[str, float] = 0.0,
    end_ts: int | None = None,
) -> list[NetworkSample]:
    """Measure every monitored app once per extraction period.

    An app is monitored from its first event. Percent features are the app's
    share of all monitored apps' bytes in the same period (0 when the device
    moved nothing). ``end_ts`` extends sampling past the last event.
    """
    period = extraction_period_secs
    if int(period) != period or period < 1:
        raise ValueError(f"extraction period must be a positive integer, got {period!r}")
    for prev, cur in zip(events, events[1:]):
        if cur.timestamp < prev.timestamp:
            raise ValueError(f"events not sorted: {cur.timestamp} after {prev.timestamp}")
    if not events:
        return []
    if events[0].timestamp < 0:
        raise ValueError("timestamps must be non-negative")

    last_t = events[-1].timestamp if end_ts is None else max(end_ts, events[-1].timestamp)
    trackers: dict[str, _Tracker] = {}
    samples: list[NetworkSample] = []
    i, n = 0, len(events)
    for k in range(_period_index(events[0].timestamp, period), _period_index(last_t, period) + 1):
        end = k * period
        moved: dict[str, list] = {}
        while i < n and _period_index(events[i].timestamp, period) == k:
            ev = events[i]
            i += 1
            tr = trackers.get(ev.app_id)
            if tr is None:
                tr = trackers[ev.app_id] = _Tracker(start=ev.timestamp, cursor=ev.timestamp)
            kind = ev.kind
            if kind == SEND or kind == RECEIVE:
                acc = moved.setdefault(ev.app_id, [0, 0, [], []])
                if kind == SEND:
                    acc[0] += ev.bytes
                    acc[2].append(ev.timestamp)
                    tr.last_send = ev.timestamp
                else:
                    acc[1] += ev.bytes
                    acc[3].append(ev.timestamp)
                    tr.last_recv = ev.timestamp
                continue
            tr.advance(ev.timestamp)
            if kind == FG_ENTER:
                tr.fg = True
            elif kind == FG_EXIT:
                tr.fg = False
            elif kind == ACTIVE:
                tr.active = True
            elif kind == INACTIVE:
                if tr.active:
                    tr.inactive_since = ev.timestamp
                tr.active = False
            elif kind == NET_STATE_CHANGE:
                tr.net = ev.net_state or "none"
            else:
                raise ValueError(f"unknown event kind {kind!r}")

        total_sent = sum(acc[0] for acc in moved.values())
        total_recv = sum(acc[1] for acc in moved.values())
        for app, tr in trackers.items():
            tr.advance(end)
            sent, recv, send_times, recv_times = moved.get(app, (0, 0, (), ()))
            since_send = float(end - tr.last_send) if tr.last_send is not None else SENTINEL
            since_recv = float(end - tr.last_recv) if tr.last_recv is not None else SENTINEL
            if tr.active:
                mins_active = 0.0
            elif tr.inactive_since is not None:
                mins_active = (end - tr.inactive_since) / 60.0
            else:
                mins_active = SENTINEL
            base_days = (days_since_modified.get(app, 0.0)
                         if isinstance(days_since_modified, Mapping) else days_since_modified)
            samples.append(NetworkSample(
                window_end_ts=end,
                app_id=app,
                sent_bytes=sent,
                recv_bytes=recv,
                sent_pct=100.0 * sent / total_sent if total_sent else 0.0,
                recv_pct=100.0 * recv / total_recv if total_recv else 0.0,
                net_state=tr.net,
                secs_since_last_send=since_send,
                secs_since_last_recv=since_recv,
                send_mode=CONTINUOUS if 0 <= since_send < continuity_secs else EVENTUAL,
                recv_mode=CONTINUOUS if 0 <= since_recv < continuity_secs else EVENTUAL,
                fg_state=tr.fg,
                active_state=tr.active,
                fg_time_total_secs=tr.fg_total,
                bg_time_total_secs=tr.bg_total,
                mins_since_last_active=mins_active,
                days_since_modified=base_days + end / 86400.0,
                send_times=tuple(send_times),
                recv_times=tuple(recv_times),
            ))
    return samples


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------

def split_intervals(event_times: Sequence[float], boundary_secs: float = DEFAULT_BOUNDARY_SECS):
    """Partition consecutive gaps into ``(inner, outer)`` at ``boundary_secs``.

    >>> split_intervals([0, 10, 25, 70])
    ([10, 15], [45])
    """
    inner, outer = [], []
    for a, b in zip(event_times, event_times[1:]):
        gap = b - a
        (inner if gap < boundary_secs else outer).append(gap)
    return inner, outer


@dataclass
class _GapMean:
    total: float = 0.0
    count: int = 0

    def add(self, gaps):
        for g in gaps:
            self.total += g
            self.count += 1

    def value(self):
        return self.total / self.count if self.count else SENTINEL


@dataclass
class GlobalState:
    """Running accumulator for one app's monitoring session."""

    app_id: str | None = None
    boundary_secs: float = DEFAULT_BOUNDARY_SECS
    last_send_ts: int | None = None
    last_recv_ts: int | None = None
    inner_send: _GapMean = field(default_factory=_GapMean)
    outer_send: _GapMean = field(default_factory=_GapMean)
    inner_recv: _GapMean = field(default_factory=_GapMean)
    outer_recv: _GapMean = field(default_factory=_GapMean)
    fg_total: float = 0.0
    bg_total: float = 0.0
    windows: int = 0


def _stats(values):
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std()), float(arr.min()), float(arr.max())


def _local_mean(gaps):
    return sum(gaps) / len(gaps) if gaps else SENTINEL


def _combined(values, single):
    distinct = set(values)
    return single(distinct.pop()) if len(distinct) == 1 else MIXED


def aggregate_window(
    samples: Sequence[NetworkSample],
    global_state: GlobalState,
    *,
    window_end_ts: int | None = None,
    window_secs: int = DEFAULT_WINDOW_SECS,
    label: str | None = None,
) -> AggregatedVector:
    """Collapse one window of one app's samples into an instance vector.

    Updates ``global_state`` in place; windows must be fed in time order.
    """
    if not samples:
        raise ValueError("cannot aggregate an empty window")
    app = samples[0].app_id
    if any(s.app_id != app for s in samples):
        raise ValueError("samples of one window must belong to a single app")
    if global_state.app_id is None:
        global_state.app_id = app
    elif global_state.app_id != app:
        raise ValueError(f"global state belongs to {global_state.app_id!r}, not {app!r}")
    if window_end_ts is None:
        window_end_ts = -(-samples[-1].window_end_ts // window_secs) * window_secs
    boundary = global_state.boundary_secs

    send_times = [t for s in samples for t in s.send_times]
    recv_times = [t for s in samples for t in s.recv_times]
    local_inner_send, local_outer_send = split_intervals(send_times, boundary)
    local_inner_recv, local_outer_recv = split_intervals(recv_times, boundary)

    g = global_state
    prev = [g.last_send_ts] if g.last_send_ts is not None else []
    inner, outer = split_intervals(prev + send_times, boundary)
    g.inner_send.add(inner)
    g.outer_send.add(outer)
    prev = [g.last_recv_ts] if g.last_recv_ts is not None else []
    inner, outer = split_intervals(prev + recv_times, boundary)
    g.inner_recv.add(inner)
    g.outer_recv.add(outer)
    if send_times:
        g.last_send_ts = send_times[-1]
    if recv_times:
        g.last_recv_ts = recv_times[-1]

    last = samples[-1]
    fg_local = last.fg_time_total_secs - g.fg_total
    bg_local = last.bg_time_total_secs - g.bg_total
    g.fg_total = last.fg_time_total_secs
    g.bg_total = last.bg_time_total_secs
    g.windows += 1

    sent = [s.sent_bytes for s in samples]
    recv = [s.recv_bytes for s in samples]
    total_sent, total_recv = sum(sent), sum(recv)
    moved = total_sent + total_recv
    avg_s, std_s, min_s, max_s = _stats(sent)
    avg_r, std_r, min_r, max_r = _stats(recv)
    avg_sp, std_sp, min_sp, max_sp = _stats([s.sent_pct for s in samples])
    avg_rp, std_rp, min_rp, max_rp = _stats([s.recv_pct for s in samples])

    def minutes(secs):
        return secs / 60.0 if secs >= 0 else SENTINEL

    return AggregatedVector(
        app_id=app,
        window_end_ts=int(window_end_ts),
        avg_sent_bytes=avg_s, std_sent_bytes=std_s, min_sent_bytes=min_s, max_sent_bytes=max_s,
        avg_recv_bytes=avg_r, std_recv_bytes=std_r, min_recv_bytes=min_r, max_recv_bytes=max_r,
        avg_sent_pct=avg_sp, std_sent_pct=std_sp, min_sent_pct=min_sp, max_sent_pct=max_sp,
        avg_recv_pct=avg_rp, std_recv_pct=std_rp, min_recv_pct=min_rp, max_recv_pct=max_rp,
        pct_sent_bytes=100.0 * total_sent / moved if moved else 0.0,
        pct_recv_bytes=100.0 * total_recv / moved if moved else 0.0,
        local_inner_avg_send_interval=_local_mean(local_inner_send),
        local_inner_avg_recv_interval=_local_mean(local_inner_recv),
        local_outer_avg_send_interval=_local_mean(local_outer_send),
        local_outer_avg_recv_interval=_local_mean(local_outer_recv),
        global_inner_avg_send_interval=g.inner_send.value(),
        global_inner_avg_recv_interval=g.inner_recv.value(),
        global_outer_avg_send_interval=g.outer_send.value(),
        global_outer_avg_recv_interval=g.outer_recv.value(),
        net_state=_combined([s.net_state for s in samples], str),
        mins_since_last_send=minutes(last.secs_since_last_send),
        mins_since_last_recv=minutes(last.secs_since_last_recv),
        app_state1=_combined([s.fg_state for s in samples],
                             lambda fg: FOREGROUND if fg else BACKGROUND),
        app_state2=_combined([s.active_state for s in samples],
                             lambda a: ACTIVE_STATE if a else NONACTIVE_STATE),
        fg_time_total_secs=float(last.fg_time_total_secs),
        bg_time_total_secs=float(last.bg_time_total_secs),
        fg_time_local_secs=float(fg_local),
        bg_time_local_secs=float(bg_local),
        mins_since_last_active=last.mins_since_last_active,
        days_since_modified=last.days_since_modified,
        label=label,
    )


def aggregate_samples(
    samples: Iterable[NetworkSample],
    window_secs: int = DEFAULT_WINDOW_SECS,
    *,
    boundary_secs: float = DEFAULT_BOUNDARY_SECS,
    label: str | None = None,
) -> list[AggregatedVector]:
    """Group samples into aligned windows per app and aggregate each window.

    Output is ordered by window end, then by the app's first appearance.
    """
    if int(window_secs) != window_secs or window_secs < 1:
        raise ValueError(f"window must be a positive integer, got {window_secs!r}")
    grouped: dict[str, dict[int, list[NetworkSample]]] = {}
    for s in samples:
        end = -(-s.window_end_ts // window_secs) * window_secs
        grouped.setdefault(s.app_id, {}).setdefault(end, []).append(s)
    out = []
    for app, windows in grouped.items():
        state = GlobalState(boundary_secs=boundary_secs)
        for end in sorted(windows):
            out.append(aggregate_window(windows[end], state, window_end_ts=end,
                                        window_secs=window_secs, label=label))
    order = {app: i for i, app in enumerate(grouped)}
    out.sort(key=lambda v: (v.window_end_ts, order[v.app_id]))
    return out


def build_vectors(
    events: Sequence[NetworkEvent],
    *,
    period_secs: int = DEFAULT_PERIOD_SECS,
    window_secs: int = DEFAULT_WINDOW_SECS,
    days_since_modified: float | Mapping[str, float] = 0.0,
    end_ts: int | None = None,
    label: str | None = None,
) -> list[AggregatedVector]:
    """Events to vectors in one call (extract, then aggregate).

    The window must be a whole number of extraction periods, so that every
    sample falls inside exactly one window.
    """
    if period_secs >= 1 and window_secs % period_secs:
        raise ValueError(f"window ({window_secs} s) must be a multiple of the "
                         f"extraction period ({period_secs} s)")
    samples = extract_samples(events, period_secs, days_since_modified=days_since_modified,
                              end_ts=end_ts)
    return aggregate_samples(samples, window_secs, label=label)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def _fmt(value):
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        if value.is_integer() and abs(value) < 1e15:
            return str(int(value))
        return repr(value)
    return str(value)


VECTOR_COLUMNS = ("app_id", "window_end_ts") + FEATURE_NAMES + ("label",)


def write_vectors(vectors: Iterable[AggregatedVector], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(VECTORS_MAGIC + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(VECTOR_COLUMNS)
        for v in vectors:
            writer.writerow([_fmt(getattr(v, c)) if c != "label" else (v.label or "")
                             for c in VECTOR_COLUMNS])


def read_vectors(path) -> list[AggregatedVector]:
    with open(path, encoding="utf-8", newline="") as fh:
        first = fh.readline().rstrip("\r\n")
        if first != VECTORS_MAGIC:
            raise FormatError(path, 1, f"expected header {VECTORS_MAGIC!r}, got {first!r}")
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != VECTOR_COLUMNS:
            raise FormatError(path, 2, "column header does not match the vector schema")
        out = []
        for lineno, row in enumerate(reader, start=3):
            if len(row) != len(VECTOR_COLUMNS):
                raise FormatError(path, lineno, f"expected {len(VECTOR_COLUMNS)} columns, got {len(row)}")
            values = dict(zip(VECTOR_COLUMNS, row))
            try:
                kwargs = {"app_id": values["app_id"], "window_end_ts": int(values["window_end_ts"]),
                          "label": values["label"] or None}
                for name in FEATURE_NAMES:
                    raw = values[name]
                    kwargs[name] = raw if name in CATEGORICAL_FEATURES else float(raw)
            except ValueError as exc:
                raise FormatError(path, lineno, str(exc)) from None
            out.append(AggregatedVector(**kwargs))
    return out


SAMPLE_COLUMNS = tuple(f.name for f in dataclasses.fields(NetworkSample))


def write_samples(samples: Iterable[NetworkSample], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(SAMPLES_MAGIC + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SAMPLE_COLUMNS)
        for s in samples:
            row = []
            for c in SAMPLE_COLUMNS:
                value = getattr(s, c)
                row.append(" ".join(map(str, value)) if isinstance(value, tuple) else _fmt(value))
            writer.writerow(row)


def read_samples(path) -> list[NetworkSample]:
    int_fields = {"window_end_ts", "sent_bytes", "recv_bytes", "fg_time_total_secs", "bg_time_total_secs"}
    float_fields = {"sent_pct", "recv_pct", "secs_since_last_send", "secs_since_last_recv",
                    "mins_since_last_active", "days_since_modified"}
    with open(path, encoding="utf-8", newline="") as fh:
        first = fh.readline().rstrip("\r\n")
        if first != SAMPLES_MAGIC:
            raise FormatError(path, 1, f"expected header {SAMPLES_MAGIC!r}, got {first!r}")
        reader = csv.reader(fh)
        if tuple(next(reader, None) or ()) != SAMPLE_COLUMNS:
            raise FormatError(path, 2, "column header does not match the sample schema")
        out = []
        for lineno, row in enumerate(reader, start=3):
            if len(row) != len(SAMPLE_COLUMNS):
                raise FormatError(path, lineno, f"expected {len(SAMPLE_COLUMNS)} columns")
            kwargs = {}
            try:
                for c, raw in zip(SAMPLE_COLUMNS, row):
                    if c in int_fields:
                        kwargs[c] = int(raw)
                    elif c in float_fields:
                        kwargs[c] = float(raw)
                    elif c in ("fg_state", "active_state"):
                        kwargs[c] = raw == "1"
                    elif c in ("send_times", "recv_times"):
                        kwargs[c] = tuple(int(x) for x in raw.split())
                    else:
                        kwargs[c] = raw
            except ValueError as exc:
                raise FormatError(path, lineno, str(exc)) from None
            out.append(NetworkSample(**kwargs))
    return out

