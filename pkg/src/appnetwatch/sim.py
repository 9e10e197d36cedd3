"""Seedable per-application traffic simulator.

A trace is a time-ordered list of :class:`NetworkEvent` for one app. Transfers
are drawn at one-second resolution: each second independently carries a send
with probability ``min(send_event_rate, 1)`` and a receive with probability
``min(recv_event_rate, 1)``; sizes are lognormal. Foreground/background
sessions alternate with exponential lengths, the network alternates between
wifi and cellular with exponential dwell times, and optional fixed-interval
sync and beacon processes fire at exact multiples of their interval.

Each random sub-process draws from its own stream spawned from the root seed,
so perturbing one process (or attaching a beacon) never shifts the draws of
another. Per-second uniforms and size normals are drawn for every second
regardless of the rates, which keeps a version-scaled profile coupled to its
original under the same seed.
"""

from __future__ import annotations

import bisect
import configparser
import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple

import numpy as np

SEND = "send"
RECEIVE = "receive"
FG_ENTER = "fg_enter"
FG_EXIT = "fg_exit"
ACTIVE = "active"
INACTIVE = "inactive"
NET_STATE_CHANGE = "net_state_change"

EVENT_KINDS = (SEND, RECEIVE, FG_ENTER, FG_EXIT, ACTIVE, INACTIVE, NET_STATE_CHANGE)
TRANSFER_KINDS = frozenset({SEND, RECEIVE})
NET_STATES = ("cellular", "wifi", "none")

# state changes at a timestamp apply before the transfers at that timestamp
KIND_ORDER = {NET_STATE_CHANGE: 0, FG_EXIT: 1, FG_ENTER: 2, INACTIVE: 3, ACTIVE: 4, SEND: 5, RECEIVE: 6}

# an app stays among the active tasks this long after leaving the foreground
ACTIVE_LINGER_SECS = 120

TRACE_MAGIC = "# appnetwatch-trace v1"

_SENDS, _RECEIVES, _SESSIONS, _NETWORK = range(4)


class NetworkEvent(NamedTuple):
    timestamp: int
    app_id: str
    kind: str
    bytes: int = 0
    net_state: str | None = None


@dataclass(frozen=True)
class Beacon:
    """Constant-interval send/receive process attached to a profile."""

    interval_secs: int
    sent_bytes: int
    recv_bytes: int = 0
    runs_in_background: bool = True
    background_only: bool = False

    def __post_init__(self):
        if int(self.interval_secs) != self.interval_secs or self.interval_secs <= 0:
            raise ValueError(f"beacon interval must be a positive integer, got {self.interval_secs!r}")
        if int(self.sent_bytes) != self.sent_bytes or self.sent_bytes <= 0:
            raise ValueError(f"beacon sent bytes must be a positive integer, got {self.sent_bytes!r}")
        if int(self.recv_bytes) != self.recv_bytes or self.recv_bytes < 0:
            raise ValueError(f"beacon recv bytes must be a non-negative integer, got {self.recv_bytes!r}")
        if self.background_only and not self.runs_in_background:
            raise ValueError("background_only beacons must run in background")

    def fires_in(self, foreground: bool) -> bool:
        if self.background_only:
            return not foreground
        return self.runs_in_background or foreground


@dataclass(frozen=True)
class AppProfile:
    app_id: str
    send_event_rate: float = 0.0
    recv_event_rate: float = 0.0
    sent_bytes_log_mean: float = 0.0
    sent_bytes_log_sd: float = 0.0
    recv_bytes_log_mean: float = 0.0
    recv_bytes_log_sd: float = 0.0
    fg_fraction: float = 0.0
    fg_session_mean_secs: float = 0.0
    net_state_dwell_secs: float = 0.0
    periodic_sync_interval_secs: int = 0
    periodic_sync_bytes: int = 0
    days_since_modified: float = 0.0
    beacons: tuple[Beacon, ...] = ()

    def __post_init__(self):
        if not self.app_id or any(c.isspace() for c in self.app_id):
            raise ValueError(f"app_id must be a non-empty token, got {self.app_id!r}")
        for name in NUMERIC_PROFILE_FIELDS:
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value!r}")
            if value < 0:
                raise ValueError(f"{name} must be non-negative, got {value!r}")
        if self.fg_fraction > 1:
            raise ValueError(f"fg_fraction must lie in [0, 1], got {self.fg_fraction}")
        if 0 < self.fg_fraction < 1 and self.fg_session_mean_secs <= 0:
            raise ValueError("fg_session_mean_secs must be positive when 0 < fg_fraction < 1")
        if int(self.periodic_sync_interval_secs) != self.periodic_sync_interval_secs:
            raise ValueError("periodic_sync_interval_secs must be an integer")
        if self.sent_bytes_log_mean + 8 * self.sent_bytes_log_sd > 600 or \
                self.recv_bytes_log_mean + 8 * self.recv_bytes_log_sd > 600:
            raise ValueError("lognormal byte parameters overflow")


NUMERIC_PROFILE_FIELDS = tuple(
    f.name for f in dataclasses.fields(AppProfile) if f.name not in ("app_id", "beacons")
)

VERSION_DELTA = "version_delta"
BEACON_INJECTION = "beacon_injection"


@dataclass(frozen=True)
class PerturbationSpec:
    kind: str
    version_delta: Mapping[str, float] = field(default_factory=dict)
    beacon_interval_secs: int | None = None
    beacon_sent_bytes: int | None = None
    beacon_recv_bytes: int | None = None
    beacon_runs_in_background: bool | None = None
    beacon_background_only: bool = False

    def __post_init__(self):
        beacon_fields = (self.beacon_interval_secs, self.beacon_sent_bytes,
                         self.beacon_recv_bytes, self.beacon_runs_in_background)
        if self.kind == VERSION_DELTA:
            if any(v is not None for v in beacon_fields):
                raise ValueError("beacon fields are only valid for beacon_injection")
            for name, factor in self.version_delta.items():
                if name not in NUMERIC_PROFILE_FIELDS:
                    raise ValueError(f"unknown profile field {name!r} in version_delta")
                if not math.isfinite(factor) or factor <= 0:
                    raise ValueError(f"scale factor for {name} must be > 0, got {factor!r}")
        elif self.kind == BEACON_INJECTION:
            if any(v is None for v in beacon_fields):
                raise ValueError("beacon_injection needs interval, sent, recv and background fields")
            if self.version_delta:
                raise ValueError("version_delta factors are only valid for version_delta")
            if self.beacon_interval_secs == 0:
                raise ValueError("beacon_interval_secs must be positive")
            self.beacon()  # validates the remaining fields
        else:
            raise ValueError(f"unknown perturbation kind {self.kind!r}")

    def beacon(self) -> Beacon:
        return Beacon(
            interval_secs=self.beacon_interval_secs,
            sent_bytes=self.beacon_sent_bytes,
            recv_bytes=self.beacon_recv_bytes,
            runs_in_background=self.beacon_runs_in_background,
            background_only=self.beacon_background_only,
        )


def perturb_profile(profile: AppProfile, spec: PerturbationSpec) -> AppProfile:
    """Apply a version delta, or attach the spec's beacon to ``profile``."""
    if spec.kind == VERSION_DELTA:
        scaled = {name: getattr(profile, name) * factor for name, factor in spec.version_delta.items()}
        if "periodic_sync_interval_secs" in scaled:
            scaled["periodic_sync_interval_secs"] = int(round(scaled["periodic_sync_interval_secs"]))
        if "periodic_sync_bytes" in scaled:
            scaled["periodic_sync_bytes"] = int(round(scaled["periodic_sync_bytes"]))
        return dataclasses.replace(profile, **scaled)
    return dataclasses.replace(profile, beacons=profile.beacons + (spec.beacon(),))


def _stream(seed: int, which: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(which,)))


def _alternation(rng, duration, first_state, mean_on, mean_off):
    """Toggle times of a two-state process with exponential dwell times."""
    toggles = []
    state = first_state
    t = 0
    while True:
        dwell = rng.exponential(mean_on if state else mean_off)
        # a vanishing fg_fraction gives an infinite mean dwell: no more toggles
        if not math.isfinite(dwell):
            return toggles
        t += max(1, int(round(dwell)))
        if t > duration:
            return toggles
        toggles.append(t)
        state = not state


def _state_at(t, first_state, toggles):
    flips = bisect.bisect_right(toggles, t)
    return first_state if flips % 2 == 0 else not first_state


def _lognormal_bytes(z, log_mean, log_sd):
    return np.maximum(1, np.rint(np.exp(log_mean + log_sd * z))).astype(np.int64)


def simulate_trace(profile: AppProfile, duration_secs: int, seed: int) -> list[NetworkEvent]:
    """Generate the event stream of one app over ``(0, duration_secs]``.

    Initial fg/active/network state is emitted at ``t = 0``; transfers happen
    at whole seconds ``1..duration_secs``.
    """
    if int(duration_secs) != duration_secs or duration_secs < 1:
        raise ValueError(f"duration_secs must be a positive integer, got {duration_secs!r}")
    duration = int(duration_secs)
    app = profile.app_id
    events: list[NetworkEvent] = []
    seconds = np.arange(1, duration + 1)

    rng = _stream(seed, _SENDS)
    u = rng.random(duration)
    z = rng.standard_normal(duration)
    hits = u < min(profile.send_event_rate, 1.0)
    sizes = _lognormal_bytes(z, profile.sent_bytes_log_mean, profile.sent_bytes_log_sd)
    events.extend(NetworkEvent(int(t), app, SEND, int(b)) for t, b in zip(seconds[hits], sizes[hits]))

    rng = _stream(seed, _RECEIVES)
    u = rng.random(duration)
    z = rng.standard_normal(duration)
    hits = u < min(profile.recv_event_rate, 1.0)
    sizes = _lognormal_bytes(z, profile.recv_bytes_log_mean, profile.recv_bytes_log_sd)
    events.extend(NetworkEvent(int(t), app, RECEIVE, int(b)) for t, b in zip(seconds[hits], sizes[hits]))

    interval = int(profile.periodic_sync_interval_secs)
    if interval > 0:
        events.extend(NetworkEvent(t, app, SEND, int(profile.periodic_sync_bytes))
                      for t in range(interval, duration + 1, interval))

    # foreground sessions
    f = profile.fg_fraction
    rng = _stream(seed, _SESSIONS)
    if f <= 0 or f >= 1:
        fg_first, fg_toggles = f >= 1, []
    else:
        fg_first = bool(rng.random() < f)
        bg_mean = profile.fg_session_mean_secs * (1 - f) / f
        fg_toggles = _alternation(rng, duration, fg_first, profile.fg_session_mean_secs, bg_mean)
    events.append(NetworkEvent(0, app, FG_ENTER if fg_first else FG_EXIT))
    state = fg_first
    for t in fg_toggles:
        state = not state
        events.append(NetworkEvent(t, app, FG_ENTER if state else FG_EXIT))
    events.extend(_active_events(app, duration, fg_first, fg_toggles))

    # network state
    rng = _stream(seed, _NETWORK)
    if profile.net_state_dwell_secs <= 0:
        events.append(NetworkEvent(0, app, NET_STATE_CHANGE, 0, "wifi"))
    else:
        wifi_first = bool(rng.random() < 0.5)
        dwell = profile.net_state_dwell_secs
        net_toggles = _alternation(rng, duration, wifi_first, dwell, dwell)
        wifi = wifi_first
        events.append(NetworkEvent(0, app, NET_STATE_CHANGE, 0, "wifi" if wifi else "cellular"))
        for t in net_toggles:
            wifi = not wifi
            events.append(NetworkEvent(t, app, NET_STATE_CHANGE, 0, "wifi" if wifi else "cellular"))

    for beacon in profile.beacons:
        for t in range(beacon.interval_secs, duration + 1, beacon.interval_secs):
            if not beacon.fires_in(_state_at(t, fg_first, fg_toggles)):
                continue
            events.append(NetworkEvent(t, app, SEND, beacon.sent_bytes))
            if beacon.recv_bytes > 0:
                events.append(NetworkEvent(t, app, RECEIVE, beacon.recv_bytes))

    events.sort(key=lambda e: (e.timestamp, KIND_ORDER[e.kind]))
    return events


def _active_events(app, duration, fg_first, fg_toggles):
    """Active-task transitions: active while foreground plus a linger period."""
    # foreground intervals as [start, end)
    intervals = []
    state, start = fg_first, 0
    for t in fg_toggles:
        if state:
            intervals.append((start, t))
        state, start = not state, t
    if state:
        intervals.append((start, None))
    out = [NetworkEvent(0, app, ACTIVE if fg_first else INACTIVE)]
    active = fg_first
    for i, (start, end) in enumerate(intervals):
        if not active:
            out.append(NetworkEvent(start, app, ACTIVE))
            active = True
        if end is None:
            break
        off = end + ACTIVE_LINGER_SECS
        next_start = intervals[i + 1][0] if i + 1 < len(intervals) else None
        if off <= duration and (next_start is None or off < next_start):
            out.append(NetworkEvent(off, app, INACTIVE))
            active = False
    return out


def merge_traces(*traces: Iterable[NetworkEvent]) -> list[NetworkEvent]:
    """Interleave several apps' traces into one time-ordered device stream."""
    merged = [e for trace in traces for e in trace]
    merged.sort(key=lambda e: e.timestamp)
    return merged


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------

class FormatError(ValueError):
    """Malformed input file; ``lineno`` is 1-based."""

    def __init__(self, path, lineno, message):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {message}")


def write_trace(events: Iterable[NetworkEvent], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(TRACE_MAGIC + "\n")
        for e in events:
            fh.write(f"{e.timestamp}\t{e.app_id}\t{e.kind}\t{e.bytes}\t{e.net_state or '-'}\n")


def read_trace(path) -> list[NetworkEvent]:
    events = []
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().rstrip("\n")
        if first != TRACE_MAGIC:
            raise FormatError(path, 1, f"expected header {TRACE_MAGIC!r}, got {first!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                raise FormatError(path, lineno, f"expected 5 tab-separated fields, got {len(parts)}")
            ts, app, kind, nbytes, net = parts
            try:
                ts_i, bytes_i = int(ts), int(nbytes)
            except ValueError:
                raise FormatError(path, lineno, "timestamp and bytes must be integers") from None
            if kind not in KIND_ORDER:
                raise FormatError(path, lineno, f"unknown event kind {kind!r}")
            if bytes_i < 0 or (kind not in TRANSFER_KINDS and bytes_i != 0):
                raise FormatError(path, lineno, f"invalid byte count {bytes_i} for {kind}")
            if kind == NET_STATE_CHANGE and net not in NET_STATES:
                raise FormatError(path, lineno, f"unknown network state {net!r}")
            if events and ts_i < events[-1].timestamp:
                raise FormatError(path, lineno, "timestamps must be non-decreasing")
            events.append(NetworkEvent(ts_i, app, kind, bytes_i, net if net != "-" else None))
    return events


_PROFILE_INT_FIELDS = {"periodic_sync_interval_secs", "periodic_sync_bytes"}


def _parse_bool(raw):
    value = raw.strip().lower()
    if value in {"1", "true", "yes", "on"}:
        return True
    if value in {"0", "false", "no", "off"}:
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def profile_from_section(name: str, section: Mapping[str, str]) -> AppProfile:
    kwargs = {"app_id": section.get("app_id", name)}
    for key, raw in section.items():
        if key == "app_id":
            continue
        if key not in NUMERIC_PROFILE_FIELDS:
            raise ValueError(f"profile {name!r}: unknown field {key!r}")
        kwargs[key] = int(raw) if key in _PROFILE_INT_FIELDS else float(raw)
    return AppProfile(**kwargs)


def perturbation_from_section(name: str, section: Mapping[str, str]) -> PerturbationSpec:
    kind = section.get("kind")
    if kind is None:
        raise ValueError(f"perturbation {name!r}: missing 'kind'")
    if kind == VERSION_DELTA:
        delta = {}
        for key, raw in section.items():
            if key == "kind":
                continue
            if not key.startswith("scale."):
                raise ValueError(f"perturbation {name!r}: expected 'scale.<field>' keys, got {key!r}")
            delta[key[len("scale."):]] = float(raw)
        return PerturbationSpec(kind=kind, version_delta=delta)
    known = {"kind", "interval_secs", "sent_bytes", "recv_bytes", "runs_in_background", "background_only"}
    unknown = set(section) - known
    if unknown:
        raise ValueError(f"perturbation {name!r}: unknown keys {sorted(unknown)}")
    return PerturbationSpec(
        kind=kind,
        beacon_interval_secs=int(section["interval_secs"]),
        beacon_sent_bytes=int(section["sent_bytes"]),
        beacon_recv_bytes=int(section.get("recv_bytes", "0")),
        beacon_runs_in_background=_parse_bool(section.get("runs_in_background", "true")),
        beacon_background_only=_parse_bool(section.get("background_only", "false")),
    )


def load_config(path) -> tuple[dict[str, AppProfile], dict[str, PerturbationSpec]]:
    """Read ``[profile NAME]`` and ``[perturbation NAME]`` sections from an INI file."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    with open(path, encoding="utf-8") as fh:
        parser.read_file(fh)
    return config_from_parser(parser)


def config_from_parser(parser: configparser.ConfigParser):
    profiles, perturbations = {}, {}
    for section in parser.sections():
        prefix, _, name = section.partition(" ")
        if prefix == "profile":
            profiles[name] = profile_from_section(name, parser[section])
        elif prefix == "perturbation":
            perturbations[name] = perturbation_from_section(name, parser[section])
    return profiles, perturbations


def bundled_config_path() -> Path:
    return Path(__file__).with_name("data") / "profiles.ini"


def preset_profiles() -> dict[str, AppProfile]:
    return load_config(bundled_config_path())[0]


def preset_perturbations() -> dict[str, PerturbationSpec]:
    return load_config(bundled_config_path())[1]
