"""Alarms over verdict streams and dataset-level deviation decisions."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence, TextIO

THREE_CONSECUTIVE = "three_consecutive"
THREE_OF_FIVE = "three_of_five"
THREE_OF_TEN = "three_of_ten"

# (rule, window length), most specific first
RULES = ((THREE_CONSECUTIVE, 3), (THREE_OF_FIVE, 5), (THREE_OF_TEN, 10))
MIN_ANOMALIES = 3
BUFFER_LEN = 10

ACCEPTANCE_RATES = (0.05, 0.10, 0.15, 0.20, 0.25)
DEFAULT_ACCEPTANCE = 0.20


def _flag(verdict) -> bool:
    return bool(getattr(verdict, "is_anomalous", verdict))


@dataclass(frozen=True)
class AlarmState:
    buffer: tuple[bool, ...] = ()
    run_length: int = 0

    def __post_init__(self):
        if len(self.buffer) > BUFFER_LEN:
            raise ValueError(f"buffer holds at most {BUFFER_LEN} verdicts")


@dataclass(frozen=True)
class Alarm:
    rule_fired: str
    window_end_ts: int | None
    anomalous_rate_in_window: float
    app_id: str | None = None
    version_update_seen: bool = False


def update_alarm(state: AlarmState, verdict, *, timestamp: int | None = None,
                 app_id: str | None = None, version_update_seen: bool = False):
    """Feed one verdict; returns ``(new_state, alarm_or_None)``.

    ``verdict`` is a Verdict or a bare boolean. Timestamp and app id default to
    the verdict's own when it carries them. Firing clears the buffer.
    """
    flag = _flag(verdict)
    if timestamp is None:
        timestamp = getattr(verdict, "window_end_ts", None)
    if app_id is None:
        app_id = getattr(verdict, "app_id", None)
    buffer = (state.buffer + (flag,))[-BUFFER_LEN:]
    run = state.run_length + 1 if flag else 0
    for rule, width in RULES:
        window = buffer[-width:]
        hits = sum(window)
        fired = run >= MIN_ANOMALIES if rule == THREE_CONSECUTIVE else hits >= MIN_ANOMALIES
        if fired:
            rate = 1.0 if rule == THREE_CONSECUTIVE else hits / len(window)
            return AlarmState(), Alarm(rule, timestamp, rate, app_id, version_update_seen)
    return AlarmState(buffer, run), None


def scan_alarms(verdicts: Iterable, state: AlarmState | None = None) -> list[tuple[int, Alarm]]:
    """(step index, alarm) for every alarm raised over ``verdicts``."""
    state = state or AlarmState()
    out = []
    for i, v in enumerate(verdicts):
        state, alarm = update_alarm(state, v)
        if alarm is not None:
            out.append((i, alarm))
    return out


@dataclass(frozen=True)
class DatasetDecision:
    detected_anomalous_fraction: float
    acceptance_rate: float
    is_meaningful_deviation: bool
    n_anomalous: int = 0
    n_total: int = 0


def dataset_decision(verdicts: Sequence, acceptance_rate: float = DEFAULT_ACCEPTANCE) -> DatasetDecision:
    if len(verdicts) == 0:
        raise ValueError("dataset decision needs at least one verdict")
    if not 0 <= acceptance_rate <= 1:
        raise ValueError(f"acceptance rate must lie in [0, 1], got {acceptance_rate!r}")
    hits = sum(_flag(v) for v in verdicts)
    fraction = hits / len(verdicts)
    return DatasetDecision(fraction, acceptance_rate, fraction > acceptance_rate, hits, len(verdicts))


def format_alarm(alarm: Alarm) -> str:
    ts = "" if alarm.window_end_ts is None else str(alarm.window_end_ts)
    return f"{ts}\t{alarm.app_id or ''}\t{alarm.rule_fired}\t{alarm.anomalous_rate_in_window:.4f}"


def write_alarm(stream: TextIO, alarm: Alarm) -> None:
    stream.write(format_alarm(alarm) + "\n")
    stream.flush()
