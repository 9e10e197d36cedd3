import dataclasses
import math

import pytest
from hypothesis import given, settings, strategies as st

from appnetwatch import sim
from appnetwatch.sim import AppProfile, PerturbationSpec


def sends(events):
    return [e for e in events if e.kind == sim.SEND]


def transfers(events):
    return [e for e in events if e.kind in (sim.SEND, sim.RECEIVE)]


def test_zero_rates_give_no_transfers():
    quiet = AppProfile("quiet", fg_fraction=0.3, fg_session_mean_secs=60, net_state_dwell_secs=100)
    assert transfers(sim.simulate_trace(quiet, 600, 1)) == []


def test_send_rate_mean_over_seeds():
    p = AppProfile("busy", send_event_rate=0.1)
    counts = [len(sends(sim.simulate_trace(p, 10_000, seed))) for seed in range(50)]
    assert abs(sum(counts) / len(counts) - 1000) < 100


def test_periodic_sync_fires_on_exact_multiples():
    p = AppProfile("sync", periodic_sync_interval_secs=60, periodic_sync_bytes=77)
    ev = sends(sim.simulate_trace(p, 300, 3))
    assert [e.timestamp for e in ev] == [60, 120, 180, 240, 300]
    assert all(e.bytes == 77 for e in ev)


def test_identity_version_delta():
    p = sim.preset_profiles()["mail"]
    spec = PerturbationSpec(sim.VERSION_DELTA, {name: 1.0 for name in sim.NUMERIC_PROFILE_FIELDS})
    assert sim.perturb_profile(p, spec) == p


def test_beacon_on_zero_rate_profile():
    spec = PerturbationSpec(sim.BEACON_INJECTION, beacon_interval_secs=30, beacon_sent_bytes=512,
                            beacon_recv_bytes=0, beacon_runs_in_background=True)
    p = sim.perturb_profile(AppProfile("idle"), spec)
    ev = sends(sim.simulate_trace(p, 300, 0))
    assert len(ev) == 10
    assert {e.bytes for e in ev} == {512}


def test_beacon_adds_uploads_to_game_profile():
    game = sim.preset_profiles()["snake"]
    benign = sim.simulate_trace(game, 3600, 4)
    bad = sim.simulate_trace(sim.perturb_profile(game, sim.preset_perturbations()["beacon"]), 3600, 4)
    # benign uploads are the periodic ad sync only
    assert {e.bytes for e in sends(benign)} == {game.periodic_sync_bytes}
    extra = sum(e.bytes for e in sends(bad)) - sum(e.bytes for e in sends(benign))
    assert extra >= 3600 // 15 * 4096 * 0.5


def test_background_only_beacon_is_silent_in_foreground():
    fling = sim.preset_profiles()["fling"]
    p = sim.perturb_profile(fling, sim.preset_perturbations()["beacon_background_only"])
    ev = sim.simulate_trace(p, 7200, 2)
    fg = False
    for e in ev:
        if e.kind in (sim.FG_ENTER, sim.FG_EXIT):
            fg = e.kind == sim.FG_ENTER
        elif e.kind == sim.SEND and e.bytes == 4096:
            assert not fg


def test_perturbing_one_process_keeps_others():
    p = sim.preset_profiles()["messenger"]
    a = sim.simulate_trace(p, 1800, 9)
    b = sim.simulate_trace(dataclasses.replace(p, recv_event_rate=0.2), 1800, 9)
    assert sends(a) == sends(b)


def test_deterministic():
    p = sim.preset_profiles()["social"]
    assert sim.simulate_trace(p, 900, 5) == sim.simulate_trace(p, 900, 5)
    assert sim.simulate_trace(p, 900, 5) != sim.simulate_trace(p, 900, 6)


@pytest.mark.parametrize("bad", [
    {"send_event_rate": -0.1},
    {"recv_event_rate": math.nan},
    {"fg_fraction": 1.5},
    {"sent_bytes_log_mean": math.inf},
])
def test_rejects_bad_profiles(bad):
    with pytest.raises(ValueError):
        AppProfile("x", **bad)


def test_rejects_bad_duration():
    with pytest.raises(ValueError):
        sim.simulate_trace(AppProfile("x"), 0, 1)


def test_perturbation_field_rules():
    with pytest.raises(ValueError):
        PerturbationSpec(sim.BEACON_INJECTION, beacon_interval_secs=10)
    with pytest.raises(ValueError):
        PerturbationSpec(sim.VERSION_DELTA, beacon_interval_secs=10)
    with pytest.raises(ValueError):
        PerturbationSpec(sim.VERSION_DELTA, {"no_such_field": 2.0})


profiles = st.builds(
    AppProfile,
    app_id=st.just("app"),
    send_event_rate=st.floats(0, 0.5),
    recv_event_rate=st.floats(0, 0.5),
    sent_bytes_log_mean=st.floats(0, 8),
    sent_bytes_log_sd=st.floats(0, 1.5),
    recv_bytes_log_mean=st.floats(0, 8),
    recv_bytes_log_sd=st.floats(0, 1.5),
    fg_fraction=st.floats(0, 1),
    fg_session_mean_secs=st.floats(1, 600),
    net_state_dwell_secs=st.floats(0, 900),
    periodic_sync_interval_secs=st.integers(0, 120),
    periodic_sync_bytes=st.integers(0, 1000),
)


@settings(max_examples=40, deadline=None)
@given(profiles, st.integers(1, 1500), st.integers(0, 2**31))
def test_trace_invariants(profile, duration, seed):
    ev = sim.simulate_trace(profile, duration, seed)
    ts = [e.timestamp for e in ev]
    assert ts == sorted(ts)
    assert all(0 <= t <= duration for t in ts)
    for e in ev:
        if e.kind in sim.TRANSFER_KINDS:
            assert e.bytes >= 0
        else:
            assert e.bytes == 0


def test_trace_file_round_trip(tmp_path):
    ev = sim.simulate_trace(sim.preset_profiles()["groupchat"], 600, 1)
    path = tmp_path / "t.tsv"
    sim.write_trace(ev, path)
    assert sim.read_trace(path) == ev


def test_trace_reader_reports_line_numbers(tmp_path):
    path = tmp_path / "t.tsv"
    path.write_text(sim.TRACE_MAGIC + "\n1\ta\tsend\t10\t-\n2\ta\tteleport\t0\t-\n")
    with pytest.raises(sim.FormatError) as err:
        sim.read_trace(path)
    assert err.value.lineno == 3
    path.write_text("# appnetwatch-trace v9\n")
    with pytest.raises(sim.FormatError, match="header"):
        sim.read_trace(path)


def test_vanishing_foreground_fraction():
    # the mean background session becomes infinite
    p = AppProfile("app", fg_fraction=5e-324, fg_session_mean_secs=1.0)
    ev = sim.simulate_trace(p, 600, 0)
    assert not any(e.kind == sim.FG_ENTER for e in ev)
