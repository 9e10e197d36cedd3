import dataclasses
import math

import pytest
from hypothesis import given, settings, strategies as st

from appnetwatch import features, sim
from appnetwatch.features import GlobalState, NetworkSample, aggregate_window, split_intervals
from appnetwatch.sim import NetworkEvent

import oracle


def sample(end, **kw):
    base = dict(window_end_ts=end, app_id="a", sent_bytes=0, recv_bytes=0, sent_pct=0.0,
                recv_pct=0.0, net_state="wifi", secs_since_last_send=-1.0,
                secs_since_last_recv=-1.0, send_mode="eventual", recv_mode="eventual",
                fg_state=False, active_state=False, fg_time_total_secs=0,
                bg_time_total_secs=end, mins_since_last_active=-1.0, days_since_modified=0.0)
    base.update(kw)
    return NetworkSample(**base)


def test_empty_events():
    assert features.extract_samples([]) == []


def test_single_send():
    s = features.extract_samples([NetworkEvent(2, "a", sim.SEND, 500)], 5)
    assert s[0].sent_bytes == 500
    assert s[0].sent_pct == 100


def test_two_app_shares():
    ev = [NetworkEvent(1, "A", sim.SEND, 300), NetworkEvent(3, "B", sim.SEND, 100)]
    a, b = features.extract_samples(ev, 5)
    assert (a.app_id, a.sent_pct) == ("A", 75)
    assert (b.app_id, b.sent_pct) == ("B", 25)


def test_extract_rejects_bad_input():
    ev = [NetworkEvent(5, "a", sim.SEND, 1), NetworkEvent(3, "a", sim.SEND, 1)]
    with pytest.raises(ValueError):
        features.extract_samples(ev)
    with pytest.raises(ValueError):
        features.extract_samples([NetworkEvent(1, "a", sim.SEND, 1)], 0)


@pytest.mark.parametrize("times, inner, outer", [
    ([0, 10, 25, 70], [10, 15], [45]),
    ([0], [], []),
    ([], [], []),
    ([0, 30], [], [30]),
])
def test_split_intervals(times, inner, outer):
    assert split_intervals(times, 30) == (inner, outer)


@given(st.lists(st.integers(0, 10_000), max_size=40).map(sorted))
def test_split_is_a_partition(times):
    inner, outer = split_intervals(times, 30)
    gaps = [b - a for a, b in zip(times, times[1:])]
    assert sorted(inner + outer) == sorted(gaps)
    assert all(g < 30 for g in inner) and all(g >= 30 for g in outer)


def test_zero_traffic_window():
    v = aggregate_window([sample(t) for t in range(5, 61, 5)], GlobalState())
    for name in ("sent_bytes", "recv_bytes"):
        for stat in ("avg", "std", "min", "max"):
            assert getattr(v, f"{stat}_{name}") == 0
    assert v.pct_sent_bytes == 0 and v.pct_recv_bytes == 0
    assert v.global_inner_avg_send_interval == features.SENTINEL


def test_population_std():
    v = aggregate_window([sample(5, sent_bytes=100), sample(10, sent_bytes=300)], GlobalState())
    assert (v.avg_sent_bytes, v.min_sent_bytes, v.max_sent_bytes, v.std_sent_bytes) == (200, 100, 300, 100)


def test_mixed_states():
    v = aggregate_window([sample(5, net_state="wifi", fg_state=True),
                          sample(10, net_state="cellular", fg_state=True)], GlobalState())
    assert v.net_state == features.MIXED
    assert v.app_state1 == features.FOREGROUND


def test_window_must_hold_one_app():
    with pytest.raises(ValueError):
        aggregate_window([sample(5), sample(10, app_id="b")], GlobalState())


def test_window_must_be_whole_periods():
    with pytest.raises(ValueError, match="multiple"):
        features.build_vectors([NetworkEvent(1, "a", sim.SEND, 1)], period_secs=7, window_secs=60)


def test_global_mean_is_single_pass_mean():
    p = sim.preset_profiles()["groupchat"]
    ev = sim.simulate_trace(p, 3600, 8)
    vectors = features.build_vectors(ev)
    times = [e.timestamp for e in ev if e.kind == sim.SEND]
    inner, outer = split_intervals(times)
    assert math.isclose(vectors[-1].global_inner_avg_send_interval, sum(inner) / len(inner))
    assert math.isclose(vectors[-1].global_outer_avg_send_interval, sum(outer) / len(outer))


def test_aggregation_is_causal():
    ev = sim.simulate_trace(sim.preset_profiles()["social"], 1800, 2)
    full = features.build_vectors(ev)
    cut = 900
    head = features.build_vectors([e for e in ev if e.timestamp <= cut], end_ts=cut)
    assert head == [v for v in full if v.window_end_ts <= cut]


traces = st.tuples(st.sampled_from(sorted(sim.preset_profiles())), st.integers(0, 10_000),
                   st.integers(60, 1500))


@settings(max_examples=25, deadline=None)
@given(traces)
def test_vector_invariants(trace):
    name, seed, duration = trace
    ev = sim.simulate_trace(sim.preset_profiles()[name], duration, seed)
    for v in features.build_vectors(ev):
        for stem in ("sent_bytes", "recv_bytes", "sent_pct", "recv_pct"):
            lo, avg, hi = (getattr(v, f"{s}_{stem}") for s in ("min", "avg", "max"))
            assert lo <= avg + 1e-9 and avg <= hi + 1e-9
            assert getattr(v, f"std_{stem}") >= 0
        if v.avg_sent_bytes + v.avg_recv_bytes > 0:
            assert math.isclose(v.pct_sent_bytes + v.pct_recv_bytes, 100)
        assert 0 <= v.fg_time_local_secs <= 60 and 0 <= v.bg_time_local_secs <= 60
        assert v.fg_time_local_secs + v.bg_time_local_secs <= 60
        for scope in ("local", "global"):
            for d in ("send", "recv"):
                inner = getattr(v, f"{scope}_inner_avg_{d}_interval")
                outer = getattr(v, f"{scope}_outer_avg_{d}_interval")
                assert inner == -1 or 0 <= inner < 30
                assert outer == -1 or outer >= 30


def test_matches_oracle_on_merged_trace():
    ps = sim.preset_profiles()
    ev = sim.merge_traces(sim.simulate_trace(ps["mail"], 900, 1),
                          [e._replace(timestamp=e.timestamp + 95) for e in sim.simulate_trace(ps["fling"], 600, 2)])
    got = features.build_vectors(ev, period_secs=4, window_secs=60)
    want = oracle.oracle_vectors(ev, period=4, window=60)
    assert len(got) == len(want)
    for g, w in zip(got, want):
        assert oracle.compare_vector(g, w) == []


def test_vector_csv_round_trip(tmp_path):
    ev = sim.simulate_trace(sim.preset_profiles()["microblog"], 1200, 3)
    vectors = features.build_vectors(ev, label="normal")
    path = tmp_path / "v.csv"
    features.write_vectors(vectors, path)
    assert features.read_vectors(path) == vectors


def test_sample_csv_round_trip(tmp_path):
    ev = sim.simulate_trace(sim.preset_profiles()["microblog"], 300, 3)
    samples = features.extract_samples(ev)
    path = tmp_path / "s.csv"
    features.write_samples(samples, path)
    assert features.read_samples(path) == samples


def test_vector_reader_reports_line(tmp_path):
    ev = sim.simulate_trace(sim.preset_profiles()["mail"], 300, 3)
    path = tmp_path / "v.csv"
    features.write_vectors(features.build_vectors(ev), path)
    lines = path.read_text().splitlines()
    lines[3] = lines[3].replace(",", ",x", 3)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(sim.FormatError) as err:
        features.read_vectors(path)
    assert err.value.lineno == 4


def test_schemas():
    assert len(features.get_schema("1").active) == 7
    assert len(features.get_schema("2").active) == 9
    for schema in features.SUBSETS.values():
        assert set(schema.active) <= set(features.FEATURE_NAMES)
    with pytest.raises(KeyError, match="valid"):
        features.get_schema("9")
    with pytest.raises(ValueError):
        features.FeatureSchema(active=("no_such_feature",))
    assert dataclasses.is_dataclass(features.AggregatedVector)
