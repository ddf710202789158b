import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stforecast.events import (DataError, Event, EventSequence, NodeSeries, SeriesState, bin_counts,
                               load_events, load_series, save_events, save_series)


def _write(tmp_path, text, name="ev.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_load_two_events(tmp_path):
    seq = load_events(_write(tmp_path, "time,node\n0.5,0\n1.2,1\n"), num_nodes=2)
    assert len(seq) == 2
    assert seq.horizon == 2.0
    assert list(seq) == [Event(0.5, 0), Event(1.2, 1)]


def test_load_header_only_gives_empty_sequence(tmp_path):
    seq = load_events(_write(tmp_path, "time,node\n"), num_nodes=3)
    assert len(seq) == 0
    assert seq.num_nodes == 3


def test_load_bad_time_names_line(tmp_path):
    with pytest.raises(DataError, match="line 2"):
        load_events(_write(tmp_path, "time,node\nabc,0\n"), num_nodes=1)


@pytest.mark.parametrize("row, msg", [("1.0,5", "out of range"), ("1.0,0.5", "integer"),
                                      ("-1,0", "negative"), ("1.0", "2 fields"), ("nan,0", "finite")])
def test_load_rejects_bad_rows(tmp_path, row, msg):
    with pytest.raises(DataError, match=msg):
        load_events(_write(tmp_path, f"time,node\n0.1,0\n{row}\n"), num_nodes=2)


def test_load_requires_header(tmp_path):
    with pytest.raises(DataError, match="header"):
        load_events(_write(tmp_path, "0.5,0\n"), num_nodes=1)


def test_load_horizon_override_and_bin_rounding(tmp_path):
    path = _write(tmp_path, "time,node\n3.0,0\n")
    # an event exactly on a bin edge opens the next bin
    assert load_events(path, 1).horizon == 4.0
    assert load_events(path, 1, bin_width=2.5).horizon == 5.0
    assert load_events(path, 1, horizon=10.0).horizon == 10.0


def test_sorting_is_stable_by_time_then_node():
    seq = EventSequence(np.array([2.0, 1.0, 1.0, 0.5]), np.array([0, 1, 0, 2]), 3.0, 3)
    assert seq.times.tolist() == [0.5, 1.0, 1.0, 2.0]
    assert seq.nodes.tolist() == [2, 0, 1, 0]


@pytest.mark.parametrize("times, nodes, horizon", [([1.0], [0], 1.0), ([-0.1], [0], 1.0),
                                                   ([0.1], [3], 1.0), ([0.1], [0], 0.0),
                                                   ([0.1, 0.2], [0], 1.0)])
def test_sequence_invariants(times, nodes, horizon):
    with pytest.raises(DataError):
        EventSequence(np.array(times), np.array(nodes), horizon, 2)


def test_sequence_is_read_only():
    seq = EventSequence(np.array([0.1]), np.array([0]), 1.0, 1)
    with pytest.raises(ValueError):
        seq.times[0] = 0.2


def test_restrict_and_counts():
    seq = EventSequence.from_events([(0.1, 0), (0.5, 1), (1.5, 1)], 2.0, 3)
    assert seq.counts().tolist() == [1, 2, 0]
    sub = seq.restrict(1.0)
    assert len(sub) == 2 and sub.horizon == 1.0


def test_bin_counts_hand_case():
    seq = EventSequence.from_events([(0.5, 0), (0.7, 0), (1.2, 0)], 2.0, 1)
    series = bin_counts(seq, 1.0)
    assert series.values[0].tolist() == [2.0, 1.0]
    assert series.state is SeriesState.RAW


def test_bin_counts_empty():
    series = bin_counts(EventSequence(np.array([]), np.array([]), 3.0, 2), 1.0)
    assert series.values.shape == (2, 3)
    assert not series.values.any()


def test_bin_counts_rejects_nonpositive_width():
    with pytest.raises(ValueError):
        bin_counts(EventSequence(np.array([]), np.array([]), 3.0, 1), 0.0)


def test_bin_counts_matches_direct_count():
    rng = np.random.default_rng(7)
    times = rng.uniform(0, 50, 1000)
    nodes = rng.integers(0, 4, 1000)
    seq = EventSequence(times, nodes, 50.0, 4)
    series = bin_counts(seq, 0.7)
    assert series.values.sum() == 1000
    # oracle: direct loop over bins
    expected = np.zeros_like(series.values)
    for k in range(series.length):
        lo, hi = k * 0.7, (k + 1) * 0.7
        for u in range(4):
            expected[u, k] = np.sum((times >= lo) & (times < hi) & (nodes == u))
    np.testing.assert_array_equal(series.values, expected)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 99.999, allow_nan=False), st.integers(0, 4)), max_size=60))
def test_event_csv_round_trip(tmp_path_factory, events):
    seq = EventSequence.from_events(events, 100.0, 5)
    path = tmp_path_factory.mktemp("rt") / "ev.csv"
    save_events(seq, path)
    back = load_events(path, 5, horizon=100.0)
    np.testing.assert_array_equal(back.times, seq.times)
    np.testing.assert_array_equal(back.nodes, seq.nodes)


def test_series_csv_round_trip(tmp_path):
    vals = np.array([[0.0, 1.5, 2.0], [1.0, 1.0 / 3.0, 0.0]])
    series = NodeSeries(vals, 0.5, 3, SeriesState.DIURNAL_CUMULATIVE)
    save_series(series, tmp_path / "s.csv")
    back = load_series(tmp_path / "s.csv")
    np.testing.assert_array_equal(back.values, vals)
    assert back.state is SeriesState.DIURNAL_CUMULATIVE
    assert (back.period, back.bin_width) == (3, 0.5)
    header = (tmp_path / "s.csv").read_text().splitlines()[1]
    assert header == "t,node0,node1"


def test_series_block_depends_on_state():
    assert NodeSeries(np.zeros((1, 4)), period=4).block == 4
    assert NodeSeries(np.zeros((1, 7)), period=4, state="super_resolved").block == 7
