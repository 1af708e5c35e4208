import io
from collections import Counter

import numpy as np
import pytest

from mcfqot.topology import sample_topology
from mcfqot.traffic import (
    TrafficConfig,
    concurrent_time_average,
    generate_events,
    read_trace,
    write_trace,
)


@pytest.fixture(scope="module")
def sample30():
    return sample_topology("sample30")


def test_zero_requests(sample30):
    assert generate_events(TrafficConfig(request_count=0), sample30) == []


def test_counts_and_ordering(sample30):
    events = generate_events(TrafficConfig(request_count=500, seed=3), sample30)
    arrivals = [e for e in events if e.is_arrival]
    assert len(arrivals) == 500 and len(events) == 1000
    times = [e.time for e in events]
    assert times == sorted(times)
    seen = {}
    for pos, e in enumerate(events):
        if e.is_arrival:
            seen[e.request] = pos
        else:
            assert seen[e.request] < pos


def test_steady_state_concurrency_near_load(sample30):
    cfg = TrafficConfig(load_erlangs=400, mean_holding=1, request_count=20000, seed=7)
    events = generate_events(cfg, sample30)
    last_arrival = max(e.time for e in events if e.is_arrival)
    # skip the fill-up transient (several holding times)
    mean = concurrent_time_average(events, 5.0, last_arrival)
    assert abs(mean - 400) <= 0.05 * 400


def test_same_seed_identical_trace(sample30):
    cfg = TrafficConfig(request_count=300, seed=11)
    a, b = io.StringIO(), io.StringIO()
    write_trace(generate_events(cfg, sample30), a)
    write_trace(generate_events(cfg, sample30), b)
    assert a.getvalue() == b.getvalue()
    other = io.StringIO()
    write_trace(generate_events(TrafficConfig(request_count=300, seed=12), sample30), other)
    assert other.getvalue() != a.getvalue()


def test_trace_round_trip(sample30):
    events = generate_events(TrafficConfig(request_count=50, seed=2), sample30)
    buf = io.StringIO()
    write_trace(events, buf)
    buf.seek(0)
    back = read_trace(buf)
    assert back == events
    assert [e.to_line() for e in back] == [e.to_line() for e in events]


def test_interarrival_mean_within_three_standard_errors(sample30):
    cfg = TrafficConfig(load_erlangs=400, request_count=20000, seed=5)
    arrivals = np.array([e.time for e in generate_events(cfg, sample30) if e.is_arrival])
    gaps = np.diff(np.r_[0.0, arrivals])
    expected = cfg.mean_holding / cfg.load_erlangs
    stderr = expected / np.sqrt(len(gaps))  # exponential: sd equals mean
    assert abs(gaps.mean() - expected) <= 3 * stderr


def test_holding_time_mean(sample30):
    cfg = TrafficConfig(load_erlangs=50, mean_holding=2.0, request_count=20000, seed=9)
    events = generate_events(cfg, sample30)
    start = {e.request: e.time for e in events if e.is_arrival}
    holding = np.array([e.time - start[e.request] for e in events if not e.is_arrival])
    assert abs(holding.mean() - 2.0) <= 3 * 2.0 / np.sqrt(len(holding))


def test_pairs_uniform(sample30):
    cfg = TrafficConfig(request_count=100_000, seed=4)
    counts = Counter((e.source, e.destination) for e in generate_events(cfg, sample30) if e.is_arrival)
    assert len(counts) == sample30.n
    expected = cfg.request_count / sample30.n
    values = np.array(list(counts.values()))
    assert values.min() >= 0.8 * expected and values.max() <= 1.2 * expected


def test_bitrates_drawn_from_choices(sample30):
    cfg = TrafficConfig(request_count=3000, seed=1, bitrate_choices=(100.0, 400.0), bitrate_probs=(0.25, 0.75))
    rates = [e.bitrate for e in generate_events(cfg, sample30) if e.is_arrival]
    assert set(rates) == {100.0, 400.0}
    assert abs(rates.count(400.0) / len(rates) - 0.75) < 0.03


def test_config_validation():
    assert TrafficConfig(load_erlangs=400, mean_holding=2).arrival_rate == 200
    with pytest.raises(ValueError):
        TrafficConfig(load_erlangs=0)
    with pytest.raises(ValueError):
        TrafficConfig(bitrate_probs=(0.5, 0.5, 0.5))
    with pytest.raises(ValueError):
        TrafficConfig(request_count=-1)


def test_replay_oracle_by_hand():
    from mcfqot.traffic import ARRIVAL, DEPARTURE, Event

    events = [
        Event(1.0, 1, 1, ARRIVAL, "a", "b", 100.0),
        Event(2.0, 1, 2, ARRIVAL, "a", "b", 100.0),
        Event(3.0, 0, 1, DEPARTURE, "a", "b", 100.0),
        Event(5.0, 0, 2, DEPARTURE, "a", "b", 100.0),
    ]
    # live count: 1 on [1,2), 2 on [2,3), 1 on [3,5)
    assert concurrent_time_average(events, 1.0, 5.0) == pytest.approx((1 + 2 + 2) / 4)
