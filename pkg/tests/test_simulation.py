import numpy as np

from mcfqot.oracle import OracleConfig, evaluate_state
from mcfqot.simulation import SimulationStats, infeasible_fraction, simulate
from mcfqot.topology import sample_topology
from mcfqot.traffic import TrafficConfig

CAL = OracleConfig(xt_coupling_h_per_km=1e-4)


def test_steps_and_rollback():
    topo = sample_topology("sample14")
    stats = SimulationStats()
    steps = 0
    rejected = None
    for step in simulate(topo, TrafficConfig(load_erlangs=40, request_count=800, seed=3), CAL, stats=stats, check_every=1):
        steps += 1
        # the yielded state already holds the candidate and matches the report
        assert step.candidate.index in step.state
        assert np.array_equal(evaluate_state(step.state, CAL).ber, step.report.ber)
        assert step.candidate.index not in step.prev_report.indices
        if rejected is not None:
            assert rejected not in step.state.lightpaths or step.state.lightpaths[rejected].request != rejected_request
            rejected = None
        if step.report.label == 0:
            rejected, rejected_request = step.candidate.index, step.request
    assert stats.arrivals == 800
    assert steps == stats.feasible + stats.infeasible == stats.arrivals - stats.blocked
    assert stats.infeasible > 0 and stats.resampled > 0


def test_fraction_matches_stats():
    topo = sample_topology("sample14")
    traffic = TrafficConfig(load_erlangs=40, request_count=500, seed=8)
    stats = SimulationStats()
    for _ in simulate(topo, traffic, CAL, stats=stats):
        pass
    assert infeasible_fraction(topo, traffic, CAL) == stats.infeasible_fraction
