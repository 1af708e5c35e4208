"""Event-driven admission loop shared by dataset generation and calibration.

On every arrival the RSCA heuristic proposes a lightpath, the oracle labels
the state the network would move to, and the lightpath is kept only when
that state is feasible. Departures release their lightpath.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .oracle import OracleConfig, QotReport, evaluate_state
from .rsca import Blocked, LightpathRecord, NetworkState, RscaConfig, allocate
from .topology import Topology
from .traffic import TrafficConfig, generate_events


@dataclass
class Step:
    """One non-blocked arrival.

    ``state`` already holds the candidate while the step is being consumed
    and is rolled back afterwards if ``report.label == 0``; consumers must
    not keep references to it.
    """

    request: int
    candidate: LightpathRecord
    state: NetworkState
    report: QotReport
    prev_report: QotReport | None


@dataclass
class SimulationStats:
    arrivals: int = 0
    blocked: int = 0
    resampled: int = 0
    feasible: int = 0
    infeasible: int = 0

    @property
    def infeasible_fraction(self) -> float:
        total = self.feasible + self.infeasible
        return self.infeasible / total if total else 0.0


def simulate(
    topology: Topology,
    traffic: TrafficConfig,
    oracle: OracleConfig,
    rsca: RscaConfig | None = None,
    stats: SimulationStats | None = None,
    with_prev_report: bool = True,
    check_every: int = 0,
) -> Iterator[Step]:
    """Yield a Step for each arrival that RSCA could place.

    An arrival whose connection is already live is moved to a uniformly drawn
    idle connection (its own seeded stream), or dropped as blocked when every
    connection is live. ``check_every > 0`` verifies grid consistency at that
    event period.
    """
    rsca = rsca or RscaConfig()
    stats = stats if stats is not None else SimulationStats()
    state = NetworkState(topology)
    resample_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([traffic.seed, 1])))
    live: dict[int, int] = {}
    current_report: QotReport | None = None
    pairs = topology.pairs

    for count, event in enumerate(generate_events(traffic, topology), start=1):
        if check_every and count % check_every == 0:
            state.check_consistency()
        if not event.is_arrival:
            index = live.pop(event.request, None)
            if index is not None:
                state.release(index)
                current_report = None
            continue

        stats.arrivals += 1
        u, v = event.source, event.destination
        if topology.connection_index(u, v) in state.lightpaths:
            idle = np.setdiff1d(np.arange(1, topology.n + 1), list(state.lightpaths))
            if idle.size == 0:
                stats.blocked += 1
                continue
            u, v = pairs[int(resample_rng.choice(idle)) - 1]
            stats.resampled += 1

        candidate = allocate(state, u, v, event.bitrate, rsca, request=event.request)
        if isinstance(candidate, Blocked):
            stats.blocked += 1
            continue

        prev_report = None
        if with_prev_report:
            if current_report is None:
                current_report = evaluate_state(state, oracle)
            prev_report = current_report
        state.commit(candidate)
        report = evaluate_state(state, oracle)
        yield Step(event.request, candidate, state, report, prev_report)
        if report.label:
            stats.feasible += 1
            live[event.request] = candidate.index
            current_report = report
        else:
            stats.infeasible += 1
            state.release(candidate.index)
    if check_every:
        state.check_consistency()


def infeasible_fraction(
    topology: Topology,
    traffic: TrafficConfig,
    oracle: OracleConfig,
    rsca: RscaConfig | None = None,
) -> float:
    stats = SimulationStats()
    for _ in simulate(topology, traffic, oracle, rsca, stats=stats, with_prev_report=False):
        pass
    return stats.infeasible_fraction
