"""Network state and the routing, spectrum and core allocation heuristic.

The heuristic is deliberately plain: k shortest paths in order, cores in
ascending order, first-fit contiguous slots, one core end to end and no
spectrum conversion. Cores and slots are 1-based everywhere outside the
occupancy grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TextIO

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .topology import DEFAULT_K_PATHS, Path, Topology

BPSK, QPSK, QAM8, QAM16 = 1, 2, 3, 4
MODULATION_NAMES = {BPSK: "BPSK", QPSK: "QPSK", QAM8: "8-QAM", QAM16: "16-QAM"}
BITS_PER_SYMBOL = {BPSK: 1, QPSK: 2, QAM8: 3, QAM16: 4}
FREE = 0


class NoModulation(ValueError):
    """No modulation format reaches the requested distance."""


@dataclass(frozen=True)
class RscaConfig:
    k_paths: int = DEFAULT_K_PATHS
    # transparent reach in km per modulation code
    reach_km: tuple[tuple[int, float], ...] = (
        (BPSK, 4000.0),
        (QPSK, 2000.0),
        (QAM8, 1000.0),
        (QAM16, 500.0),
    )
    slot_gbps_per_bit: float = 25.0
    guard_slots: int = 0

    @property
    def reach(self) -> dict[int, float]:
        return dict(self.reach_km)


@dataclass(frozen=True)
class LightpathRecord:
    index: int
    route: Path
    core: int
    start_slot: int
    slot_count: int
    modulation: int
    length_km: float
    max_link_km: float
    edfa_count: int
    bitrate: float = 0.0
    request: int = 0
    guard_slots: int = 0

    @property
    def link_count(self) -> int:
        return len(self.route.links)

    @property
    def end_slot(self) -> int:
        """Last slot used, inclusive."""
        return self.start_slot + self.slot_count - 1

    @property
    def center_slot(self) -> float:
        return self.start_slot + (self.slot_count - 1) / 2

    def occupied(self) -> tuple[int, int]:
        """Zero-based half-open slot range held in the grid (guard band included)."""
        return self.start_slot - 1, self.start_slot - 1 + self.slot_count + self.guard_slots

    def to_line(self) -> str:
        route = " ".join(self.route.nodes)
        return f"{self.index} {self.core} {self.start_slot} {self.slot_count} {self.modulation} {route}"


@dataclass(frozen=True)
class Blocked:
    reason: str

    def __bool__(self) -> bool:
        return False


class NetworkState:
    """Established lightpaths plus the (link, core, slot) occupancy grid.

    Grid cells hold ``FREE`` or the owning connection index. ``commit`` and
    ``release`` mutate in place and return the state for chaining.
    """

    def __init__(self, topology: Topology):
        self.topology = topology
        self.lightpaths: dict[int, LightpathRecord] = {}
        self.grid = np.zeros((len(topology.links), topology.cores, topology.slots), dtype=np.int32)

    def __contains__(self, index: int) -> bool:
        return index in self.lightpaths

    def __len__(self) -> int:
        return len(self.lightpaths)

    def __eq__(self, other) -> bool:
        if not isinstance(other, NetworkState):
            return NotImplemented
        return (
            self.topology is other.topology
            and self.lightpaths == other.lightpaths
            and np.array_equal(self.grid, other.grid)
        )

    def copy(self) -> NetworkState:
        new = NetworkState.__new__(NetworkState)
        new.topology = self.topology
        new.lightpaths = dict(self.lightpaths)
        new.grid = self.grid.copy()
        return new

    def commit(self, lightpath: LightpathRecord) -> NetworkState:
        i = lightpath.index
        if i in self.lightpaths:
            raise RuntimeError(f"connection {i} is already established")
        lo, hi = lightpath.occupied()
        if hi > self.topology.slots or lo < 0:
            raise RuntimeError(f"lightpath {i} exceeds the slot range")
        links = list(lightpath.route.links)
        cells = self.grid[links, lightpath.core - 1, lo:hi]
        if np.any(cells != FREE):
            raise RuntimeError(f"lightpath {i} overlaps an existing allocation")
        self.grid[links, lightpath.core - 1, lo:hi] = i
        self.lightpaths[i] = lightpath
        return self

    def release(self, index: int) -> NetworkState:
        try:
            lightpath = self.lightpaths.pop(index)
        except KeyError:
            raise KeyError(f"connection {index} is not established") from None
        lo, hi = lightpath.occupied()
        self.grid[list(lightpath.route.links), lightpath.core - 1, lo:hi] = FREE
        return self

    def check_consistency(self) -> None:
        """Raise AssertionError unless the grid equals the union of live lightpaths."""
        expected = np.zeros_like(self.grid)
        for lp in self.lightpaths.values():
            lo, hi = lp.occupied()
            block = expected[list(lp.route.links), lp.core - 1, lo:hi]
            assert not np.any(block != FREE), f"overlap involving connection {lp.index}"
            expected[list(lp.route.links), lp.core - 1, lo:hi] = lp.index
        assert np.array_equal(expected, self.grid), "grid differs from live lightpaths"

    def write_snapshot(self, sink: TextIO) -> None:
        for i in sorted(self.lightpaths):
            sink.write(self.lightpaths[i].to_line() + "\n")


def commit(state: NetworkState, lightpath: LightpathRecord) -> NetworkState:
    return state.commit(lightpath)


def release(state: NetworkState, index: int) -> NetworkState:
    return state.release(index)


def modulation_and_slots(
    path_length_km: float, bitrate_gbps: float, config: RscaConfig = RscaConfig()
) -> tuple[int, int]:
    """Highest-order format whose reach covers the path, and the slots it needs."""
    if path_length_km <= 0:
        raise ValueError("path length must be positive")
    reach = config.reach
    for modulation in sorted(reach, reverse=True):
        if reach[modulation] >= path_length_km:
            per_slot = config.slot_gbps_per_bit * BITS_PER_SYMBOL[modulation]
            return modulation, math.ceil(bitrate_gbps / per_slot - 1e-12)
    raise NoModulation(f"{path_length_km:.1f} km is beyond every modulation reach")


def edfa_count(topology: Topology, path: Path) -> int:
    return sum(math.ceil(topology.links[i].length_km / topology.span_km) for i in path.links)


def _first_fit(free: np.ndarray, width: int) -> tuple[int, int] | None:
    """First (core, slot) with ``width`` contiguous free slots; both zero-based."""
    if width > free.shape[1]:
        return None
    fits = sliding_window_view(free, width, axis=1).all(axis=2)
    cores = np.flatnonzero(fits.any(axis=1))
    if cores.size == 0:
        return None
    core = int(cores[0])
    return core, int(np.argmax(fits[core]))


def allocate(
    state: NetworkState,
    source: str,
    destination: str,
    bitrate: float,
    config: RscaConfig = RscaConfig(),
    request: int = 0,
) -> LightpathRecord | Blocked:
    """Propose a lightpath for a request without touching the state."""
    topology = state.topology
    index = topology.connection_index(source, destination)
    if index in state.lightpaths:
        raise RuntimeError(f"connection {index} is already established")
    reasons = []
    for path in topology.k_shortest_paths(source, destination, config.k_paths):
        try:
            modulation, slots = modulation_and_slots(path.length_km, bitrate, config)
        except NoModulation:
            reasons.append("reach")
            continue
        free = np.all(state.grid[list(path.links)] == FREE, axis=0)
        fit = _first_fit(free, slots + config.guard_slots)
        if fit is None:
            reasons.append("spectrum")
            continue
        core, slot = fit
        return LightpathRecord(
            index=index,
            route=path,
            core=core + 1,
            start_slot=slot + 1,
            slot_count=slots,
            modulation=modulation,
            length_km=path.length_km,
            max_link_km=max(topology.links[i].length_km for i in path.links),
            edfa_count=edfa_count(topology, path),
            bitrate=bitrate,
            request=request,
            guard_slots=config.guard_slots,
        )
    return Blocked("no contiguous slots on any path/core" if "spectrum" in reasons else "out of reach")
