"""Dynamic traffic: Poisson arrivals with exponential holding times.

Random numbers come from numpy's PCG64 bit generator seeded with the config
seed, so a given (config, topology) always produces the same event stream.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, TextIO

import numpy as np

from .topology import Topology

ARRIVAL = "arrival"
DEPARTURE = "departure"


@dataclass(frozen=True)
class TrafficConfig:
    load_erlangs: float = 400.0
    mean_holding: float = 1.0
    request_count: int = 20000
    bitrate_choices: tuple[float, ...] = (100.0, 200.0, 400.0)
    bitrate_probs: tuple[float, ...] | None = None
    seed: int = 1

    def __post_init__(self):
        if self.load_erlangs <= 0 or self.mean_holding <= 0:
            raise ValueError("load_erlangs and mean_holding must be positive")
        if self.request_count < 0:
            raise ValueError("request_count must be >= 0")
        if not self.bitrate_choices or min(self.bitrate_choices) <= 0:
            raise ValueError("bitrate_choices must be non-empty and positive")
        if self.bitrate_probs is not None:
            if len(self.bitrate_probs) != len(self.bitrate_choices):
                raise ValueError("bitrate_probs must match bitrate_choices")
            if not np.isclose(sum(self.bitrate_probs), 1.0):
                raise ValueError("bitrate_probs must sum to 1")

    @property
    def arrival_rate(self) -> float:
        return self.load_erlangs / self.mean_holding

    @property
    def probs(self) -> np.ndarray:
        if self.bitrate_probs is None:
            k = len(self.bitrate_choices)
            return np.full(k, 1.0 / k)
        return np.asarray(self.bitrate_probs, dtype=float)


@dataclass(frozen=True, order=True)
class Event:
    time: float
    # departures sort before arrivals at equal times so freed resources are reusable
    order: int = field(repr=False)
    request: int
    kind: str = field(compare=False)
    source: str = field(compare=False)
    destination: str = field(compare=False)
    bitrate: float = field(compare=False)

    @property
    def is_arrival(self) -> bool:
        return self.kind == ARRIVAL

    def to_line(self) -> str:
        return (
            f"{self.time!r} {self.kind} {self.request} "
            f"{self.source} {self.destination} {self.bitrate!r}"
        )


def generate_events(config: TrafficConfig, topology: Topology) -> list[Event]:
    """Chronologically sorted arrivals and departures, ``request_count`` of each."""
    count = config.request_count
    if count == 0:
        return []
    rng = np.random.Generator(np.random.PCG64(config.seed))
    gaps = rng.exponential(1.0 / config.arrival_rate, size=count)
    holding = rng.exponential(config.mean_holding, size=count)
    pair_ids = rng.integers(0, topology.n, size=count)
    rates = rng.choice(np.asarray(config.bitrate_choices, dtype=float), size=count, p=config.probs)

    arrivals = np.cumsum(gaps)
    departures = arrivals + holding
    pairs = topology.pairs
    events = []
    for s in range(count):
        u, v = pairs[pair_ids[s]]
        rate = float(rates[s])
        events.append(Event(float(arrivals[s]), 1, s + 1, ARRIVAL, u, v, rate))
        events.append(Event(float(departures[s]), 0, s + 1, DEPARTURE, u, v, rate))
    events.sort()
    return events


def concurrent_time_average(events: Iterable[Event], start: float, stop: float) -> float:
    """Time-averaged number of live requests over ``[start, stop]``.

    Replays the stream, counting a request as live between its arrival and
    departure; used to check the offered load against the Erlang figure.
    """
    if stop <= start:
        raise ValueError("stop must exceed start")
    live = 0
    area = 0.0
    last = start
    for ev in events:
        t = min(max(ev.time, start), stop)
        area += live * (t - last)
        last = t
        if ev.time > stop:
            break
        live += 1 if ev.is_arrival else -1
    area += live * (stop - last)
    return area / (stop - start)


def write_trace(events: Iterable[Event], sink: TextIO) -> None:
    for ev in events:
        sink.write(ev.to_line() + "\n")


def read_trace(source: TextIO) -> list[Event]:
    events = []
    for lineno, line in enumerate(source, start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 6 or parts[1] not in (ARRIVAL, DEPARTURE):
            raise ValueError(f"line {lineno}: malformed event {line!r}")
        t, kind, s, u, v, rate = parts
        order = 1 if kind == ARRIVAL else 0
        events.append(Event(float(t), order, int(s), kind, u, v, float(rate)))
    return events
