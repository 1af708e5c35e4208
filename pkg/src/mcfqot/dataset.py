"""Graph-encoded network states and the files that hold them.

A pattern describes the state the network would reach if the current
request were admitted. Node ``i`` of the graph is connection ``i``; two nodes
are joined when their lightpaths share a fiber link. Each active connection
has a nine-column feature row:

    0 path length (km)          5 modulation code (1 BPSK .. 4 16-QAM)
    1 longest link (km)         6 EDFA count
    2 central slot              7 link count
    3 slot count                8 BER before admission (0 for the request)
    4 core

Inactive connections have no edges and an all-zero row. Patterns keep only
the active rows and the edge list; ``adjacency()`` and ``feature_matrix()``
expand them to dense n x n and n x 9 arrays.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence, TextIO

import numpy as np

from .oracle import OracleConfig, QotReport
from .rsca import LightpathRecord, NetworkState, RscaConfig
from .simulation import SimulationStats, simulate
from .topology import Topology
from .traffic import TrafficConfig

log = logging.getLogger(__name__)

N_FEATURES = 9
FORMAT_TAG = "qot-dataset v1"
_ROUNDED_COLUMNS = [0, 1, 8]


class DatasetFormatError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def _sig9(values: np.ndarray) -> np.ndarray:
    # identical to what the text format stores, so files round-trip exactly
    return np.array([float(f"{v:.9g}") for v in values.tolist()], dtype=float)


@dataclass(eq=False)
class Pattern:
    request: int
    label: int
    n: int
    active: np.ndarray  # sorted 1-based connection indices, int64
    rows: np.ndarray  # len(active) x 9 features, float64
    edges: np.ndarray  # m x 2 pairs (i < j) of 1-based indices, int32

    @property
    def n_active(self) -> int:
        return len(self.active)

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n), dtype=np.int8)
        if len(self.edges):
            i, j = self.edges[:, 0] - 1, self.edges[:, 1] - 1
            a[i, j] = a[j, i] = 1
        return a

    def feature_matrix(self) -> np.ndarray:
        x = np.zeros((self.n, N_FEATURES))
        x[self.active - 1] = self.rows
        return x

    def local_edges(self) -> np.ndarray:
        """Edges renumbered to positions in ``active``."""
        return np.searchsorted(self.active, self.edges).astype(np.int64).reshape(-1, 2)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Pattern):
            return NotImplemented
        return (
            self.request == other.request
            and self.label == other.label
            and self.n == other.n
            and np.array_equal(self.active, other.active)
            and np.array_equal(self.rows, other.rows)
            and np.array_equal(self.edges, other.edges)
        )


@dataclass(eq=False)
class Dataset:
    n: int
    patterns: list[Pattern] = field(default_factory=list)
    topology_fingerprint: str = ""
    config_fingerprint: str = ""

    def __len__(self) -> int:
        return len(self.patterns)

    def __iter__(self) -> Iterator[Pattern]:
        return iter(self.patterns)

    def __getitem__(self, item):
        return self.patterns[item]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.n == other.n
            and self.topology_fingerprint == other.topology_fingerprint
            and self.config_fingerprint == other.config_fingerprint
            and self.patterns == other.patterns
        )

    @property
    def labels(self) -> np.ndarray:
        return np.array([p.label for p in self.patterns], dtype=np.int64)

    def subset(self, positions: Iterable[int]) -> Dataset:
        return Dataset(
            self.n,
            [self.patterns[k] for k in positions],
            self.topology_fingerprint,
            self.config_fingerprint,
        )


def sharing_edges(active: np.ndarray, link_sets: Sequence[Sequence[int]], n_links: int) -> np.ndarray:
    """Pairs of connections whose routes share at least one link."""
    m = len(active)
    if m < 2:
        return np.zeros((0, 2), dtype=np.int32)
    incidence = np.zeros((m, n_links), dtype=np.float32)
    for row, links in enumerate(link_sets):
        incidence[row, list(links)] = 1.0
    shared = incidence @ incidence.T
    r, c = np.nonzero(np.triu(shared, k=1) > 0)
    return np.column_stack([active[r], active[c]]).astype(np.int32)


def extract_pattern(
    prev_state: NetworkState,
    candidate: LightpathRecord,
    report: QotReport,
    prev_report: QotReport,
) -> Pattern:
    """Encode the would-be state ``prev_state + candidate``.

    ``report`` labels the would-be state; ``prev_report`` supplies the BERs
    of lightpaths already established (the last feature column).
    """
    n = prev_state.topology.n
    if candidate.index in prev_state.lightpaths:
        raise ValueError(f"candidate connection {candidate.index} is already established")
    lps = dict(prev_state.lightpaths)
    lps[candidate.index] = candidate
    active = np.array(sorted(lps), dtype=np.int64)
    if active[-1] > n:
        raise ValueError(f"connection index {active[-1]} exceeds n={n}")
    records = [lps[i] for i in active]
    rows = np.empty((len(active), N_FEATURES))
    for r, lp in enumerate(records):
        ber = 0.0 if lp.index == candidate.index else prev_report.ber_of(lp.index)
        rows[r] = (
            lp.length_km,
            lp.max_link_km,
            lp.center_slot,
            lp.slot_count,
            lp.core,
            lp.modulation,
            lp.edfa_count,
            lp.link_count,
            ber,
        )
    rows[:, _ROUNDED_COLUMNS] = _sig9(rows[:, _ROUNDED_COLUMNS].ravel()).reshape(-1, len(_ROUNDED_COLUMNS))
    edges = sharing_edges(active, [lp.route.links for lp in records], len(prev_state.topology.links))
    return Pattern(candidate.request, report.label, n, active, rows, edges)


def config_fingerprint(traffic: TrafficConfig, oracle: OracleConfig, rsca: RscaConfig) -> str:
    text = repr((asdict(traffic), asdict(oracle), asdict(rsca)))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _encode_step(step) -> Pattern:
    prev = step.state.copy().release(step.candidate.index)
    return extract_pattern(prev, step.candidate, step.report, step.prev_report)


def iter_patterns(
    topology: Topology,
    traffic: TrafficConfig,
    oracle: OracleConfig,
    rsca: RscaConfig | None = None,
    stats: SimulationStats | None = None,
    keep_routes: bool = False,
    check_every: int = 0,
) -> Iterator[Pattern] | Iterator[tuple[Pattern, dict[int, tuple[int, ...]]]]:
    """Stream one pattern per non-blocked arrival.

    With ``keep_routes`` each pattern comes paired with the link sets of the
    would-be state's lightpaths, which tests use to recheck the adjacency.
    """
    for step in simulate(topology, traffic, oracle, rsca, stats=stats, check_every=check_every):
        pattern = _encode_step(step)
        if keep_routes:
            routes = {i: lp.route.links for i, lp in step.state.lightpaths.items()}
            yield pattern, routes
        else:
            yield pattern


def run_generation(
    topology: Topology,
    traffic: TrafficConfig,
    oracle: OracleConfig,
    rsca: RscaConfig | None = None,
    stats: SimulationStats | None = None,
) -> Dataset:
    rsca = rsca or RscaConfig()
    stats = stats if stats is not None else SimulationStats()
    patterns = list(iter_patterns(topology, traffic, oracle, rsca, stats=stats))
    log.info(
        "generated %d patterns from %d arrivals (%d blocked, %.3f infeasible)",
        len(patterns),
        stats.arrivals,
        stats.blocked,
        stats.infeasible_fraction,
    )
    return Dataset(topology.n, patterns, topology.fingerprint(), config_fingerprint(traffic, oracle, rsca))


class InsufficientPatterns(ValueError):
    """Too few patterns of one class to balance."""


def balance_positions(labels: np.ndarray, per_class: int, seed: int) -> np.ndarray:
    """Positions of a class-balanced, shuffled subsample of ``labels``."""
    rng = np.random.Generator(np.random.PCG64(seed))
    labels = np.asarray(labels)
    chosen = []
    for label in (0, 1):
        pool = np.flatnonzero(labels == label)
        if len(pool) < per_class:
            counts = {0: int(np.sum(labels == 0)), 1: int(np.sum(labels == 1))}
            raise InsufficientPatterns(f"need {per_class} patterns per class, available: {counts}")
        chosen.append(rng.choice(pool, size=per_class, replace=False))
    order = np.concatenate(chosen)
    rng.shuffle(order)
    return order


def balance(dataset: Dataset, per_class: int, seed: int) -> Dataset:
    """Exactly ``per_class`` patterns of each label, drawn without replacement."""
    return dataset.subset(balance_positions(dataset.labels, per_class, seed).tolist())


def generate_balanced(
    topology: Topology,
    traffic: TrafficConfig,
    oracle: OracleConfig,
    rsca: RscaConfig | None,
    per_class: int,
    seed: int,
    stats: SimulationStats | None = None,
) -> Dataset:
    """Same result as ``balance(run_generation(...), per_class, seed)``.

    Runs the simulation twice: once for labels only, then again encoding just
    the selected arrivals, so memory stays proportional to the balanced set.
    """
    rsca = rsca or RscaConfig()
    stats = stats if stats is not None else SimulationStats()
    labels = [step.report.label for step in simulate(topology, traffic, oracle, rsca, stats=stats, with_prev_report=False)]
    order = balance_positions(np.array(labels, dtype=np.int64), per_class, seed)
    wanted = set(order.tolist())
    picked: dict[int, Pattern] = {}
    for position, step in enumerate(simulate(topology, traffic, oracle, rsca)):
        if position in wanted:
            picked[position] = _encode_step(step)
            if len(picked) == len(wanted):
                break
    patterns = [picked[k] for k in order.tolist()]
    return Dataset(topology.n, patterns, topology.fingerprint(), config_fingerprint(traffic, oracle, rsca))


def split_folds(dataset: Dataset, folds: int, seed: int) -> list[tuple[Dataset, Dataset]]:
    """Stratified k-fold partitions as (train, test) pairs."""
    if folds < 2:
        raise ValueError("need at least two folds")
    labels = dataset.labels
    if len(labels) % folds:
        raise ValueError(f"{len(labels)} patterns do not divide into {folds} folds")
    rng = np.random.Generator(np.random.PCG64(seed))
    assignment = np.empty(len(labels), dtype=np.int64)
    for label in np.unique(labels):
        members = np.flatnonzero(labels == label)
        if len(members) % folds:
            raise ValueError(f"class {label} ({len(members)} patterns) does not divide into {folds} folds")
        members = rng.permutation(members)
        assignment[members] = np.arange(len(members)) % folds
    splits = []
    for f in range(folds):
        test = np.flatnonzero(assignment == f)
        train = np.flatnonzero(assignment != f)
        splits.append((dataset.subset(train.tolist()), dataset.subset(test.tolist())))
    return splits


def write_dataset(dataset: Dataset, sink: TextIO, comments: Sequence[str] = ()) -> None:
    """Write the text format; ``comments`` become ``#`` lines after the tag."""
    sink.write(f"{FORMAT_TAG}\n")
    for line in comments:
        sink.write(f"# {line}\n")
    sink.write(f"n {dataset.n}\n")
    sink.write(f"c {N_FEATURES}\n")
    sink.write(f"count {len(dataset)}\n")
    sink.write(f"topology {dataset.topology_fingerprint or '-'}\n")
    sink.write(f"config {dataset.config_fingerprint or '-'}\n")
    for p in dataset.patterns:
        lines = [f"pattern {p.request} {p.label} {p.n_active}", f"edges {len(p.edges)}"]
        lines.extend(f"{i} {j}" for i, j in p.edges.tolist())
        for i, row in zip(p.active.tolist(), p.rows.tolist()):
            lines.append(f"row {i} " + " ".join(f"{v:.9g}" for v in row))
        sink.write("\n".join(lines) + "\n")


class _Lines:
    def __init__(self, source: TextIO):
        self._it = enumerate(source, start=1)
        self.lineno = 0

    def next(self, what: str) -> list[str]:
        for self.lineno, raw in self._it:
            if raw.strip() and not raw.lstrip().startswith("#"):
                return raw.split()
        raise DatasetFormatError(f"unexpected end of file, expected {what}", self.lineno + 1)

    def keyword(self, key: str, count: int) -> list[str]:
        parts = self.next(f"'{key}'")
        if parts[0] != key or len(parts) != count + 1:
            raise DatasetFormatError(f"expected '{key}' with {count} value(s)", self.lineno)
        return parts[1:]


def read_dataset(
    source: TextIO | str | Path,
    expect_topology: str | None = None,
    expect_config: str | None = None,
) -> Dataset:
    if isinstance(source, (str, Path)):
        with open(source) as fh:
            return read_dataset(fh, expect_topology, expect_config)
    lines = _Lines(source)
    if " ".join(lines.next("header")) != FORMAT_TAG:
        raise DatasetFormatError(f"missing '{FORMAT_TAG}' header", lines.lineno)
    try:
        n = int(lines.keyword("n", 1)[0])
        c = int(lines.keyword("c", 1)[0])
        count = int(lines.keyword("count", 1)[0])
    except ValueError:
        raise DatasetFormatError("bad header integer", lines.lineno) from None
    if c != N_FEATURES:
        raise DatasetFormatError(f"expected c {N_FEATURES}, got {c}", lines.lineno)
    topo_fp = lines.keyword("topology", 1)[0]
    conf_fp = lines.keyword("config", 1)[0]
    topo_fp = "" if topo_fp == "-" else topo_fp
    conf_fp = "" if conf_fp == "-" else conf_fp
    for name, expected, got in (("topology", expect_topology, topo_fp), ("config", expect_config, conf_fp)):
        if expected is not None and expected != got:
            log.warning("%s fingerprint mismatch: file has %s, expected %s", name, got, expected)

    patterns = []
    for _ in range(count):
        try:
            s, label, n_active = map(int, lines.keyword("pattern", 3))
            m = int(lines.keyword("edges", 1)[0])
            edges = np.empty((m, 2), dtype=np.int32)
            for e in range(m):
                parts = lines.next("edge")
                if len(parts) != 2:
                    raise DatasetFormatError("edge line needs two indices", lines.lineno)
                edges[e] = (int(parts[0]), int(parts[1]))
            active = np.empty(n_active, dtype=np.int64)
            rows = np.empty((n_active, N_FEATURES))
            for r in range(n_active):
                parts = lines.next("row")
                if parts[0] != "row" or len(parts) != N_FEATURES + 2:
                    raise DatasetFormatError(f"expected 'row' with {N_FEATURES + 1} values", lines.lineno)
                active[r] = int(parts[1])
                rows[r] = [float(v) for v in parts[2:]]
        except ValueError as exc:
            if isinstance(exc, DatasetFormatError):
                raise
            raise DatasetFormatError(f"bad number: {exc}", lines.lineno) from None
        pattern = Pattern(s, label, n, active, rows, edges)
        _validate(pattern, lines.lineno)
        patterns.append(pattern)
    return Dataset(n, patterns, topo_fp, conf_fp)


def _validate(p: Pattern, lineno: int) -> None:
    if p.label not in (0, 1):
        raise DatasetFormatError(f"label must be 0 or 1, got {p.label}", lineno)
    if p.n_active and (p.active[0] < 1 or p.active[-1] > p.n or np.any(np.diff(p.active) <= 0)):
        raise DatasetFormatError("row indices must be increasing within [1, n]", lineno)
    if np.any(~np.any(p.rows != 0, axis=1)):
        raise DatasetFormatError("active rows must not be all zero", lineno)
    if len(p.edges):
        if np.any(p.edges[:, 0] >= p.edges[:, 1]):
            raise DatasetFormatError("edges must be listed as i < j", lineno)
        if not np.all(np.isin(p.edges, p.active)):
            raise DatasetFormatError("edge endpoint is not an active row", lineno)
