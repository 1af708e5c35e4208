"""Physical network description: nodes, fiber links, cores, slots and routes.

Topology files are line oriented::

    # comment
    cores 7
    slots 160
    span_km 80
    node A
    node B
    link A B 120.5

Connections are unordered node pairs, numbered 1..n in lexicographic order of
``(min(u, v), max(u, v))`` so that indices do not depend on file order.
"""

from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
import pathlib

import networkx as nx
import numpy as np

DEFAULT_K_PATHS = 3
# path lengths are float sums; compare them after rounding to this many decimals
_LENGTH_DECIMALS = 9


class TopologyError(ValueError):
    """Raised for malformed or inconsistent topology input."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class Link:
    index: int
    u: str
    v: str
    length_km: float


@dataclass(frozen=True)
class Path:
    """A loop-free route, both as a node sequence and as link indices."""

    nodes: tuple[str, ...]
    links: tuple[int, ...]
    length_km: float

    @property
    def hops(self) -> int:
        return len(self.links)


@dataclass(frozen=True, eq=False)
class Topology:
    nodes: tuple[str, ...]
    links: tuple[Link, ...]
    cores: int
    slots: int
    span_km: float
    _paths: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.cores < 1 or self.slots < 1:
            raise TopologyError("cores and slots must be >= 1")
        if self.span_km <= 0:
            raise TopologyError("span_km must be positive")
        declared = set(self.nodes)
        if len(declared) != len(self.nodes):
            raise TopologyError("duplicate node declaration")
        seen = set()
        for link in self.links:
            if link.u not in declared or link.v not in declared:
                raise TopologyError(f"link {link.u}-{link.v} uses an undeclared node")
            if link.u == link.v:
                raise TopologyError(f"self-loop on node {link.u}")
            if link.length_km <= 0:
                raise TopologyError(f"link {link.u}-{link.v} has non-positive length")
            key = frozenset((link.u, link.v))
            if key in seen:
                raise TopologyError(f"duplicate link {link.u}-{link.v}")
            seen.add(key)
        if len(self.nodes) < 2:
            raise TopologyError("a topology needs at least two nodes")
        if not nx.is_connected(self.graph):
            raise TopologyError("topology graph is disconnected")

    @cached_property
    def graph(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(self.nodes)
        for link in self.links:
            g.add_edge(link.u, link.v, length=link.length_km, index=link.index)
        return g

    @cached_property
    def pairs(self) -> tuple[tuple[str, str], ...]:
        """Connection pairs ordered by index (``pairs[i - 1]`` is connection i)."""
        return tuple(itertools.combinations(sorted(self.nodes), 2))

    @cached_property
    def _pair_index(self) -> dict[tuple[str, str], int]:
        return {pair: i for i, pair in enumerate(self.pairs, start=1)}

    @property
    def n(self) -> int:
        """Number of connections, |V|(|V|-1)/2."""
        return len(self.pairs)

    @cached_property
    def link_lengths(self) -> np.ndarray:
        return np.array([link.length_km for link in self.links], dtype=float)

    def link_between(self, u: str, v: str) -> Link:
        return self.links[self.graph.edges[u, v]["index"]]

    def connection_index(self, u: str, v: str) -> int:
        return connection_index(self, u, v)

    def k_shortest_paths(self, u: str, v: str, k: int = DEFAULT_K_PATHS) -> list[Path]:
        key = (min(u, v), max(u, v), k)
        if key not in self._paths:
            paths = k_shortest_paths(self, key[0], key[1], k)
            self._paths[key] = paths
        paths = self._paths[key]
        if u > v:
            return [_reverse(p) for p in paths]
        return paths

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.cores} {self.slots} {self.span_km!r}\n".encode())
        for node in sorted(self.nodes):
            h.update(f"node {node}\n".encode())
        for link in self.links:
            h.update(f"link {link.u} {link.v} {link.length_km!r}\n".encode())
        return h.hexdigest()[:16]


def _reverse(path: Path) -> Path:
    return Path(path.nodes[::-1], path.links[::-1], path.length_km)


def parse_topology(text: str) -> Topology:
    header: dict[str, tuple[str, int]] = {}
    nodes: list[str] = []
    raw_links: list[tuple[str, str, float, int]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        keyword = parts[0]
        if keyword in ("cores", "slots", "span_km"):
            if len(parts) != 2:
                raise TopologyError(f"expected '{keyword} <value>'", lineno)
            header[keyword] = (parts[1], lineno)
        elif keyword == "node":
            if len(parts) != 2:
                raise TopologyError("expected 'node <id>'", lineno)
            if parts[1] in nodes:
                raise TopologyError(f"duplicate node {parts[1]!r}", lineno)
            nodes.append(parts[1])
        elif keyword == "link":
            if len(parts) != 4:
                raise TopologyError("expected 'link <u> <v> <length_km>'", lineno)
            try:
                length = float(parts[3])
            except ValueError:
                raise TopologyError(f"bad link length {parts[3]!r}", lineno) from None
            raw_links.append((parts[1], parts[2], length, lineno))
        else:
            raise TopologyError(f"unknown record {keyword!r}", lineno)

    for required in ("cores", "slots"):
        if required not in header:
            raise TopologyError(f"missing '{required}' header")
    try:
        cores = int(header["cores"][0])
        slots = int(header["slots"][0])
        span_km = float(header.get("span_km", ("80", 0))[0])
    except ValueError as exc:
        raise TopologyError(f"bad header value: {exc}") from None

    declared = set(nodes)
    seen: set[frozenset] = set()
    links = []
    for u, v, length, lineno in raw_links:
        for endpoint in (u, v):
            if endpoint not in declared:
                raise TopologyError(f"link references undeclared node {endpoint!r}", lineno)
        if u == v:
            raise TopologyError(f"self-loop on node {u!r}", lineno)
        if not length > 0:
            raise TopologyError("link length must be positive", lineno)
        key = frozenset((u, v))
        if key in seen:
            raise TopologyError(f"duplicate link {u}-{v}", lineno)
        seen.add(key)
        links.append(Link(len(links), u, v, length))

    return Topology(tuple(nodes), tuple(links), cores, slots, span_km)


def load_topology(path: str | Path) -> Topology:
    return parse_topology(pathlib.Path(path).read_text())


def sample_topology(name: str = "sample30") -> Topology:
    """Load one of the bundled synthetic topologies (``sample30`` or ``sample14``)."""
    text = resources.files("mcfqot.data").joinpath(f"{name}.topo").read_text()
    return parse_topology(text)


def sample_topology_path(name: str = "sample30") -> Path:
    return pathlib.Path(str(resources.files("mcfqot.data").joinpath(f"{name}.topo")))


def connection_index(topology: Topology, u: str, v: str) -> int:
    if u == v:
        raise ValueError(f"a connection needs two distinct nodes, got {u!r} twice")
    key = (u, v) if u < v else (v, u)
    try:
        return topology._pair_index[key]
    except KeyError:
        missing = [x for x in key if x not in topology.graph]
        raise ValueError(f"unknown node(s): {', '.join(missing)}") from None


def k_shortest_paths(topology: Topology, u: str, v: str, k: int = DEFAULT_K_PATHS) -> list[Path]:
    """Up to ``k`` loop-free paths ordered by (length, hops, node sequence).

    Paths come from networkx's Yen-style generator, which yields them in
    non-decreasing length. We keep pulling past the k-th path while lengths
    still tie with it, so the declared tie-break picks among all equals.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    g = topology.graph
    found: list[tuple[float, int, tuple[str, ...]]] = []
    cutoff = None
    for nodes in nx.shortest_simple_paths(g, u, v, weight="length"):
        length = round(nx.path_weight(g, nodes, "length"), _LENGTH_DECIMALS)
        if cutoff is not None and length > cutoff:
            break
        found.append((length, len(nodes) - 1, tuple(nodes)))
        if len(found) == k:
            cutoff = length
    found.sort()
    paths = []
    for _, _, nodes in found[:k]:
        link_ids = tuple(g.edges[a, b]["index"] for a, b in zip(nodes, nodes[1:]))
        length = float(sum(topology.links[i].length_km for i in link_ids))
        paths.append(Path(nodes, link_ids, length))
    return paths
