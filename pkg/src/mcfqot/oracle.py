"""Ground-truth QoT labeler: per-lightpath SNR and BER with inter-core crosstalk.

The model is a deliberately simple, monotone stand-in for a lab Q-factor
model:

* ASE: ``OSNR_dB = 58 + P_dBm - span_loss_dB - NF_dB - 10 log10(N_spans)``
  in a 12.5 GHz reference bandwidth, scaled to per-symbol SNR by
  ``reference_bandwidth / symbol_rate``. Span loss uses the nominal span
  length, so the SNR depends on distance only through the span count.
* NLI: a fixed margin of ``nli_margin_db_per_span`` dB per span on top of ASE.
* XT: for every route link and every adjacent core carrying a spectrally
  overlapping lightpath, add ``1 - exp(-2 h L_link)``.

``1/snr = 1/snr_ase + 1/snr_nli + xt`` and the BER follows from the usual
erfc approximations per modulation format.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import TextIO

import numpy as np
from scipy.special import erfc

from .rsca import BPSK, QAM8, QAM16, QPSK, NetworkState
from .topology import Topology

ONE_TENTH_NM_DB = 58.0


@dataclass(frozen=True)
class OracleConfig:
    launch_power_dbm: float = -3.0
    edfa_noise_figure_db: float = 5.5
    span_loss_db_per_km: float = 0.22
    xt_coupling_h_per_km: float = 1e-5
    ber_threshold: float = 1e-3
    reference_bandwidth_ghz: float = 12.5
    symbol_rate_gbaud: float = 25.0
    nli_margin_db_per_span: float = 0.1

    def __post_init__(self):
        for f in fields(self):
            if f.name in ("launch_power_dbm", "xt_coupling_h_per_km", "nli_margin_db_per_span"):
                continue
            if not getattr(self, f.name) > 0:
                raise ValueError(f"{f.name} must be positive")
        if self.xt_coupling_h_per_km < 0 or self.nli_margin_db_per_span < 0:
            raise ValueError("xt coupling and NLI margin must be non-negative")
        if not 0 < self.ber_threshold < 0.5:
            raise ValueError("ber_threshold must lie in (0, 0.5)")

    def with_h(self, h: float) -> OracleConfig:
        return replace(self, xt_coupling_h_per_km=h)


def write_config(config: OracleConfig, sink: TextIO, extra: dict | None = None) -> None:
    for key, value in asdict(config).items():
        sink.write(f"{key} = {value!r}\n")
    for key, value in (extra or {}).items():
        sink.write(f"# {key} = {value}\n")


def read_config(source: TextIO | str | Path) -> OracleConfig:
    """Parse ``key = value`` lines; unknown keys are an error, missing keys keep defaults."""
    if isinstance(source, (str, Path)):
        text = Path(source).read_text()
    else:
        text = source.read()
    known = {f.name for f in fields(OracleConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (part.strip() for part in line.partition("="))
        if not sep or key not in known:
            raise ValueError(f"line {lineno}: bad oracle setting {raw.strip()!r}")
        values[key] = float(value)
    return OracleConfig(**values)


def core_adjacency(cores: int) -> np.ndarray:
    """Boolean core-adjacency matrix (zero-based).

    Seven cores use the hexagonal layout with core 1 in the center and cores
    2..7 around it in ring order. Other core counts fall back to a linear
    arrangement.
    """
    adj = np.zeros((cores, cores), dtype=bool)
    if cores == 7:
        adj[0, 1:] = adj[1:, 0] = True
        for a in range(1, 7):
            b = 1 + a % 6
            adj[a, b] = adj[b, a] = True
    else:
        for a in range(cores - 1):
            adj[a, a + 1] = adj[a + 1, a] = True
    return adj


def _qam_ber(snr, m: int):
    return (2.0 / math.log2(m)) * (1.0 - 1.0 / math.sqrt(m)) * erfc(np.sqrt(1.5 * snr / (m - 1)))


def snr_to_ber(snr_linear, modulation):
    """BER for a per-symbol SNR (linear) and modulation code 1..4.

    BPSK ``erfc(sqrt(snr))/2``, QPSK ``erfc(sqrt(snr/2))/2`` and M-QAM
    ``(2/log2 M)(1 - 1/sqrt M) erfc(sqrt(3 snr / (2(M - 1))))``. The QAM
    approximation undershoots QPSK at very low SNR, so each format is floored
    at the BER of the next lower order. Works elementwise on arrays.
    """
    snr = np.asarray(snr_linear, dtype=float)
    mod = np.asarray(modulation)
    if np.any(~(snr > 0)):
        raise ValueError("snr must be positive")
    if np.any((mod < BPSK) | (mod > QAM16)):
        raise ValueError("modulation code must be 1..4")
    bpsk = 0.5 * erfc(np.sqrt(snr))
    qpsk = np.maximum(0.5 * erfc(np.sqrt(snr / 2.0)), bpsk)
    qam8 = np.maximum(_qam_ber(snr, 8), qpsk)
    qam16 = np.maximum(_qam_ber(snr, 16), qam8)
    ber = np.select([mod == BPSK, mod == QPSK, mod == QAM8], [bpsk, qpsk, qam8], qam16)
    # erfc underflows to 0 for huge SNR; keep the open interval (0, 0.5)
    ber = np.maximum(ber, np.finfo(float).tiny)
    return ber if ber.ndim else float(ber)


def ase_snr(edfa_count, config: OracleConfig, span_km: float):
    """Per-symbol SNR from amplified spontaneous emission alone (linear)."""
    spans = np.maximum(np.asarray(edfa_count, dtype=float), 1.0)
    osnr_db = (
        ONE_TENTH_NM_DB
        + config.launch_power_dbm
        - config.span_loss_db_per_km * span_km
        - config.edfa_noise_figure_db
        - 10.0 * np.log10(spans)
    )
    return 10.0 ** (osnr_db / 10.0) * config.reference_bandwidth_ghz / config.symbol_rate_gbaud


def nli_inverse_snr(edfa_count, snr_ase, config: OracleConfig):
    spans = np.maximum(np.asarray(edfa_count, dtype=float), 1.0)
    return (10.0 ** (config.nli_margin_db_per_span * spans / 10.0) - 1.0) / snr_ase


def xt_per_link(topology: Topology, config: OracleConfig) -> np.ndarray:
    """Crosstalk ratio contributed by one interfering adjacent core on each link."""
    return -np.expm1(-2.0 * config.xt_coupling_h_per_km * topology.link_lengths)


def aggregate_xt(state: NetworkState, index: int, config: OracleConfig) -> float:
    """Total crosstalk on lightpath ``index``, evaluated link by link."""
    lp = state.lightpaths[index]
    adjacency = core_adjacency(state.topology.cores)
    lo, hi = lp.start_slot - 1, lp.end_slot
    h = config.xt_coupling_h_per_km
    total = 0.0
    for link in lp.route.links:
        length = state.topology.links[link].length_km
        for other in np.flatnonzero(adjacency[lp.core - 1]):
            if np.any(state.grid[link, other, lo:hi] != 0):
                total += 1.0 - math.exp(-2.0 * h * length)
    return total


@dataclass
class QotReport:
    indices: np.ndarray
    snr_linear: np.ndarray
    xt_linear: np.ndarray
    ber: np.ndarray
    label: int
    _pos: dict = field(default=None, repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.indices)

    def position(self, index: int) -> int:
        if self._pos is None:
            self._pos = {int(i): k for k, i in enumerate(self.indices)}
        return self._pos[index]

    def ber_of(self, index: int) -> float:
        return float(self.ber[self.position(index)])

    @property
    def worst_ber(self) -> float:
        return float(self.ber.max()) if len(self.ber) else 0.0

    def write(self, sink: TextIO) -> None:
        for i, snr, ber in zip(self.indices, self.snr_linear, self.ber):
            sink.write(f"{int(i)} {10 * math.log10(snr):.6f} {ber:.9g}\n")


class _StateArrays:
    """Column view of a state's lightpaths plus (lightpath, link) pair arrays."""

    def __init__(self, state: NetworkState):
        lps = [state.lightpaths[i] for i in sorted(state.lightpaths)]
        self.indices = np.array([lp.index for lp in lps], dtype=np.int64)
        self.core = np.array([lp.core - 1 for lp in lps], dtype=np.int64)
        self.lo = np.array([lp.start_slot - 1 for lp in lps], dtype=np.int64)
        self.hi = np.array([lp.end_slot for lp in lps], dtype=np.int64)
        self.modulation = np.array([lp.modulation for lp in lps], dtype=np.int64)
        self.edfa = np.array([lp.edfa_count for lp in lps], dtype=float)
        hops = [len(lp.route.links) for lp in lps]
        self.pair_owner = np.repeat(np.arange(len(lps)), hops)
        self.pair_link = np.array([l for lp in lps for l in lp.route.links], dtype=np.int64)


def evaluate_state(state: NetworkState, config: OracleConfig) -> QotReport:
    """Label a network state: feasible iff every lightpath meets the BER threshold."""
    if not state.lightpaths:
        empty = np.zeros(0)
        return QotReport(np.zeros(0, dtype=np.int64), empty, empty, empty, 1)
    topo = state.topology
    cols = _StateArrays(state)
    owner, link = cols.pair_owner, cols.pair_link

    # prefix sums of occupancy: any use of core c on link l within [lo, hi)
    occupied = (state.grid != 0).astype(np.int32)
    prefix = np.zeros(occupied.shape[:2] + (occupied.shape[2] + 1,), dtype=np.int32)
    np.cumsum(occupied, axis=2, out=prefix[:, :, 1:])
    used = prefix[link, :, cols.hi[owner]] - prefix[link, :, cols.lo[owner]]
    neighbours = core_adjacency(topo.cores)[cols.core[owner]]
    interferers = np.count_nonzero((used > 0) & neighbours, axis=1)
    per_pair = interferers * xt_per_link(topo, config)[link]
    xt = np.bincount(owner, weights=per_pair, minlength=len(cols.indices))

    snr_ase = ase_snr(cols.edfa, config, topo.span_km)
    inv = 1.0 / snr_ase + nli_inverse_snr(cols.edfa, snr_ase, config) + xt
    snr = 1.0 / inv
    ber = snr_to_ber(snr, cols.modulation)
    label = int(np.all(ber <= config.ber_threshold))
    return QotReport(cols.indices, snr, xt, np.atleast_1d(ber), label)


@dataclass
class CalibrationResult:
    h_per_km: float
    infeasible_fraction: float
    trials: list[tuple[float, float]]


class CalibrationError(RuntimeError):
    pass


def calibrate(
    config: OracleConfig,
    topology: Topology,
    traffic_config,
    rsca_config=None,
    h_range: tuple[float, float] = (1e-6, 1e-2),
    band: tuple[float, float] = (0.2, 0.5),
    max_iter: int = 30,
) -> CalibrationResult:
    """Bisect log(h) until a pilot run's infeasible fraction falls inside ``band``.

    The first probe is the geometric midpoint of ``h_range``; each miss halves
    the bracket on the side away from the band.

    The pilot is the same admission loop used for dataset generation, with
    ``traffic_config.request_count`` arrivals (at least 2000 are expected).
    """
    from .simulation import infeasible_fraction

    lo, hi = h_range
    if not 0 <= lo < hi:
        raise ValueError("h_range must satisfy 0 <= low < high")
    target = 0.5 * (band[0] + band[1])
    trials: list[tuple[float, float]] = []

    def pilot(h: float) -> float:
        frac = infeasible_fraction(topology, traffic_config, config.with_h(h), rsca_config)
        trials.append((h, frac))
        return frac

    a = math.log(lo) if lo > 0 else math.log(hi) - 20.0
    b = math.log(hi)
    for _ in range(max_iter):
        if b - a < 1e-3:
            break  # bracket collapsed: the band sits on a jump of the fraction
        mid = 0.5 * (a + b)
        h = math.exp(mid)
        frac = pilot(h)
        if band[0] <= frac <= band[1]:
            return CalibrationResult(h, frac, trials)
        if frac < target:
            a = mid
        else:
            b = mid
    raise CalibrationError(
        "calibration did not converge: " + ", ".join(f"h={h:.3g} -> {f:.3f}" for h, f in trials)
    )
