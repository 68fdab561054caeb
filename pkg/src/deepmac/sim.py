"""Seeded discrete-event simulator of a single-channel ad-hoc WLAN.

Every node runs the state machine of one wired :class:`ProtocolGraph`. The
medium is ideal and fully connected: two overlapping transmissions destroy
each other, and the only other loss is a flat bit error rate.

Rate semantics: with the DataRate block excluded, data frames go out at the
10 Mbps channel capacity; an active DataRate block replaces that rate for
data frames only. ACK/RTS/CTS always use the base capacity.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import _kernel as K
from .controller import ACK, BACKOFF, CS, RTS, TX, ProtocolGraph


class Load(Enum):
    LOW = "Low"
    AVERAGE = "Average"
    HIGH = "High"
    SATURATED = "Saturated"

    @property
    def fraction(self) -> float | None:
        """Aggregate Poisson offered load as a fraction of channel capacity."""
        return _LOAD_FRACTION[self]


_LOAD_FRACTION = {Load.LOW: 0.1, Load.AVERAGE: 0.5, Load.HIGH: 0.9, Load.SATURATED: None}


@dataclass(frozen=True)
class Scenario:
    nodes: int
    load: Load
    noise: bool
    id: int = 0

    def __str__(self) -> str:
        tag = f"#{self.id} " if self.id else ""
        return f"{tag}{self.nodes} nodes, {self.load.value} load, noise {'yes' if self.noise else 'no'}"


_SCENARIOS = (
    Scenario(5, Load.LOW, False, 1),
    Scenario(5, Load.LOW, True, 2),
    Scenario(15, Load.AVERAGE, False, 3),
    Scenario(15, Load.AVERAGE, True, 4),
    Scenario(20, Load.HIGH, False, 5),
    Scenario(20, Load.HIGH, True, 6),
    Scenario(50, Load.SATURATED, False, 7),
    Scenario(50, Load.SATURATED, True, 8),
)


def scenarios() -> list[Scenario]:
    """The eight evaluation scenarios (nodes, load, noise)."""
    return list(_SCENARIOS)


def scenario(sid: int) -> Scenario:
    if not 1 <= sid <= len(_SCENARIOS):
        raise ValueError(f"scenario id must be in 1..{len(_SCENARIOS)}, got {sid}")
    return _SCENARIOS[sid - 1]


@dataclass(frozen=True)
class SimParams:
    """Channel and MAC timing constants. Durations in seconds, sizes in bytes.

    ``bit_error_rate`` applies only to scenarios with noise; noiseless
    scenarios always run at zero BER. ``ack_timeout``/``cts_timeout`` left
    as ``None`` resolve to SIFS + response airtime + one slot.
    """

    slot: float = 0.2e-3
    default_frame: int = 1500
    channel_capacity: float = 10e6
    sifs: float = 0.05e-3
    difs: float = 0.45e-3
    mac_header: int = 34
    ack_frame: int = 14
    rts_frame: int = 20
    cts_frame: int = 14
    ack_timeout: float | None = None
    cts_timeout: float | None = None
    retry_limit: int = 7
    cw_max: int = 1023
    bit_error_rate: float = 1e-5

    def __post_init__(self) -> None:
        if not self.slot > 0:
            raise ValueError("slot must be positive")
        if not self.difs > self.sifs > 0:
            raise ValueError("need difs > sifs > 0")
        if self.retry_limit < 0:
            raise ValueError("retry_limit must be >= 0")
        if not 0.0 <= self.bit_error_rate < 1.0:
            raise ValueError("bit_error_rate must lie in [0, 1)")
        if self.default_frame <= 0 or self.channel_capacity <= 0:
            raise ValueError("default_frame and channel_capacity must be positive")

    @property
    def resolved_ack_timeout(self) -> float:
        if self.ack_timeout is not None:
            return self.ack_timeout
        return self.sifs + frame_airtime(self.ack_frame, 0, self.channel_capacity) + self.slot

    @property
    def resolved_cts_timeout(self) -> float:
        if self.cts_timeout is not None:
            return self.cts_timeout
        return self.sifs + frame_airtime(self.cts_frame, 0, self.channel_capacity) + self.slot

    def replace(self, **changes) -> SimParams:
        return dataclasses.replace(self, **changes)

    def with_overrides(self, pairs: list[str]) -> SimParams:
        """Apply ``key=value`` strings (CLI ``--param``)."""
        fields = {f.name: f for f in dataclasses.fields(self)}
        changes = {}
        for pair in pairs:
            key, sep, raw = pair.partition("=")
            key = key.strip()
            if not sep or key not in fields:
                raise ValueError(f"bad parameter override {pair!r}; known keys: {', '.join(fields)}")
            current = getattr(self, key)
            if isinstance(current, int) and not isinstance(current, bool):
                changes[key] = int(raw)
            elif raw.strip().lower() == "none":
                changes[key] = None
            else:
                changes[key] = float(raw)
        return self.replace(**changes)


@dataclass(frozen=True)
class SimResult:
    delivered_payload_bits: int
    sim_duration: float
    throughput: float
    attempts: int
    collisions: int
    noise_drops: int
    retry_exhaustions: int
    successes: int = 0
    control_losses: int = 0
    msdus_generated: int = 0
    msdus_delivered: int = 0
    msdus_collided: int = 0
    msdus_noise_dropped: int = 0
    msdus_retry_exhausted: int = 0
    msdus_queued: int = 0
    events: int = field(default=0, compare=False)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def frame_airtime(payload_bytes: int, header_bytes: int, rate_bps: float) -> float:
    """Seconds needed to send ``payload + header`` bytes at ``rate_bps``."""
    if not rate_bps > 0:
        raise ValueError(f"rate must be positive, got {rate_bps}")
    return 8.0 * (payload_bytes + header_bytes) / rate_bps


def frame_error_prob(bit_error_rate: float, frame_bits: int) -> float:
    """Probability that at least one of ``frame_bits`` independent bits is hit."""
    if bit_error_rate <= 0.0 or frame_bits <= 0:
        return 0.0
    return -math.expm1(frame_bits * math.log1p(-bit_error_rate))


def _ns(seconds: float) -> int:
    return int(round(seconds * 1e9))


def _airtime_ns(nbytes: int, rate_bps: int) -> int:
    return -(-8_000_000_000 * nbytes // rate_bps)


def data_rate_bps(graph: ProtocolGraph, params: SimParams) -> int:
    rate = graph.vertex(TX).param("rate_mbps")
    return int(rate * 1_000_000) if rate else int(round(params.channel_capacity))


def _profile(graph: ProtocolGraph, params: SimParams, duration: float) -> tuple[np.ndarray, np.ndarray]:
    """Flatten the graph's vertices and edges into the kernel's config vectors."""
    tx = graph.vertex(TX)
    has_cs = graph.has(CS)
    has_ack = graph.has(ACK)
    has_rts = graph.has(RTS)
    if graph.has(BACKOFF):
        bo = graph.vertex(BACKOFF)
        alg = {"BEB": K.BO_BEB, "EIED": K.BO_EIED}[bo.param("algorithm")]
        cw_min = int(bo.param("cw_min"))
        cw_max = max(int(params.cw_max), cw_min)
    else:
        alg, cw_min, cw_max = K.BO_NONE, 0, 0
    # the control flow the kernel implements must be the one the graph describes
    if has_ack and not graph.successors(ACK):
        raise ValueError("ACK vertex without a retry path")
    if has_cs and graph.has(BACKOFF) and not graph.has_edge(BACKOFF, CS, "medium_busy"):
        raise ValueError("carrier-sensed backoff must freeze on a busy medium")
    mode = tx.param("mode")
    frag = int(tx.param("frame_bytes")) if mode == "fragment" else 0
    agg = int(tx.param("frame_bytes")) if mode == "aggregate" else 0
    base = int(round(params.channel_capacity))
    cfg_i = np.zeros(15, dtype=np.int64)
    cfg_i[K.I_CS] = has_cs
    cfg_i[K.I_BACKOFF] = alg
    cfg_i[K.I_CW_MIN] = cw_min
    cfg_i[K.I_CW_MAX] = cw_max
    cfg_i[K.I_ACK] = has_ack
    cfg_i[K.I_RTS] = has_rts
    cfg_i[K.I_FRAG] = frag
    cfg_i[K.I_AGG] = agg
    cfg_i[K.I_MSDU] = params.default_frame
    cfg_i[K.I_HEADER] = params.mac_header
    cfg_i[K.I_RATE] = data_rate_bps(graph, params)
    cfg_i[K.I_RETRY] = params.retry_limit
    cfg_i[K.I_ACK_B] = params.ack_frame
    cfg_i[K.I_RTS_B] = params.rts_frame
    cfg_i[K.I_CTS_B] = params.cts_frame
    cfg_t = np.zeros(9, dtype=np.int64)
    cfg_t[K.T_SLOT] = _ns(params.slot)
    cfg_t[K.T_SIFS] = _ns(params.sifs)
    cfg_t[K.T_DIFS] = _ns(params.difs)
    cfg_t[K.T_ACK] = _airtime_ns(params.ack_frame, base)
    cfg_t[K.T_RTS] = _airtime_ns(params.rts_frame, base)
    cfg_t[K.T_CTS] = _airtime_ns(params.cts_frame, base)
    cfg_t[K.T_ACK_TO] = _ns(params.resolved_ack_timeout)
    cfg_t[K.T_CTS_TO] = _ns(params.resolved_cts_timeout)
    cfg_t[K.T_END] = _ns(duration)
    return cfg_i, cfg_t


def poisson_arrivals(rng: np.random.Generator, rate: float, duration: float) -> np.ndarray:
    """Arrival instants in [0, duration) of a Poisson process, as int64 ns."""
    if rate <= 0:
        return np.zeros(0, dtype=np.int64)
    expected = rate * duration
    times = np.cumsum(rng.exponential(1.0 / rate, size=int(expected + 6 * math.sqrt(expected) + 16)))
    while times[-1] < duration:
        more = np.cumsum(rng.exponential(1.0 / rate, size=int(expected) + 16)) + times[-1]
        times = np.concatenate((times, more))
    times = times[times < duration]
    return np.floor(times * 1e9).astype(np.int64)


def per_node_rate(scenario: Scenario, params: SimParams) -> float:
    """MSDUs per second offered by each node (0 for saturated scenarios)."""
    frac = scenario.load.fraction
    if frac is None:
        return 0.0
    return frac * params.channel_capacity / (scenario.nodes * 8 * params.default_frame)


def run(graph: ProtocolGraph, scenario: Scenario, params: SimParams | None = None,
        seed: int = 0, duration: float = 10.0) -> SimResult:
    """Simulate ``duration`` seconds of ``scenario`` with every node running ``graph``.

    The arrival process depends only on (scenario, params, seed, duration), so
    different protocols evaluated with the same seed see identical traffic.
    """
    params = params or SimParams()
    if not duration > 0:
        raise ValueError(f"duration must be positive, got {duration}")
    if scenario.nodes < 1:
        raise ValueError("scenario needs at least one node")
    cfg_i, cfg_t = _profile(graph, params, duration)
    traffic_ss, mac_ss, noise_ss = np.random.SeedSequence(int(seed)).spawn(3)
    saturated = scenario.load is Load.SATURATED
    if saturated:
        arr_times = np.zeros(0, dtype=np.int64)
        arr_off = np.zeros(scenario.nodes + 1, dtype=np.int64)
    else:
        rng = np.random.default_rng(traffic_ss)
        rate = per_node_rate(scenario, params)
        per_node = [poisson_arrivals(rng, rate, duration) for _ in range(scenario.nodes)]
        arr_off = np.concatenate(([0], np.cumsum([len(p) for p in per_node]))).astype(np.int64)
        arr_times = np.concatenate(per_node) if per_node else np.zeros(0, dtype=np.int64)
    ber = params.bit_error_rate if scenario.noise else 0.0
    kseed = int(mac_ss.generate_state(1)[0] & 0x7FFFFFFF)
    noise_key = int(noise_ss.generate_state(1, np.uint64)[0] & 0x7FFFFFFFFFFFFFFF)
    out = K.simulate(scenario.nodes, saturated, arr_times, arr_off, cfg_i, cfg_t, float(ber), kseed, noise_key)
    dur = cfg_t[K.T_END] / 1e9
    bits = int(out[K.K_DELIVERED_BYTES]) * 8
    return SimResult(
        delivered_payload_bits=bits,
        sim_duration=dur,
        throughput=bits / dur,
        attempts=int(out[K.K_ATTEMPTS]),
        collisions=int(out[K.K_COLLISIONS]),
        noise_drops=int(out[K.K_NOISE_DROPS]),
        retry_exhaustions=int(out[K.K_RETRY_EXHAUSTIONS]),
        successes=int(out[K.K_SUCCESSES]),
        control_losses=int(out[K.K_CONTROL_LOSSES]),
        msdus_generated=int(out[K.K_MSDU_GENERATED]),
        msdus_delivered=int(out[K.K_MSDU_DELIVERED]),
        msdus_collided=int(out[K.K_MSDU_COLLIDED]),
        msdus_noise_dropped=int(out[K.K_MSDU_NOISE]),
        msdus_retry_exhausted=int(out[K.K_MSDU_EXHAUSTED]),
        msdus_queued=int(out[K.K_MSDU_QUEUED]),
        events=int(out[K.K_EVENTS]),
    )


def saturated_cycle_throughput(graph: ProtocolGraph, params: SimParams | None = None) -> float:
    """Closed-form throughput of one saturated sender with no contention.

    One cycle is DIFS + mean backoff + data + SIFS + ACK, with the backoff
    drawn uniformly from [0, CW_min]. Only meaningful for carrier-sensed,
    ACKed, unfragmented, unaggregated protocols.
    """
    params = params or SimParams()
    rate = data_rate_bps(graph, params)
    cw_min = graph.vertex(BACKOFF).param("cw_min") if graph.has(BACKOFF) else 0
    payload = params.default_frame
    cycle = (
        params.difs
        + cw_min / 2 * params.slot
        + frame_airtime(payload, params.mac_header, rate)
        + params.sifs
        + frame_airtime(params.ack_frame, 0, params.channel_capacity)
    )
    return payload * 8 / cycle
