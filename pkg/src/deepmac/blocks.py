"""MAC building-block catalog and the genome/state encodings built on it.

A genome holds one variant index per block (0 = block excluded). The catalog
order below is the vector order used everywhere: genome entries, one-hot
segments and flattened action ids.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from enum import IntEnum
from functools import lru_cache
from itertools import product
from typing import Iterable, Iterator, Sequence

import numpy as np


class BlockId(IntEnum):
    BACKOFF = 0
    ACK = 1
    FRAGMENTATION = 2
    AGGREGATION = 3
    RTS_CTS = 4
    CONTENTION_WINDOW = 5
    CARRIER_SENSE = 6
    DATA_RATE = 7

    @property
    def short(self) -> str:
        return _SHORT_NAMES[self]


_SHORT_NAMES = {
    BlockId.BACKOFF: "backoff",
    BlockId.ACK: "ack",
    BlockId.FRAGMENTATION: "frag",
    BlockId.AGGREGATION: "agg",
    BlockId.RTS_CTS: "rtscts",
    BlockId.CONTENTION_WINDOW: "cw",
    BlockId.CARRIER_SENSE: "cs",
    BlockId.DATA_RATE: "dr",
}

EXCLUDED = "off"
HISTORY_LEN = 15


class EncodingError(ValueError):
    """Raised for genomes or one-hot vectors that fall outside the catalog."""


@dataclass(frozen=True)
class BlockSpec:
    """One block as an <event, parameter, state, function, dependencies> tuple.

    ``domain`` lists the variant labels, index 0 always being ``"off"``;
    ``values`` carries the machine value of each variant (``None`` for the
    excluded slot and for variants that are pure switches).
    """

    id: BlockId
    event: str
    parameter: str
    state: str
    function: str
    dependencies: tuple[BlockId, ...]
    domain: tuple[str, ...]
    values: tuple[object, ...]

    def __post_init__(self) -> None:
        if len(self.domain) < 2 or self.domain[0] != EXCLUDED:
            raise ValueError(f"{self.id.name}: domain must start with 'off' and list an active variant")
        if len(self.values) != len(self.domain):
            raise ValueError(f"{self.id.name}: values/domain length mismatch")
        if self.id in self.dependencies:
            raise ValueError(f"{self.id.name}: self dependency")

    @property
    def size(self) -> int:
        return len(self.domain)

    def index_of(self, label: str) -> int:
        label = label.strip()
        for i, lab in enumerate(self.domain):
            if lab.lower() == label.lower():
                return i
        raise EncodingError(f"{self.id.short}: unknown variant {label!r}; expected one of {', '.join(self.domain)}")


_CW_LADDER = (15, 31, 63, 127, 255, 511, 1023)
_RATES_MBPS = (6, 9, 12, 24, 36, 48, 54)

_CATALOG: tuple[BlockSpec, ...] = (
    BlockSpec(
        BlockId.BACKOFF,
        event="ACK_timeout",
        parameter="algorithm",
        state="Freeze/Countdown",
        function="Avoid Collision",
        dependencies=(BlockId.ACK,),
        domain=(EXCLUDED, "BEB", "EIED"),
        values=(None, "BEB", "EIED"),
    ),
    BlockSpec(
        BlockId.ACK,
        event="Data_received",
        parameter="enabled",
        state="Wait/Timeout",
        function="Confirm Delivery",
        dependencies=(),
        domain=(EXCLUDED, "ACK"),
        values=(None, True),
    ),
    BlockSpec(
        BlockId.FRAGMENTATION,
        event="Frame_ready",
        parameter="fragment_bytes",
        state="Fragment index",
        function="Split MSDU",
        dependencies=(),
        domain=(EXCLUDED, "200", "500", "1000"),
        values=(None, 200, 500, 1000),
    ),
    BlockSpec(
        BlockId.AGGREGATION,
        event="Frame_ready",
        parameter="aggregate_bytes",
        state="Aggregate fill",
        function="Merge MSDUs",
        dependencies=(),
        domain=(EXCLUDED, "2000"),
        values=(None, 2000),
    ),
    BlockSpec(
        BlockId.RTS_CTS,
        event="Backoff_expired",
        parameter="enabled",
        state="Wait CTS/NAV",
        function="Reserve Medium",
        dependencies=(BlockId.ACK, BlockId.CARRIER_SENSE),
        domain=(EXCLUDED, "on"),
        values=(None, True),
    ),
    BlockSpec(
        BlockId.CONTENTION_WINDOW,
        event="Tx_outcome",
        parameter="cw_min",
        state="Current CW",
        function="Bound Backoff",
        dependencies=(BlockId.BACKOFF,),
        domain=(EXCLUDED,) + tuple(str(v) for v in _CW_LADDER),
        values=(None,) + _CW_LADDER,
    ),
    BlockSpec(
        BlockId.CARRIER_SENSE,
        event="Frame_ready",
        parameter="enabled",
        state="Idle/Busy",
        function="Sense Medium",
        dependencies=(),
        domain=(EXCLUDED, "on"),
        values=(None, True),
    ),
    BlockSpec(
        BlockId.DATA_RATE,
        event="Tx_start",
        parameter="rate_mbps",
        state="Current rate",
        function="Modulate Data",
        dependencies=(),
        domain=(EXCLUDED,) + tuple(str(v) for v in _RATES_MBPS),
        values=(None,) + _RATES_MBPS,
    ),
)

N_BLOCKS = len(_CATALOG)
DOMAIN_SIZES: tuple[int, ...] = tuple(spec.size for spec in _CATALOG)
SEGMENT_OFFSETS: tuple[int, ...] = tuple(int(x) for x in np.concatenate(([0], np.cumsum(DOMAIN_SIZES)[:-1])))
ONEHOT_WIDTH = sum(DOMAIN_SIZES)
STATE_WIDTH = ONEHOT_WIDTH + HISTORY_LEN
N_ACTIONS = ONEHOT_WIDTH

assert N_BLOCKS == 8 and ONEHOT_WIDTH == 31 and STATE_WIDTH == 46
assert tuple(spec.id for spec in _CATALOG) == tuple(BlockId)


def catalog() -> list[BlockSpec]:
    """The eight block specs, in catalog order."""
    return list(_CATALOG)


def spec(block: BlockId) -> BlockSpec:
    return _CATALOG[block]


def catalog_json(indent: int | None = 2) -> str:
    doc = {
        "version": 1,
        "blocks": [
            {
                "id": s.id.name,
                "key": s.id.short,
                "event": s.event,
                "parameter": s.parameter,
                "state": s.state,
                "function": s.function,
                "domain": list(s.domain),
                "dependencies": [d.name for d in s.dependencies],
            }
            for s in _CATALOG
        ],
    }
    return json.dumps(doc, indent=indent)


@dataclass(frozen=True)
class Genome:
    """Variant index per block, catalog order; 0 means the block is excluded."""

    values: tuple[int, ...]

    def __post_init__(self) -> None:
        vals = tuple(int(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        if len(vals) != N_BLOCKS:
            raise EncodingError(f"genome needs {N_BLOCKS} entries, got {len(vals)}")
        for block, (v, size) in enumerate(zip(vals, DOMAIN_SIZES)):
            if not 0 <= v < size:
                raise EncodingError(f"{BlockId(block).short}={v} outside [0, {size})")

    @classmethod
    def zeros(cls) -> Genome:
        return cls((0,) * N_BLOCKS)

    @classmethod
    def from_labels(cls, labels: Sequence[str]) -> Genome:
        if len(labels) != N_BLOCKS:
            raise EncodingError(f"genome string needs {N_BLOCKS} labels, got {len(labels)}")
        return cls(tuple(s.index_of(lab) for s, lab in zip(_CATALOG, labels)))

    @classmethod
    def parse(cls, text: str) -> Genome:
        """Parse a genome string such as ``BEB,ACK,off,off,off,15,on,54``."""
        return cls.from_labels([t for t in text.split(",")])

    @classmethod
    def of(cls, **active: str | int) -> Genome:
        """Build a genome from keyword labels, e.g. ``Genome.of(backoff="BEB", ack="ACK")``.

        Unnamed blocks are excluded. Integers are taken as variant indices.
        """
        vals = [0] * N_BLOCKS
        by_key = {b.short: b for b in BlockId}
        for key, val in active.items():
            try:
                block = by_key[key]
            except KeyError:
                raise EncodingError(f"unknown block key {key!r}") from None
            vals[block] = val if isinstance(val, int) else _CATALOG[block].index_of(str(val))
        return cls(tuple(vals))

    def __getitem__(self, block: BlockId | int) -> int:
        return self.values[block]

    def __str__(self) -> str:
        return ",".join(self.labels())

    def labels(self) -> list[str]:
        return [s.domain[v] for s, v in zip(_CATALOG, self.values)]

    def active(self, block: BlockId) -> bool:
        return self.values[block] != 0

    def value(self, block: BlockId) -> object:
        """Machine value of the selected variant (``None`` when excluded)."""
        return _CATALOG[block].values[self.values[block]]

    def replace(self, block: BlockId | int, variant: int) -> Genome:
        vals = list(self.values)
        vals[block] = variant
        return Genome(tuple(vals))

    def active_blocks(self) -> list[BlockId]:
        return [BlockId(i) for i, v in enumerate(self.values) if v]


DCF_GENOME = Genome.of(backoff="BEB", ack="ACK", cw="15", cs="on", dr="54")


@dataclass(frozen=True)
class StateVector:
    genome_onehot: np.ndarray
    history: np.ndarray

    def as_array(self) -> np.ndarray:
        return np.concatenate((self.genome_onehot, self.history))


@lru_cache(maxsize=None)
def _onehot(values: tuple[int, ...]) -> np.ndarray:
    out = np.zeros(ONEHOT_WIDTH)
    for off, v in zip(SEGMENT_OFFSETS, values):
        out[off + v] = 1.0
    out.setflags(write=False)
    return out


def encode(genome: Genome, history: Iterable[float] = ()) -> StateVector:
    """One-hot genome plus the last ``HISTORY_LEN`` throughput samples (left zero-padded)."""
    if not isinstance(genome, Genome):
        genome = Genome(tuple(genome))
    hist = np.asarray(list(history), dtype=float)[-HISTORY_LEN:]
    if hist.size and (not np.all(np.isfinite(hist)) or hist.min() < 0.0 or hist.max() > 1.0):
        raise EncodingError("history samples must lie in [0, 1]")
    padded = np.zeros(HISTORY_LEN)
    if hist.size:
        padded[HISTORY_LEN - hist.size:] = hist
    return StateVector(_onehot(genome.values).copy(), padded)


def decode(onehot: np.ndarray) -> Genome:
    vec = np.asarray(onehot)
    if vec.shape[-1] == STATE_WIDTH:
        vec = vec[..., :ONEHOT_WIDTH]
    if vec.shape != (ONEHOT_WIDTH,):
        raise EncodingError(f"expected a {ONEHOT_WIDTH}-wide one-hot vector, got shape {vec.shape}")
    vals = []
    for block, (off, size) in enumerate(zip(SEGMENT_OFFSETS, DOMAIN_SIZES)):
        hot = np.flatnonzero(vec[off:off + size])
        if len(hot) != 1 or vec[off + hot[0]] != 1:
            raise EncodingError(f"segment {BlockId(block).short} must have exactly one hot bit, has {len(hot)}")
        vals.append(int(hot[0]))
    return Genome(tuple(vals))


def enumerate_genomes() -> Iterator[Genome]:
    """Every genome, lexicographically, starting at all-zeros."""
    for vals in product(*(range(n) for n in DOMAIN_SIZES)):
        yield Genome(vals)


# Actions reassign a single block; ids follow the one-hot layout.

def action_id(block: BlockId | int, variant: int) -> int:
    if not 0 <= variant < DOMAIN_SIZES[block]:
        raise EncodingError(f"variant {variant} outside {BlockId(block).short} domain")
    return SEGMENT_OFFSETS[block] + variant


@lru_cache(maxsize=None)
def action_of(action: int) -> tuple[BlockId, int]:
    if not 0 <= action < N_ACTIONS:
        raise EncodingError(f"action id {action} outside [0, {N_ACTIONS})")
    block = int(np.searchsorted(SEGMENT_OFFSETS, action, side="right")) - 1
    return BlockId(block), action - SEGMENT_OFFSETS[block]


def apply_action(genome: Genome, action: int) -> Genome:
    block, variant = action_of(action)
    if genome.values[block] == variant:
        return genome
    return genome.replace(block, variant)


def action_label(action: int) -> str:
    block, variant = action_of(action)
    return f"{block.short}={_CATALOG[block].domain[variant]}"
