"""Dependency rules, genome sanity checks and protocol wiring.

Only the Backoff -> ACK dependency comes from the 802.11 block analysis this
toolkit follows; the remaining rules are invented to fill in the dependency
diagram and are marked ``documented=False``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache

from .blocks import (
    N_ACTIONS,
    BlockId,
    Genome,
    apply_action,
)

log = logging.getLogger(__name__)


class Strength(Enum):
    STRONG = "strong"
    WEAK = "weak"
    EXCLUSIVE = "exclusive"


@dataclass(frozen=True)
class DependencyRule:
    dependent: BlockId
    prerequisite: BlockId
    strength: Strength
    note: str
    documented: bool = False

    @property
    def name(self) -> str:
        arrow = "x" if self.strength is Strength.EXCLUSIVE else "->"
        return f"{self.strength.value}({self.dependent.short} {arrow} {self.prerequisite.short})"

    def violated_by(self, genome: Genome) -> bool:
        if self.strength is Strength.EXCLUSIVE:
            return genome.active(self.dependent) and genome.active(self.prerequisite)
        return genome.active(self.dependent) and not genome.active(self.prerequisite)

    @property
    def blocking(self) -> bool:
        return self.strength is not Strength.WEAK


_RULES: tuple[DependencyRule, ...] = (
    DependencyRule(BlockId.BACKOFF, BlockId.ACK, Strength.STRONG,
                   "backoff retries are triggered by the ACK timeout", documented=True),
    DependencyRule(BlockId.CONTENTION_WINDOW, BlockId.BACKOFF, Strength.STRONG,
                   "the contention window parameterizes the backoff ladder"),
    DependencyRule(BlockId.RTS_CTS, BlockId.ACK, Strength.STRONG,
                   "the four-way exchange completes with an ACK"),
    DependencyRule(BlockId.RTS_CTS, BlockId.CARRIER_SENSE, Strength.STRONG,
                   "NAV deferral needs the carrier-sense machinery"),
    DependencyRule(BlockId.FRAGMENTATION, BlockId.AGGREGATION, Strength.EXCLUSIVE,
                   "cannot split and merge the same MSDU stream"),
    DependencyRule(BlockId.BACKOFF, BlockId.CARRIER_SENSE, Strength.WEAK,
                   "backoff without sensing degenerates to slotted ALOHA"),
)


def rules() -> list[DependencyRule]:
    return list(_RULES)


@dataclass(frozen=True)
class ValidationResult:
    valid: bool
    violations: tuple[tuple[DependencyRule, str], ...] = ()
    warnings: tuple[str, ...] = ()

    def __bool__(self) -> bool:
        return self.valid


def validate(genome: Genome) -> ValidationResult:
    return _validate(genome.values)


@lru_cache(maxsize=None)
def _validate(values: tuple[int, ...]) -> ValidationResult:
    genome = Genome(values)
    violations = []
    warnings = []
    for rule in _RULES:
        if not rule.violated_by(genome):
            continue
        if rule.strength is Strength.EXCLUSIVE:
            msg = f"{rule.dependent.short} and {rule.prerequisite.short} cannot both be active: {rule.note}"
        else:
            msg = f"{rule.dependent.short} requires {rule.prerequisite.short}: {rule.note}"
        if rule.blocking:
            violations.append((rule, msg))
        else:
            warnings.append(msg)
    return ValidationResult(not violations, tuple(violations), tuple(warnings))


class InvalidGenomeError(ValueError):
    def __init__(self, genome: Genome, result: ValidationResult):
        self.genome = genome
        self.result = result
        lines = "; ".join(msg for _, msg in result.violations)
        super().__init__(f"genome {genome} is invalid: {lines}")


def legal_actions(genome: Genome) -> frozenset[int]:
    """Single-block reassignments that keep ``genome`` valid (no-ops included)."""
    return _legal(genome.values)


@lru_cache(maxsize=None)
def _legal(values: tuple[int, ...]) -> frozenset[int]:
    genome = Genome(values)
    result = _validate(values)
    if not result.valid:
        raise InvalidGenomeError(genome, result)
    return frozenset(a for a in range(N_ACTIONS) if _validate(apply_action(genome, a).values).valid)


# -- wiring ---------------------------------------------------------------

CS, BACKOFF, RTS, TX, ACK = "CS", "Backoff", "RTS/CTS", "Tx", "ACK"


@dataclass(frozen=True)
class Vertex:
    name: str
    block: BlockId | None
    params: tuple[tuple[str, object], ...] = ()

    def param(self, key: str) -> object:
        return dict(self.params)[key]


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    event: str


@dataclass(frozen=True)
class ProtocolGraph:
    """Per-node MAC state machine assembled from the active blocks.

    ``entry`` is where a node starts when it has a frame to send; returning to
    ``entry`` after a finished frame is implicit and carries no edge.
    """

    genome: Genome
    vertices: tuple[Vertex, ...]
    edges: tuple[Edge, ...]
    entry: str
    warnings: tuple[str, ...] = field(default=(), compare=False)

    def vertex(self, name: str) -> Vertex:
        for v in self.vertices:
            if v.name == name:
                return v
        raise KeyError(name)

    def has(self, name: str) -> bool:
        return any(v.name == name for v in self.vertices)

    def has_edge(self, src: str, dst: str, event: str | None = None) -> bool:
        return any(e.src == src and e.dst == dst and (event is None or e.event == event) for e in self.edges)

    def successors(self, name: str) -> list[Edge]:
        return [e for e in self.edges if e.src == name]

    def to_dict(self) -> dict:
        return {
            "genome": str(self.genome),
            "entry": self.entry,
            "vertices": [{"name": v.name, "params": dict(v.params)} for v in self.vertices],
            "edges": [{"src": e.src, "dst": e.dst, "event": e.event} for e in self.edges],
        }


DEFAULT_CW_MIN = 15
CW_MAX = 1023


def wire(genome: Genome) -> ProtocolGraph:
    result = validate(genome)
    if not result.valid:
        raise InvalidGenomeError(genome, result)
    for w in result.warnings:
        log.debug("wiring %s: %s", genome, w)
    return _wire(genome.values, result.warnings)


@lru_cache(maxsize=None)
def _wire(values: tuple[int, ...], warnings: tuple[str, ...]) -> ProtocolGraph:
    g = Genome(values)
    has_cs = g.active(BlockId.CARRIER_SENSE)
    has_bo = g.active(BlockId.BACKOFF)
    has_rts = g.active(BlockId.RTS_CTS)
    has_ack = g.active(BlockId.ACK)

    vertices: list[Vertex] = []
    if has_cs:
        vertices.append(Vertex(CS, BlockId.CARRIER_SENSE))
    if has_bo:
        cw_min = g.value(BlockId.CONTENTION_WINDOW) or DEFAULT_CW_MIN
        vertices.append(Vertex(BACKOFF, BlockId.BACKOFF, (
            ("algorithm", g.value(BlockId.BACKOFF)),
            ("cw_min", cw_min),
            ("cw_max", CW_MAX),
        )))
    if has_rts:
        vertices.append(Vertex(RTS, BlockId.RTS_CTS))
    if g.active(BlockId.FRAGMENTATION):
        framing = (("mode", "fragment"), ("frame_bytes", g.value(BlockId.FRAGMENTATION)))
    elif g.active(BlockId.AGGREGATION):
        framing = (("mode", "aggregate"), ("frame_bytes", g.value(BlockId.AGGREGATION)))
    else:
        framing = (("mode", "msdu"), ("frame_bytes", None))
    rate = g.value(BlockId.DATA_RATE)
    vertices.append(Vertex(TX, None, framing + (("rate_mbps", rate),)))
    if has_ack:
        vertices.append(Vertex(ACK, BlockId.ACK))

    # canonical order: CS? -> Backoff? -> RTS/CTS? -> Tx -> ACK?
    chain = [v.name for v in vertices]
    entry = chain[0]
    edges: list[Edge] = []
    if has_cs:
        edges.append(Edge(CS, chain[1], "medium_idle_difs"))
        if has_bo:
            edges.append(Edge(BACKOFF, CS, "medium_busy"))
    if has_bo:
        edges.append(Edge(BACKOFF, RTS if has_rts else TX, "backoff_zero"))
    retry_target = BACKOFF if has_bo else entry
    if has_rts:
        edges.append(Edge(RTS, TX, "cts_received"))
        edges.append(Edge(RTS, retry_target, "cts_timeout"))
    if has_ack:
        edges.append(Edge(TX, ACK, "tx_end"))
        edges.append(Edge(ACK, retry_target, "ack_timeout"))
        if g.active(BlockId.FRAGMENTATION):
            edges.append(Edge(ACK, TX, "next_fragment"))
    elif g.active(BlockId.FRAGMENTATION):
        edges.append(Edge(TX, TX, "next_fragment"))
    return ProtocolGraph(g, tuple(vertices), tuple(edges), entry, warnings)


def explain(genome: Genome) -> str:
    """Human-readable validation report, one line per finding."""
    result = validate(genome)
    lines = [f"{genome}: {'valid' if result.valid else 'INVALID'}"]
    lines += [f"violation {rule.name}: {msg}" for rule, msg in result.violations]
    lines += [f"warning: {w}" for w in result.warnings]
    return "\n".join(lines)


__all__ = [
    "DependencyRule", "Strength", "ValidationResult", "InvalidGenomeError", "ProtocolGraph",
    "Vertex", "Edge", "rules", "validate", "legal_actions", "wire", "explain",
]
