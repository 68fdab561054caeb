"""Block-selection environment: the state is a genome plus throughput history.

Each action reassigns one block's variant. The reward is the protocol's
measured throughput normalized to [0, 1].
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .blocks import (
    HISTORY_LEN,
    N_ACTIONS,
    BlockId,
    Genome,
    StateVector,
    action_of,
    apply_action,
    encode,
)
from .controller import legal_actions, wire
from .sim import Scenario, SimParams, run

RewardFn = Callable[[Genome], float]


def reward_scale(params: SimParams) -> float:
    """Throughput that maps to reward 1: the base channel capacity.

    A fast DataRate variant can in principle push a lightly contended channel
    past the base capacity; such rewards are clipped to 1.
    """
    return params.channel_capacity


class SimReward:
    """Normalized simulator throughput for a fixed (scenario, seed, duration).

    Results are memoized per genome: the simulator is deterministic given its
    inputs, so a revisit would reproduce the same number.
    """

    def __init__(self, scenario: Scenario, params: SimParams | None = None,
                 duration: float = 5.0, seed: int = 0):
        self.scenario = scenario
        self.params = params or SimParams()
        self.duration = duration
        self.seed = seed
        self.scale = reward_scale(self.params)
        self._cache: dict[Genome, float] = {}
        self.sim_runs = 0

    def throughput(self, genome: Genome, seed: int | None = None) -> float:
        res = run(wire(genome), self.scenario, self.params, self.seed if seed is None else seed, self.duration)
        self.sim_runs += 1
        return res.throughput

    def __call__(self, genome: Genome) -> float:
        hit = self._cache.get(genome)
        if hit is None:
            hit = min(1.0, self.throughput(genome) / self.scale)
            self._cache[genome] = hit
        return hit

    def evaluate(self, genome: Genome, seeds: Iterable[int]) -> float:
        """Mean normalized throughput over fresh simulator seeds (uncached)."""
        vals = [min(1.0, self.throughput(genome, s) / self.scale) for s in seeds]
        return float(np.mean(vals))


class TableReward:
    """Deterministic reward lookup, used for toy problems and tests."""

    def __init__(self, table: dict[Genome, float], default: float = 0.0):
        self.table = dict(table)
        self.default = default

    def __call__(self, genome: Genome) -> float:
        return self.table.get(genome, self.default)

    def evaluate(self, genome: Genome, seeds: Iterable[int]) -> float:
        return self(genome)


@dataclass
class StepResult:
    state: StateVector
    reward: float
    genome: Genome
    legal: frozenset[int]


@dataclass
class MacEnv:
    """Episodic genome-editing environment.

    ``mutable`` limits which blocks actions may touch (all blocks by default);
    ``start`` is the genome every episode resets to.
    """

    reward_fn: RewardFn
    mutable: frozenset[BlockId] = field(default_factory=lambda: frozenset(BlockId))
    start: Genome = field(default_factory=Genome.zeros)
    genome: Genome = field(init=False)
    history: deque = field(init=False)

    def __post_init__(self) -> None:
        self.mutable = frozenset(BlockId(b) for b in self.mutable)
        self._allowed = frozenset(a for a in range(N_ACTIONS) if action_of(a)[0] in self.mutable)
        self.reset()

    def reset(self) -> StateVector:
        self.genome = self.start
        self.history = deque(maxlen=HISTORY_LEN)
        return self.state()

    def state(self) -> StateVector:
        return encode(self.genome, self.history)

    def legal(self, genome: Genome | None = None) -> frozenset[int]:
        g = self.genome if genome is None else genome
        return legal_actions(g) & self._allowed

    def step(self, action: int) -> StepResult:
        if action not in self.legal():
            raise ValueError(f"illegal action {action} from {self.genome}")
        self.genome = apply_action(self.genome, action)
        reward = float(self.reward_fn(self.genome))
        if not 0.0 <= reward <= 1.0:
            raise ValueError(f"reward {reward} outside [0, 1]")
        self.history.append(reward)
        return StepResult(self.state(), reward, self.genome, self.legal())


def legal_mask(legal: Iterable[int]) -> np.ndarray:
    mask = np.zeros(N_ACTIONS, dtype=bool)
    mask[list(legal)] = True
    return mask
