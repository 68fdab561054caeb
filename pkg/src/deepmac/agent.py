"""Deep Q-learning over block-selection actions, plus a tabular baseline."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable

import numpy as np

from .blocks import N_ACTIONS, STATE_WIDTH, Genome, StateVector, action_label, apply_action, decode
from .env import MacEnv, SimReward, legal_mask
from .qnet import AdamState, NonFiniteError, QNetwork
from .sim import Scenario, SimParams

log = logging.getLogger(__name__)

__all__ = [
    "AgentConfig", "ReplayBuffer", "TabularQ", "TrainResult", "Transition",
    "apply_action", "select_action", "train_step", "train", "epsilon_at",
]


@dataclass(frozen=True)
class AgentConfig:
    gamma: float = 0.8
    history_len: int = 15
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_frac: float = 0.5
    replay_capacity: int = 10_000
    batch_size: int = 32
    lr: float = 1e-3
    grad_clip: float | None = 1.0
    target_sync: int = 100
    hidden: tuple[int, ...] = (64, 64, 64)
    episode_len: int = 64
    eval_duration: float = 5.0
    steps: int = 6000
    eval_seeds: int = 3
    alpha: float = 1.0  # tabular mode only
    optimizer: str = "adam"
    updates_per_step: int = 4

    def __post_init__(self) -> None:
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        for name in ("eps_start", "eps_end", "eps_decay_frac"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        for name in ("replay_capacity", "batch_size", "target_sync", "episode_len", "steps", "eval_seeds",
                     "history_len"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.lr <= 0 or self.eval_duration <= 0 or not 0 < self.alpha <= 1:
            raise ValueError("lr and eval_duration must be positive, alpha in (0, 1]")
        if not self.hidden or min(self.hidden) <= 0:
            raise ValueError("need at least one positive hidden width")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.updates_per_step < 1:
            raise ValueError("updates_per_step must be positive")
        if self.history_len != 15:
            raise ValueError("history length is fixed at 15 by the state encoding")


def epsilon_at(step: int, config: AgentConfig) -> float:
    """Linear anneal from eps_start to eps_end over the first eps_decay_frac of training."""
    horizon = config.eps_decay_frac * config.steps
    if horizon <= 0 or step >= horizon:
        return config.eps_end
    return config.eps_start + (config.eps_end - config.eps_start) * step / horizon


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    next_legal: np.ndarray


class ReplayBuffer:
    def __init__(self, capacity: int, width: int = STATE_WIDTH):
        self.capacity = capacity
        self.states = np.zeros((capacity, width))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, width))
        self.next_legal = np.zeros((capacity, N_ACTIONS), dtype=bool)
        self.legal = np.zeros((capacity, N_ACTIONS), dtype=bool)
        self._pos = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def add(self, state: np.ndarray, action: int, reward: float, next_state: np.ndarray,
            next_legal: np.ndarray, legal: np.ndarray | None = None) -> None:
        if not 0.0 <= reward <= 1.0:
            raise ValueError(f"reward {reward} outside [0, 1]")
        if legal is not None and not legal[action]:
            raise ValueError(f"refusing to store illegal action {action}")
        i = self._pos
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self.next_legal[i] = next_legal
        self.legal[i] = legal if legal is not None else True
        self._pos = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, rng: np.random.Generator, n: int) -> tuple[np.ndarray, ...]:
        idx = rng.integers(0, self._size, size=n)
        return (self.states[idx], self.actions[idx], self.rewards[idx],
                self.next_states[idx], self.next_legal[idx])

    def transitions(self) -> list[Transition]:
        return [Transition(self.states[i], int(self.actions[i]), float(self.rewards[i]),
                           self.next_states[i], self.next_legal[i]) for i in range(self._size)]


class TabularQ:
    """Q-table keyed by genome; the throughput history is ignored."""

    def __init__(self) -> None:
        self.table: dict[Genome, np.ndarray] = {}

    def row(self, genome: Genome) -> np.ndarray:
        r = self.table.get(genome)
        if r is None:
            r = self.table[genome] = np.zeros(N_ACTIONS)
        return r

    def q_values(self, state) -> np.ndarray:
        vec = state.as_array() if isinstance(state, StateVector) else np.asarray(state)
        return self.row(decode(vec)).copy()

    def update(self, genome: Genome, action: int, reward: float, next_genome: Genome,
               next_legal: Iterable[int], gamma: float, alpha: float) -> float:
        nxt = self.row(next_genome)
        best = max(nxt[a] for a in next_legal)
        row = self.row(genome)
        td = reward + gamma * best - row[action]
        row[action] += alpha * td
        return float(td * td)


def select_action(net, state, epsilon: float, legal: Iterable[int], rng: np.random.Generator) -> int:
    """Epsilon-greedy over ``legal``; greedy ties go to the lowest action id."""
    ids = np.array(sorted(legal), dtype=np.int64)
    if ids.size == 0:
        raise ValueError("no legal action to choose from")
    if rng.random() < epsilon:
        return int(ids[rng.integers(ids.size)])
    q = net.q_values(state)
    return int(ids[int(np.argmax(q[ids]))])


def td_targets(target_net: QNetwork, rewards: np.ndarray, next_states: np.ndarray,
               next_legal: np.ndarray, gamma: float) -> np.ndarray:
    if gamma == 0.0:
        return rewards.astype(float).copy()
    q_next = target_net.forward(next_states)
    q_next = np.where(next_legal, q_next, -np.inf)
    best = q_next.max(axis=1)
    if not np.all(np.isfinite(best)):
        raise NonFiniteError("target network produced non-finite values (or a state had no legal action)")
    return rewards + gamma * best


def train_step(net: QNetwork, target_net: QNetwork, batch, config: AgentConfig,
               adam: AdamState | None = None) -> tuple[QNetwork, float]:
    """One gradient step on the mean squared TD error of ``batch`` (Adam when ``adam`` is given)."""
    states, actions, rewards, next_states, next_legal = batch
    if len(actions) == 0:
        raise ValueError("empty batch")
    targets = td_targets(target_net, np.asarray(rewards, dtype=float), np.asarray(next_states),
                         np.asarray(next_legal, dtype=bool), config.gamma)
    loss, gw, gb = net.loss_and_grads(np.asarray(states), np.asarray(actions, dtype=np.int64), targets)
    if not np.isfinite(loss):
        raise NonFiniteError(f"non-finite loss {loss}")
    if adam is not None:
        net.adam_step(gw, gb, config.lr, config.grad_clip, adam)
    else:
        net.sgd_step(gw, gb, config.lr, config.grad_clip)
    return net, loss


@dataclass
class TrainResult:
    net: object
    genome: Genome
    score: float
    trace: list[dict] = field(default_factory=list)
    candidates: dict[str, float] = field(default_factory=dict)
    tabular: bool = False

    def summary(self) -> dict:
        return {"genome": str(self.genome), "score": self.score, "tabular": self.tabular,
                "candidates": self.candidates, "steps": len(self.trace)}


def derive_seeds(seed: int, n: int, stream: int) -> list[int]:
    return [int(x) for x in np.random.SeedSequence([int(seed), stream]).generate_state(n, np.uint32)]


def make_env(scenario: Scenario, params: SimParams | None, config: AgentConfig, seed: int) -> MacEnv:
    sim_seed = derive_seeds(seed, 1, 1)[0]
    return MacEnv(SimReward(scenario, params, config.eval_duration, sim_seed))


def train(scenario: Scenario | None = None, params: SimParams | None = None,
          config: AgentConfig | None = None, seed: int = 0, *, env: MacEnv | None = None,
          tabular: bool = False, on_step: Callable[[dict], None] | None = None) -> TrainResult:
    """Train an agent on one scenario and return its selected genome.

    Pass ``env`` to train on something other than the simulator (for example
    a reward table). The selected genome is the best, by mean reward over
    ``config.eval_seeds`` fresh evaluation seeds, among the genomes visited by
    a greedy rollout from the reset genome.
    """
    config = config or AgentConfig()
    if env is None:
        if scenario is None:
            raise ValueError("need a scenario or an environment")
        env = make_env(scenario, params, config, seed)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0]))
    if tabular:
        agent: object = TabularQ()
        buffer = target = adam = None
    else:
        agent = QNetwork.default(rng, config.hidden)
        target = agent.copy()
        buffer = ReplayBuffer(config.replay_capacity)
        adam = AdamState.like(agent) if config.optimizer == "adam" else None

    trace: list[dict] = []
    state = env.reset()
    for step in range(config.steps):
        if step and step % config.episode_len == 0:
            state = env.reset()
        eps = epsilon_at(step, config)
        legal = env.legal()
        prev_genome = env.genome
        action = select_action(agent, state, eps, legal, rng)
        res = env.step(action)
        loss = None
        if tabular:
            loss = agent.update(prev_genome, action, res.reward, res.genome, res.legal, config.gamma, config.alpha)
        else:
            buffer.add(state.as_array(), action, res.reward, res.state.as_array(), legal_mask(res.legal),
                       legal_mask(legal))
            if len(buffer) >= config.batch_size:
                for _ in range(config.updates_per_step):
                    _, loss = train_step(agent, target, buffer.sample(rng, config.batch_size), config, adam)
            if (step + 1) % config.target_sync == 0:
                target.load_from(agent)
        rec = {"step": step, "genome": str(res.genome), "action": action_label(action),
               "reward": res.reward, "loss": loss, "epsilon": eps}
        trace.append(rec)
        if on_step is not None:
            on_step(rec)
        state = res.state

    if not tabular and not agent.all_finite():
        raise NonFiniteError("network weights diverged")
    genome, score, candidates = greedy_selection(agent, env, config, seed, rng)
    log.info("selected %s (score %.4f)", genome, score)
    return TrainResult(agent, genome, score, trace, candidates, tabular)


def greedy_rollout(agent, env: MacEnv, steps: int, rng: np.random.Generator) -> list[Genome]:
    state = env.reset()
    visited: list[Genome] = []
    for _ in range(steps):
        action = select_action(agent, state, 0.0, env.legal(), rng)
        res = env.step(action)
        if res.genome not in visited:
            visited.append(res.genome)
        state = res.state
    return visited


def greedy_selection(agent, env: MacEnv, config: AgentConfig, seed: int, rng: np.random.Generator
                     ) -> tuple[Genome, float, dict[str, float]]:
    visited = greedy_rollout(agent, env, config.episode_len, rng)
    seeds = derive_seeds(seed, config.eval_seeds, 2)
    evaluate = getattr(env.reward_fn, "evaluate", None)
    scores: dict[str, float] = {}
    best, best_score = visited[0], -np.inf
    for g in visited:
        s = evaluate(g, seeds) if evaluate else float(env.reward_fn(g))
        scores[str(g)] = s
        if s > best_score:
            best, best_score = g, s
    return best, float(best_score), scores


def config_dict(config: AgentConfig) -> dict:
    d = asdict(config)
    d["hidden"] = list(config.hidden)
    return d
