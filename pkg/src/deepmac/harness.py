"""Experiment harness: train per scenario, compare with exhaustive search, report.

The brute-force oracle scores every valid genome with the simulator and is the
ground truth the agent is measured against. Reports come out as a CSV (one row
per scenario and training seed) and a Markdown block-selection table.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import os
import traceback
from collections import Counter, defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .agent import AgentConfig, config_dict, derive_seeds, train
from .blocks import BlockId, Genome, enumerate_genomes
from .controller import validate, wire
from .env import MacEnv, TableReward, reward_scale
from .sim import Scenario, SimParams, run, scenario

log = logging.getLogger(__name__)

CONFIG_VERSION = 1
CSV_HEADER = ["scenario", "seed", *(b.short for b in BlockId), "agent_tput", "best_tput", "gap"]
EXCLUDED = "—"


@dataclass(frozen=True)
class BruteForceBudget:
    duration: float = 2.0
    seeds: int = 2
    coarse: bool = False
    sample_size: int = 1024
    seed: int = 0

    def __post_init__(self) -> None:
        if self.duration <= 0:
            raise ValueError("brute-force duration must be positive")
        if self.seeds < 1 or self.sample_size < 1:
            raise ValueError("brute-force seeds and sample size must be positive")

    def sim_seeds(self) -> list[int]:
        return derive_seeds(self.seed, self.seeds, 4)


@dataclass(frozen=True)
class ExperimentConfig:
    scenarios: tuple[int, ...] = (1, 2, 3, 4, 5, 6, 7, 8)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    agent: AgentConfig = field(default_factory=AgentConfig)
    params: tuple[str, ...] = ()
    budget: BruteForceBudget = field(default_factory=BruteForceBudget)
    output_dir: str = "results"
    eval_duration: float = 10.0
    eval_seeds: int = 5
    workers: int = 1
    oracle: bool = True

    def __post_init__(self) -> None:
        if not self.seeds:
            raise ValueError("need at least one training seed")
        if not self.scenarios or not set(self.scenarios) <= set(range(1, 9)):
            raise ValueError(f"scenario ids must be a non-empty subset of 1..8, got {self.scenarios}")
        if self.eval_duration <= 0 or self.eval_seeds < 1 or self.workers < 1:
            raise ValueError("eval_duration, eval_seeds and workers must be positive")
        self.sim_params()  # surface bad overrides early

    def sim_params(self) -> SimParams:
        return SimParams().with_overrides(list(self.params))

    def to_dict(self) -> dict:
        return {
            "version": CONFIG_VERSION,
            "scenarios": list(self.scenarios),
            "seeds": list(self.seeds),
            "agent": config_dict(self.agent),
            "params": list(self.params),
            "budget": dataclasses.asdict(self.budget),
            "output_dir": self.output_dir,
            "eval_duration": self.eval_duration,
            "eval_seeds": self.eval_seeds,
            "workers": self.workers,
            "oracle": self.oracle,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentConfig:
        data = dict(data)
        version = data.pop("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ValueError(f"unsupported experiment config version {version}")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown experiment config keys: {sorted(unknown)}")
        if "agent" in data:
            agent = dict(data["agent"])
            if "hidden" in agent:
                agent["hidden"] = tuple(agent["hidden"])
            data["agent"] = AgentConfig(**agent)
        if "budget" in data:
            data["budget"] = BruteForceBudget(**data["budget"])
        for key in ("scenarios", "seeds", "params"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> ExperimentConfig:
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path: str | os.PathLike) -> ExperimentConfig:
        return cls.from_json(Path(path).read_text())


# -- brute force

def valid_genomes(mutable: Iterable[BlockId] | None = None) -> list[Genome]:
    """Valid genomes in enumeration order, optionally only those varying ``mutable`` blocks."""
    out = []
    fixed = None if mutable is None else [b for b in BlockId if b not in set(mutable)]
    for g in enumerate_genomes():
        if fixed and any(g[b] for b in fixed):
            continue
        if validate(g).valid:
            out.append(g)
    return out


def stratified_sample(genomes: Sequence[Genome], size: int, seed: int = 0) -> list[Genome]:
    """Sample ``size`` genomes, stratified by which blocks are active.

    Every on/off pattern keeps at least one member and the rest of the budget
    is split in proportion to stratum size. Order follows the input.
    """
    if size >= len(genomes):
        return list(genomes)
    strata: dict[tuple[bool, ...], list[int]] = defaultdict(list)
    for i, g in enumerate(genomes):
        strata[tuple(v > 0 for v in g.values)].append(i)
    keys = sorted(strata)
    if size < len(keys):
        raise ValueError(f"sample size {size} is smaller than the number of strata ({len(keys)})")
    spare = size - len(keys)
    extra = [(len(strata[k]) - 1) * spare / (len(genomes) - len(keys)) for k in keys]
    quota = [1 + int(e) for e in extra]
    # hand out the rounding remainder to the largest fractional parts
    for j in sorted(range(len(keys)), key=lambda j: (int(extra[j]) - extra[j], j))[: size - sum(quota)]:
        quota[j] += 1
    rng = np.random.default_rng(seed)
    picked: list[int] = []
    for k, q in zip(keys, quota):
        members = strata[k]
        picked.extend(rng.choice(members, size=min(q, len(members)), replace=False).tolist())
    return [genomes[i] for i in sorted(picked)]


def _mean_throughput(args: tuple[Genome, Scenario, SimParams, tuple[int, ...], float]) -> float:
    genome, scen, params, seeds, duration = args
    graph = wire(genome)
    return float(np.mean([run(graph, scen, params, s, duration).throughput for s in seeds]))


def _map(fn: Callable, items: list, workers: int) -> list:
    if workers <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))


def brute_force_scores(scen: Scenario, params: SimParams | None = None,
                       budget: BruteForceBudget | None = None, *,
                       mutable: Iterable[BlockId] | None = None, workers: int = 1) -> dict[Genome, float]:
    """Mean throughput (bit/s) of every candidate genome under ``budget``."""
    params = params or SimParams()
    budget = budget or BruteForceBudget()
    genomes = valid_genomes(mutable)
    if budget.coarse:
        genomes = stratified_sample(genomes, budget.sample_size, budget.seed)
    seeds = tuple(budget.sim_seeds())
    tputs = _map(_mean_throughput, [(g, scen, params, seeds, budget.duration) for g in genomes], workers)
    return dict(zip(genomes, tputs))


def brute_force_best(scen: Scenario, params: SimParams | None = None,
                     budget: BruteForceBudget | None = None, *,
                     mutable: Iterable[BlockId] | None = None, workers: int = 1) -> tuple[Genome, float]:
    """Highest mean throughput genome; ties go to the earliest in enumeration order."""
    scores = brute_force_scores(scen, params, budget, mutable=mutable, workers=workers)
    best = max(scores, key=lambda g: (scores[g], [-v for v in g.values]))
    return best, scores[best]


# -- toy problem: three mutable blocks, eight genomes

TOY_BLOCKS = (BlockId.ACK, BlockId.AGGREGATION, BlockId.CARRIER_SENSE)
TOY_SCENARIO = 3


def toy_env(scenario_id: int = TOY_SCENARIO, params: SimParams | None = None,
            budget: BruteForceBudget | None = None) -> tuple[MacEnv, dict[Genome, float]]:
    """Environment over the 8 genomes that vary only the toy blocks.

    Rewards come from a fixed table of simulated throughputs, so the optimum is
    known exactly. Returns the environment and the normalized table.
    """
    params = params or SimParams()
    scores = brute_force_scores(scenario(scenario_id), params, budget, mutable=TOY_BLOCKS)
    table = {g: min(1.0, v / reward_scale(params)) for g, v in scores.items()}
    return MacEnv(TableReward(table), mutable=frozenset(TOY_BLOCKS)), table


# -- experiment

def eval_seeds(scenario_id: int, n: int) -> list[int]:
    """Evaluation seeds shared by every genome in a scenario (paired comparison)."""
    return derive_seeds(scenario_id, n, 3)


def measure(genome: Genome, scen: Scenario, params: SimParams, seeds: Sequence[int],
            duration: float) -> tuple[float, float]:
    graph = wire(genome)
    vals = [run(graph, scen, params, s, duration).throughput for s in seeds]
    return float(np.mean(vals)), float(np.std(vals))


@dataclass
class CellResult:
    scenario: int
    seed: int
    genome: Genome | None = None
    agent_tput: float = float("nan")
    agent_std: float = float("nan")
    best_tput: float = float("nan")
    error: str | None = None

    @property
    def gap(self) -> float:
        if not np.isfinite(self.best_tput) or not np.isfinite(self.agent_tput):
            return float("nan")
        return 0.0 if self.best_tput <= 0 else (self.best_tput - self.agent_tput) / self.best_tput

    @property
    def ok(self) -> bool:
        return self.error is None and self.genome is not None


@dataclass
class OracleResult:
    genome: Genome
    search_tput: float
    tput: float
    std: float


@dataclass
class SelectedBlocksReport:
    cells: list[CellResult] = field(default_factory=list)
    oracle: dict[int, OracleResult] = field(default_factory=dict)
    errors: dict[int, str] = field(default_factory=dict)

    def scenario_ids(self) -> list[int]:
        return sorted({c.scenario for c in self.cells} | set(self.oracle) | set(self.errors))

    def cells_for(self, sid: int) -> list[CellResult]:
        return [c for c in self.cells if c.scenario == sid]

    def summary(self) -> list[dict]:
        """One row per scenario: agent mean and spread over seeds, oracle, gap."""
        rows = []
        for sid in self.scenario_ids():
            good = [c for c in self.cells_for(sid) if c.ok]
            tputs = [c.agent_tput for c in good]
            best = self.oracle.get(sid)
            mean = float(np.mean(tputs)) if tputs else float("nan")
            row = {
                "scenario": sid,
                "seeds": len(good),
                "agent_tput_mean": mean,
                "agent_tput_std": float(np.std(tputs)) if tputs else float("nan"),
                "best_genome": str(best.genome) if best else None,
                "best_tput": best.tput if best else float("nan"),
                "gap": (best.tput - mean) / best.tput if best and best.tput > 0 and tputs else float("nan"),
            }
            rows.append(row)
        return rows


def _run_cell(args: tuple[ExperimentConfig, int, int, str | None]) -> tuple[CellResult, dict | None]:
    config, sid, seed, trace_dir = args
    cell = CellResult(sid, seed)
    try:
        params = config.sim_params()
        scen = scenario(sid)
        result = train(scen, params, config.agent, seed)
        cell.genome = result.genome
        cell.agent_tput, cell.agent_std = measure(result.genome, scen, params,
                                                  eval_seeds(sid, config.eval_seeds), config.eval_duration)
        record = {"scenario": sid, "seed": seed, "selected": str(result.genome),
                  "agent_tput": cell.agent_tput, "agent_std": cell.agent_std,
                  "candidates": result.candidates, "trace": result.trace}
        if trace_dir is not None:
            Path(trace_dir, f"scenario{sid}_seed{seed}.json").write_text(json.dumps(record))
        return cell, record
    except Exception as exc:  # recorded per cell, the experiment goes on
        cell.error = f"{type(exc).__name__}: {exc}"
        log.error("scenario %d seed %d failed:\n%s", sid, seed, traceback.format_exc())
        return cell, None


def run_oracle(config: ExperimentConfig, sid: int) -> OracleResult:
    params = config.sim_params()
    scen = scenario(sid)
    genome, search = brute_force_best(scen, params, config.budget, workers=config.workers)
    tput, std = measure(genome, scen, params, eval_seeds(sid, config.eval_seeds), config.eval_duration)
    return OracleResult(genome, search, tput, std)


def run_experiment(config: ExperimentConfig, *, write: bool = True) -> SelectedBlocksReport:
    """Train every (scenario, seed) cell, score against the oracle, write reports.

    Failures are caught per cell (and per oracle) and recorded in the report.
    """
    out = Path(config.output_dir)
    trace_dir = None
    if write:
        trace_dir = out / "traces"
        trace_dir.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(config.to_json())
    report = SelectedBlocksReport()
    cells = [(config, sid, seed, None if trace_dir is None else str(trace_dir))
             for sid in config.scenarios for seed in config.seeds]
    for cell, _ in _map(_run_cell, cells, config.workers):
        report.cells.append(cell)
    if config.oracle:
        for sid in config.scenarios:
            try:
                report.oracle[sid] = run_oracle(config, sid)
            except Exception as exc:
                report.errors[sid] = f"{type(exc).__name__}: {exc}"
                log.error("oracle for scenario %d failed:\n%s", sid, traceback.format_exc())
    for cell in report.cells:
        if cell.scenario in report.oracle:
            cell.best_tput = report.oracle[cell.scenario].tput
    if write:
        emit_report(report, out)
    return report


# -- reporting

def _fmt(x: float) -> str:
    return "" if not np.isfinite(x) else f"{x:.6g}"


def report_csv(report: SelectedBlocksReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for c in sorted(report.cells, key=lambda c: (c.scenario, c.seed)):
        labels = c.genome.labels() if c.genome is not None else [""] * len(BlockId)
        w.writerow([c.scenario, c.seed, *labels, _fmt(c.agent_tput), _fmt(c.best_tput), _fmt(c.gap)])
    return buf.getvalue()


def _consensus(genomes: list[Genome], block: BlockId) -> str:
    if not genomes:
        return "?"
    label, n = Counter(g.labels()[block] for g in genomes).most_common(1)[0]  # ties: first seen
    shown = EXCLUDED if label == "off" else label
    return shown if n == len(genomes) else f"{shown} ({n}/{len(genomes)})"


def report_markdown(report: SelectedBlocksReport) -> str:
    """Blocks as rows, scenarios as columns; a cell is the (majority) selected variant."""
    sids = report.scenario_ids()
    lines = ["| Block | " + " | ".join(f"S{s}" for s in sids) + " |",
             "|---|" + "---|" * len(sids)]
    for b in BlockId:
        cells = [_consensus([c.genome for c in report.cells_for(s) if c.ok], b) for s in sids]
        lines.append(f"| {b.name.replace('_', ' ').title()} | " + " | ".join(cells) + " |")
    lines += ["", "| Scenario | Agent Mbps (mean ± sd) | Oracle genome | Oracle Mbps | Gap |", "|---|---|---|---|---|"]
    for row in report.summary():
        agent = (f"{row['agent_tput_mean'] / 1e6:.3f} ± {row['agent_tput_std'] / 1e6:.3f}"
                 if np.isfinite(row["agent_tput_mean"]) else "n/a")
        best = f"{row['best_tput'] / 1e6:.3f}" if np.isfinite(row["best_tput"]) else "n/a"
        gap = f"{row['gap']:.1%}" if np.isfinite(row["gap"]) else "n/a"
        lines.append(f"| {row['scenario']} | {agent} | {row['best_genome'] or 'n/a'} | {best} | {gap} |")
    errors = [(c.scenario, c.seed, c.error) for c in report.cells if c.error]
    errors += [(sid, "oracle", msg) for sid, msg in sorted(report.errors.items())]
    if errors:
        lines += ["", "Errors:", ""] + [f"- scenario {s}, seed {k}: {m}" for s, k, m in errors]
    return "\n".join(lines) + "\n"


def emit_report(report: SelectedBlocksReport, out_dir: str | os.PathLike) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path, md_path = out / "report.csv", out / "report.md"
    csv_path.write_text(report_csv(report))
    md_path.write_text(report_markdown(report))
    return csv_path, md_path


# -- trend checks

def _rts_small(g: Genome) -> bool:
    smaller = g.active(BlockId.FRAGMENTATION) or (g.active(BlockId.DATA_RATE) and g.value(BlockId.DATA_RATE) < 54)
    return g.active(BlockId.RTS_CTS) and smaller


@dataclass(frozen=True)
class Finding:
    key: str
    description: str
    scenarios: tuple[int, ...]
    holds: Callable[[Genome], bool]
    criterion: bool = True


FINDINGS = (
    Finding("no_control_with_agg", "Scenario 1: no ACK, no RTS/CTS, Aggregation on", (1,),
            lambda g: not g.active(BlockId.ACK) and not g.active(BlockId.RTS_CTS) and g.active(BlockId.AGGREGATION)),
    Finding("noise_adds_cs", "Scenario 2: Carrier Sense on", (2,), lambda g: g.active(BlockId.CARRIER_SENSE)),
    Finding("high_load_ack", "Scenarios 5-8: ACK on", (5, 6, 7, 8), lambda g: g.active(BlockId.ACK)),
    Finding("saturated_rts_small", "Scenarios 7-8: RTS/CTS with fragmentation or a data rate below 54 Mbps",
            (7, 8), _rts_small),
    Finding("noisy_high_frag", "Scenario 6: Fragmentation on", (6,), lambda g: g.active(BlockId.FRAGMENTATION),
            criterion=False),
)


@dataclass
class TrendVerdict:
    key: str
    description: str
    votes: dict[int, tuple[int, int]]  # scenario -> (seeds where the finding holds, seeds)
    criterion: bool

    @property
    def passed(self) -> bool:
        return bool(self.votes) and all(2 * k > n for k, n in self.votes.values())

    def line(self) -> str:
        detail = ", ".join(f"S{s} {k}/{n}" for s, (k, n) in sorted(self.votes.items())) or "no data"
        return f"{'PASS' if self.passed else 'FAIL'} {self.key}: {self.description} [{detail}]"


def verify_trends(cells: Iterable[CellResult], findings: Sequence[Finding] = FINDINGS) -> list[TrendVerdict]:
    """Majority vote over training seeds, separately for each scenario a finding covers."""
    by_sid: dict[int, list[Genome]] = defaultdict(list)
    for c in cells:
        if c.ok:
            by_sid[c.scenario].append(c.genome)
    out = []
    for f in findings:
        votes = {s: (sum(f.holds(g) for g in by_sid[s]), len(by_sid[s])) for s in f.scenarios if by_sid.get(s)}
        out.append(TrendVerdict(f.key, f.description, votes, f.criterion))
    return out
