"""Command-line entry point: ``deepmac <subcommand> ...``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import harness
from .agent import AgentConfig, config_dict, train
from .blocks import EncodingError, Genome, catalog_json
from .controller import explain, validate, wire
from .sim import SimParams, run, scenario


def _genome(text: str) -> Genome:
    try:
        return Genome.parse(text)
    except EncodingError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _scenario_id(text: str) -> int:
    sid = int(text)
    if not 1 <= sid <= 8:
        raise argparse.ArgumentTypeError(f"scenario must be in 1..8, got {sid}")
    return sid


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _widths(text: str) -> tuple[int, ...]:
    try:
        widths = tuple(int(x) for x in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad layer widths {text!r}") from exc
    if not widths or min(widths) <= 0:
        raise argparse.ArgumentTypeError("layer widths must be positive")
    return widths


def _dump(obj) -> None:
    json.dump(obj, sys.stdout, indent=2)
    sys.stdout.write("\n")


def cmd_validate(args) -> int:
    result = validate(args.genome)
    if result.valid:
        print(explain(args.genome))
        return 0
    for _, msg in result.violations:
        print(msg)
    return 1


def cmd_catalog(args) -> int:
    print(catalog_json())
    return 0


def cmd_simulate(args) -> int:
    result = validate(args.genome)
    if not result.valid:
        for _, msg in result.violations:
            print(msg, file=sys.stderr)
        return 1
    params = SimParams().with_overrides(args.param)
    res = run(wire(args.genome), scenario(args.scenario), params, args.seed, args.duration_s)
    _dump(res.to_dict())
    return 0


def _agent_config(args) -> AgentConfig:
    changes = {k: v for k, v in (("steps", args.steps), ("hidden", args.hidden), ("lr", args.lr),
                                 ("eval_duration", args.eval_duration), ("episode_len", args.episode_len),
                                 ("optimizer", args.optimizer))
               if v is not None}
    return dataclasses.replace(AgentConfig(), **changes)


def cmd_train(args) -> int:
    config = _agent_config(args)
    params = SimParams().with_overrides(args.param)
    result = train(scenario(args.scenario), params, config, args.seed, tabular=args.tabular)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    record = {"scenario": args.scenario, "seed": args.seed, "tabular": args.tabular,
              "config": config_dict(config), "selected": str(result.genome), "score": result.score,
              "candidates": result.candidates}
    (out / "trace.json").write_text(json.dumps(result.trace))
    (out / "selected.json").write_text(json.dumps(record, indent=2))
    if not args.tabular:
        result.net.save(out / "weights.bin")
    _dump(record)
    return 0


def cmd_brute_force(args) -> int:
    budget = harness.BruteForceBudget(duration=args.duration_s, seeds=args.seeds, coarse=args.coarse)
    params = SimParams().with_overrides(args.param)
    scores = harness.brute_force_scores(scenario(args.scenario), params, budget, workers=args.workers)
    best = max(scores, key=lambda g: (scores[g], [-v for v in g.values]))
    top = sorted(scores, key=lambda g: -scores[g])[: args.top]
    _dump({"scenario": args.scenario, "evaluated": len(scores), "best": str(best), "best_tput": scores[best],
           "top": [{"genome": str(g), "tput": scores[g]} for g in top]})
    return 0


def _load_config(args) -> harness.ExperimentConfig:
    config = harness.ExperimentConfig.load(args.config) if args.config else harness.ExperimentConfig()
    if args.out:
        config = dataclasses.replace(config, output_dir=args.out)
    return config


def cmd_run(args) -> int:
    report = harness.run_experiment(_load_config(args))
    _dump(report.summary())
    return 0 if all(c.ok for c in report.cells) and not report.errors else 1


def cmd_verify_trends(args) -> int:
    config = _load_config(args)
    if args.no_oracle:
        config = dataclasses.replace(config, oracle=False)
    report = harness.run_experiment(config)
    verdicts = harness.verify_trends(report.cells)
    for v in verdicts:
        print(v.line() + ("" if v.criterion else " (informational)"))
    return 0 if all(v.passed for v in verdicts if v.criterion) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deepmac", description="Compose, simulate and learn MAC protocols from blocks.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("validate", help="check a genome against the dependency rules")
    s.add_argument("genome", type=_genome, help="8 comma-separated variant labels, e.g. BEB,ACK,off,off,off,15,on,54")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("catalog", help="print the block catalog as JSON")
    s.set_defaults(func=cmd_catalog)

    s = sub.add_parser("simulate", help="simulate one genome in one scenario")
    s.add_argument("--genome", type=_genome, required=True)
    s.add_argument("--scenario", type=_scenario_id, required=True)
    s.add_argument("--seed", type=_u64, default=0)
    s.add_argument("--duration-s", type=float, default=10.0)
    s.add_argument("--param", action="append", default=[], metavar="KEY=VALUE", help="override a simulator parameter")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("train", help="train an agent on one scenario")
    s.add_argument("--scenario", type=_scenario_id, required=True)
    s.add_argument("--seed", type=_u64, default=0)
    s.add_argument("--tabular", action="store_true", help="tabular Q-learning instead of the network")
    s.add_argument("--steps", type=int)
    s.add_argument("--hidden", type=_widths)
    s.add_argument("--lr", type=float)
    s.add_argument("--optimizer", choices=("adam", "sgd"))
    s.add_argument("--episode-len", type=int)
    s.add_argument("--eval-duration", type=float, help="simulated seconds per training step")
    s.add_argument("--param", action="append", default=[], metavar="KEY=VALUE")
    s.add_argument("--out", default="train_out", help="directory for trace.json, selected.json, weights.bin")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("brute-force", help="score every valid genome in one scenario")
    s.add_argument("--scenario", type=_scenario_id, required=True)
    s.add_argument("--duration-s", type=float, default=2.0)
    s.add_argument("--seeds", type=int, default=2)
    s.add_argument("--coarse", action="store_true", help="stratified 1,024-genome sample")
    s.add_argument("--top", type=int, default=10)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--param", action="append", default=[], metavar="KEY=VALUE")
    s.set_defaults(func=cmd_brute_force)

    for name, func, text in (("run", cmd_run, "run a full experiment and write reports"),
                             ("verify-trends", cmd_verify_trends, "run an experiment and check the block trends")):
        s = sub.add_parser(name, help=text)
        s.add_argument("--config", help="ExperimentConfig JSON file (defaults used when omitted)")
        s.add_argument("--out", help="override the output directory")
        if name == "verify-trends":
            s.add_argument("--no-oracle", action="store_true", help="skip the brute-force comparison")
        s.set_defaults(func=func)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
