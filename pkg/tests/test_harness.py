import csv
import io
import json

import numpy as np
import pytest

from deepmac.agent import AgentConfig
from deepmac.blocks import BlockId, Genome
from deepmac.controller import validate, wire
from deepmac.harness import (
    CSV_HEADER,
    TOY_BLOCKS,
    BruteForceBudget,
    CellResult,
    ExperimentConfig,
    OracleResult,
    SelectedBlocksReport,
    brute_force_best,
    brute_force_scores,
    emit_report,
    report_csv,
    report_markdown,
    run_experiment,
    stratified_sample,
    toy_env,
    valid_genomes,
    verify_trends,
)
from deepmac.sim import run, scenario

TINY_AGENT = AgentConfig(steps=40, episode_len=10, eval_duration=0.2, hidden=(8, 8, 8), batch_size=8)


def test_config_json_round_trip(tmp_path):
    cfg = ExperimentConfig(scenarios=(1, 7), seeds=(3,), agent=TINY_AGENT, params=("retry_limit=4",),
                           budget=BruteForceBudget(duration=0.5, coarse=True))
    path = tmp_path / "exp.json"
    path.write_text(cfg.to_json())
    assert ExperimentConfig.load(path) == cfg
    assert json.loads(cfg.to_json())["version"] == 1


@pytest.mark.parametrize("bad", [{"seeds": ()}, {"scenarios": (0,)}, {"scenarios": (9,)}, {"params": ("x=1",)}])
def test_config_invariants(bad):
    with pytest.raises(ValueError):
        ExperimentConfig(**bad)


def test_config_rejects_unknown_keys_and_versions():
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"version": 2})
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"bogus": 1})


def test_valid_genome_set():
    allg = valid_genomes()
    assert len(allg) == 2120 and all(validate(g).valid for g in allg)
    toy = valid_genomes(TOY_BLOCKS)
    assert len(toy) == 8


def test_stratified_sample():
    allg = valid_genomes()
    sample = stratified_sample(allg, 1024, seed=0)
    assert len(sample) == len(set(sample)) == 1024
    patterns = {tuple(v > 0 for v in g.values) for g in allg}
    assert {tuple(v > 0 for v in g.values) for g in sample} == patterns
    assert stratified_sample(allg, 1024, seed=0) == sample
    assert stratified_sample(allg[:10], 50) == allg[:10]


def test_toy_brute_force_matches_hand_evaluation():
    sc = scenario(1)
    budget = BruteForceBudget(duration=1.0, seeds=2)
    best, tput = brute_force_best(sc, budget=budget, mutable=TOY_BLOCKS)
    by_hand = {}
    for ack in (0, 1):
        for agg in (0, 1):
            for cs in (0, 1):
                g = Genome.zeros().replace(BlockId.ACK, ack).replace(BlockId.AGGREGATION, agg)
                g = g.replace(BlockId.CARRIER_SENSE, cs)
                by_hand[g] = np.mean([run(wire(g), sc, seed=s, duration=1.0).throughput
                                      for s in budget.sim_seeds()])
    top = max(by_hand.values())
    assert tput == top
    assert best == min((g for g, v in by_hand.items() if v == top), key=lambda g: g.values)


def test_brute_force_coarse_is_subset_and_deterministic():
    budget = BruteForceBudget(duration=0.2, seeds=1, coarse=True, sample_size=200)
    a = brute_force_scores(scenario(3), budget=budget)
    b = brute_force_scores(scenario(3), budget=budget)
    assert a == b and len(a) == 200
    g, _ = brute_force_best(scenario(3), budget=budget)
    assert validate(g).valid


def test_toy_env_table():
    env, table = toy_env()
    assert len(table) == 8 and all(0 <= v <= 1 for v in table.values())
    assert env.reward_fn(Genome.zeros()) == table[Genome.zeros()]


def _report():
    g1 = Genome.parse("BEB,ACK,off,2000,off,31,on,54")
    g2 = Genome.parse("off,off,off,off,off,off,on,54")
    cells = [CellResult(1, 0, g1, 9.0e6, 0.1e6, 10e6), CellResult(1, 1, g2, 5.0e6, 0.1e6, 10e6),
             CellResult(1, 2, g1, 9.5e6, 0.1e6, 10e6), CellResult(2, 0, error="RuntimeError: boom")]
    return SelectedBlocksReport(cells, {1: OracleResult(g1, 9.8e6, 10e6, 0.1e6)})


def test_csv_report():
    text = report_csv(_report())
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == CSV_HEADER
    assert rows[0] == "scenario,seed,backoff,ack,frag,agg,rtscts,cw,cs,dr,agent_tput,best_tput,gap".split(",")
    assert rows[1][:10] == ["1", "0", "BEB", "ACK", "off", "2000", "off", "31", "on", "54"]
    assert float(rows[1][-1]) == pytest.approx(0.1)
    assert report_csv(SelectedBlocksReport()) == ",".join(CSV_HEADER) + "\n"


def test_markdown_report():
    md = report_markdown(_report())
    lines = md.splitlines()
    assert lines[0] == "| Block | S1 | S2 |"
    frag_row = next(line for line in lines if line.startswith("| Fragmentation"))
    assert "—" in frag_row
    backoff_row = next(line for line in lines if line.startswith("| Backoff"))
    assert "BEB (2/3)" in backoff_row
    assert "boom" in md


def test_summary_has_one_row_per_scenario():
    rows = _report().summary()
    assert [r["scenario"] for r in rows] == [1, 2]
    assert rows[0]["agent_tput_mean"] == pytest.approx(23.5e6 / 3)


def test_emit_report_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        emit_report(_report(), blocker / "sub")


def test_trend_verdicts():
    ok = Genome.parse("off,off,off,2000,off,off,on,54")
    bad = Genome.parse("BEB,ACK,off,2000,off,off,on,54")
    cells = [CellResult(1, s, g) for s, g in enumerate([ok, ok, bad])]
    cells += [CellResult(7, s, Genome.parse("BEB,ACK,200,off,on,15,on,54")) for s in range(3)]
    verdicts = {v.key: v for v in verify_trends(cells)}
    assert verdicts["no_control_with_agg"].passed
    assert verdicts["no_control_with_agg"].votes == {1: (2, 3)}
    assert verdicts["saturated_rts_small"].passed  # scenario 8 has no data and is skipped
    assert not verdicts["noise_adds_cs"].passed  # no data at all
    assert verdicts["high_load_ack"].passed


def test_run_experiment_end_to_end(tmp_path):
    cfg = ExperimentConfig(scenarios=(1,), seeds=(0, 1), agent=TINY_AGENT, output_dir=str(tmp_path / "a"),
                           budget=BruteForceBudget(duration=0.2, seeds=1, coarse=True, sample_size=100),
                           eval_duration=0.5, eval_seeds=2)
    report = run_experiment(cfg)
    assert len(report.summary()) == 1
    assert all(c.ok for c in report.cells)
    assert all(validate(c.genome).valid for c in report.cells)
    assert validate(report.oracle[1].genome).valid
    out = tmp_path / "a"
    assert (out / "report.md").exists() and (out / "traces" / "scenario1_seed0.json").exists()
    again = run_experiment(ExperimentConfig.from_dict({**cfg.to_dict(), "output_dir": str(tmp_path / "b")}))
    assert (tmp_path / "b" / "report.csv").read_bytes() == (out / "report.csv").read_bytes()
    assert len(again.cells) == 2


def test_cell_failure_is_recorded(tmp_path, monkeypatch):
    import deepmac.harness as h

    def broken(*args, **kwargs):
        raise RuntimeError("simulated failure")

    monkeypatch.setattr(h, "train", broken)
    cfg = ExperimentConfig(scenarios=(1, 2), seeds=(0,), agent=TINY_AGENT, output_dir=str(tmp_path),
                           oracle=False)
    report = run_experiment(cfg)
    assert len(report.cells) == 2 and all("simulated failure" in c.error for c in report.cells)
    assert "simulated failure" in (tmp_path / "report.md").read_text()
