import json

import pytest

from deepmac.cli import main
from deepmac.harness import BruteForceBudget, ExperimentConfig
from deepmac.agent import AgentConfig
from deepmac.qnet import QNetwork


def test_validate_valid(capsys):
    assert main(["validate", "BEB,ACK,off,off,off,15,on,54"]) == 0
    assert "valid" in capsys.readouterr().out


def test_validate_invalid_prints_violations(capsys):
    assert main(["validate", "BEB,off,off,off,off,15,off,54"]) == 1
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 1 and lines[0].startswith("backoff requires ack")


def test_validate_malformed():
    with pytest.raises(SystemExit) as exc:
        main(["validate", "BEB,ACK"])
    assert exc.value.code == 2


def test_simulate_emits_json(capsys):
    rc = main(["simulate", "--genome", "BEB,ACK,off,off,off,15,on,54", "--scenario", "3", "--seed", "5",
               "--duration-s", "0.5", "--param", "retry_limit=3"])
    assert rc == 0
    out = json.loads(capsys.readouterr().out)
    assert out["sim_duration"] == 0.5
    assert out["throughput"] == out["delivered_payload_bits"] / 0.5


def test_simulate_bad_param(capsys):
    rc = main(["simulate", "--genome", "off,off,off,off,off,off,off,off", "--scenario", "1", "--param", "zzz=1"])
    assert rc == 2 and "zzz" in capsys.readouterr().err


def test_catalog(capsys):
    assert main(["catalog"]) == 0
    assert len(json.loads(capsys.readouterr().out)["blocks"]) == 8


def test_train_writes_trace_record_and_weights(tmp_path, capsys):
    rc = main(["train", "--scenario", "1", "--seed", "3", "--steps", "30", "--hidden", "8,8,8",
               "--eval-duration", "0.2", "--episode-len", "10", "--out", str(tmp_path)])
    assert rc == 0
    record = json.loads(capsys.readouterr().out)
    trace = json.loads((tmp_path / "trace.json").read_text())
    assert len(trace) == 30 and {"genome", "reward", "loss", "epsilon"} <= set(trace[0])
    assert record["selected"] and record["config"]["hidden"] == [8, 8, 8]
    assert QNetwork.load(tmp_path / "weights.bin").sizes == (46, 8, 8, 8, 31)


def test_train_tabular(tmp_path, capsys):
    rc = main(["train", "--scenario", "2", "--seed", "1", "--tabular", "--steps", "20", "--eval-duration", "0.2",
               "--out", str(tmp_path)])
    assert rc == 0 and not (tmp_path / "weights.bin").exists()
    assert json.loads(capsys.readouterr().out)["tabular"] is True


def test_brute_force_coarse(capsys):
    rc = main(["brute-force", "--scenario", "1", "--coarse", "--duration-s", "0.1", "--seeds", "1", "--top", "3"])
    assert rc == 0
    out = json.loads(capsys.readouterr().out)
    assert out["evaluated"] == 1024 and len(out["top"]) == 3


@pytest.fixture
def tiny_config(tmp_path):
    cfg = ExperimentConfig(scenarios=(1, 2), seeds=(0,),
                           agent=AgentConfig(steps=20, episode_len=10, eval_duration=0.2, hidden=(8, 8, 8),
                                             batch_size=8),
                           budget=BruteForceBudget(duration=0.1, seeds=1, coarse=True, sample_size=100),
                           eval_duration=0.2, eval_seeds=1, output_dir=str(tmp_path / "out"))
    path = tmp_path / "exp.json"
    path.write_text(cfg.to_json())
    return path


def test_run_and_verify_trends(tiny_config, capsys):
    assert main(["run", "--config", str(tiny_config)]) == 0
    rows = json.loads(capsys.readouterr().out)
    assert [r["scenario"] for r in rows] == [1, 2]
    out = tiny_config.parent / "out"
    header = (out / "report.csv").read_text().splitlines()[0]
    assert header == "scenario,seed,backoff,ack,frag,agg,rtscts,cw,cs,dr,agent_tput,best_tput,gap"
    rc = main(["verify-trends", "--config", str(tiny_config), "--no-oracle"])
    lines = capsys.readouterr().out.strip().splitlines()
    assert rc in (0, 1)
    assert any(line.split()[1] == "no_control_with_agg:" for line in lines)
    assert all(line.startswith(("PASS", "FAIL")) for line in lines)
