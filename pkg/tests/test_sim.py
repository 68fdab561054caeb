import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from deepmac.blocks import DCF_GENOME, DOMAIN_SIZES, Genome
from deepmac.controller import validate, wire
from deepmac.sim import (
    Load,
    Scenario,
    SimParams,
    frame_airtime,
    frame_error_prob,
    per_node_rate,
    run,
    saturated_cycle_throughput,
    scenario,
    scenarios,
)

# 1 - (1 - 1e-5)**12000 evaluated with 50-digit decimal arithmetic
PER_1E5_12000 = 0.11308009543849257534632725490940818

valid_genomes = st.tuples(*(st.integers(0, n - 1) for n in DOMAIN_SIZES)).map(Genome).filter(
    lambda g: validate(g).valid)


def test_frame_airtime():
    assert frame_airtime(1500, 0, 10e6) == pytest.approx(1.2e-3)
    assert frame_airtime(0, 34, 10e6) == pytest.approx(27.2e-6)
    assert frame_airtime(1500, 34, 10e6) / frame_airtime(1500, 34, 54e6) == pytest.approx(5.4)
    for rate in (0, -1):
        with pytest.raises(ValueError):
            frame_airtime(100, 0, rate)


def test_frame_error_prob():
    assert frame_error_prob(0.0, 12000) == 0.0
    assert frame_error_prob(1e-3, 0) == 0.0
    assert frame_error_prob(1e-5, 12000) == pytest.approx(PER_1E5_12000, rel=1e-14)


@given(st.floats(0, 0.5), st.integers(0, 10**6), st.integers(0, 10**6))
def test_frame_error_prob_monotone_in_length(p, a, b):
    lo, hi = sorted((a, b))
    assert 0.0 <= frame_error_prob(p, lo) <= frame_error_prob(p, hi) <= 1.0


def test_scenario_table():
    rows = [(s.nodes, s.load, s.noise) for s in scenarios()]
    assert rows == [(5, Load.LOW, False), (5, Load.LOW, True), (15, Load.AVERAGE, False),
                    (15, Load.AVERAGE, True), (20, Load.HIGH, False), (20, Load.HIGH, True),
                    (50, Load.SATURATED, False), (50, Load.SATURATED, True)]
    assert [s.id for s in scenarios()] == list(range(1, 9))
    with pytest.raises(ValueError):
        scenario(9)


def test_params_invariants_and_overrides():
    with pytest.raises(ValueError):
        SimParams(slot=0)
    with pytest.raises(ValueError):
        SimParams(sifs=1e-3, difs=0.5e-3)
    with pytest.raises(ValueError):
        SimParams(bit_error_rate=1.0)
    p = SimParams().with_overrides(["retry_limit=3", "bit_error_rate=1e-4"])
    assert p.retry_limit == 3 and p.bit_error_rate == 1e-4
    with pytest.raises(ValueError):
        SimParams().with_overrides(["nope=1"])
    assert SimParams().resolved_ack_timeout == pytest.approx(0.05e-3 + 11.2e-6 + 0.2e-3)


def test_single_saturated_node_matches_cycle_oracle():
    # DIFS + mean backoff (CW_min / 2 slots) + DATA + SIFS + ACK, computed from scratch
    cycle = 0.45e-3 + 7.5 * 0.2e-3 + (1500 + 34) * 8 / 54e6 + 0.05e-3 + 14 * 8 / 10e6
    oracle = 1500 * 8 / cycle
    assert saturated_cycle_throughput(wire(DCF_GENOME)) == pytest.approx(oracle, rel=1e-12)
    res = run(wire(DCF_GENOME), Scenario(1, Load.SATURATED, False), seed=1, duration=30.0)
    assert res.throughput == pytest.approx(oracle, rel=0.02)
    assert res.collisions == 0


def test_two_saturated_aloha_nodes_deliver_nothing():
    res = run(wire(Genome.zeros()), Scenario(2, Load.SATURATED, False), seed=0, duration=2.0)
    assert res.throughput == 0.0
    assert res.attempts > 0 and res.collisions >= res.attempts - 2  # two frames still on air at the end


def test_light_load_without_ack_beats_ack():
    """Immediate-transmit protocol: ACK adds overhead and blind retries that re-collide."""
    base = Genome.of(dr="54")
    s1 = scenario(1)
    no_ack = [run(wire(base), s1, seed=s, duration=10.0).throughput for s in range(5)]
    ack = [run(wire(base.replace(1, 1)), s1, seed=s, duration=10.0).throughput for s in range(5)]
    assert np.mean(no_ack) > np.mean(ack)


def test_errors():
    with pytest.raises(ValueError):
        run(wire(DCF_GENOME), scenario(1), duration=0.0)
    with pytest.raises(ValueError):
        run(wire(DCF_GENOME), Scenario(0, Load.LOW, False))


def test_reproducible():
    g = wire(Genome.of(backoff="EIED", ack="ACK", frag="500", cs="on", dr="24"))
    a = run(g, scenario(6), seed=42, duration=2.0)
    b = run(g, scenario(6), seed=42, duration=2.0)
    assert a == b and a.events == b.events
    assert run(g, scenario(6), seed=43, duration=2.0) != a


def _check_invariants(res, sc, graph, params):
    assert res.throughput == res.delivered_payload_bits / res.sim_duration
    counts = [res.attempts, res.collisions, res.noise_drops, res.retry_exhaustions, res.msdus_generated,
              res.msdus_delivered, res.msdus_collided, res.msdus_noise_dropped, res.msdus_retry_exhausted,
              res.msdus_queued]
    assert min(counts) >= 0
    assert res.collisions <= res.attempts
    assert (res.msdus_delivered + res.msdus_collided + res.msdus_noise_dropped + res.msdus_retry_exhausted
            + res.msdus_queued == res.msdus_generated)
    if not sc.noise:
        assert res.noise_drops == 0 and res.msdus_noise_dropped == 0
    rate = graph.vertex("Tx").param("rate_mbps") or 10
    assert res.throughput <= rate * 1e6


@settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.filter_too_much])
@given(valid_genomes, st.integers(1, 8), st.integers(0, 2**32))
def test_conservation_and_bounds(genome, sid, seed):
    graph, sc = wire(genome), scenario(sid)
    params = SimParams()
    res = run(graph, sc, params, seed, 1.0)
    _check_invariants(res, sc, graph, params)
    if sc.load is not Load.SATURATED:
        lam = per_node_rate(sc, params) * sc.nodes  # MSDUs per second
        bits = 8 * params.default_frame
        assert res.throughput <= lam * bits + 3 * math.sqrt(lam * 1.0) * bits + bits


def test_noise_monotone():
    g = wire(DCF_GENOME)
    sc = Scenario(5, Load.SATURATED, True)
    means, sems = [], []
    for ber in (0.0, 1e-6, 1e-5, 1e-4):
        params = SimParams(bit_error_rate=ber)
        vals = [run(g, sc, params, seed=s, duration=3.0).throughput for s in range(5)]
        means.append(np.mean(vals))
        sems.append(np.std(vals, ddof=1) / np.sqrt(len(vals)))
    for i in range(3):
        assert means[i + 1] <= means[i] + 3 * math.hypot(sems[i], sems[i + 1])
    assert means[-1] < means[0]


def test_small_fragments_win_under_heavy_noise():
    sc = Scenario(2, Load.SATURATED, True)
    params = SimParams(bit_error_rate=1e-4)
    frag = wire(DCF_GENOME.replace(2, 2))  # 500 B fragments
    whole = wire(DCF_GENOME)
    wins = sum(run(frag, sc, params, seed=s, duration=5.0).throughput
               > run(whole, sc, params, seed=s, duration=5.0).throughput for s in range(5))
    assert wins >= 3


def test_arrivals_shared_across_protocols():
    a = run(wire(DCF_GENOME), scenario(3), seed=7, duration=2.0)
    b = run(wire(Genome.zeros()), scenario(3), seed=7, duration=2.0)
    assert a.msdus_generated == b.msdus_generated


def test_fragment_and_aggregate_accounting():
    sc = Scenario(1, Load.SATURATED, False)
    for g in (Genome.of(ack="ACK", frag="200", cs="on"), Genome.of(ack="ACK", agg="2000", cs="on", dr="54"),
              Genome.of(backoff="BEB", ack="ACK", rtscts="on", cs="on")):
        res = run(wire(g), sc, seed=3, duration=2.0)
        assert res.collisions == 0 and res.delivered_payload_bits > 0
        assert res.delivered_payload_bits == 8 * 1500 * res.msdus_delivered
