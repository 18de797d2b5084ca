import json
import random

import numpy as np
import pytest

from alliancegame import sim
from alliancegame.core import ArrivalModel, BlockRace, NetworkParams, ObservationModel
from alliancegame.decision import EXACT, PAPER, AllianceConfig, DecisionEngine

TOY = BlockRace(ArrivalModel(0.5, 0.25), ObservationModel(1.0, 1.0), NetworkParams(20))


def test_splitmix64_reference_value():
    # first output of the SplitMix64 generator seeded with 0
    assert sim.splitmix64(0) == 0xE220A8397B1DCDAF


def test_replication_streams_are_keyed_by_seed_and_index():
    a = sim.replication_rng(1, 5).random(4)
    assert np.array_equal(a, sim.replication_rng(1, 5).random(4))
    assert not np.array_equal(a, sim.replication_rng(1, 6).random(4))
    assert not np.array_equal(a, sim.replication_rng(2, 5).random(4))
    factory = sim.StreamFactory(1)
    assert np.array_equal(factory(5).random(4), a)


def test_sim_config_validation():
    with pytest.raises(ValueError):
        sim.SimConfig(replications=0)
    with pytest.raises(ValueError):
        sim.SimConfig(genuine_initial="half")
    with pytest.raises(ValueError):
        sim.SimConfig(master_seed=-1)


def test_no_attacker_censors_nu():
    race = BlockRace(ArrivalModel(0.0, 1.0), ObservationModel(1.0, 1.0), NetworkParams(10))
    out = sim.run(race, AllianceConfig(), sim.SimConfig(replications=200, master_seed=4))
    assert all(o.nu is None and o.nu2 is None for o in out)
    assert all(o.mu is not None for o in out)
    est = sim.summarize("nu_mean", out, race)
    assert est.unreliable and est.censored_fraction == 1.0


def test_no_genuine_player():
    race = BlockRace(ArrivalModel(1.0, 0.0), ObservationModel(1.0, 1.0), NetworkParams(10))
    out = sim.run(race, AllianceConfig(0, 0.5), sim.SimConfig(replications=300, master_seed=4))
    for o in out:
        assert o.mu is None and o.mu1 is None
        assert o.nu == o.nu2
        assert o.confined_win == (o.nu is not None)


def test_nu_mean_first_success():
    race = BlockRace(ArrivalModel(1.0), ObservationModel(0.0, 1.0), NetworkParams(2))
    out = sim.run(race, AllianceConfig(), sim.SimConfig(replications=100_000, master_seed=8))
    est = sim.summarize("nu_mean", out, race)
    assert abs(est.mean - 2.0) < 3 * est.std_err


def test_outcome_ordering_of_indexes():
    out = sim.run(TOY, AllianceConfig(4, 0.5), sim.SimConfig(replications=500, master_seed=2))
    for o in out:
        assert o.nu1 <= o.nu <= o.nu2
        assert o.mu1 <= o.mu
        assert o.c_prev is None or o.c_prev < 10 <= o.c_at_nu
        assert o.t_prev <= o.t_nu
        assert 0 <= o.b_drawn <= 4


def test_horizon_censoring():
    cfg = sim.SimConfig(replications=200, master_seed=1, max_observations=3)
    out = sim.run(TOY, AllianceConfig(), cfg)
    assert any(o.nu is None for o in out)
    assert all(o.observations <= 3 for o in out)


def test_summaries_do_not_depend_on_order():
    out = sim.run(TOY, AllianceConfig(3, 0.5), sim.SimConfig(replications=1000, master_seed=3))
    shuffled = list(out)
    random.Random(0).shuffle(shuffled)
    for s in sim.SELECTORS:
        assert sim.summarize(s, out, TOY) == sim.summarize(s, shuffled, TOY)


def test_parallel_matches_serial():
    cfg = sim.SimConfig(replications=400, master_seed=12)
    serial = sim.run(TOY, AllianceConfig(2, 0.5), cfg, jobs=1)
    parallel = sim.run(TOY, AllianceConfig(2, 0.5), cfg, jobs=2)
    assert serial == parallel


def test_trace_export(tmp_path):
    out = sim.run(TOY, AllianceConfig(), sim.SimConfig(replications=100, master_seed=1))
    path = tmp_path / "trace.jsonl"
    sim.write_trace(out, path)
    lines = path.read_text().splitlines()
    assert len(lines) == 100
    rec = json.loads(lines[7])
    assert rec["index"] == 7
    assert set(rec) == set(sim.ReplicationOutcome.__dataclass_fields__)


def test_coupled_alliance_draws_are_monotone():
    cfg = sim.SimConfig(replications=300, master_seed=6)
    small = sim.run(TOY, AllianceConfig(3, 0.5), cfg)
    large = sim.run(TOY, AllianceConfig(8, 0.5), cfg)
    for a, b in zip(small, large):
        assert a.nu == b.nu and a.c_at_nu == b.c_at_nu
        assert a.b_drawn <= b.b_drawn


def test_validate_passes_and_perturbation_fails():
    race = TOY
    out = sim.run(race, AllianceConfig(2, 0.5), sim.SimConfig(replications=20_000, master_seed=20190704))
    exact = DecisionEngine(race, 0.5, EXACT)
    paper = DecisionEngine(race, 0.5, PAPER)
    rep = sim.validate(exact.report(2), paper.report(2), out, race, fp=exact.fp)
    assert rep.passed, [e for e in rep.exact_failures]
    bad = sim.validate(exact.report(2), paper.report(2), out, race, fp=exact.fp, perturb=True)
    assert not bad.passed
    assert [e.quantity for e in bad.exact_failures] == ["E[nu]"]
    info = [e for e in rep.entries if e.gate is None]
    assert info and all(e.status == "INFO" for e in info)


def test_increment_sampler_mean():
    draws = sim.sample_increments(sim.replication_rng(1, 0), 3.0, 2.0, 200_000)
    assert draws.mean() == pytest.approx(6.0, rel=0.02)
