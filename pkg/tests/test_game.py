import pytest

from alliancegame.core import ArrivalModel, BlockRace, DomainError, NetworkParams, ObservationModel
from alliancegame.decision import EXACT, PAPER, DecisionEngine
from alliancegame.game import (
    CostModel,
    Response,
    Strategy,
    SweepSpec,
    burst_probability,
    cost_matrix,
    expected_row_cost,
    feasibility_bound,
    optimize_eta,
    strategy_costs,
    total_cost,
)

TOY = BlockRace(ArrivalModel(0.5, 0.25), ObservationModel(1.0, 1.0), NetworkParams(20))
WORKED = BlockRace(ArrivalModel(50, 50), ObservationModel(3, 1), NetworkParams(60000))


def test_cost_matrix_cells():
    m = cost_matrix(CostModel(100.0, 2.0), 3)
    assert m[(Strategy.DO_NOTHING, Response.NOT_BURST)].cost == 0.0
    assert m[(Strategy.DO_NOTHING, Response.BURST)].cost == 100.0
    assert m[(Strategy.ACTION, Response.NOT_BURST)].cost == 6.0
    assert m[(Strategy.ACTION, Response.BURST)].cost == 106.0
    assert expected_row_cost(CostModel(100.0, 2.0), 3, Strategy.ACTION, 0.25) == pytest.approx(31.0)


def test_cost_model_validation():
    with pytest.raises(DomainError):
        CostModel(0.0)
    with pytest.raises(DomainError):
        CostModel(1.0, -1.0)


def test_burst_probability_dispatch():
    eng = DecisionEngine(TOY, 0.5, EXACT)
    assert burst_probability(Strategy.DO_NOTHING, eng) == eng.q0
    assert burst_probability(Strategy.ACTION, eng, 0) == pytest.approx(eng.q0, abs=1e-15)
    assert burst_probability(Strategy.ACTION, eng, 4) < eng.q0


def test_strategy_costs():
    s_noa, s_act = strategy_costs(CostModel(1e6, 0.0), 10, 0.1, 0.05)
    assert s_noa == pytest.approx(1e5)
    assert s_act == pytest.approx(5e4)
    s_noa, s_act = strategy_costs(CostModel(1e6, 1.0), 10, 0.1, 0.1)
    assert s_act > s_noa
    with pytest.raises(DomainError):
        strategy_costs(CostModel(1.0), 1, 1.5, 0.0)


def test_total_cost_limits():
    cm = CostModel(1000.0, 3.0)
    s_noa, s_act = strategy_costs(cm, 4, 0.6, 0.2)
    assert total_cost(cm, 4, 0.6, 0.2, 1.0) == pytest.approx(s_act)
    assert total_cost(cm, 4, 0.6, 0.2, 0.0) == pytest.approx(1000.0 * 0.6)
    assert total_cost(cm, 4, 0.6, 0.2, 0.5) == pytest.approx(0.5 * (s_act + s_noa))


def test_sweep_spec():
    assert SweepSpec.parse("0:10:3").values() == [0, 3, 6, 9, 10]
    assert SweepSpec.default(60000) == SweepSpec(0, 30000, 100)
    with pytest.raises(DomainError):
        SweepSpec.parse("0:10")
    with pytest.raises(DomainError):
        SweepSpec(5, 1, 1)


def test_optimize_no_alliance_benefit():
    eng = DecisionEngine(TOY, 0.0, EXACT)
    res = optimize_eta(CostModel(1000.0, 1.0), eng, SweepSpec(0, 10, 1))
    assert res.eta_threshold is None
    assert res.eta_argmin == 0


def test_optimize_free_alliance_takes_the_maximum():
    eng = DecisionEngine(TOY, 0.5, EXACT)
    res = optimize_eta(CostModel(1000.0, 0.0), eng, SweepSpec(0, 10, 1))
    assert res.eta_argmin == 10


def test_optimize_rho_zero_cost_nondecreasing():
    eng = DecisionEngine(TOY, 0.0, PAPER)
    res = optimize_eta(CostModel(1000.0, 2.0), eng, SweepSpec(0, 10, 1))
    costs = [c for _, c in res.cost_curve]
    assert all(b >= a for a, b in zip(costs, costs[1:]))


def test_feasibility_bound_vacuous():
    assert feasibility_bound(CostModel(1.0, 5.0), 0.5) is None
    eng = DecisionEngine(TOY, 0.5, PAPER)
    res = optimize_eta(CostModel(1.0, 5.0), eng, SweepSpec(0, 10, 1))
    assert res.notes and res.feasibility_bound is None


def test_optimize_rejects_out_of_range_sweep():
    eng = DecisionEngine(TOY, 0.5, PAPER)
    with pytest.raises(DomainError):
        optimize_eta(CostModel(1.0), eng, SweepSpec(0, 11, 1))


@pytest.mark.parametrize("mode", [PAPER, EXACT])
def test_worked_example_interior_optimum(mode):
    eng = DecisionEngine(WORKED, 0.7, mode)
    cm = CostModel(1e6, 0.001)
    res = optimize_eta(cm, eng, SweepSpec(0, 30000, 100))
    assert 0 < res.eta_argmin < 30000
    assert res.feasible
    curve = res.curve_dict()
    # locally convex-shaped around the optimum
    best = res.eta_argmin
    assert curve[best] <= min(curve.get(best - 1, curve[best]), curve.get(best + 1, curve[best]))
    neighbours = [e for e in curve if abs(e - best) >= 100]
    left = max(e for e in neighbours if e < best)
    right = min(e for e in neighbours if e > best)
    assert curve[left] > curve[best] and curve[right] > curve[best]
    # unit refinement never worsens the coarse answer
    coarse = min(curve[e] for e in range(0, 30001, 100))
    assert res.min_cost <= coarse
