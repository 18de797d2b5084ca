"""Two-strategy alliance game: cost matrix, strategy costs, total cost and the
search for the alliance size that minimises it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, List, Optional, Tuple

from .core import DomainError


class Strategy(Enum):
    DO_NOTHING = "DoNothing"
    ACTION = "Action"


class Response(Enum):
    NOT_BURST = "NotBurst"
    BURST = "Burst"


@dataclass(frozen=True)
class CostModel:
    """Token value at risk and the linear per-member alliance cost (USD)."""

    token_value: float
    member_cost: float = 0.0

    def __post_init__(self):
        if not self.token_value > 0:
            raise DomainError(f"token_value must be > 0, got {self.token_value!r}")
        if not self.member_cost >= 0:
            raise DomainError(f"member_cost must be >= 0, got {self.member_cost!r}")

    def alliance_cost(self, eta: int) -> float:
        return self.member_cost * eta

    def scaled(self, factor: float) -> "CostModel":
        return CostModel(self.token_value * factor, self.member_cost * factor)


@dataclass(frozen=True)
class StrategyOutcome:
    strategy: Strategy
    response: Response
    cost: float


def cost_matrix(cost_model: CostModel, eta: int) -> dict:
    """The four cells keyed by ``(Strategy, Response)``."""
    c = cost_model.alliance_cost(eta)
    V = cost_model.token_value
    cells = {
        (Strategy.DO_NOTHING, Response.NOT_BURST): 0.0,
        (Strategy.DO_NOTHING, Response.BURST): V,
        (Strategy.ACTION, Response.NOT_BURST): c,
        (Strategy.ACTION, Response.BURST): c + V,
    }
    return {k: StrategyOutcome(k[0], k[1], v) for k, v in cells.items()}


def expected_row_cost(cost_model: CostModel, eta: int, strategy: Strategy, burst: float) -> float:
    m = cost_matrix(cost_model, eta)
    return (1 - burst) * m[(strategy, Response.NOT_BURST)].cost + burst * m[(strategy, Response.BURST)].cost


def burst_probability(strategy: Strategy, engine, eta: int = 0) -> float:
    if strategy is Strategy.DO_NOTHING:
        return engine.q0
    if strategy is Strategy.ACTION:
        return engine.q1(eta)
    raise DomainError(f"unknown strategy {strategy!r}")


def _check_prob(name, p):
    if not 0 <= p <= 1 + 1e-12:
        raise DomainError(f"{name} must lie in [0, 1], got {p!r}")


def strategy_costs(cost_model: CostModel, eta: int, q0: float, q1: float) -> Tuple[float, float]:
    """``(S_NoA, S_Act) = (V q0, c(eta) + V q1)``."""
    _check_prob("q0", q0)
    _check_prob("q1", q1)
    return cost_model.token_value * q0, cost_model.alliance_cost(eta) + cost_model.token_value * q1


def total_cost(cost_model: CostModel, eta: int, q0: float, q1: float, p_cminus1: float) -> float:
    """Act at the decision moment when it exists, otherwise bear the no-action cost."""
    _check_prob("p_cminus1", p_cminus1)
    s_noa, s_act = strategy_costs(cost_model, eta, q0, q1)
    return s_act * p_cminus1 + s_noa * (1 - p_cminus1)


@dataclass(frozen=True)
class SweepSpec:
    start: int
    stop: int
    step: int
    refine: bool = True

    def __post_init__(self):
        if self.step < 1 or self.start < 0 or self.stop < self.start:
            raise DomainError(f"invalid sweep {self.start}:{self.stop}:{self.step}")

    @classmethod
    def default(cls, node_count: int) -> "SweepSpec":
        return cls(0, -(-node_count // 2), max(1, -(-node_count // 600)))

    @classmethod
    def parse(cls, text: str, refine: bool = True) -> "SweepSpec":
        try:
            a, b, c = (int(x) for x in text.split(":"))
        except ValueError:
            raise DomainError(f"eta range must look like A:B:STEP, got {text!r}") from None
        return cls(a, b, c, refine)

    def values(self) -> List[int]:
        out = list(range(self.start, self.stop + 1, self.step))
        if out[-1] != self.stop:
            out.append(self.stop)
        return out


@dataclass
class OptimizationResult:
    eta_threshold: Optional[int]
    eta_argmin: int
    min_cost: float
    cost_curve: List[Tuple[int, float]]
    feasible: bool
    feasibility_bound: Optional[float]
    notes: List[str] = field(default_factory=list)

    def curve_dict(self) -> dict:
        return dict(self.cost_curve)


def feasibility_bound(cost_model: CostModel, q0: float) -> Optional[float]:
    """Lower bound on eta, ``c / (V q0 - c)`` with ``c`` the per-member cost; ``None`` if vacuous."""
    c = cost_model.member_cost
    den = cost_model.token_value * q0 - c
    if den <= 0:
        return None
    return c / den


def optimize_eta(cost_model: CostModel, engine, sweep: SweepSpec) -> OptimizationResult:
    """Sweep the alliance size, then refine to unit steps around the coarse optimum.

    The headline answer is the cost-curve argmin (ties go to the smaller eta).
    ``eta_threshold`` is the smallest positive eta whose action cost does not
    exceed the no-action cost, or ``None`` if no swept eta qualifies.
    """
    network = engine.race.network
    upper = -(-network.node_count // 2)
    if sweep.stop > upper:
        raise DomainError(f"sweep stop {sweep.stop} exceeds ceil(N/2)={upper}")
    etas = sweep.values()
    if not etas:
        raise DomainError("empty sweep")
    q0, p = engine.q0, engine.p_cminus1
    s_noa = cost_model.token_value * q0

    curve = {}

    def evaluate(eta):
        if eta not in curve:
            curve[eta] = total_cost(cost_model, eta, q0, engine.q1(eta), p)
        return curve[eta]

    for eta in etas:
        evaluate(eta)
    best = min(etas, key=lambda e: (curve[e], e))
    threshold = next((e for e in etas if e > 0 and s_noa >= strategy_costs(cost_model, e, q0, engine.q1(e))[1]), None)
    if sweep.refine and sweep.step > 1:
        lo, hi = max(sweep.start, best - sweep.step), min(sweep.stop, best + sweep.step)
        for eta in range(lo, hi + 1):
            evaluate(eta)
        window = range(lo, hi + 1)
        best = min(window, key=lambda e: (curve[e], e))
        if threshold is not None:
            prev = threshold - sweep.step
            for eta in range(max(prev + 1, 1), threshold):
                if s_noa >= strategy_costs(cost_model, eta, q0, engine.q1(eta))[1]:
                    threshold = eta
                    break
    notes = []
    bound = feasibility_bound(cost_model, q0)
    if bound is None:
        notes.append("V*q0 <= member cost: the lower-bound constraint is vacuous")
        feasible = best <= network.half
    else:
        feasible = bound <= best <= network.half
    ordered = sorted(curve.items())
    return OptimizationResult(
        eta_threshold=threshold,
        eta_argmin=best,
        min_cost=curve[best],
        cost_curve=ordered,
        feasible=feasible,
        feasibility_bound=bound,
        notes=notes,
    )
