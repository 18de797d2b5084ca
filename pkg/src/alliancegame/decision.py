"""Decision parameters: exit-index mean, decision moment, block marginals and
the burst/safety probabilities, each by the exact lattice DP and by the
Poisson approximations used in the linear-programming practice.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy import stats

from .core import BlockRace, DomainError, FirstPassageResult, GeometricLaw, NetworkParams, PointMass
from .core import geometric_law, poisson_cdf, poisson_sf, race_first_passage

EXACT = "exact-dp"
PAPER = "paper-approx"
EXPERIMENTAL = "closed-form-experimental"
MODES = (EXACT, PAPER)


@dataclass(frozen=True)
class AllianceConfig:
    """``eta`` reserved members, each accepting a request with probability ``rho``."""

    eta: int = 0
    rho: float = 0.0

    def __post_init__(self):
        if int(self.eta) != self.eta or self.eta < 0:
            raise DomainError(f"eta must be an integer >= 0, got {self.eta!r}")
        if not 0 <= self.rho <= 1:
            raise DomainError(f"rho must lie in [0, 1], got {self.rho!r}")
        object.__setattr__(self, "eta", int(self.eta))

    def check_network(self, network: NetworkParams) -> None:
        if self.eta > -(-network.node_count // 2):
            raise DomainError(f"eta={self.eta} exceeds ceil(N/2)={-(-network.node_count // 2)}")

    @property
    def mean_accepted(self) -> float:
        return self.eta * self.rho

    def pmf(self) -> np.ndarray:
        """``P{B = j}`` for ``j = 0..eta``."""
        if self.rho == 0:
            out = np.zeros(self.eta + 1)
            out[0] = 1.0
            return out
        if self.rho == 1:
            out = np.zeros(self.eta + 1)
            out[-1] = 1.0
            return out
        return stats.binom.pmf(np.arange(self.eta + 1), self.eta, self.rho)


@dataclass(frozen=True)
class DecisionReport:
    e_nu: float
    e_t_prev: float
    e_c_nu: float
    e_c_nu_minus_b: float
    e_c_prev: float
    q0: float
    q1_eta: float
    p_cminus1: float
    method_tag: str
    notes: tuple = ()

    def as_dict(self) -> dict:
        return asdict(self)


def sigma_eta(alliance: AllianceConfig, b: float) -> float:
    """``E[b ** -B]`` for ``B ~ Binomial(eta, rho)``."""
    if b == 0:
        raise DomainError("sigma_eta is undefined at b = 0")
    if b < 0:
        raise DomainError(f"b must be > 0, got {b!r}")
    return (alliance.rho / b + (1 - alliance.rho)) ** alliance.eta


# ---------------------------------------------------------------------------
# exit index and decision moment
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NuEstimate:
    value: float
    method: str = EXACT
    experimental: Optional[float] = None
    experimental_residual: Optional[float] = None
    note: str = ""


def expected_nu(race: BlockRace, experimental: bool = False, fp: Optional[FirstPassageResult] = None) -> NuEstimate:
    """Exact ``E[nu]``; ``experimental`` adds the closed-form value and its residual."""
    if race.arrival.lambda_c == 0:
        init = race.initial_law()
        value = 0.0 if float(init.sf(race.threshold)) == 1.0 else math.inf
        return NuEstimate(value, note="no attacker arrivals")
    fp = fp or race_first_passage(race)
    est = NuEstimate(fp.e_nu)
    if not experimental:
        return est
    value = closed_form_expected_nu(race)
    if not math.isfinite(value):
        return NuEstimate(fp.e_nu, experimental=value, note="closed-form path did not produce a finite value")
    return NuEstimate(fp.e_nu, experimental=value, experimental_residual=abs(value - fp.e_nu))


def decision_moment(e_nu: float, mean_initial: float, mean_interval: float):
    """``E[t_0] + E[U](E[nu] - 1)``.  Returns ``(value, degenerate)``."""
    if e_nu < 1:
        return mean_initial, True
    return mean_initial + mean_interval * (e_nu - 1), False


def exact_decision_moment(race: BlockRace, fp: FirstPassageResult) -> float:
    """``E[t_{nu-1}] = sum_i E[U_i; nu > i]`` with ``t_{-1} = 0``.

    Epoch length and the blocks inside it are correlated, so this differs from
    :func:`decision_moment`.  Needs geometric increments from exponential epochs.
    """
    M = race.threshold
    inc = race.increment_law()
    k = np.arange(M)
    # E[U; J = k] = mean_interval * (k + 1) * b^2 * a^k
    with np.errstate(under="ignore"):
        part = race.observation.mean_interval * np.cumsum((k + 1) * inc.b**2 * np.power(inc.a, k.astype(float)))
    steps = float(np.dot(fp.occupancy, part[M - 1 - k]))
    init = fp.initial
    if isinstance(init, GeometricLaw):
        with np.errstate(under="ignore"):
            first = race.observation.mean_initial * float(np.sum((k + 1) * init.b**2 * np.power(init.a, k.astype(float))))
    else:
        first = race.observation.mean_initial * float(init.sf(0) - init.sf(M))
    return first + steps


def block_marginals(e_nu: float, e_c0: float, e_j: float, alliance: AllianceConfig):
    """``(E[C_nu], E[C_{nu-1}], E[C_nu - B])`` from the conditional-mean formulas."""
    if e_j == 0:
        return e_c0, e_c0, e_c0 - alliance.mean_accepted
    c_nu = e_c0 + max(e_nu - 1, 0.0) * e_j
    c_prev = e_c0 + max(e_nu - 2, 0.0) * e_j
    return c_nu, c_prev, c_nu - alliance.mean_accepted


# ---------------------------------------------------------------------------
# burst / safety probabilities
# ---------------------------------------------------------------------------


def poisson_mean(race: BlockRace, e_nu: float) -> float:
    """``lambda_c (E[t_0] + E[nu - 1] E[U])``, the Poisson mean of the approximations."""
    lam = race.arrival.lambda_c
    if lam == 0:
        return 0.0
    return lam * (race.observation.mean_initial + max(e_nu - 1, 0.0) * race.observation.mean_interval)


def _c_nu_minus_b(fp: FirstPassageResult, alliance: AllianceConfig):
    conv = np.convolve(fp.pmf_c_nu, alliance.pmf()[::-1])
    k = fp.threshold - alliance.eta + np.arange(conv.size)
    return k, conv


def pmf_c_nu_minus_b(fp: FirstPassageResult, alliance: AllianceConfig, node_count: int) -> np.ndarray:
    """``P{C_nu - B = k}`` for ``k = 0..N``; the last entry is the remainder ``1 - sum_{k<N}``."""
    k, conv = _c_nu_minus_b(fp, alliance)
    out = np.zeros(node_count + 1)
    below = (k >= 0) & (k < node_count)
    np.add.at(out, np.clip(k[below], 0, node_count), conv[below])
    out[0] += conv[k < 0].sum()
    out[node_count] = max(1.0 - math.fsum(out[:node_count]), 0.0)
    return out


def q0(race: BlockRace, e_nu: float, mode: str = PAPER, fp: Optional[FirstPassageResult] = None) -> float:
    """Burst probability without alliance.

    ``paper-approx``: Poisson tail at the threshold.  ``exact-dp``: the literal
    ``P{C_nu >= M}``, which is the probability that the exit index is finite.
    """
    if mode == PAPER:
        return poisson_sf(poisson_mean(race, e_nu), race.threshold)
    if mode == EXACT:
        if race.arrival.lambda_c == 0:
            return float(race.initial_law().sf(race.threshold))
        fp = fp or race_first_passage(race)
        return min(float(math.fsum(fp.pmf_c_nu)), 1.0)
    raise DomainError(f"unknown mode {mode!r}")


def q1_eta(race: BlockRace, e_nu: float, alliance: AllianceConfig, mode: str = PAPER, fp: Optional[FirstPassageResult] = None) -> float:
    """Burst probability when ``B ~ Binomial(eta, rho)`` blocks are offset by the alliance."""
    if mode == PAPER:
        mean = poisson_mean(race, e_nu)
        pb = alliance.pmf()
        j = np.nonzero(pb)[0]
        tails = poisson_sf(mean, race.threshold + j)
        return float(math.fsum(np.atleast_1d(pb[j] * tails)))
    if mode == EXACT:
        if race.arrival.lambda_c == 0:
            # no arrivals: only an initial count already at the threshold can burst
            init = race.initial_law()
            if isinstance(init, PointMass):
                pb = alliance.pmf()
                return float(math.fsum(pb[: max(init.value - race.threshold + 1, 0)]))
            return q0(race, e_nu, EXACT)
        fp = fp or race_first_passage(race)
        k, conv = _c_nu_minus_b(fp, alliance)
        return min(float(math.fsum(conv[k >= race.threshold])), 1.0)
    raise DomainError(f"unknown mode {mode!r}")


def p_cminus1(race: BlockRace, e_nu: float, mode: str = PAPER, fp: Optional[FirstPassageResult] = None) -> float:
    """``P{C_{nu-1} < N/2}``: the attacker has not won by the decision moment."""
    if mode == PAPER:
        upper = math.floor(race.network.half - race.mean_increment)
        if upper < 0:
            return 0.0
        return poisson_cdf(poisson_mean(race, e_nu), upper)
    if mode == EXACT:
        if race.arrival.lambda_c == 0:
            return float(1.0 - race.initial_law().sf(race.threshold))
        fp = fp or race_first_passage(race)
        return fp.p_cminus1
    raise DomainError(f"unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# closed-form pgf of nu (experimental; literal transcription)
# ---------------------------------------------------------------------------


def _xi(m: int, ratio_den: float) -> float:
    """sum_{u<=m} m!/(m-u)! * prod_{l<=m} l! / (1 - ratio); zero for m < 0."""
    if m < 0:
        return 0.0
    falling = math.fsum(math.factorial(m) / math.factorial(m - u) for u in range(m + 1))
    prod = 1.0
    for l in range(1, m + 1):
        prod *= math.factorial(l) / (1 - ratio_den)
    return falling * prod


def closed_form_pgf_nu(zeta: float, race: BlockRace) -> float:
    """``R1 + R2 - R3`` from the literal memoryless closed form; ``nan`` when it breaks down."""
    M = race.threshold
    lam_c, lam_g = race.arrival.lambda_c, race.arrival.lambda_g
    a0m, am = race.observation.mean_initial, race.observation.mean_interval
    c = geometric_law(lam_c, am)
    c0 = geometric_law(lam_c, a0m)
    g = geometric_law(lam_g, am)
    g0 = geometric_law(lam_g, a0m)
    try:
        xi0 = lambda m: _xi(m, c.a / (1 - c.b * g.b))
        xiz = lambda m: _xi(m, g0.a / (1 - zeta * c0.b * g0.b))
        kk = g.a * c.b * g.b / (1 - c.b * g.b)
        geo_c0 = math.fsum(c0.a**l for l in range(M + 1))
        r1 = kk * xi0(M) * (1 - c.b + c.b * geo_c0) - xi0(M) * (c0.b / g.a) * math.fsum(
            (1 + kk) ** (k + 1) for k in range(M + 1)
        ) * geo_c0
        den2 = c0.a * (1 - c.b * g.b - c.a) - g.a * (c.a + 1)
        r2 = (zeta * c0.b * c.b * g0.b / den2) * math.fsum(
            g0.a**l
            * (xiz(M - l) - g.a * xiz(M - l - 1))
            * math.fsum(math.comb(j, l) * (1 / g0.a) ** (j + 1) for j in range(l, M + 1))
            for l in range(M + 1)
        )
        den3 = (1 - c.b * g.b - c.a) - g.a * (c.a + 1)
        r3a = (zeta * c.b * c0.b**2 / den3) * math.fsum(
            g0.a ** (h - 1)
            * math.fsum(math.comb(k, h) * (c0.a / g0.a) ** k for k in range(h, M + 1))
            * (xiz(M - h) - g.a * xiz(M - h - 1))
            for h in range(M + 1)
        )
        r3b = (zeta * c0.b * g0.b * c.b**2 / (c0.a * (1 - c.a))) * (1 / ((1 - c.b * g.b) - c.a - g.a * (1 - c.a)))
        r3b *= math.fsum(
            g0.a**h
            * math.fsum(
                math.comb(k, h) * (c0.a / g0.a) ** (k + 1) * (xi0(M - h) - g.a**k * xiz(M - h - 1))
                for k in range(h, M + 1)
            )
            for h in range(M + 1)
        )
        out = r1 + r2 - (r3a + r3b)
    except (ZeroDivisionError, OverflowError, ValueError):
        return math.nan
    return out if math.isfinite(out) else math.nan


def closed_form_expected_nu(race: BlockRace, h: float = 1e-6) -> float:
    """Derivative of :func:`closed_form_pgf_nu` at ``zeta = 1`` by central difference."""
    hi = closed_form_pgf_nu(1 + h, race)
    lo = closed_form_pgf_nu(1 - h, race)
    if not (math.isfinite(hi) and math.isfinite(lo)):
        return math.nan
    return (hi - lo) / (2 * h)


# ---------------------------------------------------------------------------
# engine with caching for sweeps
# ---------------------------------------------------------------------------


class DecisionEngine:
    """Computes the decision quantities for one race; ``q1(eta)`` is cached for sweeps."""

    def __init__(self, race: BlockRace, rho: float, mode: str = PAPER, experimental: bool = False):
        if mode not in MODES:
            raise DomainError(f"mode must be one of {MODES}, got {mode!r}")
        self.race = race
        self.rho = rho
        self.mode = mode
        self.fp = None
        if race.arrival.lambda_c > 0:
            self.fp = race_first_passage(race)
        self.nu = expected_nu(race, experimental=experimental, fp=self.fp)
        self.e_nu = self.nu.value
        self.q0 = q0(race, self.e_nu, mode, self.fp)
        self.p_cminus1 = p_cminus1(race, self.e_nu, mode, self.fp)
        self._q1 = lru_cache(maxsize=None)(self._q1_uncached)

    def _q1_uncached(self, eta: int) -> float:
        return q1_eta(self.race, self.e_nu, AllianceConfig(eta, self.rho), self.mode, self.fp)

    def q1(self, eta: int) -> float:
        return self._q1(int(eta))

    def report(self, eta: int) -> DecisionReport:
        alliance = AllianceConfig(eta, self.rho)
        alliance.check_network(self.race.network)
        race = self.race
        notes = []
        if self.nu.experimental is not None:
            notes.append(f"closed-form E[nu]={self.nu.experimental!r} residual={self.nu.experimental_residual!r}")
        if self.nu.note:
            notes.append(self.nu.note)
        e_c0 = race.initial_law().mean
        if self.mode == PAPER or self.fp is None:
            t_prev, degenerate = decision_moment(self.e_nu, race.observation.mean_initial, race.observation.mean_interval)
            if degenerate:
                notes.append("E[nu] < 1: decision moment degenerates to E[t_0]")
            c_nu, c_prev, c_nu_b = block_marginals(self.e_nu, e_c0, race.mean_increment, alliance)
        else:
            t_prev = exact_decision_moment(race, self.fp)
            c_nu = self.fp.e_c_nu
            c_prev = self.fp.e_c_prev_given_action
            c_nu_b = c_nu - alliance.mean_accepted
        return DecisionReport(
            e_nu=self.e_nu,
            e_t_prev=t_prev,
            e_c_nu=c_nu,
            e_c_nu_minus_b=c_nu_b,
            e_c_prev=c_prev,
            q0=self.q0,
            q1_eta=self.q1(eta),
            p_cminus1=self.p_cminus1,
            method_tag=self.mode,
            notes=tuple(notes),
        )
