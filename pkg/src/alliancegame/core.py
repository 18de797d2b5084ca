"""Probabilistic primitives of the memoryless block race.

Observation epochs are exponential, so the number of blocks an attacker adds
between two observations is geometric.  This module holds those laws, Poisson
point probabilities and tails, and the exact lattice dynamic program for the
first observation index at which the attacker's cumulative count reaches the
threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy import signal, special


class DomainError(ValueError):
    """An argument lies outside the domain of the operation."""


class ConvergenceError(RuntimeError):
    """An iterative computation cannot terminate for the given inputs."""


# ---------------------------------------------------------------------------
# model parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ArrivalModel:
    """Block production rates (blocks per unit time) of both players."""

    lambda_c: float
    lambda_g: float = 0.0

    def __post_init__(self):
        for name in ("lambda_c", "lambda_g"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise DomainError(f"{name} must be finite and >= 0, got {v!r}")


@dataclass(frozen=True)
class ObservationModel:
    """Means of the first observation time and of the inter-observation gaps."""

    mean_initial: float
    mean_interval: float

    def __post_init__(self):
        if not (math.isfinite(self.mean_initial) and self.mean_initial >= 0):
            raise DomainError(f"mean_initial must be >= 0, got {self.mean_initial!r}")
        if not (math.isfinite(self.mean_interval) and self.mean_interval > 0):
            raise DomainError(f"mean_interval must be > 0, got {self.mean_interval!r}")


@dataclass(frozen=True)
class NetworkParams:
    """Network size and the attacker-win block count.

    The threshold defaults to ``ceil(N / 2)``; the win event is ``C >= threshold``.
    """

    node_count: int
    threshold: Optional[int] = None

    def __post_init__(self):
        if int(self.node_count) != self.node_count or self.node_count < 2:
            raise DomainError(f"node_count must be an integer >= 2, got {self.node_count!r}")
        m = self.threshold
        if m is None:
            m = -(-int(self.node_count) // 2)
        if int(m) != m or not 1 <= m <= self.node_count:
            raise DomainError(f"threshold must be an integer in [1, N], got {m!r}")
        object.__setattr__(self, "node_count", int(self.node_count))
        object.__setattr__(self, "threshold", int(m))

    @property
    def half(self) -> float:
        return self.node_count / 2


# ---------------------------------------------------------------------------
# discrete laws
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GeometricLaw:
    """``P{X = k} = b * a**k`` for ``k >= 0``."""

    a: float
    b: float

    def __post_init__(self):
        if not (0 <= self.a < 1 and 0 < self.b <= 1):
            raise DomainError(f"need 0 <= a < 1 and 0 < b <= 1, got a={self.a!r}, b={self.b!r}")
        if abs(self.a + self.b - 1) > 1e-12:
            raise DomainError(f"a + b must equal 1, got {self.a + self.b!r}")

    @property
    def mean(self) -> float:
        return self.a / self.b

    def pmf(self, k):
        k = np.asarray(k)
        with np.errstate(under="ignore"):
            out = self.b * np.power(self.a, np.maximum(k, 0).astype(float))
        return np.where(k >= 0, out, 0.0)

    def sf(self, k):
        """``P{X >= k}``."""
        k = np.asarray(k)
        with np.errstate(under="ignore"):
            out = np.power(self.a, np.maximum(k, 0).astype(float))
        return np.where(k > 0, out, 1.0)


@dataclass(frozen=True)
class PointMass:
    value: int

    def __post_init__(self):
        if int(self.value) != self.value or self.value < 0:
            raise DomainError(f"point mass must sit on an integer >= 0, got {self.value!r}")

    @property
    def mean(self) -> float:
        return float(self.value)

    def pmf(self, k):
        return (np.asarray(k) == self.value).astype(float)

    def sf(self, k):
        return (np.asarray(k) <= self.value).astype(float)


@dataclass(frozen=True)
class FiniteLaw:
    """Law with finite support ``0..len(probs)-1``."""

    probs: tuple

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.size == 0 or np.any(p < 0) or abs(p.sum() - 1) > 1e-12:
            raise DomainError("probs must be a non-empty probability vector")
        object.__setattr__(self, "probs", tuple(float(x) for x in p))

    @property
    def mean(self) -> float:
        return float(np.dot(np.arange(len(self.probs)), self.probs))

    def pmf(self, k):
        k = np.asarray(k)
        p = np.asarray(self.probs)
        inside = (k >= 0) & (k < p.size)
        return np.where(inside, p[np.clip(k, 0, p.size - 1)], 0.0)

    def sf(self, k):
        k = np.asarray(k)
        p = np.asarray(self.probs)
        tail = np.concatenate([np.cumsum(p[::-1])[::-1], [0.0]])
        return tail[np.clip(k, 0, p.size)]


Law = Union[GeometricLaw, PointMass, FiniteLaw]


def as_law(obj) -> Law:
    """Accept a law, an integer (point mass) or a probability vector."""
    if isinstance(obj, (GeometricLaw, PointMass, FiniteLaw)):
        return obj
    if isinstance(obj, (int, np.integer)):
        return PointMass(int(obj))
    return FiniteLaw(tuple(obj))


def geometric_law(rate: float, mean_epoch: float) -> GeometricLaw:
    """Law of the Poisson(rate) count over an exponential epoch of the given mean."""
    if rate < 0 or mean_epoch < 0 or not (math.isfinite(rate) and math.isfinite(mean_epoch)):
        raise DomainError(f"rate and mean_epoch must be finite and >= 0, got {rate!r}, {mean_epoch!r}")
    m = rate * mean_epoch
    return GeometricLaw(a=m / (1 + m), b=1 / (1 + m))


def geometric_pmf(law: GeometricLaw, k: int) -> float:
    if k < 0:
        raise DomainError(f"k must be >= 0, got {k!r}")
    return law.b * law.a**k


def poisson_pmf(mean, k):
    """Poisson point probability, evaluated in log space."""
    mean = np.asarray(mean, dtype=float)
    k = np.asarray(k)
    if np.any(mean < 0):
        raise DomainError("mean must be >= 0")
    with np.errstate(divide="ignore", invalid="ignore"):
        logp = special.xlogy(k, mean) - mean - special.gammaln(k + 1.0)
        out = np.exp(logp)
    out = np.where(k < 0, 0.0, out)
    return float(out) if out.ndim == 0 else out


def poisson_sf(mean, k):
    """``P{X >= k}`` for ``X ~ Poisson(mean)``."""
    k = np.asarray(k)
    out = np.where(k <= 0, 1.0, special.pdtrc(np.maximum(k - 1, 0), mean))
    return float(out) if np.ndim(out) == 0 else out


def poisson_cdf(mean, k):
    """``P{X <= k}`` for ``X ~ Poisson(mean)``."""
    k = np.asarray(k)
    out = np.where(k < 0, 0.0, special.pdtr(np.maximum(k, 0), mean))
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# the block race
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BlockRace:
    """Everything the analytic layer needs about one attack scenario.

    ``initial`` is ``"geometric"`` (attacker count at the first observation is
    Poisson over an exponential epoch) or a fixed integer block count.
    """

    arrival: ArrivalModel
    observation: ObservationModel
    network: NetworkParams
    initial: Union[str, int] = "geometric"

    def __post_init__(self):
        if self.initial != "geometric" and not isinstance(self.initial, (int, np.integer)):
            raise DomainError(f"initial must be 'geometric' or an integer, got {self.initial!r}")

    @property
    def threshold(self) -> int:
        return self.network.threshold

    def increment_law(self) -> GeometricLaw:
        return geometric_law(self.arrival.lambda_c, self.observation.mean_interval)

    def initial_law(self) -> Law:
        if self.initial == "geometric":
            return geometric_law(self.arrival.lambda_c, self.observation.mean_initial)
        return PointMass(int(self.initial))

    @property
    def mean_increment(self) -> float:
        return self.arrival.lambda_c * self.observation.mean_interval


@dataclass(frozen=True)
class FirstPassageResult:
    """Exact law of the exit index and of the counts around it.

    ``occupancy[c]`` is the expected number of observations at which the count
    sits at ``c < threshold``; every joint quantity follows from it and the two
    laws.  ``pmf_nu`` is truncated once the residual mass drops below ``eps``;
    the remainder is ``truncation_mass``.
    """

    threshold: int
    initial: Law
    increment: Law
    pmf_nu: np.ndarray
    e_nu: float
    truncation_mass: float
    occupancy: np.ndarray = field(repr=False)
    support_cap: int = 0

    @property
    def p_nu0(self) -> float:
        return float(self.pmf_nu[0])

    @property
    def e_nu_from_occupancy(self) -> float:
        return float(math.fsum(self.occupancy)) if self.occupancy.size else 0.0

    def _sf_to_threshold(self) -> np.ndarray:
        c = np.arange(self.threshold)
        return self.increment.sf(self.threshold - c)

    @property
    def pmf_c_prev(self) -> np.ndarray:
        """``P{C_{nu-1} = c, nu >= 1}`` for ``c = 0..threshold-1``."""
        return self.occupancy * self._sf_to_threshold()

    @property
    def pmf_c_nu(self) -> np.ndarray:
        """``P{C_nu = threshold + o}`` for ``o = 0..support_cap-1``; top bucket holds the overflow."""
        M, K = self.threshold, self.support_cap
        o = np.arange(K)
        c = np.arange(M)
        inc = self.increment
        if isinstance(inc, GeometricLaw):
            crossing = float(np.dot(self.occupancy, inc.pmf(M - c)))
            with np.errstate(under="ignore"):
                out = crossing * np.power(inc.a, o.astype(float))
            out[-1] = crossing * inc.a ** (K - 1) / inc.b
        else:
            out = np.array([np.dot(self.occupancy, inc.pmf(M + x - c)) for x in o])
            out[-1] = np.dot(self.occupancy, inc.sf(M + K - 1 - c))
        out = out + self.initial.pmf(M + o)
        out[-1] += float(self.initial.sf(M + K)) if K else 0.0
        return out

    @property
    def e_c_nu(self) -> float:
        p = self.pmf_c_nu
        return float(np.dot(self.threshold + np.arange(p.size), p))

    @property
    def e_c_prev_given_action(self) -> float:
        """``E[C_{nu-1} | nu >= 1]``; ``nan`` when ``nu = 0`` almost surely."""
        p = self.pmf_c_prev
        mass = p.sum()
        return float(np.dot(np.arange(p.size), p) / mass) if mass > 0 else math.nan

    @property
    def p_cminus1(self) -> float:
        """``P{C_{nu-1} < threshold}``, i.e. a decision moment exists."""
        return float(math.fsum(self.pmf_c_prev))

    def joint_pre_post(self, max_cells: int = 2_000_000) -> dict:
        """Map ``(c_pre, c_post) -> probability``; ``c_pre`` is ``None`` for ``nu = 0``."""
        M, K = self.threshold, self.support_cap
        if (M + 1) * K > max_cells:
            raise ValueError(f"joint table of {(M + 1) * K} cells exceeds max_cells={max_cells}")
        out = {}
        top = M + K - 1
        for c in range(M):
            w = self.occupancy[c]
            if w == 0:
                continue
            ks = np.arange(M, M + K)
            probs = w * self.increment.pmf(ks - c)
            probs[-1] = w * self.increment.sf(top - c)
            for k, p in zip(ks, probs):
                if p > 0:
                    out[(c, int(k))] = float(p)
        for k in range(M, M + K):
            p = float(self.initial.pmf(k)) if k < top else float(self.initial.sf(top))
            if p > 0:
                out[(None, k)] = p
        return out

    def joint_by_step(self, max_nu: int) -> dict:
        """Map ``(nu, c_pre, c_post) -> probability`` for ``nu <= max_nu`` (no capping)."""
        M = self.threshold
        c = np.arange(M)
        head = self.increment.pmf(c)
        out = {}
        for k in range(M, M + self.support_cap):
            p = float(self.initial.pmf(k))
            if p > 0:
                out[(0, None, k)] = p
        d = self.initial.pmf(c).astype(float)
        for j in range(1, max_nu + 1):
            for cp in np.nonzero(d)[0]:
                for k in range(M, M + self.support_cap):
                    p = d[cp] * float(self.increment.pmf(k - cp))
                    if p > 0:
                        out[(j, int(cp), k)] = p
            d = np.convolve(d, head)[:M]
        return out


def _occupancy(d0: np.ndarray, inc: Law, M: int) -> np.ndarray:
    p0 = float(inc.pmf(0))
    if isinstance(inc, GeometricLaw):
        # renewal identity for geometric jumps: a*w[c] = d0[c] + b*P{C_0 < c}
        below = np.concatenate([[0.0], np.cumsum(d0)[:-1]])
        return (d0 + inc.b * below) / inc.a
    head = inc.pmf(np.arange(M))
    w = np.zeros(M)
    for x in range(M):
        w[x] = (d0[x] + np.dot(head[x:0:-1], w[:x])) / (1 - p0)
    return w


def _expected_steps(inc: Law, M: int) -> np.ndarray:
    """``T(c)`` = expected observations until absorption starting from count ``c``."""
    p0 = float(inc.pmf(0))
    T = np.zeros(M + 1)
    if isinstance(inc, GeometricLaw):
        # sum_{k>=1} b a^k T(c+k) carried backwards as a running sum
        run = 0.0
        for c in range(M - 1, -1, -1):
            run = inc.a * (inc.b * T[c + 1] + run)
            T[c] = (1 + run) / (1 - p0)
    else:
        head = inc.pmf(np.arange(1, M + 1))
        for c in range(M - 1, -1, -1):
            n = M - 1 - c
            T[c] = (1 + np.dot(head[:n], T[c + 1 : c + 1 + n])) / (1 - p0)
    return T[:M]


def first_passage(initial, increment, M: int, eps: float = 1e-12, max_steps: Optional[int] = None) -> FirstPassageResult:
    """Exit-index law for ``nu = inf{j : C_0 + J_1 + ... + J_j >= M}``.

    ``initial`` and ``increment`` accept a :class:`GeometricLaw`, a
    :class:`PointMass`/int or a finite probability vector.  The expected exit
    index comes from the backward recursion and is exact; the pmf of ``nu`` is
    iterated until both the residual mass and the residual contribution to the
    mean fall below ``eps``.
    """
    if int(M) != M or M < 1:
        raise DomainError(f"threshold must be an integer >= 1, got {M!r}")
    if not 0 < eps <= 1e-6:
        raise DomainError(f"eps must lie in (0, 1e-6], got {eps!r}")
    M = int(M)
    init = as_law(initial)
    inc = as_law(increment)
    if float(inc.pmf(0)) >= 1.0:
        raise ConvergenceError("increment law is degenerate at 0; the threshold is never reached")

    c = np.arange(M)
    d0 = np.asarray(init.pmf(c), dtype=float)
    occupancy = _occupancy(d0, inc, M)
    T = _expected_steps(inc, M)
    e_nu = float(math.fsum(d0 * T))

    sf_to_m = inc.sf(M - c)
    head = inc.pmf(c)
    geometric = isinstance(inc, GeometricLaw)
    if max_steps is None:
        max_steps = int(200 * (e_nu + 10)) + 10_000

    pmf = [float(init.sf(M))]
    d = d0
    weighted = 0.0
    residual = float(d.sum())
    j = 0
    while j < max_steps:
        tail = e_nu - weighted
        if residual < eps and tail <= eps * max(1.0, e_nu):
            break
        j += 1
        absorbed = float(np.dot(d, sf_to_m))
        if geometric:
            d = signal.lfilter([inc.b], [1.0, -inc.a], d)
        else:
            d = np.convolve(d, head)[:M]
        # the recursive filter amplifies rounding by 1/b; pin the surviving mass
        target = residual - absorbed
        total = float(d.sum())
        if total > 0 and target > 0:
            d *= target / total
        pmf.append(absorbed)
        weighted += j * absorbed
        residual = float(d.sum())

    pmf_nu = np.asarray(pmf)
    occupancy.setflags(write=False)
    pmf_nu.setflags(write=False)
    cap = 64 * (math.ceil(inc.mean) + 1)
    return FirstPassageResult(
        threshold=M,
        initial=init,
        increment=inc,
        pmf_nu=pmf_nu,
        e_nu=e_nu,
        truncation_mass=max(residual, 0.0),
        occupancy=occupancy,
        support_cap=cap,
    )


def race_first_passage(race: BlockRace, eps: float = 1e-12) -> FirstPassageResult:
    return first_passage(race.initial_law(), race.increment_law(), race.threshold, eps=eps)
