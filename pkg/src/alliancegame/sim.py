"""Event-level Monte Carlo of the block race.

Random streams
--------------
Every replication owns an independent Philox4x64-10 stream (numpy's
``np.random.Philox``), counter starting at zero, keyed by::

    k0 = splitmix64(master_seed)
    k1 = splitmix64(k0 XOR replication_index)

where ``splitmix64(x)`` is the SplitMix64 finaliser applied to
``x + 0x9E3779B97F4A7C15 (mod 2**64)``.  A replication therefore depends only on
``(master_seed, index)``: results do not change with the number of worker
processes or the order replications are run in.

Within a replication the draws are, in order: one uniform for the accepted
alliance count (inverse CDF), the first observation time, then chunks of
observation gaps (sizes doubling from a base fixed by the threshold and rates,
never by the alliance).  After each gap chunk the attacker's and then the
genuine player's arrival times are extended, as cumulative sums of exponential
inter-arrival gaps, far enough to cover the chunk.  Block counts per epoch are
arrival counts, so the per-epoch increments are Poisson given the epoch length.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from typing import Iterable, List, Optional, Sequence, Union

import numpy as np
from scipy import stats

from .core import BlockRace
from .decision import AllianceConfig

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    z = (x + GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def replication_key(master_seed: int, index: int) -> tuple:
    k0 = splitmix64(master_seed & MASK64)
    return k0, splitmix64(k0 ^ (index & MASK64))


def replication_rng(master_seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=list(replication_key(master_seed, index))))


class StreamFactory:
    """Re-keys one Philox generator per replication (cheaper than building a new one)."""

    def __init__(self, master_seed: int):
        self.master_seed = master_seed
        self._bits = np.random.Philox(key=[0, 0])
        self._gen = np.random.Generator(self._bits)

    def __call__(self, index: int) -> np.random.Generator:
        self._bits.state = {
            "bit_generator": "Philox",
            "state": {"counter": np.zeros(4, np.uint64), "key": np.array(replication_key(self.master_seed, index), np.uint64)},
            "buffer": np.zeros(4, np.uint64),
            "buffer_pos": 4,
            "has_uint32": 0,
            "uinteger": 0,
        }
        return self._gen


@dataclass(frozen=True)
class SimConfig:
    master_seed: int = 20190704
    replications: int = 10_000
    max_observations: Optional[int] = None
    request_policy: str = "nu-1"
    genuine_initial: Union[str, int] = 0
    jobs: int = 1

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.max_observations is not None and self.max_observations < 1:
            raise ValueError("max_observations must be >= 1")
        if self.request_policy != "nu-1":
            raise ValueError("only the 'nu-1' request policy is supported")
        if not (self.genuine_initial == "mirror" or (isinstance(self.genuine_initial, int) and self.genuine_initial >= 0)):
            raise ValueError("genuine_initial must be 'mirror' or an integer >= 0")
        if not 0 <= self.master_seed <= MASK64:
            raise ValueError("master_seed must be an unsigned 64-bit integer")

    def horizon(self, race: BlockRace) -> int:
        if self.max_observations is not None:
            return self.max_observations
        m = race.mean_increment or race.arrival.lambda_g * race.observation.mean_interval
        if m == 0:
            return 1000
        return int(math.ceil(50 * race.threshold / m)) + 1000


@dataclass
class ReplicationOutcome:
    """Exit indexes are observation counts; ``None`` means censored at the horizon."""

    index: int
    nu: Optional[int]
    nu1: Optional[int]
    nu2: Optional[int]
    mu: Optional[int]
    mu1: Optional[int]
    c_prev: Optional[int]
    c_at_nu: Optional[int]
    b_drawn: int
    t_prev: Optional[float]
    t_nu: Optional[float]
    confined_win: bool
    observations: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


class ArrivalProcess:
    """Homogeneous Poisson arrivals, generated lazily and counted at given times."""

    def __init__(self, rng: np.random.Generator, rate: float):
        self.rng = rng
        self.rate = rate
        self.times = np.empty(0)
        self.dropped = 0
        self.last = 0.0

    def counts(self, t: np.ndarray) -> np.ndarray:
        """Number of arrivals in ``[0, t]`` for ascending ``t``."""
        if self.rate == 0:
            return np.zeros(len(t), dtype=np.int64)
        horizon = t[-1]
        parts = [self.times]
        while self.last <= horizon:
            n = int(self.rate * (horizon - self.last) * 1.1) + 16
            new = self.last + self.rng.exponential(1.0 / self.rate, n).cumsum()
            parts.append(new)
            self.last = float(new[-1])
        times = np.concatenate(parts) if len(parts) > 1 else self.times
        out = times.searchsorted(t, side="right")
        # arrivals before the last requested time are no longer needed
        keep = out[-1]
        self.times = times[keep:]
        res = out + self.dropped
        self.dropped += keep
        return res


def sample_increments(rng: np.random.Generator, rate: float, mean_epoch: float, n: int) -> np.ndarray:
    """``n`` arrival counts over independent exponential epochs, the simulator's increment law."""
    epochs = rng.exponential(mean_epoch, n).cumsum()
    counts = ArrivalProcess(rng, rate).counts(epochs)
    return np.diff(counts, prepend=0)


def _chunk_base(race: BlockRace, horizon: int) -> int:
    rates = [r * race.observation.mean_interval for r in (race.arrival.lambda_c, race.arrival.lambda_g) if r > 0]
    if not rates:
        return min(horizon, 64)
    return min(horizon, int(math.ceil(1.25 * race.threshold / min(rates))) + 16)


def binomial_cdf(alliance: AllianceConfig) -> np.ndarray:
    if alliance.eta == 0 or alliance.rho in (0.0, 1.0):
        out = np.ones(alliance.eta + 1)
        if alliance.rho == 1.0 and alliance.eta > 0:
            out[:-1] = 0.0
        return out
    return stats.binom.cdf(np.arange(alliance.eta + 1), alliance.eta, alliance.rho)


def simulate_once(
    race: BlockRace,
    alliance: AllianceConfig,
    rng: np.random.Generator,
    horizon: int,
    genuine_initial: Union[str, int] = 0,
    b_cdf: Optional[np.ndarray] = None,
    index: int = 0,
) -> ReplicationOutcome:
    M = race.threshold
    eta = alliance.eta
    lam_c, lam_g = race.arrival.lambda_c, race.arrival.lambda_g
    mean0, mean = race.observation.mean_initial, race.observation.mean_interval
    if b_cdf is None:
        b_cdf = binomial_cdf(alliance)

    # inverse-CDF draw keeps B monotone in eta and rho under common random numbers
    u = rng.random()
    B = min(int(b_cdf.searchsorted(u, side="right")), eta)
    t0 = float(rng.exponential(mean0)) if mean0 > 0 else 0.0
    attacker = ArrivalProcess(rng, lam_c)
    genuine = ArrivalProcess(rng, lam_g)
    t0_arr = np.array([t0])
    n_c0 = int(attacker.counts(t0_arr)[0])
    n_g0 = int(genuine.counts(t0_arr)[0])
    c_shift = 0 if race.initial == "geometric" else int(race.initial) - n_c0
    g_shift = (0 if genuine_initial == "mirror" else int(genuine_initial)) - (n_g0 if genuine_initial != "mirror" else 0)
    c0, g0 = n_c0 + c_shift, n_g0 + g_shift

    c_levels = {"nu1": M - eta, "nu": M, "nu2": M + B}
    g_levels = {"mu1": M - B, "mu": M}
    hit = {}
    for name, level in c_levels.items():
        if c0 >= level:
            hit[name] = 0
        elif lam_c == 0:
            hit[name] = None
    for name, level in g_levels.items():
        if g0 >= level:
            hit[name] = 0
        elif lam_g == 0:
            hit[name] = None

    c_prev = None
    c_at_nu = c0 if hit.get("nu") == 0 else None
    t_prev = 0.0 if hit.get("nu") == 0 else None
    t_nu = t0 if hit.get("nu") == 0 else None

    done = 0
    size = _chunk_base(race, horizon)
    c_last, t_last = c0, t0
    while len(hit) < 5 and done < horizon:
        n = min(size, horizon - done)
        T = t_last + rng.exponential(mean, n).cumsum()
        C = attacker.counts(T) + c_shift
        G = genuine.counts(T) + g_shift
        for name, level in c_levels.items():
            if name in hit:
                continue
            i = int(C.searchsorted(level, side="left"))
            if i < n:
                hit[name] = done + i + 1
                if name == "nu":
                    c_at_nu = int(C[i])
                    c_prev = int(C[i - 1]) if i > 0 else int(c_last)
                    t_nu = float(T[i])
                    t_prev = float(T[i - 1]) if i > 0 else float(t_last)
        for name, level in g_levels.items():
            if name in hit:
                continue
            i = int(G.searchsorted(level, side="left"))
            if i < n:
                hit[name] = done + i + 1
        c_last, t_last = int(C[-1]), float(T[-1])
        done += n
        size *= 2

    nu, nu2, mu = (hit.get(k) for k in ("nu", "nu2", "mu"))
    as_num = lambda x: math.inf if x is None else x
    confined = nu is not None and as_num(nu) <= as_num(nu2) < as_num(mu)
    return ReplicationOutcome(
        index=index,
        nu=nu,
        nu1=hit.get("nu1"),
        nu2=nu2,
        mu=mu,
        mu1=hit.get("mu1"),
        c_prev=c_prev,
        c_at_nu=c_at_nu,
        b_drawn=B,
        t_prev=t_prev,
        t_nu=t_nu,
        confined_win=bool(confined),
        observations=done,
    )


def _simulate_range(args) -> List[ReplicationOutcome]:
    race, alliance, config, lo, hi = args
    horizon = config.horizon(race)
    b_cdf = binomial_cdf(alliance)
    streams = StreamFactory(config.master_seed)
    return [
        simulate_once(race, alliance, streams(i), horizon, config.genuine_initial, b_cdf, index=i)
        for i in range(lo, hi)
    ]


def run(race: BlockRace, alliance: AllianceConfig, config: SimConfig, jobs: Optional[int] = None) -> List[ReplicationOutcome]:
    """All replications, ordered by index."""
    jobs = config.jobs if jobs is None else jobs
    n = config.replications
    if jobs <= 1:
        return _simulate_range((race, alliance, config, 0, n))
    bounds = np.linspace(0, n, 4 * jobs + 1).astype(int)
    tasks = [(race, alliance, config, int(lo), int(hi)) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        parts = list(pool.map(_simulate_range, tasks))
    return [o for part in parts for o in part]

def write_trace(outcomes: Iterable[ReplicationOutcome], path) -> None:
    with open(path, "w") as fh:
        for o in outcomes:
            fh.write(o.to_json() + "\n")


# ---------------------------------------------------------------------------
# estimates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SimulationEstimate:
    mean: float
    std_err: float
    n: int
    censored_fraction: float

    @property
    def unreliable(self) -> bool:
        return self.censored_fraction > 0.01 or self.n == 0

    def as_dict(self) -> dict:
        d = asdict(self)
        d["unreliable"] = self.unreliable
        return d


def _selector_values(selector: str, outcomes: Sequence[ReplicationOutcome], race: BlockRace):
    """Per-replication values (``None`` = excluded) and the censored count."""
    M = race.threshold
    half = race.network.half
    censored = sum(1 for o in outcomes if o.nu is None)
    if selector == "nu_mean":
        return [o.nu for o in outcomes], censored
    if selector == "t_prev_mean":
        return [o.t_prev for o in outcomes], censored
    if selector == "c_nu_mean":
        return [o.c_at_nu for o in outcomes], censored
    if selector == "c_prev_mean":
        return [o.c_prev for o in outcomes], censored
    if selector == "q0_freq":
        return [int(o.nu is not None) for o in outcomes], censored
    if selector == "q1_freq":
        return [int(o.nu is not None and o.c_at_nu - o.b_drawn >= M) for o in outcomes], censored
    if selector == "p_freq":
        return [int(o.c_prev is not None and o.c_prev < half) for o in outcomes], censored
    if selector == "confined_q0":
        return [int(o.confined_win) for o in outcomes], sum(1 for o in outcomes if o.nu is None or o.mu is None)
    if selector.startswith("c_nu_pmf:"):
        k = int(selector.split(":", 1)[1])
        return [int(o.c_at_nu == k) for o in outcomes], censored
    if selector in ("nu1_mean", "nu2_mean", "mu_mean", "mu1_mean"):
        attr = selector[:-5]
        vals = [getattr(o, attr) for o in outcomes]
        return vals, sum(1 for v in vals if v is None)
    raise ValueError(f"unknown selector {selector!r}")


SELECTORS = ("nu_mean", "t_prev_mean", "c_nu_mean", "c_prev_mean", "q0_freq", "q1_freq", "p_freq", "confined_q0")


def summarize(selector: str, outcomes: Sequence[ReplicationOutcome], race: BlockRace) -> SimulationEstimate:
    """Sample mean and standard error; exactly rounded sums make it order independent."""
    raw, censored = _selector_values(selector, outcomes, race)
    vals = [float(v) for v in raw if v is not None]
    n = len(vals)
    frac = censored / len(outcomes) if outcomes else 1.0
    if n == 0:
        return SimulationEstimate(math.nan, math.nan, 0, frac)
    mean = math.fsum(vals) / n
    if n > 1:
        var = math.fsum((v - mean) ** 2 for v in vals) / (n - 1)
        se = math.sqrt(var / n)
    else:
        se = math.nan
    return SimulationEstimate(mean, se, n, frac)


def estimate(selector: str, config: SimConfig, race: BlockRace, alliance: AllianceConfig = AllianceConfig()) -> SimulationEstimate:
    return summarize(selector, run(race, alliance, config), race)


# ---------------------------------------------------------------------------
# analytic vs simulated
# ---------------------------------------------------------------------------


@dataclass
class ValidationEntry:
    quantity: str
    method: str
    analytic: float
    mc_mean: float
    std_err: float
    z: float
    gate: Optional[float]
    status: str

    def as_dict(self) -> dict:
        return asdict(self)


EXACT_GATE = 3.0
APPROX_GATE = 6.0


def z_score(analytic: float, est: SimulationEstimate) -> float:
    diff = abs(analytic - est.mean)
    if not math.isfinite(diff):
        return math.inf
    se = est.std_err
    if (se == 0 or not math.isfinite(se)) and 0 <= analytic <= 1 and est.n > 0:
        # a constant sample of indicators: fall back to the analytic binomial error
        se = math.sqrt(analytic * (1 - analytic) / est.n)
    if se == 0 or not math.isfinite(se):
        return 0.0 if diff <= 1e-12 else math.inf
    return diff / se


def compare(quantity: str, method: str, analytic: float, est: SimulationEstimate, gate: Optional[float]) -> ValidationEntry:
    z = z_score(analytic, est)
    if gate is None:
        status = "INFO"
    elif est.unreliable:
        status = "UNRELIABLE"
    else:
        status = "PASS" if z <= gate else "FAIL"
    return ValidationEntry(quantity, method, float(analytic), est.mean, est.std_err, z, gate, status)


@dataclass
class ValidationReport:
    entries: List[ValidationEntry]

    @property
    def exact_failures(self) -> List[ValidationEntry]:
        return [e for e in self.entries if e.method == "exact-dp" and e.status in ("FAIL", "UNRELIABLE")]

    @property
    def passed(self) -> bool:
        return not self.exact_failures

    def as_dict(self) -> dict:
        return {"passed": self.passed, "entries": [e.as_dict() for e in self.entries]}


def validate(exact, paper, outcomes: Sequence[ReplicationOutcome], race: BlockRace, fp=None, pmf_head: int = 5, perturb: bool = False) -> ValidationReport:
    """z-scores of analytic quantities against the simulation.

    ``exact`` and ``paper`` are :class:`DecisionReport` objects for the same
    race and alliance as the outcomes.  Exact-DP quantities are gated at 3
    standard errors, the approximations at 6.  ``perturb`` shifts the exact
    ``E[nu]`` by ten standard errors as a harness self-test.
    """
    est = {s: summarize(s, outcomes, race) for s in SELECTORS}
    entries = []
    e_nu = exact.e_nu
    if perturb:
        e_nu += 10 * est["nu_mean"].std_err
    rows = [
        ("E[nu]", "exact-dp", e_nu, "nu_mean", EXACT_GATE),
        ("E[t_{nu-1}]", "exact-dp", exact.e_t_prev, "t_prev_mean", EXACT_GATE),
        ("E[C_nu]", "exact-dp", exact.e_c_nu, "c_nu_mean", EXACT_GATE),
        ("E[C_{nu-1} | nu>=1]", "exact-dp", exact.e_c_prev, "c_prev_mean", EXACT_GATE),
        ("q0", "exact-dp", exact.q0, "q0_freq", EXACT_GATE),
        ("q1_eta", "exact-dp", exact.q1_eta, "q1_freq", EXACT_GATE),
        ("p_{c-1}", "exact-dp", exact.p_cminus1, "p_freq", EXACT_GATE),
        ("E[t_{nu-1}]", "paper-approx", paper.e_t_prev, "t_prev_mean", APPROX_GATE),
        ("E[C_nu]", "paper-approx", paper.e_c_nu, "c_nu_mean", APPROX_GATE),
        ("E[C_{nu-1}]", "paper-approx", paper.e_c_prev, "c_prev_mean", APPROX_GATE),
        ("q0", "paper-approx", paper.q0, "q0_freq", APPROX_GATE),
        ("q0 vs confined game", "paper-approx", paper.q0, "confined_q0", None),
        ("q1_eta", "paper-approx", paper.q1_eta, "q1_freq", APPROX_GATE),
        ("p_{c-1}", "paper-approx", paper.p_cminus1, "p_freq", APPROX_GATE),
    ]
    for name, method, value, sel, gate in rows:
        entries.append(compare(name, method, value, est[sel], gate))
    if fp is not None:
        head = fp.pmf_c_nu[:pmf_head]
        for o, p in enumerate(head):
            k = race.threshold + o
            entries.append(compare(f"P{{C_nu={k}}}", "exact-dp", float(p), summarize(f"c_nu_pmf:{k}", outcomes, race), EXACT_GATE))
    return ValidationReport(entries)
