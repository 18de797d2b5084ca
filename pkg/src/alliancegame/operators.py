"""First-excess operator calculus on truncated power series.

``r_transform`` multiplies the generating function of a sequence by
``(1-q)(1-r)(1-s)``; ``d_inverse`` undoes it.  Derivatives at the origin are
never taken: dividing by ``(1 - x)`` is a prefix sum of coefficients along that
axis and ``1/k! d^k/dx^k`` at zero is coefficient extraction, so both directions
are pure coefficient algebra.  Object arrays of :class:`fractions.Fraction`
give exact arithmetic; float arrays are used everywhere else.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .core import ArrivalModel, ConvergenceError, DomainError, ObservationModel
from .core import first_passage, geometric_law


def _is_exact(values: np.ndarray) -> bool:
    return values.dtype == object


@dataclass(frozen=True)
class SequenceGrid:
    """Values ``g(a, b, c)`` on ``0..A x 0..B x 0..C`` (one to three axes)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if not 1 <= v.ndim <= 3:
            raise DomainError("a sequence grid has one to three axes")
        if not _is_exact(v):
            v = v.astype(float)
            if not np.all(np.isfinite(v)):
                raise DomainError("grid entries must be finite")
        object.__setattr__(self, "values", v)

    @property
    def caps(self) -> tuple:
        return tuple(n - 1 for n in self.values.shape)

    @classmethod
    def from_function(cls, func, caps, exact=False):
        shape = tuple(c + 1 for c in caps)
        dtype = object if exact else float
        out = np.empty(shape, dtype=dtype)
        for idx in np.ndindex(*shape):
            out[idx] = func(*idx)
        return cls(out)


class TruncatedSeries:
    """Power series in up to three variables, truncated at ``caps`` per axis."""

    __slots__ = ("coeffs",)

    def __init__(self, coeffs):
        c = np.asarray(coeffs)
        if c.dtype != object:
            c = c.astype(float)
        self.coeffs = c

    @property
    def caps(self) -> tuple:
        return tuple(n - 1 for n in self.coeffs.shape)

    @property
    def exact_flag(self) -> bool:
        return _is_exact(self.coeffs)

    @classmethod
    def constant(cls, value, caps, exact=False):
        c = np.zeros(tuple(k + 1 for k in caps), dtype=object if exact else float)
        if exact:
            c[...] = Fraction(0)
        c[(0,) * len(caps)] = value
        return cls(c)

    @classmethod
    def univariate(cls, coeffs, axis, caps):
        """Series in the single variable on ``axis`` (coefficients beyond the cap are dropped)."""
        coeffs = np.asarray(coeffs)
        exact = coeffs.dtype == object
        out = cls.constant(Fraction(0) if exact else 0.0, caps, exact=exact).coeffs
        n = min(coeffs.size, caps[axis] + 1)
        idx = [0] * len(caps)
        idx[axis] = slice(0, n)
        out[tuple(idx)] = coeffs[:n]
        return cls(out)

    def _other(self, other):
        if isinstance(other, TruncatedSeries):
            if other.caps != self.caps:
                raise DomainError(f"caps differ: {self.caps} vs {other.caps}")
            return other
        return TruncatedSeries.constant(other, self.caps, exact=self.exact_flag)

    def __add__(self, other):
        return TruncatedSeries(self.coeffs + self._other(other).coeffs)

    __radd__ = __add__

    def __sub__(self, other):
        return TruncatedSeries(self.coeffs - self._other(other).coeffs)

    def __rsub__(self, other):
        return TruncatedSeries(self._other(other).coeffs - self.coeffs)

    def __neg__(self):
        return TruncatedSeries(-self.coeffs)

    def __mul__(self, other):
        if not isinstance(other, TruncatedSeries):
            return TruncatedSeries(self.coeffs * other)
        other = self._other(other)
        a, b = self.coeffs, other.coeffs
        out = np.zeros_like(a)
        if self.exact_flag:
            out[...] = Fraction(0)
        shape = a.shape
        for idx in zip(*np.nonzero(a != 0)):
            dst = tuple(slice(i, None) for i in idx)
            src = tuple(slice(0, n - i) for i, n in zip(idx, shape))
            out[dst] = out[dst] + a[idx] * b[src]
        return TruncatedSeries(out)

    __rmul__ = __mul__

    def reciprocal(self) -> "TruncatedSeries":
        """``1 / self``; needs a nonzero constant term."""
        origin = (0,) * self.coeffs.ndim
        f0 = self.coeffs[origin]
        if f0 == 0:
            raise DomainError("series with zero constant term has no reciprocal")
        # 1/f = (1/f0) * sum_n g^n with g = 1 - f/f0; g^n starts at total degree n
        g = (self * (1 / f0 if not self.exact_flag else Fraction(1) / f0)) * -1 + 1
        term = TruncatedSeries.constant(1 if not self.exact_flag else Fraction(1), self.caps, self.exact_flag)
        total = term
        for _ in range(sum(self.caps)):
            term = term * g
            total = total + term
        inv0 = Fraction(1) / f0 if self.exact_flag else 1.0 / f0
        return total * inv0

    def __truediv__(self, other):
        if isinstance(other, TruncatedSeries):
            return self * other.reciprocal()
        return TruncatedSeries(self.coeffs / other)

    def coefficient(self, index) -> float:
        if len(index) != self.coeffs.ndim:
            raise DomainError("index rank does not match the series")
        if any(i < 0 for i in index):
            return 0
        if any(i > c for i, c in zip(index, self.caps)):
            raise IndexError(f"index {tuple(index)} beyond caps {self.caps}")
        return self.coeffs[tuple(index)]


def r_transform(g: SequenceGrid) -> TruncatedSeries:
    """``(1-q)(1-r)(1-s) * sum g(a,b,c) q^a r^b s^c`` truncated at the grid caps."""
    c = g.values.copy()
    for axis in range(c.ndim):
        shifted = np.zeros_like(c)
        if _is_exact(c):
            shifted[...] = 0
        src = [slice(None)] * c.ndim
        dst = [slice(None)] * c.ndim
        src[axis] = slice(0, -1)
        dst[axis] = slice(1, None)
        shifted[tuple(dst)] = c[tuple(src)]
        c = c - shifted
    return TruncatedSeries(c)


def d_inverse(G: TruncatedSeries, index, axes: Optional[Sequence[int]] = None):
    """Coefficient of ``G / prod(1 - x)`` at ``index``.

    ``axes`` selects the operator axes (default all); remaining axes are plain
    mark variables whose coefficient is read off without a prefix sum.
    Negative indices give 0.
    """
    index = tuple(int(i) for i in index)
    if len(index) != G.coeffs.ndim:
        raise DomainError(f"index {index} does not match series rank {G.coeffs.ndim}")
    if any(i < 0 for i in index):
        return 0
    if any(i > c for i, c in zip(index, G.caps)):
        raise IndexError(f"index {index} beyond caps {G.caps}; raise the truncation")
    axes = range(G.coeffs.ndim) if axes is None else axes
    block = G.coeffs[tuple(slice(0, i + 1) for i in index)]
    for ax in range(block.ndim):
        if ax in axes:
            block = block.sum(axis=ax, keepdims=True)
        else:
            block = block.take([-1], axis=ax)
    return block.reshape(()).item() if block.dtype != object else block.flat[0]


# ---------------------------------------------------------------------------
# spot check of the operator formula for the exit-index functional
# ---------------------------------------------------------------------------


def _geometric_series(law, axis, caps, scale=1.0):
    """Coefficients of ``b / (1 - a * scale * x)`` along ``axis``."""
    n = caps[axis] + 1
    k = np.arange(n)
    with np.errstate(under="ignore"):
        coeffs = law.b * (law.a * scale) ** k
    return TruncatedSeries.univariate(coeffs, axis, caps)


@dataclass
class TheoremCheck:
    threshold: int
    zetas: tuple
    pgf_operator: list       # E[zeta^nu] from the q-slot expansion
    pgf_dp: list             # same from the lattice DP (None when the DP cannot run)
    pmf_nu_operator: np.ndarray
    pmf_nu_dp: Optional[np.ndarray]
    pmf_prev_operator: np.ndarray
    pmf_prev_dp: Optional[np.ndarray]
    confined_weight: float   # r/s-slot factor of the full expression at the operator index
    marginal_residual: float
    full_residual: float
    tolerance: float
    status: str
    notes: list

    def as_dict(self) -> dict:
        def _arr(x):
            return None if x is None else [float(v) for v in x]

        return {
            "threshold": self.threshold,
            "zetas": list(self.zetas),
            "pgf_operator": _arr(self.pgf_operator),
            "pgf_dp": _arr(self.pgf_dp),
            "pmf_nu_operator": _arr(self.pmf_nu_operator),
            "pmf_nu_dp": _arr(self.pmf_nu_dp),
            "pmf_prev_operator": _arr(self.pmf_prev_operator),
            "pmf_prev_dp": _arr(self.pmf_prev_dp),
            "confined_weight": self.confined_weight,
            "marginal_residual": self.marginal_residual,
            "full_residual": self.full_residual,
            "tolerance": self.tolerance,
            "status": self.status,
            "notes": list(self.notes),
        }


def theorem_check(
    arrival: ArrivalModel,
    observation: ObservationModel,
    M: int,
    caps: Optional[tuple] = None,
    eta: int = 0,
    rho: float = 0.0,
    zetas: Sequence[float] = (0.0, 0.25, 0.5, 0.75, 0.9),
    n_nu: int = 12,
    tolerance: float = 1e-9,
) -> TheoremCheck:
    """Expand the operator expression for the joint functional and compare with the DP.

    All marks are held at 1 except those needed for a marginal.  The q-slot
    bracket ``1 - (1 - zeta) a0(q) / (1 - zeta a(q))`` is inverted at index
    ``M - 1`` (the win event is ``C >= M``); the r/s-slot factor
    ``sigma * beta * (1 - beta1) / (1 - beta)`` is inverted at the same index and
    reported as ``confined_weight``.  ``marginal_residual`` compares the q-slot
    marginals with the DP; ``full_residual`` includes the r/s factor.
    """
    if not 1 <= M <= 8:
        raise DomainError("theorem_check is meant for thresholds 1..8")
    caps = caps or (4 * M, 4 * M, 4 * M)
    p = M - 1
    notes = []
    inc = geometric_law(arrival.lambda_c, observation.mean_interval)
    init = geometric_law(arrival.lambda_c, observation.mean_initial)
    g_inc = geometric_law(arrival.lambda_g, observation.mean_interval)

    q_caps = (caps[0],)
    alpha = _geometric_series(inc, 0, q_caps)
    alpha0 = _geometric_series(init, 0, q_caps)

    pgf_op = []
    for z in zetas:
        denom = 1 - alpha * z
        bracket = 1 - alpha0 * (1 - z) * denom.reciprocal()
        pgf_op.append(float(d_inverse(bracket, (p,))))

    # P{nu = j}: coefficient of zeta^j in the bracket is a0 a^(j-1) (1 - a)
    pmf_op = [1.0 - float(d_inverse(alpha0, (p,)))]
    power = TruncatedSeries.constant(1.0, q_caps)
    for _ in range(1, n_nu):
        pmf_op.append(float(d_inverse(alpha0 * power * (1 - alpha), (p,))))
        power = power * alpha
    pmf_op = np.asarray(pmf_op)

    # C_{nu-1} through the mark y0 riding with q: a0(y0 q) (1 - a(q)) / (1 - a(y0 q))
    qy_caps = (caps[0], caps[0])
    k = np.arange(caps[0] + 1)
    diag_a0 = np.zeros((caps[0] + 1, caps[0] + 1))
    diag_a = np.zeros_like(diag_a0)
    with np.errstate(under="ignore"):
        diag_a0[k, k] = init.b * init.a**k
        diag_a[k, k] = inc.b * inc.a**k
    a0_y = TruncatedSeries(diag_a0)
    a_y = TruncatedSeries(diag_a)
    a_q = TruncatedSeries.univariate(inc.b * inc.a**k, 0, qy_caps)
    if inc.a > 0:
        prev_series = a0_y * (1 - a_q) * (1 - a_y).reciprocal()
        pmf_prev_op = np.array([float(d_inverse(prev_series, (p, c), axes=(0,))) for c in range(M)])
    else:
        pmf_prev_op = np.zeros(M)
        notes.append("no attacker arrivals: C_{nu-1} has no mass")

    # r/s slots: sigma * beta(r, s) * (1 - beta1(r)) / (1 - beta(r, s)), b = 1
    rs_caps = (caps[1], caps[2])
    beta1 = _geometric_series(inc, 0, rs_caps)
    beta = beta1 * _geometric_series(g_inc, 1, rs_caps)
    sigma = (rho / 1.0 + (1 - rho)) ** eta  # marks held at b = 1
    if beta.coeffs[0, 0] < 1:
        rs = beta * (1 - beta1) * (1 - beta).reciprocal() * sigma
        weight = float(d_inverse(rs, (p, p)))
    else:
        weight = 0.0
        notes.append("degenerate r/s factor (no arrivals on either side)")

    pgf_dp = pmf_dp = prev_dp = None
    marginal_res = full_res = math.nan
    try:
        fp = first_passage(init, inc, M, eps=1e-15)
    except ConvergenceError:
        fp = None
        notes.append("DP not applicable (attacker never reaches the threshold)")
    if fp is not None:
        pmf_dp = np.zeros(n_nu)
        n = min(n_nu, fp.pmf_nu.size)
        pmf_dp[:n] = fp.pmf_nu[:n]
        j = np.arange(fp.pmf_nu.size)
        pgf_dp = [float(np.sum(fp.pmf_nu * np.power(z, j))) if z > 0 else float(fp.pmf_nu[0]) for z in zetas]
        prev_dp = fp.pmf_c_prev
        marginal_res = float(
            max(
                np.max(np.abs(np.asarray(pgf_op) - pgf_dp)),
                np.max(np.abs(pmf_op - pmf_dp)),
                np.max(np.abs(pmf_prev_op - prev_dp)),
            )
        )
        full_res = float(max(np.max(np.abs(np.asarray(pgf_op) * weight - pgf_dp)), np.max(np.abs(pmf_op * weight - pmf_dp))))
    else:
        marginal_res = float(np.max(np.abs(pmf_op[1:])))

    if marginal_res <= tolerance:
        if math.isnan(full_res):
            status = "MARGINAL-MATCH; full expression not compared"
        elif full_res <= tolerance:
            status = "MATCH"
        else:
            status = "MARGINAL-MATCH; EXPERIMENTAL-MISMATCH (full expression)"
    else:
        status = "EXPERIMENTAL-MISMATCH"
    return TheoremCheck(
        threshold=M,
        zetas=tuple(zetas),
        pgf_operator=pgf_op,
        pgf_dp=pgf_dp,
        pmf_nu_operator=pmf_op,
        pmf_nu_dp=pmf_dp,
        pmf_prev_operator=pmf_prev_op,
        pmf_prev_dp=prev_dp,
        confined_weight=weight,
        marginal_residual=marginal_res,
        full_residual=full_res,
        tolerance=tolerance,
        status=status,
        notes=notes,
    )
