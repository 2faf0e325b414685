"""Two-point mark laws in the critical (boundary) regime.

Every vertex of the environment carries a mark vector ``A = (A_1, ..., A_N)``;
the walk's transition weights at that vertex are ``omega(x, parent) =
1 / (1 + sum A_i)`` and ``omega(x, child_i) = A_i * omega(x, parent)``, and
child ``i`` receives potential increment ``-log A_i``.

Two finite-support families keep every moment computable in closed form:

``two_point_binary``
    N = 2 always; marks i.i.d. on {exp(-a), exp(b)} with P(exp(-a)) = p.

``two_point_extinction``
    N = 0 with probability q0, otherwise as above (N = 2).

The critical regime imposes two constraints on the generic mark vector,

    E[sum_i A_i] = 1      and      E[sum_i A_i log A_i] = 0,

which make the biased walk null recurrent.  ``solve_two_point_marks``
finds (b, p) for a requested up-step ``a`` (and optional q0).  The walk's
per-step variance constant is ``sigma2 = E[sum_i A_i (log A_i)^2]``.

Some admissible laws push p within 1e-9 of 1, so the big-mark probability
is stored separately (``p_big``) instead of being recovered as 1 - p;
moment formulas never form that difference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import NoSolution

TWO_POINT_BINARY = "two_point_binary"
TWO_POINT_EXTINCTION = "two_point_extinction"


@dataclass(frozen=True)
class MarkLaw:
    """A solved two-point mark law.

    Attributes
    ----------
    family : str
        One of ``two_point_binary`` or ``two_point_extinction``.
    a : float
        Up-step of the potential; the small mark is ``exp(-a)``.
    b : float
        Down-step of the potential; the big mark is ``exp(b)``.
    p : float
        Probability of the small mark, independently per child.
    p_big : float
        Probability of the big mark, held at full precision (p + p_big = 1
        up to rounding, but p_big may be far below float resolution of 1 - p).
    q0 : float
        Probability of zero offspring (0 for the binary family).
    """

    family: str
    a: float
    b: float
    p: float
    p_big: float
    q0: float = 0.0

    def __post_init__(self):
        if self.family not in (TWO_POINT_BINARY, TWO_POINT_EXTINCTION):
            raise ValueError(f"unknown family {self.family!r}")
        if self.family == TWO_POINT_BINARY and self.q0 != 0.0:
            raise ValueError("binary family has q0 = 0")
        if abs(self.p + self.p_big - 1.0) > 1e-12:
            raise ValueError("mark probabilities must sum to 1")

    # -- support -----------------------------------------------------------

    @property
    def mark_small(self) -> float:
        return math.exp(-self.a)

    @property
    def mark_big(self) -> float:
        return math.exp(self.b)

    def mark_values(self) -> tuple[float, float]:
        return (self.mark_small, self.mark_big)

    def mark_probs(self) -> tuple[float, float]:
        return (self.p, self.p_big)

    def potential_steps(self) -> tuple[float, float]:
        """Potential increments (+a, -b) matching ``mark_values``."""
        return (self.a, -self.b)

    @property
    def mean_offspring(self) -> float:
        return 2.0 * (1.0 - self.q0)

    # -- closed-form moments -----------------------------------------------

    def boundary_residuals(self) -> tuple[float, float]:
        """Residuals of the two criticality constraints.

        Returns (E[sum A_i] - 1, E[sum A_i log A_i]); both vanish for a
        law in the critical regime.
        """
        alpha, beta = self.mark_values()
        m = self.mean_offspring
        r1 = m * (self.p * alpha + self.p_big * beta) - 1.0
        r2 = m * (-self.p * alpha * self.a + self.p_big * beta * self.b)
        return (r1, r2)

    @property
    def sigma2(self) -> float:
        """E[sum A_i (log A_i)^2], the per-step variance constant."""
        alpha, beta = self.mark_values()
        m = self.mean_offspring
        return m * (self.p * alpha * self.a**2 + self.p_big * beta * self.b**2)

    @property
    def extinction_probability(self) -> float:
        """Smallest fixed point of s = q0 + (1 - q0) s^2."""
        if self.q0 == 0.0:
            return 0.0
        return self.q0 / (1.0 - self.q0)

    @property
    def survival_probability(self) -> float:
        return 1.0 - self.extinction_probability

    # -- exhaustive enumeration --------------------------------------------

    def offspring_configurations(self) -> list[tuple[float, tuple[float, ...]]]:
        """All (probability, child marks) configurations of one vertex.

        The basis for every exhaustive-enumeration oracle; probabilities
        sum to one exactly.
        """
        alpha, beta = self.mark_values()
        p, pb = self.p, self.p_big
        m2 = 1.0 - self.q0
        configs = [
            (m2 * p * p, (alpha, alpha)),
            (m2 * p * pb, (alpha, beta)),
            (m2 * pb * p, (beta, alpha)),
            (m2 * pb * pb, (beta, beta)),
        ]
        if self.q0 > 0.0:
            configs.insert(0, (self.q0, ()))
        return configs


def extinction_probability_fixed_point(q0: float, tol: float = 1e-15, max_iter: int = 100000) -> float:
    """Extinction probability by fixed-point iteration on the offspring pgf.

    Iterates s <- q0 + (1 - q0) s^2 from 0; independent oracle for the
    closed form q0 / (1 - q0).
    """
    s = 0.0
    for _ in range(max_iter):
        s_next = q0 + (1.0 - q0) * s * s
        if abs(s_next - s) < tol:
            return s_next
        s = s_next
    return s


def _p_big_given_b(a: float, b: float) -> float:
    # log-moment constraint: p * a * exp(-a) = p_big * b * exp(b)
    small = a * math.exp(-a)
    return small / (small + b * math.exp(b))


def _p_given_b(a: float, b: float) -> float:
    big = b * math.exp(b)
    return big / (big + a * math.exp(-a))


def solve_two_point_marks(
    a: float,
    q0: float | None = None,
    residual_tol: float = 1e-12,
    b_max: float = 64.0,
) -> MarkLaw:
    """Solve (b, p) so both criticality constraints hold for a given up-step.

    Eliminates the mark probabilities through the log-moment constraint
    and brackets the remaining one-dimensional equation in b, then
    polishes with Newton steps on the full 2-d system in (b, p_big).

    Raises
    ------
    NoSolution
        If no sign change exists in (0, b_max]; the exception carries the
        best residual pair found.
    """
    if not (a > 0.0):
        raise ValueError("up-step a must be positive")
    if q0 is None:
        q0 = 0.0
        family = TWO_POINT_BINARY
    else:
        if not (0.0 < q0 < 0.5):
            raise ValueError("q0 must lie in (0, 1/2) for a supercritical tree")
        family = TWO_POINT_EXTINCTION
    m = 2.0 * (1.0 - q0)
    alpha = math.exp(-a)

    def g(b: float) -> float:
        p = _p_given_b(a, b)
        pb = _p_big_given_b(a, b)
        return m * (p * alpha + pb * math.exp(b)) - 1.0

    # g(0+) = m - 1 > 0 by supercriticality; search for the first sign change
    grid = np.geomspace(1e-8, b_max, 400)
    lo = grid[0]
    glo = g(lo)
    hi = None
    for b in grid[1:]:
        gb = g(b)
        if glo * gb <= 0.0:
            hi = b
            break
        lo, glo = b, gb
    if hi is None:
        b_end = float(grid[-1])
        probe = MarkLaw(family, a, b_end, _p_given_b(a, b_end), _p_big_given_b(a, b_end), q0)
        raise NoSolution(
            f"no root for (b, p) with a={a}, q0={q0} in b <= {b_max}; "
            f"best residuals {probe.boundary_residuals()}",
            residuals=probe.boundary_residuals(),
        )
    b = brentq(g, lo, hi, xtol=1e-15, rtol=8.9e-16)
    pb = _p_big_given_b(a, b)

    # Newton polish on (b, p_big) to push residuals to rounding level
    for _ in range(8):
        beta = math.exp(b)
        p = 1.0 - pb
        r1 = m * (p * alpha + pb * beta) - 1.0
        r2 = m * (-p * alpha * a + pb * beta * b)
        if abs(r1) < 1e-15 and abs(r2) < 1e-15:
            break
        j11 = m * pb * beta  # d r1 / d b
        j12 = m * (beta - alpha)  # d r1 / d p_big
        j21 = m * pb * beta * (b + 1.0)  # d r2 / d b
        j22 = m * (alpha * a + beta * b)  # d r2 / d p_big
        det = j11 * j22 - j12 * j21
        if det == 0.0:
            break
        b += (-r1 * j22 + r2 * j12) / det
        pb += (j21 * r1 - j11 * r2) / det

    law = MarkLaw(family, a, b, 1.0 - pb, pb, q0)
    r1, r2 = law.boundary_residuals()
    if not (abs(r1) < residual_tol and abs(r2) < residual_tol and 0.0 < pb < 1.0 and b > 0.0):
        raise NoSolution(
            f"root polish failed for a={a}, q0={q0}: residuals ({r1:.3e}, {r2:.3e})",
            residuals=(r1, r2),
        )
    return law


def solve_constant_marks(lam: float | None = None) -> MarkLaw:
    """Reject any constant-mark request.

    A constant mark A = lam forces lam = 1 through the log-moment
    constraint and then E[N] = 1 through the mean constraint: the tree
    would be critical, not supercritical, so no valid law exists.
    """
    raise NoSolution(
        "constant marks admit no supercritical critical-regime law: "
        "E[sum A log A] = 0 forces A = 1 and then E[N] = 1 (critical)",
        residuals=None,
    )
