"""Limit laws and the one-dimensional spine machinery.

The scaled distance of the walk converges to a law built from the
Kolmogorov-Smirnov distribution of ``eta``, the maximal drawdown
``sup (running max - value)`` of a standard Brownian meander.  This
module evaluates that distribution by two mutually-checking theta
series, samples ``eta`` by the last-zero realisation of the meander,
and carries the exact spine ("many-to-one") machinery that converts
level sums over the tree into tilted one-dimensional walk expectations:
the tilted increment law, the stopped spine walk whose stopping index
mirrors the line-truncated partition sum, and exhaustive-enumeration
checks of the conversion identity itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from . import rng
from .errors import (
    DegeneratePath,
    DomainError,
    EnumerationBudgetExceeded,
    StepCapExceeded,
    UnsupportedLaw,
)
from .marks import MarkLaw

SQRT_HALF_PI = math.sqrt(math.pi / 2.0)

# -- Kolmogorov-Smirnov law -------------------------------------------------------


def ks_cdf_alternating(x: float, tol: float = 1e-16, max_terms: int = 1000) -> float:
    """P(eta <= x) by the alternating series 1 + 2 sum (-1)^k exp(-2 k^2 x^2).

    Accurate for moderate-to-large x; for small x the terms decay slowly
    and cancel catastrophically, hence the dual form below.
    """
    if x <= 0.0:
        raise DomainError("the drawdown law lives on x > 0")
    terms = []
    for k in range(1, max_terms + 1):
        t = 2.0 * (-1.0) ** k * math.exp(-2.0 * k * k * x * x)
        terms.append(t)
        if abs(t) < tol:
            break
    return 1.0 + math.fsum(terms)


def ks_cdf_dual(x: float, tol: float = 1e-300, max_terms: int = 1000) -> float:
    """P(eta <= x) by the theta-dual series
    (sqrt(2 pi)/x) sum_j exp(-(2j+1)^2 pi^2 / (8 x^2)).

    All terms are positive, so small x loses no precision here.
    """
    if x <= 0.0:
        raise DomainError("the drawdown law lives on x > 0")
    pref = math.sqrt(2.0 * math.pi) / x
    terms = []
    for j in range(max_terms):
        t = math.exp(-((2 * j + 1) ** 2) * math.pi**2 / (8.0 * x * x))
        terms.append(t)
        if t < tol or (terms[0] > 0 and t < 1e-17 * terms[0]):
            break
    return pref * math.fsum(terms)


def ks_cdf(x: float) -> float:
    """P(eta <= x); picks whichever series representation converges best.

    The dual series below the crossover 0.8, the alternating series
    above; the two agree to 1e-10 or better on the overlap.
    """
    if x <= 0.0:
        raise DomainError("the drawdown law lives on x > 0")
    return ks_cdf_dual(x) if x < 0.8 else ks_cdf_alternating(x)


def ks_cdf_grid(xs: np.ndarray) -> np.ndarray:
    """Vectorised ``ks_cdf`` over an array (same series switchover).

    Forty terms bound both truncation errors far below 1e-12 on either
    side of the crossover.
    """
    xs = np.asarray(xs, dtype=float)
    if np.any(xs <= 0.0):
        raise DomainError("the drawdown law lives on x > 0")
    out = np.empty_like(xs)
    small = xs < 0.8
    if small.any():
        x = xs[small]
        j = np.arange(40)[None, :]
        terms = np.exp(-((2 * j + 1) ** 2) * math.pi**2 / (8.0 * x[:, None] ** 2))
        out[small] = math.sqrt(2.0 * math.pi) / x * terms.sum(axis=1)
    if (~small).any():
        x = xs[~small]
        k = np.arange(1, 41)[None, :]
        terms = 2.0 * (-1.0) ** k * np.exp(-2.0 * k**2 * x[:, None] ** 2)
        out[~small] = 1.0 + terms.sum(axis=1)
    return out


def scaling_density(x: float) -> float:
    """Density of the scaled-distance limit: (2 pi x)^(-1/2) P(eta <= x^(-1/2)).

    Integrates to one because E[1/eta] = sqrt(pi/2).
    """
    if x <= 0.0:
        raise DomainError("the scaling density lives on x > 0")
    return ks_cdf(1.0 / math.sqrt(x)) / math.sqrt(2.0 * math.pi * x)


def scaling_density_mass(tol: float = 1e-10) -> float:
    """Adaptive quadrature of the scaling density over (0, infinity)."""
    lo, err_lo = integrate.quad(scaling_density, 0.0, 1.0, epsabs=tol, limit=200)
    hi, err_hi = integrate.quad(scaling_density, 1.0, np.inf, epsabs=tol, limit=200)
    return lo + hi


def scaling_cdf(x: float, tol: float = 1e-10) -> float:
    """Distribution function of the scaling density by quadrature."""
    if x <= 0.0:
        return 0.0
    val, _ = integrate.quad(scaling_density, 0.0, x, epsabs=tol, limit=200)
    return val


def scaling_cdf_from_drawdowns(x: float, etas: np.ndarray) -> float:
    """The same distribution function from drawdown samples.

    Conditional on eta the density is proportional to y^(-1/2) on
    (0, eta^(-2)), which integrates to sqrt(2/pi) min(sqrt(x), 1/eta);
    averaging over samples gives an independent Monte Carlo oracle for
    :func:`scaling_cdf`.
    """
    if x <= 0.0:
        return 0.0
    vals = np.minimum(math.sqrt(x), 1.0 / etas)
    return math.sqrt(2.0 / math.pi) * float(vals.mean())


# -- Brownian meander drawdown sampling ----------------------------------------------


def _drawdowns_from_paths(
    B: np.ndarray, min_points: int, gen: np.random.Generator, refine: bool = True
) -> tuple[np.ndarray, np.ndarray]:
    """Per-row meander drawdown from Brownian grid paths B (rows, n+1).

    The last zero is located by sign change and linearly interpolated
    inside its grid cell.  Within each meander cell the running maximum
    and the cell minimum of the continuous path are sampled from the
    Brownian-bridge extreme-value laws, which removes the O(sqrt(dt))
    downward bias of the bare grid supremum; a sampled cell minimum
    below zero means the continuous path had a later zero than the grid
    detected, so such rows are rejected outright (exact conditioning).

    Rows whose meander segment has fewer than ``min_points`` grid points
    are also rejected: the rescaled meander is standard whatever the
    zero's location, so rejection only controls resolution, not the law.
    """
    rows, n1 = B.shape
    n = n1 - 1
    dt = 1.0 / n
    cross = (B[:, :-1] * B[:, 1:]) <= 0.0
    g = n - 1 - np.argmax(cross[:, ::-1], axis=1)
    keep = (n - g) >= min_points
    rows_idx = np.arange(rows)
    left = np.abs(B[rows_idx, g])
    right = np.abs(B[rows_idx, g + 1])
    frac = np.where(left + right > 0.0, left / (left + right), 0.0)
    g_star = (g + frac) / n  # interpolated last-zero time

    W = np.abs(B)
    if not refine:
        # bare grid supremum of the drawdown; biased low by O(sqrt(dt))
        idx = np.arange(n + 1)[None, :]
        mask = idx > g[:, None]
        vals = np.where(mask, W, 0.0)
        runmax = np.maximum.accumulate(vals, axis=1)
        gaps = np.where(mask, runmax - vals, 0.0)
        eta = gaps.max(axis=1) / np.sqrt(1.0 - g_star)
        return eta, keep

    w0 = W[:, :-1]  # cell left endpoints
    w1 = W[:, 1:]  # cell right endpoints
    cell = np.arange(n)[None, :] > g[:, None]  # cells fully inside the meander
    disc = w1 - w0
    disc *= disc
    ssum = w0 + w1
    # bridge extremes: hi/lo = (w0 + w1 +/- sqrt((w1-w0)^2 + 2 dt Exp)) / 2
    e = gen.standard_exponential((rows, n))
    e *= 2.0 * dt
    e += disc
    np.sqrt(e, out=e)
    hi = ssum + e
    hi *= 0.5
    e = gen.standard_exponential((rows, n))
    e *= 2.0 * dt
    e += disc
    np.sqrt(e, out=e)
    lo = ssum
    lo -= e
    lo *= 0.5
    keep &= ~np.any(cell & (lo < 0.0), axis=1)

    hi *= cell  # zero outside the meander
    # max in this cell, min at its right endpoint
    cand2 = hi - w1
    cand2 *= cell
    d2 = cand2.max(axis=1)
    # max strictly before this cell (floored by its left endpoint), min inside
    np.maximum.accumulate(hi, axis=1, out=hi)
    cand1 = np.maximum(hi[:, :-1], w0[:, 1:] * cell[:, 1:])
    cand1 -= lo[:, 1:]
    cand1 *= cell[:, 1:]
    d1 = cand1.max(axis=1)
    scale = np.sqrt(1.0 - g_star)
    eta = np.maximum(d1, d2) / scale
    return eta, keep


def sample_eta_batch(
    seed: int,
    n_samples: int,
    grid_steps: int,
    min_meander_fraction: float = 0.05,
    max_attempts: int = 400,
    refine: bool = True,
) -> np.ndarray:
    """Sample meander drawdowns from gridded Brownian paths.

    Realises the meander by rescaling the Brownian path after its last
    zero; the drawdown of the rescaled path is the sample.  Paths whose
    meander segment is shorter than ``min_meander_fraction`` of the grid
    are redrawn (see :func:`_drawdowns_from_paths`).  With ``refine``
    the within-cell bridge extremes are sampled (small O(dt) bias);
    without it the bare grid supremum is used, whose O(sqrt(dt)) bias
    is what the grid-refinement experiment measures.
    """
    if grid_steps < 10:
        raise ValueError("grid_steps must be >= 10")
    gen = rng.stream(seed, "eta", grid_steps)
    min_points = max(2, int(min_meander_fraction * grid_steps))
    sqrt_dt = 1.0 / math.sqrt(grid_steps)
    out = np.empty(n_samples)
    filled = 0
    row_budget = max(256, min(4096, (1 << 23) // (grid_steps + 1)))
    for _ in range(max_attempts):
        if filled >= n_samples:
            break
        rows = min(row_budget, max(64, int(2 * (n_samples - filled))))
        Z = gen.standard_normal((rows, grid_steps)) * sqrt_dt
        B = np.concatenate([np.zeros((rows, 1)), np.cumsum(Z, axis=1)], axis=1)
        eta, keep = _drawdowns_from_paths(B, min_points, gen, refine)
        eta = eta[keep & (eta > 0.0)]
        take = min(len(eta), n_samples - filled)
        out[filled : filled + take] = eta[:take]
        filled += take
    if filled < n_samples:
        raise DegeneratePath(
            f"could not draw {n_samples} usable meanders in {max_attempts} batches"
        )
    return out


def sample_eta(seed: int, grid_steps: int, min_meander_fraction: float = 0.05) -> float:
    """One meander drawdown sample (see :func:`sample_eta_batch`)."""
    return float(sample_eta_batch(seed, 1, grid_steps, min_meander_fraction)[0])


# -- tilted spine walk ------------------------------------------------------------


@dataclass(frozen=True)
class TiltedWalkLaw:
    """Joint law of (spine increment, children weight) under the tilt.

    Rows are (increment s, lambda value, probability): the increment is
    the potential step of the distinguished child, the lambda value the
    total child weight sum exp(-V) of its parent.  Exact for
    finite-support mark laws; total mass is 1 by criticality.
    """

    increments: np.ndarray
    lambdas: np.ndarray
    probs: np.ndarray

    def total_mass(self) -> float:
        return float(math.fsum(self.probs))

    def mean_increment(self) -> float:
        return float(math.fsum(p * s for p, s in zip(self.probs, self.increments)))

    def increment_marginal(self) -> tuple[np.ndarray, np.ndarray]:
        vals: dict[float, float] = {}
        for s, p in zip(self.increments, self.probs):
            vals[float(s)] = vals.get(float(s), 0.0) + float(p)
        ss = np.array(sorted(vals))
        return ss, np.array([vals[s] for s in ss])

    def lambda_support(self) -> np.ndarray:
        return np.unique(self.lambdas)


def tilted_walk_law(law: MarkLaw) -> TiltedWalkLaw:
    """Exact tilted joint law by enumeration of one-generation configurations.

    Each child x of a configuration contributes weight exp(-V(x)) = A(x)
    times the configuration probability to the atom at (its potential
    step, the configuration's total mark sum).  Criticality makes the
    total weight a probability.
    """
    if not isinstance(law, MarkLaw):
        raise UnsupportedLaw("tilting requires a finite-support mark law")
    atoms: dict[tuple[float, float], float] = {}
    for prob, marks in law.offspring_configurations():
        if not marks:
            continue
        lam_val = math.fsum(marks)
        for A in marks:
            key = (-math.log(A), lam_val)
            atoms[key] = atoms.get(key, 0.0) + prob * A
    items = sorted(atoms.items())
    return TiltedWalkLaw(
        increments=np.array([k[0] for k, _ in items]),
        lambdas=np.array([k[1] for k, _ in items]),
        probs=np.array([v for _, v in items]),
    )


def s_walk_stopping(
    tlaw: TiltedWalkLaw,
    r: float,
    seed: int,
    step_cap: int = 10**7,
) -> int:
    """First index where the spine walk's weighted ancestor sum exceeds r.

    The running quantity obeys R_i = 1 + exp(-increment_i) R_{i-1}, the
    exact one-dimensional mirror of the tree-side ancestor sums; the
    stopping index matches the line-truncated partition sum in law.
    """
    return int(s_walk_stopping_batch(tlaw, r, 1, seed, step_cap)[0])


def s_walk_stopping_batch(
    tlaw: TiltedWalkLaw,
    r: float,
    n_samples: int,
    seed: int,
    step_cap: int = 10**7,
) -> np.ndarray:
    """Vectorised sampling of the spine stopping index."""
    if not (r > 1.0):
        raise ValueError("r must exceed 1")
    incs, probs = tlaw.increment_marginal()
    factors = np.exp(-incs)
    cum = np.cumsum(probs)
    cum[-1] = 1.0
    gen = rng.stream(seed, "swalk", n_samples)
    out = np.zeros(n_samples, dtype=np.int64)
    idx = np.arange(n_samples)
    R = np.zeros(n_samples)
    steps = 0
    while len(idx):
        steps += 1
        if steps > step_cap:
            raise StepCapExceeded(f"{len(idx)} spine walks still running at {step_cap} steps")
        k = np.searchsorted(cum, gen.random(len(idx)), side="right")
        R = 1.0 + factors[k] * R
        done = R > r
        out[idx[done]] = steps
        idx = idx[~done]
        R = R[~done]
    return out


# -- exhaustive many-to-one checks ------------------------------------------------


def _enumerate_level_sums(law: MarkLaw, n: int, g, budget: int) -> float:
    """E[ sum over level-n vertices of g(potential path) ] by brute force.

    Recursively enumerates every joint mark configuration of the first n
    generations with its probability; the running pair list is the full
    configuration distribution of the subtree sum.
    """
    configs = law.offspring_configurations()

    def subtree(depth: int, prefix: tuple[float, ...]) -> list[tuple[float, float]]:
        if depth == n:
            return [(1.0, float(g(prefix)))]
        out: list[tuple[float, float]] = []
        for prob, marks in configs:
            acc = [(prob, 0.0)]
            for A in marks:
                child = subtree(depth + 1, prefix + (prefix[-1] - math.log(A) if prefix else -math.log(A),))
                acc = [(pa * pc, va + vc) for (pa, va) in acc for (pc, vc) in child]
                if len(acc) > budget:
                    raise EnumerationBudgetExceeded(
                        f"level enumeration passed {budget} configurations"
                    )
            out.extend(acc)
        return out

    dist = subtree(0, ())
    return math.fsum(p * v for p, v in dist)


def _enumerate_tilted_paths(law: MarkLaw, n: int, g) -> float:
    """E[ exp(S_n) g(S_1..S_n) ] under the tilted increment law, exactly."""
    incs, probs = tilted_walk_law(law).increment_marginal()
    total = []

    def rec(depth: int, prefix: tuple[float, ...], prob: float):
        if depth == n:
            total.append(prob * math.exp(prefix[-1]) * float(g(prefix)))
            return
        last = prefix[-1] if prefix else 0.0
        for s, p in zip(incs, probs):
            rec(depth + 1, prefix + (last + s,), prob * p)

    rec(0, (), 1.0)
    return math.fsum(total)


def many_to_one_check(law: MarkLaw, n: int, g, budget: int = 10**6) -> tuple[float, float, float]:
    """Both sides of the level-sum / tilted-walk conversion identity.

    ``g`` maps the tuple (V(x_1), ..., V(x_n)) of potential values along
    a path to a number.  Left side: exhaustive enumeration over tree
    configurations.  Right side: exhaustive enumeration over tilted spine
    paths.  Returns (lhs, rhs, |lhs - rhs|).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    est_configs = (len(law.offspring_configurations())) ** (2**n - 1)
    if est_configs > budget:
        raise EnumerationBudgetExceeded(
            f"about {est_configs} configurations at n={n} exceeds budget {budget}"
        )
    lhs = _enumerate_level_sums(law, n, g, budget)
    rhs = _enumerate_tilted_paths(law, n, g)
    return lhs, rhs, abs(lhs - rhs)
