import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from treewalk.errors import (
    DegeneratePath,
    DomainError,
    EnumerationBudgetExceeded,
    UnsupportedLaw,
)
from treewalk.limits import (
    TiltedWalkLaw,
    ks_cdf,
    ks_cdf_alternating,
    ks_cdf_dual,
    many_to_one_check,
    s_walk_stopping,
    s_walk_stopping_batch,
    sample_eta,
    sample_eta_batch,
    scaling_cdf,
    scaling_cdf_from_drawdowns,
    scaling_density,
    scaling_density_mass,
    tilted_walk_law,
)
from treewalk.marks import solve_two_point_marks

SQRT_HALF_PI = math.sqrt(math.pi / 2.0)


def test_ks_cdf_tails():
    assert ks_cdf(10.0) == pytest.approx(1.0 - 2.0 * math.exp(-200.0), abs=1e-12)
    assert ks_cdf(0.05) < 1e-12


def test_ks_series_agree_on_overlap():
    for x in np.linspace(0.2, 5.0, 197):
        a = ks_cdf_alternating(float(x))
        d = ks_cdf_dual(float(x))
        assert abs(a - d) < 1e-10


def test_ks_cdf_monotone_on_fine_grid():
    xs = np.linspace(1e-3, 6.0, 1000)
    vals = [ks_cdf(float(x)) for x in xs]
    assert all(0.0 <= v <= 1.0 for v in vals)
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_ks_domain_errors():
    with pytest.raises(DomainError):
        ks_cdf(0.0)
    with pytest.raises(DomainError):
        ks_cdf(-1.0)
    with pytest.raises(DomainError):
        scaling_density(0.0)


def test_scaling_density_integrates_to_one():
    assert abs(scaling_density_mass() - 1.0) < 1e-6


def test_scaling_density_tail_asymptotics():
    # integrable x^{-1/2} blow-up at the origin, superexponential decay at
    # infinity where the drawdown-cdf factor collapses
    assert scaling_density(1e-4) > scaling_density(1.0) > scaling_density(50.0)
    assert scaling_density(50.0) < 1e-12
    assert scaling_density(1e-4) * math.sqrt(2 * math.pi * 1e-4) == pytest.approx(1.0, abs=1e-12)


def test_scaling_cdf_matches_drawdown_mixture():
    etas = sample_eta_batch(seed=3, n_samples=20_000, grid_steps=1000)
    for x in (0.3, 1.0, 3.0):
        quad = scaling_cdf(x)
        mc = scaling_cdf_from_drawdowns(x, etas)
        assert abs(quad - mc) < 0.015


def test_sample_eta_determinism_and_positivity():
    a = sample_eta(seed=5, grid_steps=500)
    b = sample_eta(seed=5, grid_steps=500)
    assert a == b and a > 0.0
    etas = sample_eta_batch(seed=5, n_samples=64, grid_steps=500)
    again = sample_eta_batch(seed=5, n_samples=64, grid_steps=500)
    assert np.array_equal(etas, again)
    assert np.all(etas > 0.0)


def test_skeleton_drawdowns_nonnegative_without_refinement():
    etas = sample_eta_batch(seed=6, n_samples=500, grid_steps=300, refine=False)
    assert np.all(etas > 0.0)


def test_degenerate_paths_exhaust_attempts():
    with pytest.raises(DegeneratePath):
        sample_eta_batch(seed=1, n_samples=10, grid_steps=100, max_attempts=0)


def test_eta_moments_against_known_constant():
    etas = sample_eta_batch(seed=11, n_samples=20_000, grid_steps=2000)
    mean_inv = float(np.mean(1.0 / etas))
    assert abs(mean_inv - SQRT_HALF_PI) / SQRT_HALF_PI < 0.025


def test_tilted_law_mass_and_mean(binary_law, ext_law):
    for law in (binary_law, ext_law):
        tlaw = tilted_walk_law(law)
        assert abs(tlaw.total_mass() - 1.0) < 1e-14
        assert abs(tlaw.mean_increment()) < 1e-12


def test_tilted_law_binary_support_matches_hand_enumeration(binary_law):
    tlaw = tilted_walk_law(binary_law)
    incs, probs = tlaw.increment_marginal()
    assert len(incs) == 2
    assert len(tlaw.lambda_support()) <= 3
    # hand enumeration over the four children-mark configurations
    alpha, beta = binary_law.mark_values()
    p, pb = binary_law.p, binary_law.p_big
    up_mass = 2.0 * p * alpha  # each small-mark child carries weight alpha
    down_mass = 2.0 * pb * beta
    def lookup(pairs, *key):
        for entry in pairs:
            if all(abs(a - b) < 1e-12 for a, b in zip(entry[:-1], key)):
                return entry[-1]
        raise KeyError(key)

    marginal = list(zip(incs, probs))
    assert lookup(marginal, binary_law.a) == pytest.approx(up_mass, rel=1e-14)
    assert lookup(marginal, -binary_law.b) == pytest.approx(down_mass, rel=1e-14)
    # joint atoms from the four children-mark configurations
    atoms = list(zip(tlaw.increments, tlaw.lambdas, tlaw.probs))
    assert lookup(atoms, binary_law.a, 2 * alpha) == pytest.approx(p * p * 2.0 * alpha, rel=1e-14)
    assert lookup(atoms, -binary_law.b, alpha + beta) == pytest.approx(
        2.0 * p * pb * beta, rel=1e-14
    )


def test_tilted_law_rejects_non_laws():
    with pytest.raises(UnsupportedLaw):
        tilted_walk_law("not a law")


def test_zero_increment_walk_stops_at_floor_plus_one():
    flat = TiltedWalkLaw(
        increments=np.array([0.0]), lambdas=np.array([1.0]), probs=np.array([1.0])
    )
    assert s_walk_stopping(flat, 2.5, seed=1) == 3
    assert s_walk_stopping(flat, 7.0, seed=2) == 8
    assert list(s_walk_stopping_batch(flat, 4.0, 3, seed=3)) == [5, 5, 5]


def test_spine_walk_matches_partition_sum_mean(ext_law):
    # annealed identity: E(Y_r) = 1 + E(T_r) for the matched law
    from treewalk.frontier import grow_to_frontier, partition_functions
    from treewalk.tree import MarkedTree

    r = 6.0
    tlaw = tilted_walk_law(ext_law)
    ts = s_walk_stopping_batch(tlaw, r, 4000, seed=5)
    ys = []
    for i in range(4000):
        tree = MarkedTree(ext_law, seed=99, attempt=i)
        tree.expand(0)
        fr = grow_to_frontier(tree, r, 64, 500_000)
        ys.append(partition_functions(tree, fr)[0])
    ys = np.array(ys)
    gap = abs(ys.mean() - (1.0 + ts.mean()))
    sigma = math.hypot(ys.std(ddof=1) / 63.2, ts.std(ddof=1) / 63.2)
    assert gap <= 4.0 * sigma


@pytest.mark.parametrize("n", [1, 2, 3])
def test_many_to_one_constant_functional(binary_law, n):
    lhs, rhs, gap = many_to_one_check(binary_law, n, lambda path: 1.0)
    assert gap < 1e-10 * max(1.0, abs(lhs))
    assert lhs == pytest.approx(binary_law.mean_offspring**n, rel=1e-12)


def test_many_to_one_indicator_and_weighted(binary_law, ext_law):
    lhs, rhs, gap = many_to_one_check(binary_law, 2, lambda p: 1.0 if p[0] > 0 else 0.0)
    assert gap < 1e-12 * max(1.0, abs(lhs))
    # g = exp(-V_n) turns the level sum into the unit-mean level martingale
    for law in (binary_law, ext_law):
        lhs, rhs, gap = many_to_one_check(law, 1, lambda p: math.exp(-p[-1]))
        assert lhs == pytest.approx(1.0, abs=1e-13)
        assert rhs == pytest.approx(1.0, abs=1e-13)
    lhs, rhs, gap = many_to_one_check(ext_law, 3, lambda p: math.exp(-p[-1]))
    assert gap < 1e-10


def test_many_to_one_budget_guard(binary_law):
    with pytest.raises(EnumerationBudgetExceeded):
        many_to_one_check(binary_law, 4, lambda p: 1.0)


@given(st.floats(min_value=0.25, max_value=4.0))
@settings(max_examples=40, deadline=None)
def test_ks_cdf_between_series_bounds(x):
    # both representations bound the value within mutual tolerance
    assert abs(ks_cdf(x) - ks_cdf_dual(x)) < 1e-9
