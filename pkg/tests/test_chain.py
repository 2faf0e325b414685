import math

import numpy as np
import pytest

from treewalk.chain import (
    ANCHOR_STATE,
    ROOT_STATE,
    build_chain,
    covariance_bound_check,
    dense_transition_matrix,
    detailed_balance_residual,
    distribution_at,
    edge_local_time_moments,
    hitting_probability,
    return_diagonal_monotone,
    return_time_moments,
    stationary_distribution,
    stationarity_residual,
)
from treewalk.errors import InvalidPair, SolveFailed
from treewalk.frontier import grow_to_frontier
from treewalk.marks import solve_two_point_marks
from treewalk.tree import MarkedTree, sample_tree, unary_chain
from treewalk.walk import batch_excursions


@pytest.fixture(scope="module")
def five_state():
    u = unary_chain(6)
    fr = grow_to_frontier(u, 2.5, depth_cap=10)
    return build_chain(u, fr)


@pytest.fixture(scope="module")
def env_chain(small_env):
    tree, frontier = small_env
    return build_chain(tree, frontier)


def test_unary_chain_shape_and_weights(five_state):
    ch = five_state
    assert ch.n_states == 5
    P = dense_transition_matrix(ch)
    assert np.allclose(P.sum(axis=1), 1.0, atol=1e-14)
    # interior vertices split half-and-half between parent and child
    assert P[ROOT_STATE, ANCHOR_STATE] == pytest.approx(0.5)
    # hand-computed stationary weights: (1, 2, 2, 2, 1) / 8
    assert np.allclose(ch.pi, np.array([1, 2, 2, 2, 1]) / 8.0)
    assert ch.pi[ANCHOR_STATE] == ch.pi[-1]


def test_unary_chain_is_bipartite(five_state):
    P = dense_transition_matrix(five_state)
    color = five_state.depths % 2  # anchor depth -1 pairs with odd
    for i, j in zip(*np.nonzero(P)):
        assert color[i] != color[j]


def test_stationary_solvers_agree_with_formula(env_chain):
    for method in ("direct", "power"):
        pi = stationary_distribution(env_chain, method)
        assert np.abs(pi - env_chain.pi).max() < 1e-10
        assert stationarity_residual(env_chain, pi) < 1e-12
    assert detailed_balance_residual(env_chain) < 1e-12


def test_power_iteration_reports_nonconvergence(env_chain):
    with pytest.raises(SolveFailed):
        stationary_distribution(env_chain, "power", tol=1e-15, max_iter=3)


def test_distribution_at_base_cases(env_chain):
    d0 = distribution_at(env_chain, 0)
    assert d0[ROOT_STATE] == 1.0 and d0.sum() == 1.0
    d1 = distribution_at(env_chain, 1)
    row = np.asarray(env_chain.P[ROOT_STATE].todense()).ravel()
    assert np.abs(d1 - row).max() < 1e-15


def test_distribution_respects_parity_and_mass(env_chain):
    for n in (7, 12):
        d = distribution_at(env_chain, n)
        assert abs(d.sum() - 1.0) < 1e-12
        parity = (env_chain.depths % 2 == n % 2) | (env_chain.node_ids == -1)
        on_wrong = d[~parity] if n % 2 == 0 else d[env_chain.depths % 2 == 0]
        # supports live on one parity class per step count
        even_mass = d[env_chain.depths % 2 == 0].sum()
        assert even_mass == pytest.approx(1.0 if n % 2 == 0 else 0.0, abs=1e-12)


def test_kernel_power_matches_dense_oracle(five_state, ext_law):
    tree = sample_tree(ext_law, seed=31)
    fr = grow_to_frontier(tree, 4.0, depth_cap=8)
    ch = build_chain(tree, fr)
    if ch.n_states <= 200:
        P = dense_transition_matrix(ch)
        dense = np.linalg.matrix_power(P, 8)[ROOT_STATE]
        assert np.abs(distribution_at(ch, 8) - dense).max() < 1e-12
    M = dense_transition_matrix(five_state)
    dense = np.linalg.matrix_power(M, 6)[ROOT_STATE]
    assert np.abs(distribution_at(five_state, 6) - dense).max() < 1e-13


def test_even_return_probabilities_nonincreasing(five_state, env_chain):
    for chain in (five_state, env_chain):
        ok, seq = return_diagonal_monotone(chain, ROOT_STATE, 50)
        assert ok and len(seq) == 50
        ok_anchor, _ = return_diagonal_monotone(chain, ANCHOR_STATE, 50)
        assert ok_anchor


def test_hitting_probability_unary_child(five_state):
    rep = hitting_probability(five_state, five_state.state_of_node[1])
    assert rep.formula == pytest.approx(0.5, abs=1e-15)
    assert rep.gap < 1e-12


def test_hitting_probability_two_methods_agree(env_chain):
    gen = np.random.default_rng(5)
    states = gen.choice(np.arange(2, env_chain.n_states), size=10, replace=False)
    for s in states:
        rep = hitting_probability(env_chain, int(s))
        assert rep.gap < 1e-10


def test_hitting_probability_decreases_along_nonnegative_potential_chain():
    # marks below 1 keep every potential increment positive, so the
    # denominator sum grows with depth and the probability must fall
    struct = None
    for _ in range(6):
        struct = ([0.5], [struct])
    tree = MarkedTree.from_structure(struct)
    fr = grow_to_frontier(tree, 50.0, depth_cap=5)
    ch = build_chain(tree, fr)
    probs = [hitting_probability(ch, ch.state_of_node[x]).formula for x in range(1, 6)]
    assert all(b < a for a, b in zip(probs, probs[1:]))


def test_return_time_mean_matches_stationary_mass(five_state, env_chain):
    for chain, expect in ((five_state, 4.0), (env_chain, None)):
        mean, second = return_time_moments(chain)
        assert abs(mean * chain.pi[ROOT_STATE] - 1.0) < 1e-10
        assert mean >= 2.0
        assert second >= mean**2
        if expect is not None:
            assert mean == pytest.approx(expect, abs=1e-12)


def test_return_time_monte_carlo_cross_check(env_chain):
    mean, second = return_time_moments(env_chain)
    batch = batch_excursions(env_chain, 30_000, seed=4, step_cap=10**6)
    lengths = batch.lengths[~batch.censored].astype(float)
    se = lengths.std(ddof=1) / math.sqrt(len(lengths))
    assert batch.censor_fraction < 0.01
    assert abs(lengths.mean() - mean) < 4.0 * se


def test_edge_local_time_closed_forms(five_state, env_chain):
    # child of the root on the unary chain: mean is omega(root, child) = 1/2
    s1 = five_state.state_of_node[1]
    mean, second = edge_local_time_moments(five_state, s1)
    assert mean == pytest.approx(0.5) and second == pytest.approx(0.5)
    for target in range(2, min(10, env_chain.n_states)):
        m1, m2 = edge_local_time_moments(env_chain, target)
        assert m2 >= m1 - 1e-15  # integer-valued variable


def test_edge_local_time_monte_carlo(env_chain):
    targets = tuple(range(2, 6))
    batch = batch_excursions(env_chain, 30_000, seed=9, step_cap=10**6, edge_targets=targets)
    keep = ~batch.censored
    for col, t in enumerate(targets):
        m1, m2 = edge_local_time_moments(env_chain, t)
        xs = batch.edge_counts[keep, col].astype(float)
        se1 = xs.std(ddof=1) / math.sqrt(len(xs))
        assert abs(xs.mean() - m1) <= 4.0 * se1
        sq = xs**2
        se2 = sq.std(ddof=1) / math.sqrt(len(sq))
        assert abs(sq.mean() - m2) <= 4.0 * se2


def test_covariance_ancestor_case_exact(env_chain):
    # find a parent-child pair away from the root
    child = None
    for s in range(2, env_chain.n_states):
        p = int(env_chain.parent_state[s])
        if p >= 2:
            child, parent = s, p
            break
    rep = covariance_bound_check(env_chain, child, parent, mc_samples=30_000, seed=11)
    assert rep.ancestor_case and rep.exact is not None
    assert rep.matches_exact
    assert rep.within_bound


def test_covariance_sibling_pair_within_bound(env_chain):
    sibs = None
    for s in range(2, env_chain.n_states):
        for t in range(s + 1, env_chain.n_states):
            if env_chain.parent_state[s] == env_chain.parent_state[t]:
                sibs = (s, t)
                break
        if sibs:
            break
    rep = covariance_bound_check(env_chain, *sibs, mc_samples=30_000, seed=12)
    assert not rep.ancestor_case
    assert rep.within_bound


def test_covariance_rejects_identical_vertices(env_chain):
    with pytest.raises(InvalidPair):
        covariance_bound_check(env_chain, 3, 3, mc_samples=10, seed=1)
    with pytest.raises(InvalidPair):
        edge_local_time_moments(env_chain, ROOT_STATE)
