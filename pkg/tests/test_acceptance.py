"""Acceptance suite: one test per criterion, each printing a verdict line.

Exact identities are checked at machine-level tolerances against
independent oracles; asymptotic statements run as desk-scale trend
experiments through the catalogue in :mod:`treewalk.experiments` at
their default (calibrated) sizes.
"""

import math

import numpy as np
import pytest

from treewalk import rng
from treewalk.chain import (
    ANCHOR_STATE,
    ROOT_STATE,
    build_chain,
    covariance_bound_check,
    detailed_balance_residual,
    edge_local_time_moments,
    hitting_probability,
    return_diagonal_monotone,
    return_time_moments,
    stationary_distribution,
)
from treewalk.experiments import default_spec, run_experiment
from treewalk.frontier import grow_to_frontier, partition_functions
from treewalk.limits import (
    ks_cdf_alternating,
    ks_cdf_dual,
    many_to_one_check,
    sample_eta_batch,
    scaling_density_mass,
    tilted_walk_law,
)
from treewalk.marks import solve_two_point_marks
from treewalk.tree import sample_tree
from treewalk.walk import batch_excursions

SQRT_HALF_PI = math.sqrt(math.pi / 2.0)


def _report(num, ok: bool, detail: str) -> None:
    print(f"\n[criterion {num}] {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"criterion {num}: {detail}"


@pytest.fixture(scope="module")
def law():
    return solve_two_point_marks(1.0, 0.44)


@pytest.fixture(scope="module")
def env_pool(law):
    """Fifty survival-conditioned environments shared across criteria."""
    return [sample_tree(law, seed=_seed(i), survival_proxy_depth=25) for i in range(50)]


def _seed(i):
    return int.from_bytes(rng.key_digest(2024, "acceptance", i)[:6], "little")


@pytest.fixture(scope="module")
def chain_pool(env_pool):
    """One moderate chain per environment (r = 12, cap 22)."""
    out = []
    for tree in env_pool:
        fr = grow_to_frontier(tree, 12.0, depth_cap=22, node_budget=500_000)
        out.append((tree, fr, build_chain(tree, fr)))
    return out


def test_criterion_01_partition_identity(env_pool):
    worst = 0.0
    for tree in env_pool:
        for r in (10.0, 1e3, 1e5):
            for cap in (20, 40):
                fr = grow_to_frontier(tree, r, depth_cap=cap, node_budget=500_000)
                y, z = partition_functions(tree, fr)
                worst = max(worst, abs(z - 2.0 * y) / z)
    _report(1, worst < 1e-12, f"max |Z-2Y|/Z = {worst:.3e} over 50 envs x 3 levels x 2 caps")


def test_criterion_02_local_identities(env_pool):
    checked = 0
    for tree in env_pool:
        checked += tree.check_all(tol=1e-14)
    _report(2, checked > 0, f"weight normalisation and U-identity at {checked} expanded nodes, tol 1e-14")


def test_criterion_03_stationarity_oracles(chain_pool):
    worst_direct = worst_power = worst_db = 0.0
    for _, _, ch in chain_pool:
        assert ch.n_states <= 5000
        pi_d = stationary_distribution(ch, "direct")
        pi_p = stationary_distribution(ch, "power", tol=1e-13, max_iter=600_000)
        worst_direct = max(worst_direct, float(np.abs(pi_d - ch.pi).max()))
        worst_power = max(worst_power, float(np.abs(pi_p - ch.pi).max()))
        worst_db = max(worst_db, detailed_balance_residual(ch))
    ok = worst_direct < 1e-10 and worst_power < 1e-10 and worst_db < 1e-12
    _report(
        3,
        ok,
        f"Linf direct {worst_direct:.2e}, power {worst_power:.2e}, "
        f"detailed balance {worst_db:.2e} on 50 chains",
    )


def test_criterion_04_return_time(chain_pool):
    worst = 0.0
    for _, _, ch in chain_pool:
        mean, _ = return_time_moments(ch)
        worst = max(worst, abs(mean * ch.pi[ROOT_STATE] - 1.0))
    sigmas = []
    censor = 0.0
    for _, _, ch in chain_pool[:10]:
        mean, _ = return_time_moments(ch)
        batch = batch_excursions(ch, 100_000, seed=17, step_cap=10**8)
        lengths = batch.lengths[~batch.censored].astype(float)
        se = lengths.std(ddof=1) / math.sqrt(len(lengths))
        sigmas.append(abs(lengths.mean() - mean) / se)
        censor = max(censor, batch.censor_fraction)
    ok = worst < 1e-10 and max(sigmas) <= 3.0 and censor < 0.01
    _report(
        4,
        ok,
        f"max |mean*pi-1| = {worst:.2e}; MC max {max(sigmas):.2f} se over 10 envs "
        f"x 1e5 excursions, censoring <= {censor:.4f}",
    )


def test_criterion_05_hitting_formula(chain_pool):
    worst = 0.0
    for i, (_, _, ch) in enumerate(chain_pool):
        pick = rng.stream(900 + i, "golosov")
        for _ in range(10):
            target = 2 + int(pick.integers(0, ch.n_states - 2))
            worst = max(worst, hitting_probability(ch, target).gap)
    _report(5, worst < 1e-10, f"max closed-form vs first-step solve gap {worst:.2e} (50 envs x 10 targets)")


def test_criterion_06_edge_local_time_moments(chain_pool):
    worst_sigma = 0.0
    bound_violations = 0
    pairs_checked = 0
    for i, (_, _, ch) in enumerate(chain_pool[:20]):
        visit = ch.omega_root_up / (np.exp(ch.V[2:]) * ch.H[2:])
        visible = 2 + np.flatnonzero(visit * 100_000 >= 200.0)
        if len(visible) < 3:
            continue
        pick = rng.stream(3000 + i, "moments")
        targets = tuple(int(visible[k]) for k in pick.integers(0, len(visible), size=3))
        batch = batch_excursions(ch, 100_000, seed=31 + i, step_cap=10**8, edge_targets=targets)
        keep = ~batch.censored
        for col, t in enumerate(targets):
            m1, m2 = edge_local_time_moments(ch, t)
            xs = batch.edge_counts[keep, col].astype(float)
            se1 = xs.std(ddof=1) / math.sqrt(len(xs))
            worst_sigma = max(worst_sigma, abs(xs.mean() - m1) / se1)
            sq = xs**2
            se2 = sq.std(ddof=1) / math.sqrt(len(sq))
            worst_sigma = max(worst_sigma, abs(sq.mean() - m2) / se2)
        # covariance inequality on five visible pairs per environment
        for _ in range(5):
            x, y = (int(visible[k]) for k in pick.integers(0, len(visible), size=2))
            if x == y:
                continue
            rep = covariance_bound_check(ch, x, y, mc_samples=20_000, seed=77 + i)
            pairs_checked += 1
            if not rep.within_bound:
                bound_violations += 1
            if rep.ancestor_case and not rep.matches_exact:
                bound_violations += 1
    ok = worst_sigma <= 4.0 and bound_violations == 0 and pairs_checked >= 100
    _report(
        6,
        ok,
        f"edge moments within {worst_sigma:.2f} se (20 envs x 1e5 excursions); "
        f"{pairs_checked} covariance pairs, {bound_violations} violations beyond 4 se",
    )


def test_criterion_07_even_diagonal_monotone(chain_pool):
    all_ok = True
    for i, (_, _, ch) in enumerate(chain_pool):
        pick = rng.stream(41 + i, "diag")
        states = [ROOT_STATE, ANCHOR_STATE, 2 + int(pick.integers(0, ch.n_states - 2))]
        for s in states:
            ok, _ = return_diagonal_monotone(ch, s, 200, tie_tol=1e-12)
            all_ok = all_ok and ok
    _report(7, all_ok, "P^{2k}(x,x) non-increasing for k <= 200 on 50 chains (ties 1e-12)")


def test_criterion_08_many_to_one(law):
    binary = solve_two_point_marks(1.0)
    worst = 0.0
    for lw in (binary, law):
        for n in (1, 2, 3):
            lhs, rhs, gap = many_to_one_check(lw, n, lambda p: math.exp(-p[-1]))
            worst = max(worst, gap / max(1.0, abs(lhs)))
            lhs, rhs, gap = many_to_one_check(lw, n, lambda p: 1.0 if p[0] > 0 else 2.0)
            worst = max(worst, gap / max(1.0, abs(lhs)))
        tlaw = tilted_walk_law(lw)
        mass_gap = abs(tlaw.total_mass() - 1.0)
        mean_gap = abs(tlaw.mean_increment())
        worst_tilt = max(mass_gap, mean_gap)
    ok = worst < 1e-10 and worst_tilt < 1e-12
    _report(
        8,
        ok,
        f"level-sum vs tilted-path enumeration rel gap {worst:.2e} (n <= 3, both laws); "
        f"tilted mass/mean gap {worst_tilt:.2e}",
    )


def test_criterion_09_drawdown_law():
    worst_series = max(
        abs(ks_cdf_alternating(float(x)) - ks_cdf_dual(float(x)))
        for x in np.linspace(0.2, 5.0, 241)
    )
    mass_gap = abs(scaling_density_mass() - 1.0)
    etas = sample_eta_batch(seed=424242, n_samples=100_000, grid_steps=10_000)
    mean_inv = float(np.mean(1.0 / etas))
    mean_gap = abs(mean_inv - SQRT_HALF_PI) / SQRT_HALF_PI
    from treewalk.experiments import _ks_statistic

    ks_stat = _ks_statistic(etas)
    ok = worst_series < 1e-10 and mass_gap <= 1e-6 and mean_gap < 0.02 and ks_stat < 0.015
    _report(
        9,
        ok,
        f"series gap {worst_series:.2e}; density mass gap {mass_gap:.2e}; "
        f"mean 1/eta off by {100 * mean_gap:.2f}%; KS statistic {ks_stat:.4f} "
        f"(1e5 samples, 1e4-step grids)",
    )


def test_criterion_10_partition_mean_identity(tmp_path):
    result = run_experiment(default_spec("ey-bound", seed=0, out_dir=tmp_path))
    matched = [r for r in result.rows if r.get("kind") == "matched"]
    worst = max(r["gap_sigmas"] for r in matched)
    exponent = [s for s in result.summary if s["check"] == "growth_exponent"][0]["value"]
    ok = result.verdicts["ey_matched_means_within_4se"] and result.verdicts[
        "ey_growth_exponent_at_most_2_3"
    ]
    _report(
        10,
        ok,
        f"matched means within {worst:.2f} se at r in {{6, 9}} (1e4 samples); "
        f"fitted growth exponent {exponent:.3f} <= 2.3",
    )


_TREND_SUITES = (
    "yr-asymptotics",
    "local-time",
    "local-proba",
    "tv-convergence",
    "scaling-law",
    "barrier-hit",
    "line-tightness",
    "madaule",
    "exact-identities",
)


@pytest.mark.parametrize("name", _TREND_SUITES)
def test_criterion_11_trend_suites(tmp_path, name):
    result = run_experiment(default_spec(name, seed=0, out_dir=tmp_path))
    failing = [k for k, v in result.verdicts.items() if not v]
    detail = f"{name}: " + (
        "all verdicts hold (" + ", ".join(result.verdicts) + ")"
        if not failing
        else "failing: " + ", ".join(failing)
    )
    _report("11:" + name, not failing, detail)
