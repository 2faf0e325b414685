"""Experiment catalogue: named, reproducible desk-scale studies.

Each experiment turns one asymptotic statement (or the exact-identity
suite) into per-environment rows plus an aggregate summary with
pass/fail verdicts.  Limits that hold at logarithmic speed cannot be
certified numerically, so the asymptotic suites check a monotone trend
of medians over a grid, plus an order-of-magnitude band at the largest
grid point where a normalising constant is available.

Every experiment writes ``<name>_rows.csv`` (+ ``.jsonl`` mirror),
``<name>_summary.csv`` (+ mirror) and ``<name>_manifest.json``; rerunning
with the same configuration reproduces the row and summary files
byte-for-byte (the manifest additionally records wall time and the
output hashes).
"""

from __future__ import annotations

import hashlib
import json
import math
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__ as _code_version
from . import rng
from .chain import (
    ROOT_STATE,
    build_chain,
    detailed_balance_residual,
    edge_local_time_moments,
    hitting_probability,
    return_diagonal_monotone,
    return_time_moments,
    stationary_distribution,
)
from .config import ConfigError, get_float, get_floats, get_int, law_from_config
from .errors import BudgetExceeded
from .frontier import grow_to_frontier, partition_functions
from .limits import (
    ks_cdf_grid,
    sample_eta_batch,
    s_walk_stopping_batch,
    scaling_cdf,
    scaling_cdf_from_drawdowns,
    scaling_density_mass,
    tilted_walk_law,
)
from .marks import MarkLaw, solve_two_point_marks
from .measures import invariant_measure, measure_drift, parity_measure
from .tree import MarkedTree, level_sweep, martingales, sample_tree
from .walk import barrier_hit_rate, batch_excursions, root_local_time_profile

EXPERIMENT_NAMES = (
    "yr-asymptotics",
    "local-time",
    "local-proba",
    "tv-convergence",
    "scaling-law",
    "barrier-hit",
    "ey-bound",
    "line-tightness",
    "madaule",
    "exact-identities",
)


@dataclass(frozen=True)
class ExperimentSpec:
    """Fully resolved experiment request (no ambient defaults left)."""

    name: str
    law: MarkLaw
    seed: int
    environments: int
    grid: tuple[float, ...]
    replicas: tuple[int, ...]
    depth_cap: int
    node_budget: int
    survival_proxy_depth: int
    excursion_cap: int
    dhat_depth: int
    samples: int
    grid_steps: tuple[int, ...]
    state_cap: int
    lambda_grid: tuple[float, ...]
    workers: int
    out_dir: Path

    def resolved(self) -> dict:
        d = asdict(self)
        d["out_dir"] = str(self.out_dir)
        d["law"] = {
            "family": self.law.family,
            "a": self.law.a,
            "b": self.law.b,
            "p": self.law.p,
            "p_big": self.law.p_big,
            "q0": self.law.q0,
        }
        return d


_EXT_LAW = ("two_point_extinction", 1.0, 0.44)
_EXT_LAW_WIDE = ("two_point_extinction", 0.8, 0.35)  # larger sigma2, denser levels
_BIN_LAW = ("two_point_binary", 1.0, None)

_DEFAULTS: dict[str, dict] = {
    "yr-asymptotics": dict(
        law=_EXT_LAW, environments=120, grid=(6.0, 25.0, 100.0), depth_cap=72,
        node_budget=400_000, dhat_depth=25,
    ),
    "local-time": dict(
        law=_EXT_LAW_WIDE, environments=100, grid=(10_000.0, 100_000.0, 1_000_000.0),
        dhat_depth=25, node_budget=2_000_000,
    ),
    "local-proba": dict(
        law=_EXT_LAW, environments=100, grid=(16.0, 40.0, 100.0), depth_cap=64,
        node_budget=400_000, dhat_depth=25,
    ),
    "tv-convergence": dict(
        law=_EXT_LAW, environments=100, grid=(1_000.0, 10_000.0, 100_000.0),
        depth_cap=40, state_cap=5_000, samples=15,
    ),
    "scaling-law": dict(
        law=_EXT_LAW, grid_steps=(500, 2000, 8000), samples=30_000, environments=0,
    ),
    "barrier-hit": dict(
        law=_EXT_LAW, environments=100, grid=(1_000.0, 10_000.0, 100_000.0),
        replicas=(128, 96, 64), node_budget=3_000_000,
    ),
    "ey-bound": dict(
        law=_EXT_LAW, grid=(6.0, 9.0), samples=10_000, depth_cap=64,
        environments=0, node_budget=1_000_000,
    ),
    "line-tightness": dict(
        law=_EXT_LAW, environments=500, grid=(4.0, 9.0, 20.0), depth_cap=64,
        node_budget=500_000,
    ),
    "madaule": dict(
        law=_BIN_LAW, environments=48, lambda_grid=(2.0, 3.0, 4.25), dhat_depth=25,
    ),
    "exact-identities": dict(
        law=_EXT_LAW, environments=50, grid=(5.0, 20.0, 80.0), depth_cap=22,
        node_budget=300_000, samples=20_000,
    ),
}


def default_spec(name: str, cfg: dict[str, dict[str, str]] | None = None, **overrides) -> ExperimentSpec:
    """Resolve an experiment spec from defaults, config file and overrides."""
    if name not in EXPERIMENT_NAMES:
        raise ConfigError(f"unknown experiment {name!r}; see `experiment list`")
    d = _DEFAULTS[name]
    cfg = cfg or {}
    exp_cfg = cfg.get("experiment", {})
    run_cfg = cfg.get("run", {})
    if "law" in cfg:
        law = law_from_config(cfg)
    else:
        family, a, q0 = d["law"]
        law = solve_two_point_marks(a, q0) if family == "two_point_extinction" else solve_two_point_marks(a)

    def pick(key, default):
        if key in overrides and overrides[key] is not None:
            return overrides[key]
        return default

    grid = pick("grid", get_floats(exp_cfg, "grid", tuple(d.get("grid", ()))))
    spec = ExperimentSpec(
        name=name,
        law=law,
        seed=int(pick("seed", get_int(run_cfg, "seed", 0))),
        environments=int(pick("environments", get_int(exp_cfg, "environments", d.get("environments", 0)))),
        grid=tuple(float(g) for g in grid),
        replicas=tuple(
            int(x) for x in pick("replicas", get_floats(exp_cfg, "replicas", tuple(d.get("replicas", ()))))
        ),
        depth_cap=int(pick("depth_cap", get_int(exp_cfg, "depth_cap", d.get("depth_cap", 64)))),
        node_budget=int(pick("node_budget", get_int(exp_cfg, "node_budget", d.get("node_budget", 500_000)))),
        survival_proxy_depth=int(
            pick("survival_proxy_depth", get_int(exp_cfg, "survival_proxy_depth", d.get("survival_proxy_depth", 25)))
        ),
        excursion_cap=int(pick("excursion_cap", get_int(exp_cfg, "excursion_cap", 10**8))),
        dhat_depth=int(pick("dhat_depth", get_int(exp_cfg, "dhat_depth", d.get("dhat_depth", 25)))),
        samples=int(pick("samples", get_int(exp_cfg, "samples", d.get("samples", 10_000)))),
        grid_steps=tuple(
            int(x) for x in pick("grid_steps", get_floats(exp_cfg, "grid_steps", tuple(d.get("grid_steps", ()))))
        ),
        state_cap=int(pick("state_cap", get_int(exp_cfg, "state_cap", d.get("state_cap", 2_000_000)))),
        lambda_grid=pick("lambda_grid", get_floats(exp_cfg, "lambda_grid", tuple(d.get("lambda_grid", ())))),
        workers=int(pick("workers", get_int(run_cfg, "workers", 1))),
        out_dir=Path(pick("out_dir", run_cfg.get("out_dir", "runs"))),
    )
    return spec


# -- shared helpers ---------------------------------------------------------------


def _env_seed(seed: int, index: int) -> int:
    return int.from_bytes(rng.key_digest(seed, "envseed", index)[:8], "little") >> 1


def _median(xs) -> float:
    return float(statistics.median(xs)) if xs else math.nan


def _quantile(xs, q: float) -> float:
    if not xs:
        return math.nan
    return float(np.quantile(np.asarray(xs, dtype=float), q))


def _strictly_decreasing(xs) -> bool:
    return all(b < a for a, b in zip(xs, xs[1:]) if not (math.isnan(a) or math.isnan(b))) and not any(
        math.isnan(x) for x in xs
    )


def _non_increasing(xs, slack: float = 0.0) -> bool:
    return all(b <= a + slack for a, b in zip(xs, xs[1:])) and not any(math.isnan(x) for x in xs)


def _trend_down(xs, step_slack: float = 0.10) -> bool:
    """Overall strict decrease, allowing a relative plateau per step."""
    if any(math.isnan(x) for x in xs) or len(xs) < 2:
        return False
    steps_ok = all(b <= a * (1.0 + step_slack) for a, b in zip(xs, xs[1:]))
    return steps_ok and xs[-1] < xs[0]


def _trend_up(xs, step_slack: float = 0.10) -> bool:
    """Overall strict increase, allowing a relative plateau per step."""
    if any(math.isnan(x) for x in xs) or len(xs) < 2:
        return False
    steps_ok = all(b >= a - step_slack * abs(a) for a, b in zip(xs, xs[1:]))
    return steps_ok and xs[-1] > xs[0]


def _map_envs(worker, tasks, workers: int):
    if workers <= 1:
        return [worker(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(worker, tasks, chunksize=max(1, len(tasks) // (8 * workers))))


def _clean(rows, key, grid_key="r"):
    by = {}
    for row in rows:
        if not row.get("excluded"):
            by.setdefault(row[grid_key], []).append(row[key])
    return by


# -- yr-asymptotics ----------------------------------------------------------------


def _yr_env(task) -> list[dict]:
    spec, index = task
    seed = _env_seed(spec.seed, index)
    tree = sample_tree(spec.law, seed, spec.survival_proxy_depth)
    sigma2 = spec.law.sigma2
    rows = []
    try:
        dhat = martingales(tree, spec.dhat_depth, lam=1e18, node_budget=spec.node_budget).D
    except BudgetExceeded:
        dhat = math.nan
    for r in spec.grid:
        row = dict(env=index, seed=seed, r=r, depth_cap=spec.depth_cap, dhat=dhat, sigma2=sigma2)
        try:
            fr = grow_to_frontier(tree, r, spec.depth_cap, spec.node_budget)
        except BudgetExceeded:
            row.update(excluded=True, reason="node_budget")
            rows.append(row)
            continue
        y, z = partition_functions(tree, fr)
        lam = math.log(r)
        row.update(
            n_nodes=fr.n_nodes,
            y=y,
            z=z,
            leaked_mass=fr.leaked_mass,
            leak_fraction=fr.leaked_mass / y,
            line_separated=fr.line_separated,
        )
        if not (dhat > 0.0):
            row.update(excluded=True, reason="dhat_nonpositive")
        else:
            ratio = (y / lam) / (2.0 / sigma2 * dhat)
            row.update(ratio=ratio, log_ratio=math.log(ratio), excluded=False, reason="")
        rows.append(row)
    return rows


def _run_yr(spec: ExperimentSpec):
    tasks = [(spec, i) for i in range(spec.environments)]
    rows = [r for part in _map_envs(_yr_env, tasks, spec.workers) for r in part]
    by = _clean(rows, "log_ratio")
    summary, med_abs, med_ratio = [], [], []
    for r in spec.grid:
        vals = by.get(r, [])
        ratios = [math.exp(v) for v in vals]
        med_abs.append(_median([abs(v) for v in vals]))
        med_ratio.append(_median(ratios))
        summary.append(
            dict(
                r=r,
                n_clean=len(vals),
                n_excluded=sum(1 for row in rows if row["r"] == r and row.get("excluded")),
                median_ratio=med_ratio[-1],
                median_abs_log_ratio=med_abs[-1],
                q25_ratio=_quantile(ratios, 0.25),
                q75_ratio=_quantile(ratios, 0.75),
            )
        )
    verdicts = {
        "yr_trend_median_abs_log_ratio_decreasing": _strictly_decreasing(med_abs),
        "yr_band_ratio_within_3x_at_largest_r": bool(med_ratio and 1.0 / 3.0 <= med_ratio[-1] <= 3.0),
    }
    return rows, summary, verdicts


# -- local-time ---------------------------------------------------------------------


def _localtime_env(task) -> list[dict]:
    spec, index = task
    seed = _env_seed(spec.seed, index)
    tree = sample_tree(spec.law, seed, spec.survival_proxy_depth)
    sigma2 = spec.law.sigma2
    rows = []
    try:
        dhat = martingales(tree, spec.dhat_depth, lam=1e18, node_budget=spec.node_budget).D
    except BudgetExceeded:
        dhat = math.nan
    tree.expand(0)
    e_neg_u = tree.exp_neg_U(0)
    checkpoints = tuple(int(n) for n in spec.grid)
    try:
        profile = root_local_time_profile(tree, checkpoints, seed, spec.node_budget)
    except BudgetExceeded:
        return [
            dict(env=index, seed=seed, n=n, excluded=True, reason="node_budget")
            for n in checkpoints
        ]
    target = None if not (dhat > 0) else sigma2 / (4.0 * dhat) * e_neg_u
    for n in checkpoints:
        row = dict(env=index, seed=seed, n=n, local_time=profile[n], dhat=dhat, sigma2=sigma2)
        scaled = profile[n] * math.log(n) / n
        row["scaled_local_time"] = scaled
        if target is None:
            row.update(excluded=True, reason="dhat_nonpositive")
        elif scaled <= 0.0:
            row.update(excluded=True, reason="zero_local_time")
        else:
            ratio = scaled / target
            row.update(ratio=ratio, log_ratio=math.log(ratio), excluded=False, reason="")
        rows.append(row)
    return rows


def _run_localtime(spec: ExperimentSpec):
    tasks = [(spec, i) for i in range(spec.environments)]
    rows = [r for part in _map_envs(_localtime_env, tasks, spec.workers) for r in part]
    by = _clean(rows, "log_ratio", grid_key="n")
    med_abs, med_ratio, summary = [], [], []
    for g in spec.grid:
        n = int(g)
        vals = by.get(n, [])
        ratios = [math.exp(v) for v in vals]
        med_abs.append(_median([abs(v) for v in vals]))
        med_ratio.append(_median(ratios))
        summary.append(
            dict(
                n=n,
                n_clean=len(vals),
                n_excluded=sum(1 for row in rows if row["n"] == n and row.get("excluded")),
                median_ratio=med_ratio[-1],
                median_abs_log_ratio=med_abs[-1],
                q25_ratio=_quantile(ratios, 0.25),
                q75_ratio=_quantile(ratios, 0.75),
            )
        )
    verdicts = {
        "localtime_trend_median_abs_log_ratio_decreasing": _strictly_decreasing(med_abs),
        "localtime_band_ratio_within_3x_at_largest_n": bool(
            med_ratio and 1.0 / 3.0 <= med_ratio[-1] <= 3.0
        ),
    }
    return rows, summary, verdicts


# -- local-proba ---------------------------------------------------------------------


def _localproba_env(task) -> list[dict]:
    spec, index = task
    seed = _env_seed(spec.seed, index)
    tree = sample_tree(spec.law, seed, spec.survival_proxy_depth)
    sigma2 = spec.law.sigma2
    try:
        dhat = martingales(tree, spec.dhat_depth, lam=1e18, node_budget=spec.node_budget).D
    except BudgetExceeded:
        dhat = math.nan
    tree.expand(0)
    e_neg_u = tree.exp_neg_U(0)
    rows = []
    for g in spec.grid:
        n = int(g)
        if n % 2:
            raise ConfigError("local-proba grid must contain even step counts")
        row = dict(env=index, seed=seed, n=n, dhat=dhat, sigma2=sigma2)
        try:
            fr = grow_to_frontier(tree, float(n), spec.depth_cap, spec.node_budget)
            ch = build_chain(tree, fr, spec.state_cap)
        except BudgetExceeded:
            row.update(excluded=True, reason="node_budget")
            rows.append(row)
            continue
        v = np.zeros(ch.n_states)
        v[ROOT_STATE] = 1.0
        for _ in range(n):
            v = ch.PT @ v
        p_nn = float(v[ROOT_STATE])
        row.update(p_return=p_nn, n_states=ch.n_states)
        if not (dhat > 0):
            row.update(excluded=True, reason="dhat_nonpositive")
        else:
            ratio = (math.log(n) * p_nn) / (sigma2 / (2.0 * dhat) * e_neg_u)
            row.update(ratio=ratio, log_ratio=math.log(ratio), excluded=False, reason="")
        rows.append(row)
    return rows


def _run_localproba(spec: ExperimentSpec):
    tasks = [(spec, i) for i in range(spec.environments)]
    rows = [r for part in _map_envs(_localproba_env, tasks, spec.workers) for r in part]
    by = _clean(rows, "log_ratio", grid_key="n")
    med_abs, summary = [], []
    for g in spec.grid:
        n = int(g)
        vals = by.get(n, [])
        med_abs.append(_median([abs(v) for v in vals]))
        summary.append(
            dict(
                n=n,
                n_clean=len(vals),
                n_excluded=sum(1 for row in rows if row["n"] == n and row.get("excluded")),
                median_ratio=_median([math.exp(v) for v in vals]),
                median_abs_log_ratio=med_abs[-1],
            )
        )
    verdicts = {"localproba_trend_median_abs_log_ratio_decreasing": _strictly_decreasing(med_abs)}
    return rows, summary, verdicts


# -- tv-convergence -------------------------------------------------------------------


def _parity_vector(chain, n: int) -> np.ndarray:
    even = chain.depths % 2 == 0
    sel = even if n % 2 == 0 else ~even
    w = np.where(sel, chain.pi, 0.0)
    return w / w.sum()


def _tv_env(task) -> list[dict]:
    spec, index = task
    seed = _env_seed(spec.seed, index)
    tree = sample_tree(spec.law, seed, spec.survival_proxy_depth)
    checkpoints = sorted(int(g) for g in spec.grid)
    base = dict(env=index, seed=seed)
    try:
        fr = grow_to_frontier(tree, max(spec.grid), spec.depth_cap, spec.node_budget)
        ch = build_chain(tree, fr)
    except BudgetExceeded:
        return [dict(base, n=n, excluded=True, reason="node_budget") for n in checkpoints]
    if ch.n_states > spec.state_cap:
        return [
            dict(base, n=n, excluded=True, reason="state_cap", n_states=ch.n_states)
            for n in checkpoints
        ]
    line_active = bool(np.any(fr.on_line))
    rows = []
    v = np.zeros(ch.n_states)
    v[ROOT_STATE] = 1.0
    step = 0
    for n in checkpoints:
        while step < n:
            v = ch.PT @ v
            step += 1
        ref = _parity_vector(ch, n)
        d = 0.5 * float(np.abs(v - ref).sum())
        rows.append(
            dict(
                base,
                n=n,
                d_tv=d,
                n_states=ch.n_states,
                line_active=line_active,
                excluded=False,
                reason="",
            )
        )
    # two-time joint check on small chains via dense spectral powers
    if ch.n_states <= 1200 and index < spec.samples:
        lam, U, sqrt_pi = _spectral(ch)
        for n in (checkpoints[0], checkpoints[1] if len(checkpoints) > 1 else checkpoints[0] * 10):
            half = n // 2
            A = _spectral_power(lam, U, sqrt_pi, half)
            row0 = A[ROOT_STATE]
            joint = row0[:, None] * A
            ref = np.outer(_parity_vector(ch, half), _parity_vector(ch, n))
            d2 = 0.5 * float(np.abs(joint - ref).sum())
            rows.append(
                dict(
                    base,
                    n=n,
                    d_tv=d2,
                    n_states=ch.n_states,
                    line_active=line_active,
                    excluded=False,
                    reason="kappa2",
                )
            )
    return rows


def _spectral(chain):
    pi = chain.pi
    sqrt_pi = np.sqrt(pi)
    S = chain.P.toarray() * (sqrt_pi[:, None] / sqrt_pi[None, :])
    S = 0.5 * (S + S.T)
    lam, U = np.linalg.eigh(S)
    return lam, U, sqrt_pi


def _spectral_power(lam, U, sqrt_pi, n: int) -> np.ndarray:
    Ln = np.sign(lam) ** (n % 2) * np.abs(lam) ** n
    M = (U * Ln[None, :]) @ U.T
    return M * (sqrt_pi[None, :] / sqrt_pi[:, None])


def _run_tv(spec: ExperimentSpec):
    tasks = [(spec, i) for i in range(spec.environments)]
    rows = [r for part in _map_envs(_tv_env, tasks, spec.workers) for r in part]
    kappa1 = [r for r in rows if not r.get("excluded") and r.get("reason") == ""]
    kappa2 = [r for r in rows if r.get("reason") == "kappa2"]
    med, summary = [], []
    for g in spec.grid:
        n = int(g)
        vals = [r["d_tv"] for r in kappa1 if r["n"] == n]
        med.append(_median(vals))
        summary.append(
            dict(
                n=n,
                kind="kappa1",
                n_clean=len(vals),
                n_excluded=sum(1 for r in rows if r.get("excluded") and r["n"] == n),
                median_d_tv=med[-1],
                q75_d_tv=_quantile(vals, 0.75),
            )
        )
    k2_ns = sorted({r["n"] for r in kappa2})
    med2 = []
    for n in k2_ns:
        vals = [r["d_tv"] for r in kappa2 if r["n"] == n]
        med2.append(_median(vals))
        summary.append(dict(n=n, kind="kappa2", n_clean=len(vals), n_excluded=0, median_d_tv=med2[-1]))
    verdicts = {
        "tv_trend_median_dtv_decreasing": _strictly_decreasing(med),
        "tv_kappa2_joint_dtv_decreasing": _strictly_decreasing(med2) if len(med2) >= 2 else False,
    }
    return rows, summary, verdicts


# -- scaling-law -----------------------------------------------------------------------


def _ks_statistic(etas: np.ndarray) -> float:
    xs = np.sort(etas)
    n = len(xs)
    F = ks_cdf_grid(xs)
    hi = np.abs(np.arange(1, n + 1) / n - F).max()
    lo = np.abs(np.arange(0, n) / n - F).max()
    return float(max(hi, lo))


def _run_scaling(spec: ExperimentSpec):
    rows = []
    ks_skeleton = []
    finest = None
    for gs in spec.grid_steps:
        raw = sample_eta_batch(spec.seed, spec.samples, gs, refine=False)
        ksr = _ks_statistic(raw)
        ks_skeleton.append(ksr)
        row = dict(grid_steps=gs, samples=spec.samples, ks_skeleton=ksr)
        if gs == spec.grid_steps[-1]:
            finest = sample_eta_batch(spec.seed, spec.samples, gs, refine=True)
            row["ks_refined"] = _ks_statistic(finest)
            row["mean_inv_eta"] = float(np.mean(1.0 / finest))
        rows.append(row)
    mass = scaling_density_mass()
    xs = [0.2, 0.5, 1.0, 2.0, 4.0, 8.0]
    f_gap = max(abs(scaling_cdf(x) - scaling_cdf_from_drawdowns(x, finest)) for x in xs)
    summary = [
        dict(
            check="density_mass",
            value=mass,
            target=1.0,
            gap=abs(mass - 1.0),
        ),
        dict(check="cdf_vs_drawdown_mc", value=f_gap, target=0.0, gap=f_gap),
        dict(
            check="mean_inv_eta_finest",
            value=rows[-1]["mean_inv_eta"],
            target=math.sqrt(math.pi / 2.0),
            gap=abs(rows[-1]["mean_inv_eta"] - math.sqrt(math.pi / 2.0)),
        ),
    ]
    verdicts = {
        "scaling_mass_within_1e6": abs(mass - 1.0) <= 1e-6,
        "scaling_skeleton_ks_decreasing_with_grid": _strictly_decreasing(ks_skeleton),
        "scaling_cdf_matches_drawdown_mc": f_gap < 0.01,
        "scaling_refined_ks_small": rows[-1]["ks_refined"] < 0.015,
    }
    return rows, summary, verdicts


# -- barrier-hit -----------------------------------------------------------------------


def _barrier_env(task) -> list[dict]:
    spec, index = task
    seed = _env_seed(spec.seed, index)
    tree = sample_tree(spec.law, seed, spec.survival_proxy_depth)
    rows = []
    for g, reps in zip(spec.grid, spec.replicas):
        n = int(g)
        # a_n = (log n)^{3/2} grows slower than (log n)^2, the widest
        # regime in which line hits become negligible, while keeping the
        # rates resolvable at desk-scale n
        r = n / math.log(n) ** 1.5
        row = dict(env=index, seed=seed, n=n, r=r, replicas=reps)
        try:
            rep = barrier_hit_rate(tree, n, r, reps, seed=seed, node_budget=spec.node_budget)
        except BudgetExceeded:
            row.update(excluded=True, reason="node_budget")
            rows.append(row)
            continue
        row.update(rate=rep.rate, se=rep.se, hits=rep.hits, excluded=False, reason="")
        rows.append(row)
    return rows


def _run_barrier(spec: ExperimentSpec):
    if len(spec.replicas) != len(spec.grid):
        raise ConfigError("barrier-hit needs one replica count per grid point")
    tasks = [(spec, i) for i in range(spec.environments)]
    rows = [r for part in _map_envs(_barrier_env, tasks, spec.workers) for r in part]
    by = _clean(rows, "rate", grid_key="n")
    med, summary = [], []
    for g in spec.grid:
        n = int(g)
        vals = by.get(n, [])
        med.append(_median(vals))
        summary.append(
            dict(
                n=n,
                n_clean=len(vals),
                n_excluded=sum(1 for r in rows if r.get("excluded") and r["n"] == n),
                median_rate=med[-1],
                mean_rate=float(np.mean(vals)) if vals else math.nan,
            )
        )
    verdicts = {
        "barrier_median_rate_nonincreasing": _non_increasing(med),
        "barrier_rate_informative_at_smallest_n": bool(med and med[0] > 0.0),
        "barrier_rate_decreased_overall": bool(med and med[-1] < med[0]),
    }
    return rows, summary, verdicts


# -- ey-bound --------------------------------------------------------------------------


def _ey_env_chunk(task) -> list[tuple[float, float]]:
    spec, r, lo, hi = task
    out = []
    for i in range(lo, hi):
        seed = _env_seed(spec.seed, i)
        tree = MarkedTree(spec.law, seed=seed)  # unconditioned: annealed mean
        tree.expand(0)
        fr = grow_to_frontier(tree, r, spec.depth_cap, spec.node_budget)
        y, _ = partition_functions(tree, fr)
        out.append((y, fr.leaked_mass))
    return out


def _run_ey(spec: ExperimentSpec):
    rows, summary = [], []
    tlaw = tilted_walk_law(spec.law)
    gaps_ok = []
    for r in spec.grid:
        chunks = [(spec, r, lo, min(lo + 500, spec.samples)) for lo in range(0, spec.samples, 500)]
        pairs = [p for part in _map_envs(_ey_env_chunk, chunks, spec.workers) for p in part]
        ys = np.array([p[0] for p in pairs])
        leaked = float(np.mean([p[1] for p in pairs]))
        ts = s_walk_stopping_batch(tlaw, r, spec.samples, seed=_env_seed(spec.seed, 10**6 + int(r)))
        mean_y, se_y = float(ys.mean()), float(ys.std(ddof=1) / math.sqrt(len(ys)))
        mean_t = float(1.0 + ts.mean())
        se_t = float(ts.std(ddof=1) / math.sqrt(len(ts)))
        gap = mean_y - mean_t
        sigma = math.hypot(se_y, se_t)
        gaps_ok.append(abs(gap) <= 4.0 * sigma)
        rows.append(
            dict(
                kind="matched",
                r=r,
                samples=spec.samples,
                mean_y=mean_y,
                se_y=se_y,
                mean_t_plus_1=mean_t,
                se_t=se_t,
                gap=gap,
                gap_sigmas=abs(gap) / sigma if sigma > 0 else math.inf,
                mean_leaked=leaked,
            )
        )
    # growth exponent from the spine side over a wide grid; here the
    # two-child law's spine reaches its square-log regime at desk r
    spine_law = solve_two_point_marks(1.0)
    spine = tilted_walk_law(spine_law)
    exp_grid = (1e3, 1e4, 1e5, 1e6, 1e7)
    means = []
    for r in exp_grid:
        ts = s_walk_stopping_batch(spine, r, 2 * spec.samples, seed=_env_seed(spec.seed, 2 * 10**6 + int(r)))
        m = float(1.0 + ts.mean())
        means.append(m)
        rows.append(dict(kind="exponent", r=r, samples=2 * spec.samples, mean_t_plus_1=m))
    xs = np.log(np.log(np.array(exp_grid)))
    slope, intercept = np.polyfit(xs, np.log(np.array(means)), 1)
    summary.append(dict(check="growth_exponent", value=float(slope), target=2.0, limit=2.3))
    c_vals = [m / math.log(r) ** 2 for m, r in zip(means, exp_grid)]
    summary.append(dict(check="c_stability_max_over_min", value=max(c_vals) / min(c_vals), target=1.0, limit=math.nan))
    verdicts = {
        "ey_matched_means_within_4se": all(gaps_ok),
        "ey_growth_exponent_at_most_2_3": bool(slope <= 2.3),
    }
    return rows, summary, verdicts


# -- line-tightness ----------------------------------------------------------------------


def _tight_env(task) -> list[dict]:
    spec, index = task
    seed = _env_seed(spec.seed, index)
    tree = sample_tree(spec.law, seed, spec.survival_proxy_depth)
    rows = []
    for r in spec.grid:
        row = dict(env=index, seed=seed, r=r)
        try:
            fr = grow_to_frontier(tree, r, spec.depth_cap, spec.node_budget)
        except BudgetExceeded:
            row.update(excluded=True, reason="node_budget")
            rows.append(row)
            continue
        line_sum = math.fsum(
            tree.exp_neg_V(x) for x, on in zip(fr.frontier, fr.on_line) if on
        )
        row.update(
            line_sum=line_sum,
            scaled=math.log(r) * line_sum,
            leaked_mass=fr.leaked_mass,
            excluded=False,
            reason="",
        )
        rows.append(row)
    return rows


def _run_tightness(spec: ExperimentSpec):
    tasks = [(spec, i) for i in range(spec.environments)]
    rows = [r for part in _map_envs(_tight_env, tasks, spec.workers) for r in part]
    by_raw = _clean(rows, "line_sum")
    by_scaled = _clean(rows, "scaled")
    med_raw, summary = [], []
    for r in spec.grid:
        raw = by_raw.get(r, [])
        scaled = by_scaled.get(r, [])
        med_raw.append(_median(raw))
        summary.append(
            dict(
                r=r,
                n_clean=len(raw),
                n_excluded=sum(1 for row in rows if row.get("excluded") and row["r"] == r),
                median_line_sum=med_raw[-1],
                q95_line_sum=_quantile(raw, 0.95),
                median_scaled=_quantile(scaled, 0.50),
                q95_scaled=_quantile(scaled, 0.95),
            )
        )
    verdicts = {
        # desk-reachable form of the tightness statement: the boundary
        # carries vanishing weight, so the line sum itself drifts to zero;
        # quantiles of the log-scaled sum are reported as diagnostics
        "tightness_median_line_sum_decreasing": _strictly_decreasing(med_raw),
    }
    return rows, summary, verdicts


# -- madaule ----------------------------------------------------------------------------


def _madaule_env(task) -> list[dict]:
    spec, index = task
    seed = _env_seed(spec.seed, index)
    sweep = level_sweep(spec.law, seed, spec.dhat_depth, lambdas=tuple(spec.lambda_grid))
    dhat = float(sweep["D"][spec.dhat_depth])
    sigma2 = spec.law.sigma2
    rows = []
    for lam in spec.lambda_grid:
        wl = sweep["W_lambda"][lam]
        s_lam = float(wl[1:].sum()) / lam
        W = sweep["W"]

        def w_at(n):
            return float(W[n]) if n < len(W) else math.nan

        rows.append(
            dict(
                env=index,
                seed=seed,
                lam=lam,
                sum_w_lambda_over_lam=s_lam,
                dhat_target=2.0 / sigma2 * dhat,
                tail_w_lambda=float(wl[spec.dhat_depth]),
                w5=w_at(5),
                w10=w_at(10),
                w15=w_at(15),
                w20=w_at(20),
                excluded=not (dhat > 0),
                reason="" if dhat > 0 else "dhat_nonpositive",
            )
        )
    return rows


def _run_madaule(spec: ExperimentSpec):
    tasks = [(spec, i) for i in range(spec.environments)]
    rows = [r for part in _map_envs(_madaule_env, tasks, spec.workers) for r in part]
    clean = [r for r in rows if not r["excluded"]]
    corrs, sds, summary = [], [], []
    for lam in spec.lambda_grid:
        xs = np.array([r["dhat_target"] for r in clean if r["lam"] == lam])
        ys = np.array([r["sum_w_lambda_over_lam"] for r in clean if r["lam"] == lam])
        ok = (xs > 0) & (ys > 0)
        lx, ly = np.log(xs[ok]), np.log(ys[ok])
        corr = float(np.corrcoef(lx, ly)[0, 1]) if ok.sum() > 2 else math.nan
        log_ratio = ly - lx
        sd = float(log_ratio.std(ddof=1)) if ok.sum() > 2 else math.nan
        slope = float((xs * ys).sum() / (xs * xs).sum()) if len(xs) else math.nan
        corrs.append(corr)
        sds.append(sd)
        summary.append(
            dict(
                kind="coupling",
                lam=lam,
                n_clean=int(ok.sum()),
                corr_log=corr,
                sd_log_ratio=sd,
                median_ratio=float(np.exp(np.median(log_ratio))) if ok.sum() else math.nan,
                slope_through_origin=slope,
            )
        )
    # additive-level-sum medians: the two-child law's W_n distribution is
    # atomic at shallow n (its median pins to the no-big-mark value), so
    # this surviving-environment trend runs on a balanced extinction law
    # with many cheap shallow trees instead
    w_levels = (5, 10, 15, 20)
    w_law = solve_two_point_marks(0.8, 0.35)
    w_samples = {n: [] for n in w_levels}
    for i in range(8 * spec.environments):
        tree = sample_tree(w_law, _env_seed(spec.seed, 10**7 + i), spec.survival_proxy_depth)
        for n in w_levels:
            w_samples[n].append(martingales(tree, n, lam=1e18).W)
    med_w = []
    for n in w_levels:
        med_w.append(_median(w_samples[n]))
        summary.append(dict(kind="additive_median", n=n, n_clean=len(w_samples[n]), median_w=med_w[-1]))
    verdicts = {
        # the quenched coupling onto the derivative-martingale limit
        # strengthens with the drawdown window: correlation rises and the
        # per-environment log-ratio spread contracts
        "madaule_coupling_correlation_increasing": _trend_up(corrs, step_slack=0.02),
        "madaule_log_ratio_spread_decreasing": _trend_down(sds, step_slack=0.10),
        "additive_median_decreasing_in_n": _strictly_decreasing(med_w),
    }
    return rows, summary, verdicts


# -- exact-identities ----------------------------------------------------------------------


def _identities_env(task) -> list[dict]:
    spec, index = task
    seed = _env_seed(spec.seed, index)
    tree = sample_tree(spec.law, seed, spec.survival_proxy_depth)
    rows = []
    for j, r in enumerate(spec.grid):
        fr = grow_to_frontier(tree, r, spec.depth_cap, spec.node_budget)
        y, z = partition_functions(tree, fr)
        ch = build_chain(tree, fr, spec.state_cap)
        row = dict(env=index, seed=seed, r=r, n_states=ch.n_states)
        row["zy_rel"] = abs(z - 2.0 * y) / z
        try:
            tree.check_all()
            row["node_checks_ok"] = True
        except AssertionError:
            row["node_checks_ok"] = False
        mes = invariant_measure(tree, fr)
        row["measure_mass_err"] = abs(mes.total_mass() - 1.0)
        ev, od = mes.parity_masses()
        row["parity_err"] = max(abs(ev - 0.5), abs(od - 0.5))
        tilde = parity_measure(mes, 2)
        base = mes.state_weights()
        row["parity_doubling_err"] = max(
            abs(w - 2.0 * base[int(s)]) for s, w in zip(tilde.states, tilde.weights)
        )
        row["db_resid"] = detailed_balance_residual(ch)
        pi_direct = stationary_distribution(ch, "direct")
        row["stat_direct_err"] = float(np.abs(pi_direct - ch.pi).max())
        if j == 0:
            pi_power = stationary_distribution(ch, "power", tol=1e-13, max_iter=400_000)
            row["stat_power_err"] = float(np.abs(pi_power - ch.pi).max())
        mean, second = return_time_moments(ch)
        row["return_mean_err"] = abs(mean * ch.pi[ROOT_STATE] - 1.0)
        row["return_second_ok"] = bool(second >= mean * mean)
        pick = rng.stream(seed, "targets", int(r))
        candidates = [s for s in range(2, ch.n_states)]
        gaps = []
        targets = []
        for _ in range(min(5, len(candidates))):
            t = int(candidates[int(pick.integers(0, len(candidates)))])
            targets.append(t)
            gaps.append(hitting_probability(ch, t).gap)
        # Monte Carlo moment targets need a visible visit rate, otherwise
        # the normal error bands are meaningless at this sample size
        visit = ch.omega_root_up / (np.exp(ch.V[2:]) * ch.H[2:])
        visible = [s + 2 for s in np.flatnonzero(visit * spec.samples >= 100.0)]
        mc_targets = []
        if visible:
            for _ in range(min(3, len(visible))):
                mc_targets.append(int(visible[int(pick.integers(0, len(visible)))]))
        row["hitting_gap_max"] = max(gaps) if gaps else 0.0
        ok_root, _ = return_diagonal_monotone(ch, ROOT_STATE, 50)
        ok_anchor, _ = return_diagonal_monotone(ch, 0, 50)
        row["monotone_ok"] = bool(ok_root and ok_anchor)
        if r > 5.0:
            fu = grow_to_frontier(tree, r / 2.0, spec.depth_cap, spec.node_budget)
            drift = measure_drift(tree, fr, fu)
            row["drift_ok"] = bool(drift.exact <= drift.bound + 1e-12)
        else:
            row["drift_ok"] = True
        if j == 0:
            batch = batch_excursions(
                ch, spec.samples, seed=seed, step_cap=spec.excursion_cap, edge_targets=tuple(mc_targets)
            )
            keep = ~batch.censored
            ln = batch.lengths[keep].astype(float)
            se = ln.std(ddof=1) / math.sqrt(len(ln))
            row["mc_return_sigmas"] = abs(ln.mean() - mean) / se if se > 0 else 0.0
            row["mc_censor_fraction"] = batch.censor_fraction
            worst = 0.0
            for col, t in enumerate(mc_targets):
                m1, m2 = edge_local_time_moments(ch, t)
                samples = batch.edge_counts[keep, col].astype(float)
                se1 = samples.std(ddof=1) / math.sqrt(len(samples))
                sq = samples**2
                se2 = sq.std(ddof=1) / math.sqrt(len(sq))
                if se1 > 0:
                    worst = max(worst, abs(samples.mean() - m1) / se1)
                if se2 > 0:
                    worst = max(worst, abs(sq.mean() - m2) / se2)
            row["mc_edge_sigmas_max"] = worst
        rows.append(row)
    return rows


def _run_identities(spec: ExperimentSpec):
    tasks = [(spec, i) for i in range(spec.environments)]
    rows = [r for part in _map_envs(_identities_env, tasks, spec.workers) for r in part]

    def worst(key):
        vals = [r[key] for r in rows if key in r]
        return max(vals) if vals else math.nan

    checks = {
        "zy_rel": (worst("zy_rel"), 1e-12),
        "measure_mass_err": (worst("measure_mass_err"), 1e-12),
        "parity_err": (worst("parity_err"), 1e-10),
        "parity_doubling_err": (worst("parity_doubling_err"), 1e-10),
        "db_resid": (worst("db_resid"), 1e-12),
        "stat_direct_err": (worst("stat_direct_err"), 1e-10),
        "stat_power_err": (worst("stat_power_err"), 1e-10),
        "return_mean_err": (worst("return_mean_err"), 1e-10),
        "hitting_gap_max": (worst("hitting_gap_max"), 1e-10),
        "mc_return_sigmas": (worst("mc_return_sigmas"), 5.0),
        "mc_edge_sigmas_max": (worst("mc_edge_sigmas_max"), 5.0),
        "mc_censor_fraction": (worst("mc_censor_fraction"), 0.01),
    }
    summary = [dict(check=k, worst=v, tolerance=tol, ok=bool(v <= tol)) for k, (v, tol) in checks.items()]
    flags_ok = all(r.get("node_checks_ok", True) and r.get("monotone_ok", True) and r.get("drift_ok", True) and r.get("return_second_ok", True) for r in rows)
    summary.append(dict(check="boolean_flags", worst=float(not flags_ok), tolerance=0.0, ok=flags_ok))
    verdicts = {"identities_all_within_tolerance": all(s["ok"] for s in summary)}
    return rows, summary, verdicts


# -- orchestration ----------------------------------------------------------------------


_RUNNERS = {
    "yr-asymptotics": _run_yr,
    "local-time": _run_localtime,
    "local-proba": _run_localproba,
    "tv-convergence": _run_tv,
    "scaling-law": _run_scaling,
    "barrier-hit": _run_barrier,
    "ey-bound": _run_ey,
    "line-tightness": _run_tightness,
    "madaule": _run_madaule,
    "exact-identities": _run_identities,
}


@dataclass(frozen=True)
class ExperimentResult:
    spec: ExperimentSpec
    rows: list
    summary: list
    verdicts: dict[str, bool]
    files: dict[str, Path]
    wall_time: float

    @property
    def ok(self) -> bool:
        return all(self.verdicts.values())


def _format_cell(v) -> str:
    if hasattr(v, "item"):  # numpy scalar
        v = v.item()
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return ""
    return str(v)


def _write_rows_csv(path: Path, rows: list[dict]) -> None:
    cols: list[str] = []
    for row in rows:
        for k in row:
            if k not in cols:
                cols.append(k)
    with path.open("w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in rows:
            fh.write(",".join(_format_cell(row.get(c)) for c in cols) + "\n")


def _jsonable(v):
    if hasattr(v, "item"):
        return v.item()
    return str(v)


def _write_rows_jsonl(path: Path, rows: list[dict]) -> None:
    with path.open("w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, allow_nan=True, default=_jsonable) + "\n")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


def run_experiment(spec: ExperimentSpec) -> ExperimentResult:
    """Run one named experiment, write its reports and manifest."""
    if spec.name not in _RUNNERS:
        raise ConfigError(f"unknown experiment {spec.name!r}")
    t0 = time.time()
    rows, summary, verdicts = _RUNNERS[spec.name](spec)
    wall = time.time() - t0
    out = spec.out_dir
    out.mkdir(parents=True, exist_ok=True)
    stem = spec.name.replace("-", "_")
    files = {
        "rows_csv": out / f"{stem}_rows.csv",
        "rows_jsonl": out / f"{stem}_rows.jsonl",
        "summary_csv": out / f"{stem}_summary.csv",
        "summary_jsonl": out / f"{stem}_summary.jsonl",
        "manifest": out / f"{stem}_manifest.json",
    }
    _write_rows_csv(files["rows_csv"], rows)
    _write_rows_jsonl(files["rows_jsonl"], rows)
    _write_rows_csv(files["summary_csv"], summary)
    _write_rows_jsonl(files["summary_jsonl"], summary)
    resolved = spec.resolved()
    config_hash = hashlib.sha256(
        json.dumps(resolved, sort_keys=True).encode()
    ).hexdigest()
    manifest = {
        "experiment": spec.name,
        "code_version": _code_version,
        "config": resolved,
        "config_hash": config_hash,
        "verdicts": verdicts,
        "ok": all(verdicts.values()),
        "outputs": {
            "rows_csv": _sha256(files["rows_csv"]),
            "rows_jsonl": _sha256(files["rows_jsonl"]),
            "summary_csv": _sha256(files["summary_csv"]),
            "summary_jsonl": _sha256(files["summary_jsonl"]),
        },
        "row_count": len(rows),
        "wall_time_s": round(wall, 3),
    }
    files["manifest"].write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return ExperimentResult(
        spec=spec, rows=rows, summary=summary, verdicts=verdicts, files=files, wall_time=wall
    )
