"""Monte Carlo simulation of the biased walk.

Three engines share the same transition semantics:

* :func:`simulate_path` / :func:`simulate_excursion` step a single
  replica on a lazily grown tree, one uniform per step from a
  per-replica stream, so any replica is reproducible in isolation.
* :func:`batch_excursions` and :func:`batch_positions` run many replicas
  simultaneously on a built chain with vectorised stepping; deterministic
  for a fixed (seed, replica count).
* :func:`barrier_hit_rate` steps many replicas on a lazily grown tree
  (no reflection) and records first passage of the stopping line.

Empirical occupancy counts are mergeable monoids, so replica batches can
be combined in any order without changing the result.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .chain import ANCHOR_STATE, ROOT_STATE, TruncatedChain
from .errors import BudgetExceeded, ExcursionBudgetExceeded
from .frontier import StoppingFrontier
from .tree import ANCHOR, MarkedTree


@dataclass(frozen=True)
class WalkConfig:
    """Replica-walk request.

    ``reflect`` carries a grown frontier to bounce off, or None for the
    free walk.  ``position_at`` lists the times whose occupancy law is
    recorded; ``line_r`` arms first-passage detection of the stopping
    line at that level during a free walk.
    """

    n_steps: int
    replicas: int = 1
    seed: int = 0
    reflect: StoppingFrontier | None = None
    position_at: tuple[int, ...] = ()
    record_root_local_time: bool = False
    record_max_depth: bool = False
    line_r: float | None = None
    node_budget: int = 5_000_000

    def __post_init__(self):
        if self.replicas < 1:
            raise ValueError("replicas must be >= 1")
        if any(t > self.n_steps or t < 0 for t in self.position_at):
            raise ValueError("recorded times must lie in [0, n_steps]")


@dataclass
class EmpiricalLaw:
    """Occupancy counts over tree nodes (pseudo-parent = -1); a monoid."""

    counts: dict[int, int] = field(default_factory=dict)
    replicas: int = 0

    def add(self, state: int, count: int = 1) -> None:
        self.counts[state] = self.counts.get(state, 0) + count

    def merge(self, other: "EmpiricalLaw") -> "EmpiricalLaw":
        out = dict(self.counts)
        for k, v in other.counts.items():
            out[k] = out.get(k, 0) + v
        return EmpiricalLaw(out, self.replicas + other.replicas)

    def total(self) -> int:
        return sum(self.counts.values())

    def state_weights(self) -> dict[int, float]:
        n = self.total()
        if n == 0:
            return {}
        return {k: v / n for k, v in self.counts.items()}


@dataclass(frozen=True)
class ExcursionRecord:
    """One excursion from the root: length, local times, censoring."""

    length: int
    censored: bool
    first_step_to_anchor: bool
    site_local_times: dict[int, int]
    edge_local_times: dict[int, int]


@dataclass(frozen=True)
class WalkResult:
    laws: dict[int, EmpiricalLaw]
    root_local_time: np.ndarray | None
    max_depth: np.ndarray | None
    line_hit: np.ndarray | None
    final_states: np.ndarray


# -- single-replica tree stepping ---------------------------------------------------


class _TreeStepper:
    """Shared per-node cumulative transition rows over a lazy tree."""

    def __init__(self, tree: MarkedTree, reflect: StoppingFrontier | None, node_budget: int):
        self.tree = tree
        self.node_budget = node_budget
        self.reflect_set = reflect.frontier_set() if reflect is not None else None
        self._rows: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def row(self, x: int) -> tuple[np.ndarray, np.ndarray]:
        cached = self._rows.get(x)
        if cached is not None:
            return cached
        tree = self.tree
        tree.expand(x)
        if tree.n_nodes > self.node_budget:
            raise BudgetExceeded(f"walk expanded the tree past {self.node_budget} nodes")
        w_up = tree.omega_parent(x)
        parent = ANCHOR if x == 0 else tree.parent(x)
        targets = [parent] + list(tree.children(x))
        probs = [w_up] + [tree.mark(c) * w_up for c in tree.children(x)]
        cum = np.cumsum(probs)
        cum[-1] = 1.0
        row = (cum, np.asarray(targets, dtype=np.int64))
        self._rows[x] = row
        return row

    def step(self, x: int, u: float) -> int:
        if x == ANCHOR:
            return 0
        if self.reflect_set is not None and x in self.reflect_set:
            return self.tree.parent(x)
        cum, targets = self.row(x)
        return int(targets[int(np.searchsorted(cum, u, side="right"))])


def simulate_path(tree: MarkedTree, config: WalkConfig) -> WalkResult:
    """Run independent replicas from the root and collect the records.

    Replica k draws from a stream keyed by (seed, "walk", k), so any
    single replica can be re-run in isolation; the tree grows on demand
    under its lock and the results do not depend on replica order.
    """
    stepper = _TreeStepper(tree, config.reflect, config.node_budget)
    laws = {t: EmpiricalLaw() for t in config.position_at}
    root_lt = np.zeros(config.replicas, dtype=np.int64) if config.record_root_local_time else None
    max_depth = np.zeros(config.replicas, dtype=np.int64) if config.record_max_depth else None
    line_hit = np.zeros(config.replicas, dtype=bool) if config.line_r is not None else None
    finals = np.zeros(config.replicas, dtype=np.int64)

    # the walk enters a vertex only through its parent, so the first time
    # the ancestor sum exceeds the level the vertex is a line member
    for k in range(config.replicas):
        gen = rng.stream(config.seed, "walk", k)
        x = 0
        for t, law in laws.items():
            if t == 0:
                law.add(0)
                law.replicas += 1
        for i in range(1, config.n_steps + 1):
            x = stepper.step(x, float(gen.random()))
            if x != ANCHOR:
                if root_lt is not None and x == 0:
                    root_lt[k] += 1
                if max_depth is not None and tree.depth(x) > max_depth[k]:
                    max_depth[k] = tree.depth(x)
                if line_hit is not None and not line_hit[k]:
                    if tree.H(x) > config.line_r:
                        line_hit[k] = True
            if i in laws:
                laws[i].add(x)
                laws[i].replicas += 1
        finals[k] = x
    return WalkResult(
        laws=laws,
        root_local_time=root_lt,
        max_depth=max_depth,
        line_hit=line_hit,
        final_states=finals,
    )


def simulate_excursion(
    tree: MarkedTree,
    seed: int,
    reflect: StoppingFrontier | None = None,
    step_cap: int = 10**8,
    node_budget: int = 5_000_000,
) -> ExcursionRecord:
    """Walk from the root until the first return, with full local times.

    Site local times count visits at steps 1..T; edge local times count
    parent-to-child passages.  Runs past ``step_cap`` raise
    :class:`ExcursionBudgetExceeded` carrying the censored record.
    """
    stepper = _TreeStepper(tree, reflect, node_budget)
    gen = rng.stream(seed, "exc")
    site: dict[int, int] = {}
    edge: dict[int, int] = {}
    x = 0
    first_anchor = False
    steps = 0
    while True:
        prev = x
        x = stepper.step(x, float(gen.random()))
        steps += 1
        if steps == 1:
            first_anchor = x == ANCHOR
        site[x] = site.get(x, 0) + 1
        if x != ANCHOR and prev != ANCHOR and tree.parent(x) == prev:
            edge[x] = edge.get(x, 0) + 1
        if x == 0:
            return ExcursionRecord(
                length=steps,
                censored=False,
                first_step_to_anchor=first_anchor,
                site_local_times=site,
                edge_local_times=edge,
            )
        if steps >= step_cap:
            raise ExcursionBudgetExceeded(
                f"excursion exceeded {step_cap} steps",
                partial=ExcursionRecord(
                    length=steps,
                    censored=True,
                    first_step_to_anchor=first_anchor,
                    site_local_times=site,
                    edge_local_times=edge,
                ),
            )


def root_local_time_profile(
    tree: MarkedTree,
    checkpoints: tuple[int, ...],
    seed: int,
    node_budget: int = 5_000_000,
) -> dict[int, int]:
    """Root local time of one free walk read at several checkpoints.

    Runs a single replica to ``max(checkpoints)`` steps on the lazily
    grown tree and returns {n: L_n(root)}; the per-checkpoint values come
    from the same trajectory, as in a quenched observation.
    """
    marks = sorted(set(checkpoints))
    if not marks or marks[0] < 1:
        raise ValueError("checkpoints must be positive")
    stepper = _TreeStepper(tree, None, node_budget)
    gen = rng.stream(seed, "rootlt")
    out: dict[int, int] = {}
    x = 0
    visits = 0
    upto = 0
    for n in marks:
        block = gen.random(n - upto)
        for u in block:
            x = stepper.step(x, float(u))
            if x == 0:
                visits += 1
        upto = n
        out[n] = visits
    return out


# -- vectorised chain engines ----------------------------------------------------


class _PaddedKernel:
    """Row-padded cumulative transition table for vectorised stepping."""

    def __init__(self, chain: TruncatedChain):
        n = chain.n_states
        indptr = chain.P.indptr
        degree = np.diff(indptr)
        width = int(degree.max())
        self.cum = np.ones((n, width))
        self.nxt = np.tile(np.arange(n, dtype=np.int64)[:, None], (1, width))
        for s in range(n):
            lo, hi = indptr[s], indptr[s + 1]
            probs = chain.P.data[lo:hi]
            cols = chain.P.indices[lo:hi]
            c = np.cumsum(probs)
            c[-1] = 1.0
            self.cum[s, : hi - lo] = c
            self.nxt[s, : hi - lo] = cols
            if hi - lo < width:
                self.nxt[s, hi - lo :] = cols[-1]
                self.cum[s, hi - lo :] = 1.0

    def step(self, states: np.ndarray, u: np.ndarray) -> np.ndarray:
        k = (u[:, None] >= self.cum[states]).sum(axis=1)
        return self.nxt[states, k]


@dataclass(frozen=True)
class BatchExcursions:
    lengths: np.ndarray
    censored: np.ndarray
    first_to_anchor: np.ndarray
    edge_counts: np.ndarray  # (n, n_targets)

    @property
    def censor_fraction(self) -> float:
        return float(self.censored.mean())


def batch_excursions(
    chain: TruncatedChain,
    n_excursions: int,
    seed: int,
    step_cap: int = 10**8,
    edge_targets: tuple[int, ...] = (),
) -> BatchExcursions:
    """Vectorised excursions from the root on a built chain.

    Edge local times are tallied only for the requested target states.
    Excursions still running at ``step_cap`` are flagged censored and
    excluded from moment estimators by callers.
    """
    kern = _PaddedKernel(chain)
    gen = rng.stream(seed, "excbatch", n_excursions)
    targets = np.asarray(edge_targets, dtype=np.int64)
    tgt_parents = chain.parent_state[targets] if len(targets) else targets

    lengths = np.zeros(n_excursions, dtype=np.int64)
    censored = np.zeros(n_excursions, dtype=bool)
    first_anchor = np.zeros(n_excursions, dtype=bool)
    edge_counts = np.zeros((n_excursions, len(targets)), dtype=np.int64)

    idx = np.arange(n_excursions)
    states = np.full(n_excursions, ROOT_STATE, dtype=np.int64)
    step = 0
    while len(idx):
        step += 1
        u = gen.random(len(idx))
        nxt = kern.step(states, u)
        lengths[idx] += 1
        if step == 1:
            first_anchor[idx] = nxt == ANCHOR_STATE
        for j in range(len(targets)):
            hit = (states == tgt_parents[j]) & (nxt == targets[j])
            if hit.any():
                edge_counts[idx[hit], j] += 1
        done = nxt == ROOT_STATE
        if step >= step_cap:
            censored[idx[~done]] = True
            break
        keep = ~done
        idx = idx[keep]
        states = nxt[keep]
    return BatchExcursions(
        lengths=lengths,
        censored=censored,
        first_to_anchor=first_anchor,
        edge_counts=edge_counts,
    )


def batch_positions(
    chain: TruncatedChain,
    n_steps: int,
    record_times: tuple[int, ...],
    replicas: int,
    seed: int,
) -> tuple[dict[int, EmpiricalLaw], np.ndarray]:
    """Vectorised replica walks on a chain; laws at the recorded times.

    Returns the occupancy law (over tree node ids) at each requested time
    and each replica's root local time over steps 1..n_steps.
    """
    kern = _PaddedKernel(chain)
    gen = rng.stream(seed, "posbatch", replicas)
    states = np.full(replicas, ROOT_STATE, dtype=np.int64)
    root_lt = np.zeros(replicas, dtype=np.int64)
    laws: dict[int, EmpiricalLaw] = {}
    record = set(record_times)
    if 0 in record:
        laws[0] = _law_from_states(chain, states)
    for i in range(1, n_steps + 1):
        states = kern.step(states, gen.random(replicas))
        root_lt += states == ROOT_STATE
        if i in record:
            laws[i] = _law_from_states(chain, states)
    return laws, root_lt


def _law_from_states(chain: TruncatedChain, states: np.ndarray) -> EmpiricalLaw:
    counts = np.bincount(states, minlength=chain.n_states)
    law = EmpiricalLaw(replicas=len(states))
    for s in np.flatnonzero(counts):
        law.counts[int(chain.node_ids[s])] = int(counts[s])
    return law


# -- barrier hits on free walks -----------------------------------------------------


@dataclass(frozen=True)
class HitRateReport:
    rate: float
    se: float
    hits: int
    replicas: int
    n_steps: int
    r: float


class _LazyTreeKernel:
    """Growable padded transition table over a lazy tree (free walk).

    Row 0 is the pseudo-parent (returns to the root deterministically);
    row i+1 is tree node i.  Rows are filled on first visit; ``on_line``
    flags first crossings of the level-r ancestor sum.
    """

    def __init__(self, tree: MarkedTree, r: float, node_budget: int):
        self.tree = tree
        self.r = r
        self.node_budget = node_budget
        self.width = 4
        self._alloc(256)
        self.filled = np.zeros(0, dtype=bool)
        self._grow_flags(tree.n_nodes)

    def _alloc(self, n_rows: int):
        self.cum = np.ones((n_rows, self.width))
        self.nxt = np.zeros((n_rows, self.width), dtype=np.int64)
        self.on_line = np.zeros(n_rows, dtype=bool)
        self.cum[0, 0] = 1.0
        self.nxt[0, :] = 1  # pseudo-parent -> root

    def _grow_flags(self, n_nodes: int):
        need = n_nodes + 1
        if need > len(self.filled):
            old = self.filled
            self.filled = np.zeros(max(need, 2 * len(old)), dtype=bool)
            self.filled[: len(old)] = old
            self.filled[0] = True
        if need > self.cum.shape[0]:
            rows = max(need, 2 * self.cum.shape[0])
            cum, nxt, line = self.cum, self.nxt, self.on_line
            self._alloc(rows)
            self.cum[: cum.shape[0]] = cum
            self.nxt[: nxt.shape[0]] = nxt
            self.on_line[: line.shape[0]] = line

    def _widen(self, width: int):
        self.width = width
        cum, nxt = self.cum, self.nxt
        self.cum = np.ones((cum.shape[0], width))
        self.nxt = np.zeros((nxt.shape[0], width), dtype=np.int64)
        self.cum[:, : cum.shape[1]] = cum
        self.nxt[:, : nxt.shape[1]] = nxt
        self.nxt[:, cum.shape[1] :] = nxt[:, -1][:, None]

    def fill(self, rows: np.ndarray) -> None:
        tree = self.tree
        for row in rows:
            x = int(row) - 1
            tree.expand(x)
            if tree.n_nodes > self.node_budget:
                raise BudgetExceeded(f"barrier walk expanded past {self.node_budget} nodes")
            self._grow_flags(tree.n_nodes)
            kids = list(tree.children(x))
            if len(kids) + 1 > self.width:
                self._widen(max(len(kids) + 1, 2 * self.width))
            w_up = tree.omega_parent(x)
            parent_row = 0 if x == 0 else tree.parent(x) + 1
            probs = [w_up] + [tree.mark(c) * w_up for c in kids]
            cols = [parent_row] + [c + 1 for c in kids]
            c = np.cumsum(probs)
            c[-1] = 1.0
            self.cum[row, : len(c)] = c
            self.cum[row, len(c) :] = 1.0
            self.nxt[row, : len(cols)] = cols
            self.nxt[row, len(cols) :] = cols[-1]
            # walkers stop at their first crossing, so flagging every
            # crossing vertex is equivalent to flagging only line members
            for ch in kids:
                if tree.H(ch) > self.r:
                    self.on_line[ch + 1] = True
            self.filled[row] = True

    def step(self, states: np.ndarray, u: np.ndarray) -> np.ndarray:
        missing = ~self.filled[states]
        if missing.any():
            self.fill(np.unique(states[missing]))
        k = (u[:, None] >= self.cum[states]).sum(axis=1)
        return self.nxt[states, k]


def barrier_hit_rate(
    tree: MarkedTree,
    n_steps: int,
    r: float,
    replicas: int,
    seed: int,
    node_budget: int = 5_000_000,
) -> HitRateReport:
    """Fraction of replicas whose free walk touches the stopping line.

    Replicas stop at their first line hit; the rate estimate is the hit
    fraction with its binomial standard error.
    """
    kern = _LazyTreeKernel(tree, r, node_budget)
    kern.fill(np.array([1]))
    gen = rng.stream(seed, "barrier", replicas)
    states = np.ones(replicas, dtype=np.int64)
    idx = np.arange(replicas)
    hits = np.zeros(replicas, dtype=bool)
    for _ in range(n_steps):
        if not len(idx):
            break
        states = kern.step(states, gen.random(len(idx)))
        hit = kern.on_line[states]
        if hit.any():
            hits[idx[hit]] = True
            keep = ~hit
            idx = idx[keep]
            states = states[keep]
    rate = hits.mean()
    se = math.sqrt(rate * (1.0 - rate) / replicas)
    return HitRateReport(
        rate=float(rate), se=se, hits=int(hits.sum()), replicas=replicas, n_steps=n_steps, r=r
    )
