"""Finite reversible chains induced by a frontier, with exact solvers.

A frontier-truncated environment defines a finite Markov chain: the
pseudo-parent moves to the root deterministically, interior vertices use
their environment weights, and frontier vertices reflect to their parent.
The chain is bipartite by depth parity (period 2) and reversible with
respect to the explicit stationary weights, which is what every solver
here is checked against.

Solvers come in independent pairs on purpose: stationarity by direct
sparse solve and by power iteration on the lazified kernel, hitting
probabilities by closed form and by first-step linear system, return-time
moments by linear systems and by Monte Carlo (in :mod:`treewalk.walk`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import BudgetExceeded, InvalidPair, SolveFailed
from .frontier import StoppingFrontier
from .measures import InvariantMeasure, invariant_measure
from .tree import ANCHOR, MarkedTree

ANCHOR_STATE = 0
ROOT_STATE = 1


@dataclass(frozen=True)
class TruncatedChain:
    """Sparse reflected walk on a frontier-truncated tree.

    State 0 is the pseudo-parent, state 1 the root; the remaining states
    follow the frontier's breadth-first order.  ``pi`` is the stationary
    law from the explicit weights (not from a solver).  Per-state copies
    of the environment data (V, H, depth, parent) make the chain
    self-contained and immutable once built.
    """

    P: sp.csr_matrix
    PT: sp.csr_matrix
    node_ids: np.ndarray
    state_of_node: dict[int, int]
    parent_state: np.ndarray
    depths: np.ndarray
    V: np.ndarray
    H: np.ndarray
    is_frontier: np.ndarray
    pi: np.ndarray
    Z: float
    omega_root_up: float  # omega(root, pseudo-parent)

    @property
    def n_states(self) -> int:
        return self.P.shape[0]

    def state_path_to_root(self, s: int) -> list[int]:
        out = [s]
        while out[-1] != ROOT_STATE:
            out.append(int(self.parent_state[out[-1]]))
        return out

    def common_ancestor(self, s1: int, s2: int) -> int:
        a1 = self.state_path_to_root(s1)
        a2 = set(self.state_path_to_root(s2))
        for s in a1:
            if s in a2:
                return s
        return ROOT_STATE


def build_chain(
    tree: MarkedTree,
    frontier: StoppingFrontier,
    state_cap: int = 2_000_000,
) -> TruncatedChain:
    """Assemble the reflected chain for a grown frontier."""
    n_states = 2 + (frontier.n_nodes - 1)  # anchor + nodes (root counted once)
    if n_states > state_cap:
        raise BudgetExceeded(f"chain would have {n_states} states (cap {state_cap})")

    interior_set = frontier.interior_set()
    order = [ANCHOR] + list(frontier.interior) + list(frontier.frontier)
    # root is frontier.interior[0] by construction unless the whole tree is one node
    if order[1] != 0:
        raise ValueError("frontier does not start at the root")
    state_of = {node: s for s, node in enumerate(order)}
    node_ids = np.asarray(order, dtype=np.int64)

    measure = invariant_measure(tree, frontier)
    weights = {int(s): float(w) for s, w in zip(measure.states, measure.weights)}
    pi = np.array([weights[int(n)] for n in node_ids])

    rows, cols, vals = [ANCHOR_STATE], [ROOT_STATE], [1.0]
    parent_state = np.zeros(len(order), dtype=np.int64)
    parent_state[ANCHOR_STATE] = ANCHOR_STATE
    depths = np.empty(len(order), dtype=np.int64)
    depths[ANCHOR_STATE] = -1
    V = np.zeros(len(order))
    H = np.zeros(len(order))
    is_frontier = np.zeros(len(order), dtype=bool)
    V[ANCHOR_STATE] = math.nan
    H[ANCHOR_STATE] = math.nan

    for s, node in enumerate(order):
        if s == ANCHOR_STATE:
            continue
        depths[s] = tree.depth(node)
        V[s] = tree.V(node)
        H[s] = tree.H(node)
        up = ANCHOR_STATE if node == 0 else state_of[tree.parent(node)]
        parent_state[s] = up
        if node in interior_set:
            w_up = tree.omega_parent(node)
            rows.append(s)
            cols.append(up)
            vals.append(w_up)
            for c in tree.children(node):
                rows.append(s)
                cols.append(state_of[c])
                vals.append(tree.mark(c) * w_up)
        else:
            is_frontier[s] = True
            rows.append(s)
            cols.append(up)
            vals.append(1.0)

    n = len(order)
    P = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return TruncatedChain(
        P=P,
        PT=P.T.tocsr(),
        node_ids=node_ids,
        state_of_node=state_of,
        parent_state=parent_state,
        depths=depths,
        V=V,
        H=H,
        is_frontier=is_frontier,
        pi=pi,
        Z=measure.Z,
        omega_root_up=tree.omega_parent(0),
    )


def dense_transition_matrix(chain: TruncatedChain, max_states: int = 256) -> np.ndarray:
    """Dense copy of P for small-chain test oracles only."""
    if chain.n_states > max_states:
        raise ValueError(f"dense oracle limited to {max_states} states")
    return chain.P.toarray()


# -- stationarity -------------------------------------------------------------


def stationary_distribution(
    chain: TruncatedChain,
    method: str = "direct",
    tol: float = 1e-13,
    max_iter: int = 2_000_000,
) -> np.ndarray:
    """Solve pi P = pi, sum pi = 1.

    ``direct`` replaces one balance equation with the normalisation and
    runs a sparse LU solve.  ``power`` iterates the lazified kernel
    (I + P)/2, which kills the period-2 eigenvalue, until the one-step
    L1 residual drops below ``tol``.

    Raises
    ------
    SolveFailed
        If the residual check fails (direct) or the iteration does not
        converge within ``max_iter`` (power).
    """
    n = chain.n_states
    if method == "direct":
        M = (chain.PT - sp.identity(n, format="csr")).tolil()
        M[ANCHOR_STATE, :] = 1.0
        b = np.zeros(n)
        b[ANCHOR_STATE] = 1.0
        pi = spla.spsolve(M.tocsr(), b)
        resid = float(np.abs(chain.PT @ pi - pi).max())
        if not np.isfinite(resid) or resid > 1e-8 or abs(pi.sum() - 1.0) > 1e-8:
            raise SolveFailed(f"direct stationary solve residual {resid:.3e}", residual=resid)
        return pi / pi.sum()
    if method == "power":
        v = np.full(n, 1.0 / n)
        for _ in range(max_iter):
            w = chain.PT @ v
            resid = float(np.abs(w - v).sum())
            v = 0.5 * (v + w)
            v /= v.sum()
            if resid < tol:
                return v
        raise SolveFailed(
            f"power iteration did not reach {tol} in {max_iter} iterations "
            f"(last residual {resid:.3e})",
            residual=resid,
        )
    raise ValueError(f"unknown method {method!r}")


def stationarity_residual(chain: TruncatedChain, pi: np.ndarray) -> float:
    return float(np.abs(chain.PT @ pi - pi).max())


def detailed_balance_residual(chain: TruncatedChain, pi: np.ndarray | None = None) -> float:
    """max |pi_i P_ij - pi_j P_ji| over all transitions."""
    if pi is None:
        pi = chain.pi
    F = chain.P.multiply(pi[:, None])  # flows pi_i P_ij
    return float(np.abs((F - F.T).tocoo().data).max()) if F.nnz else 0.0


# -- kernel powers -----------------------------------------------------------


def distribution_at(chain: TruncatedChain, n: int, start: int = ROOT_STATE) -> np.ndarray:
    """Law of the walk after n steps from ``start`` (row of P^n)."""
    if n < 0:
        raise ValueError("n must be >= 0")
    v = np.zeros(chain.n_states)
    v[start] = 1.0
    for _ in range(n):
        v = chain.PT @ v
    return v


def iterate_distribution(chain: TruncatedChain, start: int = ROOT_STATE):
    """Generator over (step, law) starting at step 0; shares one sweep."""
    v = np.zeros(chain.n_states)
    v[start] = 1.0
    step = 0
    while True:
        yield step, v
        v = chain.PT @ v
        step += 1


def return_diagonal_monotone(
    chain: TruncatedChain,
    state: int,
    k_max: int,
    tie_tol: float = 1e-12,
) -> tuple[bool, np.ndarray]:
    """Even-step return probabilities P^{2k}(x, x), k = 1..k_max.

    Reversibility makes the sequence non-increasing; returns the sequence
    and whether it is (up to ``tie_tol`` for ties).
    """
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    v = np.zeros(chain.n_states)
    v[state] = 1.0
    seq = np.empty(k_max)
    for k in range(k_max):
        v = chain.PT @ (chain.PT @ v)
        seq[k] = v[state]
    ok = bool(np.all(np.diff(seq) <= tie_tol))
    return ok, seq


# -- hitting and return times ---------------------------------------------------


@dataclass(frozen=True)
class HittingReport:
    formula: float
    solved: float

    @property
    def gap(self) -> float:
        return abs(self.formula - self.solved)


def hitting_probability(chain: TruncatedChain, target: int) -> HittingReport:
    """P(hit ``target`` before returning to the root), started at the root.

    Computed two ways: the one-dimensional closed form
    ``omega(root, parent) / sum_{z on ]root, target]} exp(V(z))`` and an
    independent first-step linear solve on the whole chain.
    """
    if target in (ROOT_STATE, ANCHOR_STATE):
        raise InvalidPair("target must differ from the root and its pseudo-parent")
    path = chain.state_path_to_root(target)[:-1]  # excludes the root
    denom = math.fsum(math.exp(chain.V[s]) for s in path)
    formula = chain.omega_root_up / denom

    n = chain.n_states
    keep = np.ones(n, dtype=bool)
    keep[ROOT_STATE] = False
    keep[target] = False
    idx = np.flatnonzero(keep)
    Q = chain.P[idx][:, idx]
    rhs = np.asarray(chain.P[idx][:, target].todense()).ravel()
    h = spla.spsolve(sp.identity(len(idx), format="csr") - Q.tocsr(), rhs)
    if not np.all(np.isfinite(h)):
        raise SolveFailed("hitting-probability solve returned non-finite values")
    full = np.zeros(n)
    full[idx] = h
    full[target] = 1.0
    root_row = np.asarray(chain.P[ROOT_STATE].todense()).ravel()
    solved = float(root_row @ full)
    return HittingReport(formula=formula, solved=solved)


def _absorbing_moments(chain: TruncatedChain) -> tuple[np.ndarray, np.ndarray]:
    # hitting times of the root: m = E[T], s = E[T^2] per starting state
    n = chain.n_states
    keep = np.ones(n, dtype=bool)
    keep[ROOT_STATE] = False
    idx = np.flatnonzero(keep)
    Q = (chain.P[idx][:, idx]).tocsr()
    A = (sp.identity(len(idx), format="csr") - Q).tocsc()
    lu = spla.splu(A)
    ones = np.ones(len(idx))
    m = lu.solve(ones)
    s = lu.solve(ones + 2.0 * (Q @ m))
    if not (np.all(np.isfinite(m)) and np.all(np.isfinite(s))):
        raise SolveFailed("first-passage solve returned non-finite values")
    mfull = np.zeros(n)
    sfull = np.zeros(n)
    mfull[idx] = m
    sfull[idx] = s
    return mfull, sfull


def return_time_moments(chain: TruncatedChain) -> tuple[float, float]:
    """Mean and second moment of the first return time to the root.

    First-passage linear systems on the root-absorbed chain (the taboo
    decomposition); the mean satisfies mean * pi(root) = 1 exactly.
    """
    m, s = _absorbing_moments(chain)
    root_row = np.asarray(chain.P[ROOT_STATE].todense()).ravel()
    mean = 1.0 + float(root_row @ m)
    second = 1.0 + 2.0 * float(root_row @ m) + float(root_row @ s)
    return mean, second


# -- edge local times ------------------------------------------------------------


def edge_local_time_moments(chain: TruncatedChain, target: int) -> tuple[float, float]:
    """Closed-form first two moments of the edge local time into ``target``.

    The edge local time counts parent-to-child passages into the target
    during one excursion from the root; its moments are explicit in the
    potential:  mean = omega(root, parent) exp(-V(x)) and second moment
    = mean * (2 H(x) - 1) with H the weighted ancestor sum.
    """
    if target in (ROOT_STATE, ANCHOR_STATE):
        raise InvalidPair("edge local times are defined for proper tree vertices")
    mean = chain.omega_root_up * math.exp(-chain.V[target])
    second = mean * (2.0 * chain.H[target] - 1.0)
    return mean, second


def _edge_second_moment_any(chain: TruncatedChain, state: int) -> float:
    # E[Lbar^2] for any state, including the root (where Lbar is Bernoulli)
    if state == ROOT_STATE:
        return chain.omega_root_up
    return edge_local_time_moments(chain, state)[1]


@dataclass(frozen=True)
class CovarianceReport:
    """Monte Carlo covariance of two edge local times vs the exact bound."""

    target_x: int
    target_y: int
    ancestor: int
    ancestor_case: bool
    mc_cov: float
    mc_se: float
    bound: float
    exact: float | None
    samples: int

    @property
    def within_bound(self) -> bool:
        return self.mc_cov <= self.bound + 4.0 * self.mc_se

    @property
    def matches_exact(self) -> bool:
        if self.exact is None:
            return True
        return abs(self.mc_cov - self.exact) <= 4.0 * self.mc_se


def covariance_bound_check(
    chain: TruncatedChain,
    x: int,
    y: int,
    mc_samples: int,
    seed: int,
    step_cap: int = 10**8,
) -> CovarianceReport:
    """Monte Carlo check of the edge-local-time covariance inequality.

    The covariance of the two edge local times over one excursion is
    bounded by ``2 exp(-[V(x) - V(w)] - [V(y) - V(w)]) E[Lbar(w)^2]``
    with w the youngest common ancestor; when one vertex is an ancestor
    of the other the proof gives the exact value
    ``exp(-[V(x) - V(y)]) Var[Lbar(y)]`` instead.
    """
    if x == y:
        raise InvalidPair("need two distinct vertices")
    for s in (x, y):
        if s in (ROOT_STATE, ANCHOR_STATE):
            raise InvalidPair("vertices must be proper tree vertices")
    from .walk import batch_excursions  # local import: walk builds on chain

    w = chain.common_ancestor(x, y)
    vx, vy = chain.V[x], chain.V[y]
    vw = 0.0 if w == ROOT_STATE else chain.V[w]
    e2_w = _edge_second_moment_any(chain, w)
    bound = 2.0 * math.exp(-(vx - vw) - (vy - vw)) * e2_w

    exact = None
    ancestor_case = w in (x, y)
    if ancestor_case:
        anc, desc = (x, y) if w == x else (y, x)
        m1, m2 = (
            (chain.omega_root_up, chain.omega_root_up)
            if anc == ROOT_STATE
            else edge_local_time_moments(chain, anc)
        )
        var = m2 - m1 * m1
        exact = math.exp(-(chain.V[desc] - chain.V[anc])) * var

    batch = batch_excursions(chain, mc_samples, seed=seed, step_cap=step_cap, edge_targets=(x, y))
    lx = batch.edge_counts[:, 0].astype(float)
    ly = batch.edge_counts[:, 1].astype(float)
    keep = ~batch.censored
    lx, ly = lx[keep], ly[keep]
    n = len(lx)
    prod = (lx - lx.mean()) * (ly - ly.mean())
    cov = float(prod.sum() / (n - 1))
    se = float(prod.std(ddof=1) / math.sqrt(n))
    return CovarianceReport(
        target_x=x,
        target_y=y,
        ancestor=w,
        ancestor_case=ancestor_case,
        mc_cov=cov,
        mc_se=se,
        bound=bound,
        exact=exact,
        samples=n,
    )


# -- export ----------------------------------------------------------------------


def export_chain_csv(chain: TruncatedChain, fh) -> int:
    """Write transition triples (from, to, prob); returns the row count."""
    fh.write("from,to,prob\n")
    coo = chain.P.tocoo()
    n = 0
    for i, j, v in zip(coo.row, coo.col, coo.data):
        fh.write(f"{int(i)},{int(j)},{repr(float(v))}\n")
        n += 1
    return n


def export_distribution_csv(chain: TruncatedChain, dist: np.ndarray, fh) -> int:
    """Write (state_id, node_id, depth, prob) rows for a law on the chain."""
    fh.write("state_id,node_id,depth,prob\n")
    n = 0
    for s, p in enumerate(dist):
        fh.write(f"{s},{int(chain.node_ids[s])},{int(chain.depths[s])},{repr(float(p))}\n")
        n += 1
    return n
