"""Lazily grown marked Galton-Watson trees and their potentials.

A :class:`MarkedTree` is an append-only arena of nodes.  Expanding a node
draws its mark vector, which fixes the number of children, the transition
weight back to the parent, and each child's potential value.  Mark draws
are keyed by per-node digests derived from ``(seed, attempt, path)``, so
the same law and seed always produce the same tree no matter in which
order different operations expand it.

Per node the arena stores, besides the topology:

``V``     potential; root 0, child = V(parent) - log A(child).
``H``     weighted ancestor sum ``sum_{z in ]root, x]} exp(V(z) - V(x))``,
          maintained incrementally as ``H(child) = 1 + A(child) H(parent)``;
          the quantity whose first passage above a level r defines the
          stopping line.
``vbar``  running maximum of V along the ancestor path (root included).
``drop``  ``max_{y <= x, y != root} (vbar(y) - V(y))``, the deepest
          potential drawdown seen on the path; drives the truncated
          level sums W_n^(lambda).
"""

from __future__ import annotations

import math
import threading
from array import array
from dataclasses import dataclass

import numpy as np

from . import rng
from .errors import BudgetExceeded
from .marks import MarkLaw

ANCHOR = -1  # conventional state id of the root's pseudo-parent


class MarkedTree:
    """Arena-allocated marked tree with digest-keyed lazy growth.

    Growth is single-writer: :meth:`expand` serialises on an internal
    lock, while reads of already-expanded data need no lock.  A tree is
    safely shareable once the nodes a reader touches are expanded.
    """

    def __init__(self, law: MarkLaw | None, seed: int = 0, attempt: int = 0, debug: bool = False):
        self.law = law
        self.seed = int(seed)
        self.attempt = int(attempt)
        self.rejections = 0
        self.debug = debug
        self.lock = threading.Lock()
        self._parent = array("q", [ANCHOR])
        self._depth = array("q", [0])
        self._mark = array("d", [math.nan])  # A on the edge into the node
        self._V = array("d", [0.0])
        self._H = array("d", [0.0])
        self._vbar = array("d", [0.0])
        self._drop = array("d", [0.0])
        self._omega_par = array("d", [math.nan])
        self._first_child = array("q", [-1])
        self._n_children = array("q", [-1])
        self._by_depth: dict[int, list[int]] = {0: [0]}
        if law is None:
            self._digest = None
        else:
            self._digest = [rng.key_digest(self.seed, "env", self.attempt)]

    # -- read access ---------------------------------------------------------

    def __len__(self) -> int:
        return len(self._parent)

    @property
    def n_nodes(self) -> int:
        return len(self._parent)

    def parent(self, x: int) -> int:
        return self._parent[x]

    def depth(self, x: int) -> int:
        return self._depth[x]

    def V(self, x: int) -> float:
        return self._V[x]

    def H(self, x: int) -> float:
        return self._H[x]

    def drop(self, x: int) -> float:
        return self._drop[x]

    def mark(self, x: int) -> float:
        return self._mark[x]

    def is_expanded(self, x: int) -> bool:
        return self._n_children[x] >= 0

    def children(self, x: int) -> range:
        if self._n_children[x] < 0:
            raise ValueError(f"node {x} not expanded")
        first = self._first_child[x]
        return range(first, first + self._n_children[x])

    def omega_parent(self, x: int) -> float:
        """Transition weight omega(x, parent); requires x expanded."""
        w = self._omega_par[x]
        if math.isnan(w):
            raise ValueError(f"node {x} not expanded")
        return w

    def exp_neg_V(self, x: int) -> float:
        return math.exp(-self._V[x])

    def exp_neg_U(self, x: int) -> float:
        """exp(-U(x)) = exp(-V(x)) / omega(x, parent); requires x expanded."""
        return math.exp(-self._V[x]) / self.omega_parent(x)

    def U(self, x: int) -> float:
        return self._V[x] + math.log(self.omega_parent(x))

    def nodes_at_depth(self, k: int) -> list[int]:
        return self._by_depth.get(k, [])

    def path_to_root(self, x: int) -> list[int]:
        """Nodes from x up to (and including) the root."""
        out = [x]
        while self._parent[out[-1]] != ANCHOR:
            out.append(self._parent[out[-1]])
        return out

    def child_index_path(self, x: int) -> tuple[int, ...]:
        """Child indexes from the root down to x (canonical node address)."""
        idx = []
        while self._parent[x] != ANCHOR:
            p = self._parent[x]
            idx.append(x - self._first_child[p])
            x = p
        return tuple(reversed(idx))

    # -- growth ----------------------------------------------------------------

    def _draw_marks(self, x: int) -> list[float]:
        law = self.law
        if law is None:
            raise ValueError("structure-built tree cannot be expanded further")
        if law.q0 > 0.0:
            u = rng.uniforms(self._digest[x], 3)
            if u[0] < law.q0:
                return []
            picks = u[1:3]
        else:
            picks = rng.uniforms(self._digest[x], 2)
        alpha, beta = law.mark_values()
        p = law.p
        return [alpha if ui < p else beta for ui in picks]

    def expand(self, x: int) -> None:
        """Draw the mark vector of x (idempotent)."""
        if self._n_children[x] >= 0:
            return
        with self.lock:
            if self._n_children[x] >= 0:
                return
            marks = self._draw_marks(x)
            self._append_children(x, marks)

    def _append_children(self, x: int, marks: list[float]) -> None:
        self._omega_par[x] = 1.0 / (1.0 + math.fsum(marks))
        first = len(self._parent)
        self._first_child[x] = first
        self._n_children[x] = len(marks)
        d = self._depth[x] + 1
        level = self._by_depth.setdefault(d, [])
        vx = self._V[x]
        hx = self._H[x]
        vbarx = self._vbar[x]
        dropx = self._drop[x]
        for i, A in enumerate(marks):
            vc = vx - math.log(A)
            self._parent.append(x)
            self._depth.append(d)
            self._mark.append(A)
            self._V.append(vc)
            self._H.append(1.0 + A * hx)
            vb = vbarx if vbarx >= vc else vc
            self._vbar.append(vb)
            dr = vb - vc
            self._drop.append(dropx if dropx >= dr else dr)
            self._omega_par.append(math.nan)
            self._first_child.append(-1)
            self._n_children.append(-1)
            if self._digest is not None:
                self._digest.append(rng.child_digest(self._digest[x], i))
            level.append(first + i)
        if self.debug:
            self.check_node(x)

    def ensure_depth(self, n: int, node_budget: int = 5_000_000) -> None:
        """Expand every node above generation n (BFS, budget-guarded)."""
        for k in range(n):
            for x in list(self.nodes_at_depth(k)):
                self.expand(x)
                if len(self._parent) > node_budget:
                    raise BudgetExceeded(
                        f"tree exceeded {node_budget} nodes while filling depth {n}",
                        partial=self,
                    )

    # -- invariants --------------------------------------------------------------

    def check_node(self, x: int, tol: float = 1e-14) -> None:
        """Assert local structural identities at an expanded node.

        Checks the normalisation of the transition weights, the telescoped
        potential on each child edge, and the two expressions for the
        symmetrised weight exp(-U): the reciprocal form and the sum of
        exp(-V) over the node and its children.
        """
        w = self.omega_parent(x)
        marks = [self._mark[c] for c in self.children(x)]
        total = w * (1.0 + math.fsum(marks))
        assert abs(total - 1.0) <= tol, f"omega rows sum to {total} at node {x}"
        for c in self.children(x):
            dv = self._V[c] - self._V[x] + math.log(self._mark[c])
            assert abs(dv) <= tol * max(1.0, abs(self._V[c])), f"potential step broken at {c}"
        lhs = self.exp_neg_U(x)
        rhs = math.fsum([self.exp_neg_V(x)] + [self.exp_neg_V(c) for c in self.children(x)])
        assert abs(lhs - rhs) <= tol * max(lhs, rhs), f"symmetrised weight broken at node {x}"

    def check_all(self, tol: float = 1e-14) -> int:
        """Run :meth:`check_node` at every expanded node; returns the count."""
        n = 0
        for x in range(len(self._parent)):
            if self.is_expanded(x):
                self.check_node(x, tol)
                n += 1
        return n

    # -- construction from explicit structure ------------------------------------

    @classmethod
    def from_structure(cls, structure) -> "MarkedTree":
        """Build a tree from explicit nested marks (no law, no randomness).

        ``structure`` is ``(marks, children)`` where ``marks`` is the list
        of child marks of the node and ``children`` a list, per mark, of
        either a nested structure or ``None`` to leave that child
        unexpanded.  Convenient for hand-built oracles such as the unary
        constant-mark chain.
        """
        tree = cls(law=None)
        def build(node_id, struct):
            marks, childs = struct
            if len(childs) != len(marks):
                raise ValueError("structure children must match marks")
            with tree.lock:
                tree._append_children(node_id, [float(A) for A in marks])
            for (c, sub) in zip(tree.children(node_id), childs):
                if sub is not None:
                    build(c, sub)
        build(0, structure)
        return tree


def unary_chain(depth: int, mark: float = 1.0) -> MarkedTree:
    """Chain tree where every node has one child of the given mark.

    With mark 1 the potential vanishes and ``H`` at depth k equals k; the
    standard hand-computable environment.
    """
    struct = None
    for _ in range(depth):
        struct = ([mark], [struct])
    return MarkedTree.from_structure(struct)


# -- sampling ---------------------------------------------------------------------


def survives_to_depth(tree: MarkedTree, depth: int, node_budget: int = 5_000_000) -> bool:
    """Depth-first survival probe; expands only what the probe visits."""
    stack = [0]
    while stack:
        x = stack.pop()
        if tree.depth(x) >= depth:
            return True
        tree.expand(x)
        if tree.n_nodes > node_budget:
            raise BudgetExceeded(f"survival probe passed {node_budget} nodes", partial=tree)
        stack.extend(reversed(tree.children(x)))
    return False


def sample_tree(
    law: MarkLaw,
    seed: int,
    survival_proxy_depth: int = 50,
    max_attempts: int = 10_000,
    debug: bool = False,
) -> MarkedTree:
    """Sample an environment conditioned to survive to a proxy depth.

    Extinction-capable laws are rejection-sampled: attempts that die out
    before ``survival_proxy_depth`` are discarded and counted on the
    returned tree's ``rejections``.  Deterministic in (law, seed).
    """
    if survival_proxy_depth < 1:
        raise ValueError("survival_proxy_depth must be >= 1")
    for attempt in range(max_attempts):
        tree = MarkedTree(law, seed=seed, attempt=attempt, debug=debug)
        tree.expand(0)
        if law.q0 == 0.0 or survives_to_depth(tree, survival_proxy_depth):
            tree.rejections = attempt
            return tree
    raise BudgetExceeded(
        f"{max_attempts} environments all died before depth {survival_proxy_depth}"
    )


# -- level martingales --------------------------------------------------------------


@dataclass(frozen=True)
class MartingaleReport:
    """Level-n additive/derivative sums and the drawdown-truncated sum."""

    n: int
    W: float
    D: float
    W_lambda: float
    lam: float


def martingales(tree: MarkedTree, n: int, lam: float, node_budget: int = 5_000_000) -> MartingaleReport:
    """Level sums W_n = sum exp(-V), D_n = sum V exp(-V) at generation n.

    ``W_lambda`` restricts W_n to nodes whose ancestor path never saw a
    potential drawdown larger than ``lam``.  Expands the tree on demand;
    raises :class:`BudgetExceeded` when the population explodes.
    """
    if lam <= 0:
        raise ValueError("lambda must be positive")
    tree.ensure_depth(n, node_budget)
    nodes = tree.nodes_at_depth(n)
    w_terms, d_terms, wl_terms = [], [], []
    for x in nodes:
        e = math.exp(-tree.V(x))
        w_terms.append(e)
        d_terms.append(tree.V(x) * e)
        if tree.drop(x) <= lam:
            wl_terms.append(e)
    return MartingaleReport(
        n=n,
        W=math.fsum(w_terms),
        D=math.fsum(d_terms),
        W_lambda=math.fsum(wl_terms),
        lam=lam,
    )


def level_sweep(
    law: MarkLaw,
    seed: int,
    n_max: int,
    lambdas: tuple[float, ...] = (),
    chunk_pow: int = 21,
    path_budget: int = 1 << 26,
) -> dict:
    """Vectorised per-level sums for wide (binary-law) trees.

    Returns arrays ``W[k]``, ``D[k]``, ``population[k]`` and
    ``W_lambda[lam][k]`` for k = 0..n_max, without materialising an arena.
    Levels are processed in chunks of ``2**chunk_pow`` paths, each keyed
    by (seed, level, chunk index): deterministic for a fixed chunk size.

    This sampler draws from its own stream family and is not node-for-node
    identical to :func:`sample_tree` at equal seeds.
    """
    chunk = 1 << chunk_pow
    alpha, beta = law.mark_values()
    steps = np.array([law.a, -law.b])
    W = np.zeros(n_max + 1)
    D = np.zeros(n_max + 1)
    pop = np.zeros(n_max + 1, dtype=np.int64)
    WL = {lam: np.zeros(n_max + 1) for lam in lambdas}

    # level 0: the root
    V_parts = [np.zeros(1)]
    drop_parts = [np.zeros(1)]
    vbar_parts = [np.zeros(1)]
    W[0] = 1.0
    pop[0] = 1
    for lam in lambdas:
        WL[lam][0] = 1.0

    for k in range(1, n_max + 1):
        new_V, new_drop, new_vbar = [], [], []
        total = 0
        out_chunk = 0
        for V0, dr0, vb0 in zip(V_parts, drop_parts, vbar_parts):
            m = len(V0)
            if m == 0:
                continue
            gen = rng.stream(seed, "sweep", k, out_chunk)
            if law.q0 > 0.0:
                alive = gen.random(m) >= law.q0
                V0, dr0, vb0 = V0[alive], dr0[alive], vb0[alive]
                m = len(V0)
            if m == 0:
                out_chunk += 1
                continue
            picks = (gen.random(2 * m) >= law.p).astype(np.int64)
            Vc = np.repeat(V0, 2) + steps[picks]
            vbc = np.maximum(np.repeat(vb0, 2), Vc)
            drc = np.maximum(np.repeat(dr0, 2), vbc - Vc)
            total += len(Vc)
            if total > path_budget:
                raise BudgetExceeded(f"level sweep passed {path_budget} paths at level {k}")
            # re-chunk for the next level
            for s in range(0, len(Vc), chunk):
                new_V.append(Vc[s : s + chunk])
                new_drop.append(drc[s : s + chunk])
                new_vbar.append(vbc[s : s + chunk])
            e = np.exp(-Vc)
            W[k] += float(e.sum())
            D[k] += float((Vc * e).sum())
            for lam in lambdas:
                WL[lam][k] += float(e[drc <= lam].sum())
            out_chunk += 1
        pop[k] = total
        V_parts, drop_parts, vbar_parts = new_V, new_drop, new_vbar
        if total == 0:
            break
    return {"W": W, "D": D, "population": pop, "W_lambda": WL}


# -- export ----------------------------------------------------------------------


def export_edge_list(tree: MarkedTree, fh) -> int:
    """Write the tree as CSV rows (node_id, parent_id, depth, A, V, U).

    ``A`` is empty for the root and ``U`` is empty for unexpanded nodes
    (their transition weights are not yet drawn).  Returns the row count.
    """
    fh.write("node_id,parent_id,depth,A,V,U\n")
    n = 0
    for x in range(tree.n_nodes):
        mark = "" if x == 0 else repr(tree.mark(x))
        u = repr(tree.U(x)) if tree.is_expanded(x) else ""
        fh.write(f"{x},{tree.parent(x)},{tree.depth(x)},{mark},{repr(tree.V(x))},{u}\n")
        n += 1
    return n
