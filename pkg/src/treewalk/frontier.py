"""Stopping frontiers: the reflecting barrier as a finite cutset.

The stopping line at level r consists of the first vertices x on each
ray where the weighted ancestor sum ``H(x) = sum_{z in ]root, x]}
exp(V(z) - V(x))`` exceeds r (strict; ties stay below the line).  The
line need not separate the root from infinity, and below-line populations
grow exponentially in depth, so every frontier here is the line
intersected with a depth cap: rays that reach the cap while still at or
below r are truncated there, and the exp(-V) mass of those truncation
nodes is reported as ``leaked_mass``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetExceeded
from .tree import MarkedTree


@dataclass(frozen=True)
class StoppingFrontier:
    """A finite cutset realizing the stopping line under a depth cap.

    ``interior`` nodes sit strictly below the line and above the cap and
    are all expanded; ``frontier`` nodes are the cutset.  ``on_line[i]``
    says whether ``frontier[i]`` genuinely crossed r or was truncated by
    the depth cap; the truncated ones contribute ``leaked_mass``.
    """

    r: float
    depth_cap: int
    interior: tuple[int, ...]
    frontier: tuple[int, ...]
    on_line: tuple[bool, ...]
    leaked_mass: float

    @property
    def line_separated(self) -> bool:
        return self.leaked_mass == 0.0

    @property
    def n_nodes(self) -> int:
        return len(self.interior) + len(self.frontier)

    def frontier_set(self) -> frozenset[int]:
        return frozenset(self.frontier)

    def interior_set(self) -> frozenset[int]:
        return frozenset(self.interior)


def grow_to_frontier(
    tree: MarkedTree,
    r: float,
    depth_cap: int,
    node_budget: int = 2_000_000,
) -> StoppingFrontier:
    """Grow the tree exactly to the line-or-cap cutset and classify it.

    Breadth-first from the root: a node with H > r joins the frontier as
    a line member; a node at the depth cap with H <= r joins it as a
    truncation member; anything else is interior and gets expanded.

    Raises
    ------
    BudgetExceeded
        When the classified node count passes ``node_budget``; the
        exception carries the partially grown frontier for diagnostics.
    """
    if not (r > 1.0):
        raise ValueError("r must exceed 1")
    if depth_cap < 1:
        raise ValueError("depth_cap must be >= 1")
    interior: list[int] = []
    front: list[int] = []
    on_line: list[bool] = []
    leaked: list[float] = []
    queue = [0]
    head = 0
    while head < len(queue):
        x = queue[head]
        head += 1
        if tree.H(x) > r:
            front.append(x)
            on_line.append(True)
        elif tree.depth(x) >= depth_cap:
            front.append(x)
            on_line.append(False)
            leaked.append(tree.exp_neg_V(x))
        else:
            tree.expand(x)
            interior.append(x)
            queue.extend(tree.children(x))
        if len(interior) + len(front) > node_budget:
            partial = StoppingFrontier(
                r=r,
                depth_cap=depth_cap,
                interior=tuple(interior),
                frontier=tuple(front),
                on_line=tuple(on_line),
                leaked_mass=math.fsum(leaked),
            )
            raise BudgetExceeded(
                f"frontier for r={r} passed {node_budget} nodes "
                f"(reached depth {tree.depth(x)})",
                partial=partial,
            )
    return StoppingFrontier(
        r=r,
        depth_cap=depth_cap,
        interior=tuple(interior),
        frontier=tuple(front),
        on_line=tuple(on_line),
        leaked_mass=math.fsum(leaked),
    )


def partition_functions(tree: MarkedTree, frontier: StoppingFrontier) -> tuple[float, float]:
    """Partition sums (Y, Z) of the truncated environment.

    Y sums exp(-V) over interior plus frontier nodes; Z adds the
    pseudo-parent weight 1, exp(-U) over the interior and exp(-V) over
    the frontier.  Compensated summation throughout; the cutset identity
    Z = 2Y holds for every frontier, truncated or not.
    """
    y_terms = [tree.exp_neg_V(x) for x in frontier.interior]
    y_terms += [tree.exp_neg_V(x) for x in frontier.frontier]
    z_terms = [1.0]
    z_terms += [tree.exp_neg_U(x) for x in frontier.interior]
    z_terms += [tree.exp_neg_V(x) for x in frontier.frontier]
    return math.fsum(y_terms), math.fsum(z_terms)


def direct_path_sum(tree: MarkedTree, x: int) -> float:
    """Recompute H(x) by explicit summation along the ancestor path.

    Independent of the incremental recursion the arena maintains; used
    as the bookkeeping oracle.
    """
    if x == 0:
        return 0.0
    path = tree.path_to_root(x)[:-1]  # excludes the root
    vx = tree.V(x)
    return math.fsum(math.exp(tree.V(z) - vx) for z in path)


def verify_frontier(tree: MarkedTree, frontier: StoppingFrontier, tol: float = 1e-12) -> None:
    """Re-derive every membership decision from scratch.

    Checks the incremental H against :func:`direct_path_sum`, the
    line/cap classification rules, and the cutset property that each
    frontier node's strict ancestors are all interior.
    """
    interior = frontier.interior_set()
    r = frontier.r
    for x in frontier.interior:
        h = direct_path_sum(tree, x)
        assert abs(h - tree.H(x)) <= tol * max(1.0, h)
        assert h <= r and tree.depth(x) < frontier.depth_cap
        assert tree.is_expanded(x)
    for x, line in zip(frontier.frontier, frontier.on_line):
        h = direct_path_sum(tree, x)
        assert abs(h - tree.H(x)) <= tol * max(1.0, h)
        if line:
            assert h > r
        else:
            assert h <= r and tree.depth(x) == frontier.depth_cap
        for y in tree.path_to_root(x)[1:]:
            assert y in interior, f"ancestor {y} of frontier node {x} not interior"
            assert tree.H(y) <= r
