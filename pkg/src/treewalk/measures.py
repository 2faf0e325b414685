"""Invariant measures of the reflected walk and total-variation distances.

With a reflecting frontier the walk is positive recurrent and its
stationary law has explicit weights: 1 on the root's pseudo-parent,
exp(-U(x)) on interior nodes and exp(-V(x)) on frontier nodes, all
normalised by the partition sum Z.  The chain has period 2, so each
depth-parity class carries mass 1/2, and experiments that compare the
walk's law at time m restrict (and double) the measure on the class
matching the parity of m.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParityMassZero
from .frontier import StoppingFrontier
from .tree import ANCHOR, MarkedTree

PARITY_FULL = "full"
PARITY_EVEN = "even"
PARITY_ODD = "odd"

KIND_ANCHOR = 0
KIND_INTERIOR = 1
KIND_FRONTIER = 2


@dataclass(frozen=True)
class InvariantMeasure:
    """Stationary law over a frontier-truncated environment.

    States are tree node ids plus the pseudo-parent (id -1, depth -1).
    ``parity`` records whether the measure is the full stationary law or
    its renormalised restriction to one depth-parity class.
    """

    r: float
    parity: str
    states: np.ndarray
    depths: np.ndarray
    weights: np.ndarray
    kinds: np.ndarray
    Z: float

    def state_weights(self) -> dict[int, float]:
        return {int(s): float(w) for s, w in zip(self.states, self.weights)}

    def total_mass(self) -> float:
        return float(math.fsum(self.weights))

    def parity_masses(self) -> tuple[float, float]:
        """Mass of the even-depth class and of the odd class (anchor odd)."""
        even = self.depths % 2 == 0
        odd = ~even
        # anchor has depth -1, already odd
        return (
            float(math.fsum(self.weights[even])),
            float(math.fsum(self.weights[odd])),
        )


def invariant_measure(tree: MarkedTree, frontier: StoppingFrontier) -> InvariantMeasure:
    """Build the stationary law of the walk reflected at the frontier."""
    states = [ANCHOR]
    depths = [-1]
    kinds = [KIND_ANCHOR]
    weights = [1.0]
    for x in frontier.interior:
        states.append(x)
        depths.append(tree.depth(x))
        kinds.append(KIND_INTERIOR)
        weights.append(tree.exp_neg_U(x))
    for x in frontier.frontier:
        states.append(x)
        depths.append(tree.depth(x))
        kinds.append(KIND_FRONTIER)
        weights.append(tree.exp_neg_V(x))
    Z = math.fsum(weights)
    w = np.asarray(weights) / Z
    return InvariantMeasure(
        r=frontier.r,
        parity=PARITY_FULL,
        states=np.asarray(states, dtype=np.int64),
        depths=np.asarray(depths, dtype=np.int64),
        weights=w,
        kinds=np.asarray(kinds, dtype=np.int64),
        Z=Z,
    )


def parity_measure(measure: InvariantMeasure, m: int) -> InvariantMeasure:
    """Restrict to the parity class of time m and renormalise.

    Even m selects even-depth nodes; odd m selects odd-depth nodes plus
    the pseudo-parent.  For the full stationary law each class carries
    mass 1/2, so the restriction doubles the surviving weights.
    """
    if measure.parity != PARITY_FULL:
        raise ValueError("parity_measure expects a full-parity input")
    want_even = m % 2 == 0
    sel = (measure.depths % 2 == 0) if want_even else (measure.depths % 2 != 0)
    mass = float(math.fsum(measure.weights[sel]))
    if mass <= 0.0:
        raise ParityMassZero(f"no mass on the {'even' if want_even else 'odd'} class")
    return InvariantMeasure(
        r=measure.r,
        parity=PARITY_EVEN if want_even else PARITY_ODD,
        states=measure.states[sel],
        depths=measure.depths[sel],
        weights=measure.weights[sel] / mass,
        kinds=measure.kinds[sel],
        Z=measure.Z,
    )


def total_variation(mu, nu) -> float:
    """Total-variation distance (1/2) sum |mu(x) - nu(x)|.

    Accepts anything exposing ``state_weights() -> dict[state, weight]``
    (invariant measures and empirical laws alike); states missing on one
    side count with weight 0.
    """
    wa = mu.state_weights()
    wb = nu.state_weights()
    keys = set(wa) | set(wb)
    return 0.5 * math.fsum(abs(wa.get(k, 0.0) - wb.get(k, 0.0)) for k in keys)


@dataclass(frozen=True)
class DriftReport:
    """Exact measure drift between two frontier levels, with its bound."""

    exact: float
    bound: float
    z_low: float
    z_high: float


def measure_drift(
    tree: MarkedTree,
    frontier_r: StoppingFrontier,
    frontier_u: StoppingFrontier,
) -> DriftReport:
    """d_tv between the stationary laws at levels u <= r on one tree.

    Also returns the normaliser-ratio bound (Z_r - Z_u) / Z_u, which
    dominates the exact distance: unnormalised weights only grow when
    the line moves outward, so the pointwise discrepancy telescopes
    through the partition sums.
    """
    if frontier_u.r > frontier_r.r:
        raise ValueError("need u <= r")
    if frontier_u.depth_cap != frontier_r.depth_cap:
        raise ValueError("frontiers must share a depth cap")
    mu_r = invariant_measure(tree, frontier_r)
    mu_u = invariant_measure(tree, frontier_u)
    exact = total_variation(mu_r, mu_u)
    bound = (mu_r.Z - mu_u.Z) / mu_u.Z
    return DriftReport(exact=exact, bound=bound, z_low=mu_u.Z, z_high=mu_r.Z)


def export_measure_csv(measure: InvariantMeasure, fh) -> int:
    """Write (state_id, depth, weight, kind) rows; returns the row count."""
    kind_names = {KIND_ANCHOR: "anchor", KIND_INTERIOR: "interior", KIND_FRONTIER: "frontier"}
    fh.write("state_id,depth,weight,kind\n")
    n = 0
    for s, d, w, k in zip(measure.states, measure.depths, measure.weights, measure.kinds):
        fh.write(f"{int(s)},{int(d)},{repr(float(w))},{kind_names[int(k)]}\n")
        n += 1
    return n
