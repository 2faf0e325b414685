import pytest

from treewalk.frontier import grow_to_frontier
from treewalk.marks import solve_two_point_marks
from treewalk.tree import sample_tree


@pytest.fixture(scope="session")
def binary_law():
    return solve_two_point_marks(1.0)


@pytest.fixture(scope="session")
def ext_law():
    return solve_two_point_marks(1.0, 0.44)


@pytest.fixture(scope="session")
def small_env(ext_law):
    """One survival-conditioned environment with a grown frontier."""
    tree = sample_tree(ext_law, seed=20, survival_proxy_depth=25)
    frontier = grow_to_frontier(tree, 20.0, depth_cap=24, node_budget=200_000)
    return tree, frontier
