"""Shared fixtures: the expensive graphs are built once per session."""

import pytest

from walkdispatch import graph as graph_mod


@pytest.fixture(scope="session")
def k4():
    return graph_mod.Graph([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]])


@pytest.fixture(scope="session")
def lps11():
    return graph_mod.build_lps(5, 11)


@pytest.fixture(scope="session")
def lps13():
    return graph_mod.build_lps(5, 13)


@pytest.fixture(scope="session")
def lps29():
    return graph_mod.build_lps(5, 29)


@pytest.fixture(scope="session")
def rr_graphs():
    """Degree-6 random regular graphs for the finite-size scaling runs."""
    return {n: graph_mod.build_random_regular(n, 6, seed=0)
            for n in (250, 1000, 4000)}
