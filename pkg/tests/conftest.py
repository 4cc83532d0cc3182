import pytest

from sicert.geometry import build_graph, load_set


@pytest.fixture(scope="session")
def peres():
    s = load_set("peres24")
    return s, build_graph(s)


@pytest.fixture(scope="session")
def yo13():
    s = load_set("yo13")
    return s, build_graph(s)
