import numpy as np
import pytest

from stclust.panel import AdjacencyGraph


class ZeroNormals:
    """Stand-in generator whose standard normals are all zero, so Gaussian
    draws collapse to their means."""

    def standard_normal(self, size=None):
        return 0.0 if size is None else np.zeros(size)


class UnitVectorNormals:
    """Stand-in generator cycling through unit vectors, so consecutive
    Gaussian draws expose the columns of the transform applied to z."""

    def __init__(self, dim):
        self.dim = dim
        self.calls = 0

    def standard_normal(self, size=None):
        e = np.zeros(self.dim)
        e[self.calls % self.dim] = 1.0
        self.calls += 1
        return e


@pytest.fixture
def rng():
    return np.random.default_rng(20240)


def path_graph(n):
    return AdjacencyGraph.from_edges(n, [(i, i + 1) for i in range(n - 1)])


def random_graph(n, rng, p=0.4):
    edges = [(i, j) for i in range(n) for j in range(i + 1, n)
             if rng.random() < p]
    if not edges:
        edges = [(0, 1)]
    return AdjacencyGraph.from_edges(n, edges)
