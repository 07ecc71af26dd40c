import numpy as np
import pytest

from linkgae.graph import Graph


def random_graph(rng: np.random.Generator, n_min: int = 2, n_max: int = 50,
                 p: float | None = None, features: int | None = None) -> Graph:
    n = int(rng.integers(n_min, n_max + 1))
    prob = p if p is not None else rng.uniform(0.05, 0.5)
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(len(iu)) < prob
    edges = np.stack([iu[keep], ju[keep]], axis=1)
    feats = rng.standard_normal((n, features)) if features else None
    return Graph.from_edges(n, edges, feats)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
