"""Synthetic graphs for desk-scale experiments.

The structure-dominant generator plants dense communities (so shared
neighbors strongly predict links) and attaches random Gaussian features
that carry no link signal.
"""

from __future__ import annotations

import numpy as np

from .graph import Graph


def structure_dominant_graph(n: int = 2000, community_size: int = 20,
                             p_in: float = 0.5, cross_degree: float = 2.0,
                             feature_dim: int = 32, seed: int = 7) -> Graph:
    """Disjoint communities with Bernoulli(p_in) internal edges plus random
    cross-community noise edges (about ``cross_degree`` per node)."""
    if n % community_size != 0:
        raise ValueError("n must be a multiple of community_size")
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(community_size, k=1)
    edges = []
    for start in range(0, n, community_size):
        keep = rng.random(len(iu)) < p_in
        block = np.stack([iu[keep] + start, ju[keep] + start], axis=1)
        edges.append(block)
    n_cross = int(n * cross_degree / 2)
    u = rng.integers(0, n, 3 * n_cross)
    v = rng.integers(0, n, 3 * n_cross)
    different = (u // community_size) != (v // community_size)
    cross = np.stack([u[different], v[different]], axis=1)[:n_cross]
    edges.append(cross)
    features = rng.standard_normal((n, feature_dim))
    return Graph.from_edges(n, np.concatenate(edges, axis=0), features)


def parse_synth_spec(spec: str) -> Graph:
    """Build a graph from "synth" or "synth:n=2000,cs=20,p_in=0.5,...".

    Keys: n, cs (community size), p_in, xdeg (cross degree), fdim, seed.
    """
    kw = {}
    if ":" in spec:
        _, args = spec.split(":", 1)
        names = {"n": ("n", int), "cs": ("community_size", int),
                 "p_in": ("p_in", float), "xdeg": ("cross_degree", float),
                 "fdim": ("feature_dim", int), "seed": ("seed", int)}
        for item in args.split(","):
            key, raw = item.split("=", 1)
            if key not in names:
                raise ValueError(f"unknown synth key {key!r}; choose from {sorted(names)}")
            name, cast = names[key]
            kw[name] = cast(raw)
    return structure_dominant_graph(**kw)
