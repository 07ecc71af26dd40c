"""Structural and feature link heuristics, and the dominance index built on them.

Structural scores sum over shared neighbors r of (u, v):
  CN: 1,  AA: 1/ln deg(r),  RA: 1/deg(r)
The feature heuristic is cosine similarity of the endpoint feature rows.
All heuristic evaluation runs on the train-edge graph only.
"""

from __future__ import annotations

import numpy as np

from .evaluation import MetricSpec
from .graph import Graph, EdgeSplit

EPSILON = 1e-9


def _shared(g: Graph, u: int, v: int) -> np.ndarray:
    return np.intersect1d(g.neighbors(u), g.neighbors(v), assume_unique=True)


def common_neighbors(g: Graph, u: int, v: int) -> float:
    """|N(u) & N(v)|; for u == v this is deg(u) (self excluded by no-loops)."""
    if u == v:
        return float(g.degrees[u])
    return float(len(_shared(g, u, v)))


def adamic_adar(g: Graph, u: int, v: int) -> float:
    """Sum of 1/ln deg(r) over shared neighbors (natural log)."""
    shared = _shared(g, u, v)
    if len(shared) == 0:
        return 0.0
    deg = g.degrees[shared]
    if np.any(deg < 2):
        # Unreachable: a shared neighbor touches both u and v.
        raise ValueError("shared neighbor with degree < 2")
    return float(np.sum(1.0 / np.log(deg)))


def resource_allocation(g: Graph, u: int, v: int) -> float:
    """Sum of 1/deg(r) over shared neighbors."""
    shared = _shared(g, u, v)
    if len(shared) == 0:
        return 0.0
    return float(np.sum(1.0 / g.degrees[shared]))


def feature_cosine(g: Graph, u: int, v: int) -> float:
    """cos(x_u, x_v); zero-vector rows score 0."""
    if g.features is None:
        raise ValueError(
            "graph has no node features; score with all-ones features instead")
    xu, xv = g.features[u], g.features[v]
    nu, nv = np.linalg.norm(xu), np.linalg.norm(xv)
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.dot(xu, xv) / (nu * nv))


HEURISTICS = ("cn", "aa", "ra", "cos")


def score_edges(g: Graph, edges: np.ndarray, which: str,
                features: np.ndarray | None = None) -> np.ndarray:
    """Score a list of pairs with one heuristic.

    ``features`` overrides the graph's own features for the cosine
    heuristic (used for the all-ones fallback on featureless data).
    """
    which = which.lower()
    if which not in HEURISTICS:
        raise ValueError(f"unknown heuristic {which!r}; choose from {HEURISTICS}")
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if which == "cos":
        x = features if features is not None else g.features
        if x is None:
            raise ValueError(
                "cosine heuristic needs features; pass all-ones features for "
                "featureless graphs")
        norms = np.linalg.norm(x, axis=1)
        safe = np.where(norms == 0.0, 1.0, norms)
        xn = x / safe[:, None]
        return np.sum(xn[edges[:, 0]] * xn[edges[:, 1]], axis=1)
    fn = {"cn": common_neighbors, "aa": adamic_adar, "ra": resource_allocation}[which]
    return np.array([fn(g, int(u), int(v)) for u, v in edges], dtype=np.float64)


def heuristic_eval(g: Graph, split: EdgeSplit, which: str,
                   metric: MetricSpec) -> float:
    """Metric value of one heuristic on the split's test positives/negatives."""
    g_train = Graph.from_edges(g.num_nodes, split.train_pos, g.features)
    pos = score_edges(g_train, split.test_pos, which)
    neg = score_edges(g_train, split.test_neg, which)
    return metric.evaluate(pos, neg)


def structure_feature_report(g: Graph, split: EdgeSplit,
                             metric: MetricSpec) -> dict:
    """Dominance index P_S/(P_S+P_F+eps) plus the raw ingredients.

    P_S is the common-neighbor performance, P_F the feature-cosine
    performance; featureless graphs fall back to all-ones features, which
    ties every pair and lands the cosine heuristic at the floor.
    """
    p_s = heuristic_eval(g, split, "cn", metric)
    if g.features is not None:
        p_f = heuristic_eval(g, split, "cos", metric)
    else:
        g_train = Graph.from_edges(g.num_nodes, split.train_pos)
        ones = np.ones((g.num_nodes, 1))
        pos = score_edges(g_train, split.test_pos, "cos", features=ones)
        neg = score_edges(g_train, split.test_neg, "cos", features=ones)
        p_f = metric.evaluate(pos, neg)
    index = p_s / (p_s + p_f + EPSILON)
    return {
        "p_structure": p_s,
        "p_feature": p_f,
        "index": index,
        "num_nodes": g.num_nodes,
        "avg_degree": float(g.degrees.mean()) if g.num_nodes else 0.0,
    }


def structure_feature_index(g: Graph, split: EdgeSplit,
                            metric: MetricSpec) -> float:
    return structure_feature_report(g, split, metric)["index"]
