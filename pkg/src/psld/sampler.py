"""Random subgraph partitioning and the sampled-neighborhood estimator.

``rss_partition`` splits the node set into disjoint contiguous chunks of a
(possibly shuffled) node order and slices series windows plus adjacency
down to each chunk. The estimator half of the module checks that
aggregating over an inclusion-sampled node subset, reweighted by the
inclusion probabilities, matches the full-neighborhood aggregation in
expectation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import SeriesStore
from .numerics import Rng, shuffle_indices

NORM_MODES = ("target_degree", "symmetric_sqrt", "unit")


@dataclass(frozen=True)
class SubgraphBatch:
    """One node chunk with its windows and double-sliced adjacency.

    ``x`` is (n_windows, l_in, n_sub), ``y`` is (n_windows, l_out, n_sub),
    ``adjacency`` is the dense (n_sub, n_sub) weight block for the chunk.
    """

    node_index: np.ndarray
    x: np.ndarray
    y: np.ndarray
    adjacency: np.ndarray


def dense_adjacency(store: SeriesStore) -> np.ndarray:
    """Edge list to a dense (n_nodes, n_nodes) weight matrix."""
    n = store.n_nodes
    mat = np.zeros((n, n), dtype=np.float64)
    for src, dst, w in store.adjacency or ():
        mat[src, dst] = w
    return mat


def rss_partition(
    store: SeriesStore,
    n_subgraphs: int,
    l_in: int,
    l_out: int,
    training: bool,
    rng: Rng,
) -> list:
    """Partition nodes into n_subgraphs chunks and window each chunk.

    In training mode the node order is a seeded shuffle, otherwise the
    identity. Chunks are contiguous runs of size n_nodes // n_subgraphs;
    the remainder goes to the last chunk. The union of chunks is the full
    node set and chunks are pairwise disjoint.
    """
    n = store.n_nodes
    if not 1 <= n_subgraphs <= n:
        raise ValueError(f"n_subgraphs must be in [1, {n}], got {n_subgraphs}")
    l_time = store.l_data - l_in - l_out + 1
    if l_time < 1:
        raise ValueError(
            f"series length {store.l_data} too short for windows; "
            f"needs at least {l_in + l_out}"
        )
    order = shuffle_indices(n, rng) if training else np.arange(n)
    adj = dense_adjacency(store)
    size = n // n_subgraphs
    batches = []
    for k in range(n_subgraphs):
        if k < n_subgraphs - 1:
            idx = order[k * size:(k + 1) * size]
        else:
            idx = order[k * size:]
        sliced = store.values[idx]
        x = np.stack([sliced[:, t:t + l_in].T for t in range(l_time)])
        y = np.stack([sliced[:, t + l_in:t + l_in + l_out].T for t in range(l_time)])
        batches.append(SubgraphBatch(idx.copy(), x, y, adj[np.ix_(idx, idx)]))
    return batches


@dataclass(frozen=True)
class GraphSpec:
    """Static graph with node features and a shared projection.

    ``neighbors[v]`` is a sorted tuple of v's neighbor indices,
    ``features`` is (n_nodes, d_in), ``weight`` is (d_in, d_out) and is
    applied as features @ weight. ``norm_mode`` picks the edge constant:
    the aggregating node's degree, the symmetric square root of both
    degrees, or 1.
    """

    neighbors: tuple
    features: np.ndarray
    weight: np.ndarray
    norm_mode: str = "target_degree"

    def __post_init__(self):
        nbs = tuple(tuple(sorted(set(int(u) for u in row))) for row in self.neighbors)
        n = len(nbs)
        for v, row in enumerate(nbs):
            for u in row:
                if not 0 <= u < n:
                    raise ValueError(f"neighbor {u} of node {v} out of range")
                if u == v:
                    raise ValueError(f"self-loop on node {v} is not supported")
        object.__setattr__(self, "neighbors", nbs)
        f = np.asarray(self.features, dtype=np.float64)
        w = np.asarray(self.weight, dtype=np.float64)
        if f.ndim != 2 or f.shape[0] != n:
            raise ValueError(f"features must be ({n}, d_in), got {f.shape}")
        if w.ndim != 2 or w.shape[0] != f.shape[1]:
            raise ValueError(f"weight must be ({f.shape[1]}, d_out), got {w.shape}")
        if self.norm_mode not in NORM_MODES:
            raise ValueError(f"norm_mode must be one of {NORM_MODES}, got {self.norm_mode!r}")
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "weight", w)

    @property
    def n_nodes(self) -> int:
        return len(self.neighbors)

    def degree(self, v: int) -> int:
        return len(self.neighbors[v])


@dataclass(frozen=True)
class SampleDesign:
    """Independent per-node inclusion probabilities, each in (0, 1]."""

    inclusion_prob: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.inclusion_prob, dtype=np.float64)
        if p.ndim != 1 or p.size < 1:
            raise ValueError(f"inclusion_prob must be a 1-D vector, got shape {p.shape}")
        if np.any(p <= 0.0) or np.any(p > 1.0):
            raise ValueError("inclusion probabilities must lie in (0, 1]")
        object.__setattr__(self, "inclusion_prob", p)

    @classmethod
    def uniform(cls, n_nodes: int, p: float) -> "SampleDesign":
        return cls(np.full(n_nodes, float(p)))


def _norm_constant(g: GraphSpec, v: int, u: int) -> float:
    if g.norm_mode == "target_degree":
        return float(g.degree(v))
    if g.norm_mode == "symmetric_sqrt":
        return math.sqrt(g.degree(v) * g.degree(u))
    return 1.0


def _inv_norm_matrix(g: GraphSpec) -> np.ndarray:
    """Matrix with [v, u] = 1 / C_vu on edges and 0 elsewhere."""
    mat = np.zeros((g.n_nodes, g.n_nodes), dtype=np.float64)
    for v, row in enumerate(g.neighbors):
        for u in row:
            mat[v, u] = 1.0 / _norm_constant(g, v, u)
    return mat


def aggregate_true(g: GraphSpec, v: int) -> np.ndarray:
    """Full-neighborhood aggregation: sum over u in N(v) of (h_u W) / C_vu.

    Isolated nodes aggregate to the zero vector.
    """
    acc = np.zeros(g.weight.shape[1], dtype=np.float64)
    for u in g.neighbors[v]:
        acc = acc + (g.features[u] @ g.weight) / _norm_constant(g, v, u)
    return acc


def aggregate_sampled(g: GraphSpec, v: int, sampled, design: SampleDesign) -> np.ndarray:
    """Inclusion-reweighted aggregation over the sampled neighbors of v.

    Each sampled neighbor u contributes (h_u W) / (C_vu * P(u)), which
    makes the estimator unbiased for aggregate_true under independent
    inclusion with probabilities P.
    """
    included = frozenset(int(u) for u in sampled)
    acc = np.zeros(g.weight.shape[1], dtype=np.float64)
    for u in g.neighbors[v]:
        if u in included:
            p = float(design.inclusion_prob[u])
            if p <= 0.0:
                raise ValueError(f"sampled node {u} has inclusion probability {p}")
            acc = acc + (g.features[u] @ g.weight) / (_norm_constant(g, v, u) * p)
    return acc


@dataclass(frozen=True)
class McReport:
    """Monte-Carlo comparison of the sampled estimator against the truth.

    ``rel_err[v]`` is |mean - true| / |true| in the euclidean norm for node
    v, ``max_z`` the largest per-coordinate studentized deviation of the
    trial mean, and ``rel_err_at`` holds the per-node errors after the
    requested trial-count prefixes of the same trial stream.
    """

    n_nodes: int
    n_trials: int
    rel_err: np.ndarray
    max_rel_err: float
    max_z: float
    rel_err_at: dict


def _rel_err(mean_est: np.ndarray, true_ref: np.ndarray) -> np.ndarray:
    dev = np.linalg.norm(mean_est - true_ref, axis=1)
    ref = np.linalg.norm(true_ref, axis=1)
    return np.where(dev == 0.0, 0.0, dev / np.maximum(ref, 1e-300))


def unbiasedness_mc_check(
    g: GraphSpec,
    design: SampleDesign,
    n_trials: int,
    rng: Rng,
    checkpoints: tuple = (),
) -> McReport:
    """Sample node subsets for n_trials rounds and compare estimator means.

    Trial t includes node u when an independent uniform draw falls below
    P(u). The trial mean is computed through the estimator's linearity in
    the inclusion indicators, so a design with P identically 1 reproduces
    the true aggregation bit for bit. Statistical confidence needs on the
    order of hundreds of trials; smaller counts still report.
    """
    if n_trials < 1:
        raise ValueError(f"n_trials must be >= 1, got {n_trials}")
    if design.inclusion_prob.shape[0] != g.n_nodes:
        raise ValueError(
            f"design covers {design.inclusion_prob.shape[0]} nodes, graph has {g.n_nodes}"
        )
    for t in checkpoints:
        if not 1 <= t <= n_trials:
            raise ValueError(f"checkpoint {t} outside [1, {n_trials}]")

    p = design.inclusion_prob
    projected = g.features @ g.weight                       # (n, d_out)
    inv_norm = _inv_norm_matrix(g)                          # (n, n)
    true_ref = inv_norm @ projected
    reweighted = inv_norm / p[None, :]

    inc = (rng.gen.random((n_trials, g.n_nodes)) < p[None, :]).astype(np.float64)
    # per-trial estimates for every node: (n_trials, n, d_out)
    vals = np.einsum("vu,tu,ud->tvd", reweighted, inc, projected, optimize=True)

    mean_est = reweighted @ (inc.mean(axis=0)[:, None] * projected)
    rel = _rel_err(mean_est, true_ref)

    std = vals.std(axis=0, ddof=1) if n_trials > 1 else np.zeros_like(true_ref)
    se = std / math.sqrt(n_trials)
    dev = np.abs(mean_est - true_ref)
    z = np.where(dev == 0.0, 0.0, dev / np.maximum(se, 1e-300))

    rel_at = {}
    for t in checkpoints:
        mean_t = reweighted @ (inc[:t].mean(axis=0)[:, None] * projected)
        rel_at[int(t)] = _rel_err(mean_t, true_ref)

    return McReport(
        n_nodes=g.n_nodes,
        n_trials=n_trials,
        rel_err=rel,
        max_rel_err=float(rel.max()),
        max_z=float(z.max()),
        rel_err_at=rel_at,
    )


def random_graph(
    n_nodes: int,
    rng: Rng,
    d_in: int = 3,
    d_out: int = 2,
    edge_prob: float = 0.2,
    norm_mode: str = "target_degree",
) -> GraphSpec:
    """Seeded undirected random graph with no isolated nodes."""
    if n_nodes < 2:
        raise ValueError(f"need at least two nodes, got {n_nodes}")
    g = rng.gen
    draw = g.random((n_nodes, n_nodes))
    nbs = [set() for _ in range(n_nodes)]
    for i in range(n_nodes):
        for j in range(i + 1, n_nodes):
            if draw[i, j] < edge_prob:
                nbs[i].add(j)
                nbs[j].add(i)
    for i in range(n_nodes):
        if not nbs[i]:
            j = (i + 1) % n_nodes
            nbs[i].add(j)
            nbs[j].add(i)
    features = g.standard_normal((n_nodes, d_in))
    weight = g.standard_normal((d_in, d_out))
    return GraphSpec(tuple(tuple(sorted(s)) for s in nbs), features, weight, norm_mode)
