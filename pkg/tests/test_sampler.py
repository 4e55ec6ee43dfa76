import math

import numpy as np
import pytest

from psld.dataset import SeriesStore, generate_synthetic
from psld.numerics import Rng
from psld.sampler import (
    GraphSpec,
    SampleDesign,
    aggregate_sampled,
    aggregate_true,
    dense_adjacency,
    random_graph,
    rss_partition,
    unbiasedness_mc_check,
)
from conftest import line_graph


def six_node_store():
    values = np.arange(60, dtype=float).reshape(6, 10)
    edges = []
    for a, b in ((0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 5)):
        edges.append((a, b, 1.0))
        edges.append((b, a, 1.0))
    return SeriesStore(values=values, node_ids=tuple(f"n{i}" for i in range(6)),
                       adjacency=tuple(edges))


class TestPartition:
    def test_eval_mode_is_identity_order(self):
        store = six_node_store()
        batches = rss_partition(store, 2, 3, 2, training=False, rng=Rng(0))
        assert [b.node_index.tolist() for b in batches] == [[0, 1, 2], [3, 4, 5]]

    def test_remainder_goes_to_last_chunk(self):
        store = SeriesStore(values=np.zeros((10, 12)),
                            node_ids=tuple(str(i) for i in range(10)),
                            adjacency=())
        batches = rss_partition(store, 3, 4, 2, training=False, rng=Rng(0))
        assert [len(b.node_index) for b in batches] == [3, 3, 4]

    def test_training_covers_all_nodes_exactly_once(self):
        store = six_node_store()
        for seed in range(10):
            batches = rss_partition(store, 3, 3, 2, training=True, rng=Rng(seed))
            seen = sorted(i for b in batches for i in b.node_index.tolist())
            assert seen == list(range(6))

    def test_training_shuffles_eventually(self):
        store = six_node_store()
        orders = {
            tuple(i for b in rss_partition(store, 2, 3, 2, training=True,
                                           rng=Rng(seed))
                  for i in b.node_index.tolist())
            for seed in range(20)
        }
        assert len(orders) > 1

    def test_window_tensor_shapes_and_values(self):
        store = six_node_store()
        batches = rss_partition(store, 2, 3, 2, training=False, rng=Rng(0))
        b = batches[0]
        n_time = 10 - 3 - 2 + 1
        assert b.x.shape == (n_time, 3, 3)  # (window, l_in, nodes)
        assert b.y.shape == (n_time, 2, 3)
        # window 0 of node 0: x rows 0..2, y rows 3..4 of the raw series
        assert np.array_equal(b.x[0, :, 0], np.array([0.0, 1.0, 2.0]))
        assert np.array_equal(b.y[0, :, 0], np.array([3.0, 4.0]))

    def test_subgraph_adjacency_matches_edge_oracle(self):
        store = six_node_store()
        dense = dense_adjacency(store)
        edge_set = {(a, b): w for a, b, w in store.adjacency}
        for seed in range(5):
            for batch in rss_partition(store, 2, 3, 2, training=True,
                                       rng=Rng(seed)):
                idx = batch.node_index
                for i, u in enumerate(idx):
                    for j, v in enumerate(idx):
                        want = edge_set.get((int(u), int(v)), 0.0)
                        assert batch.adjacency[i, j] == want
                        assert dense[u, v] == want

    def test_too_many_subgraphs_rejected(self):
        store = six_node_store()
        with pytest.raises(ValueError):
            rss_partition(store, 7, 3, 2, training=False, rng=Rng(0))

    def test_too_long_windows_rejected(self):
        store = six_node_store()
        with pytest.raises(ValueError):
            rss_partition(store, 2, 8, 3, training=False, rng=Rng(0))


class TestGraphSpec:
    def test_neighbor_normalization(self):
        g = GraphSpec(neighbors=((2, 1, 1), (0,), (0,)),
                      features=np.zeros((3, 2)),
                      weight=np.zeros((2, 2)),
                      norm_mode="target_degree")
        assert g.neighbors[0] == (1, 2)
        assert g.degree(0) == 2

    def test_rejects_self_loop(self):
        with pytest.raises(ValueError):
            GraphSpec(neighbors=((0,),), features=np.zeros((1, 2)),
                      weight=np.zeros((2, 2)), norm_mode="target_degree")

    def test_rejects_bad_mode(self):
        with pytest.raises(ValueError):
            GraphSpec(neighbors=((1,), (0,)), features=np.zeros((2, 2)),
                      weight=np.zeros((2, 2)), norm_mode="mean")


class TestAggregation:
    def test_true_matches_double_loop_oracle(self):
        g = line_graph(5, Rng(8))
        proj = g.features @ g.weight
        for v in range(5):
            want = np.zeros(proj.shape[1])
            for u in g.neighbors[v]:
                want += proj[u] / g.degree(v)
            got = aggregate_true(g, v)
            assert np.max(np.abs(got - want)) <= 1e-12

    def test_two_neighbor_frozen_example(self):
        # node 1 in a 3-path: neighbors {0, 2}, degree 2,
        # features [1,0] and [0,1], weight identity
        g = GraphSpec(neighbors=((1,), (0, 2), (1,)),
                      features=np.array([[1.0, 0.0],
                                         [5.0, 5.0],
                                         [0.0, 1.0]]),
                      weight=np.eye(2),
                      norm_mode="target_degree")
        got = aggregate_true(g, 1)
        assert np.max(np.abs(got - np.array([0.5, 0.5]))) <= 1e-15

    def test_symmetric_sqrt_constant(self):
        g = GraphSpec(neighbors=((1,), (0, 2), (1,)),
                      features=np.array([[1.0, 0.0],
                                         [5.0, 5.0],
                                         [0.0, 1.0]]),
                      weight=np.eye(2),
                      norm_mode="symmetric_sqrt")
        # C_1u = sqrt(2 * 1) for both neighbors
        want = (np.array([1.0, 0.0]) + np.array([0.0, 1.0])) / math.sqrt(2.0)
        assert np.max(np.abs(aggregate_true(g, 1) - want)) <= 1e-15

    def test_isolated_node_is_zero(self):
        g = GraphSpec(neighbors=((), (2,), (1,)),
                      features=np.ones((3, 2)),
                      weight=np.ones((2, 2)),
                      norm_mode="target_degree")
        assert np.array_equal(aggregate_true(g, 0), np.zeros(2))

    def test_full_sample_equals_truth(self):
        g = line_graph(6, Rng(2))
        design = SampleDesign.uniform(6, 1.0)
        sampled = range(6)
        for v in range(6):
            a = aggregate_true(g, v)
            b = aggregate_sampled(g, v, sampled, design)
            assert np.max(np.abs(a - b)) <= 1e-12

    def test_empty_sample_is_zero(self):
        g = line_graph(4, Rng(2))
        design = SampleDesign.uniform(4, 0.5)
        for v in range(4):
            assert np.array_equal(aggregate_sampled(g, v, (), design),
                                  np.zeros(2))

    def test_half_prob_doubles_each_term(self):
        g = line_graph(4, Rng(2))
        full = SampleDesign.uniform(4, 1.0)
        half = SampleDesign.uniform(4, 0.5)
        sampled = range(4)
        for v in range(4):
            a = aggregate_sampled(g, v, sampled, full)
            b = aggregate_sampled(g, v, sampled, half)
            assert np.max(np.abs(b - 2.0 * a)) <= 1e-12

    def test_design_validation(self):
        with pytest.raises(ValueError):
            SampleDesign(inclusion_prob=np.array([0.0, 0.5]))
        with pytest.raises(ValueError):
            SampleDesign(inclusion_prob=np.array([1.5]))


class TestMcCheck:
    def test_star_graph_center_mean_near_truth(self):
        # hub 0 with 4 leaves, unit features/weight, no degree scaling:
        # true aggregate at the hub is 4; under p=0.5 each trial contributes
        # (#sampled leaves)/0.5 with mean 4.
        n = 5
        g = GraphSpec(
            neighbors=((1, 2, 3, 4), (0,), (0,), (0,), (0,)),
            features=np.ones((n, 1)),
            weight=np.ones((1, 1)),
            norm_mode="unit",
        )
        design = SampleDesign.uniform(n, 0.5)
        trials = 20_000
        report = unbiasedness_mc_check(g, design, trials, Rng(99))
        # center estimate: mean of Binomial(4, .5)/.5 over 20k trials
        se = math.sqrt(4 * 0.5 * 0.5) / 0.5 / math.sqrt(trials)
        truth = 4.0
        assert abs(report.rel_err[0] * truth) <= 3.0 * se
        assert report.max_z <= 5.0

    def test_full_inclusion_is_exact(self):
        g = random_graph(20, Rng(4))
        design = SampleDesign.uniform(20, 1.0)
        report = unbiasedness_mc_check(g, design, 50, Rng(5))
        assert report.max_rel_err == 0.0

    def test_matches_aggregate_sampled_per_trial(self):
        # the vectorized einsum path must agree with the per-node estimator
        g = random_graph(12, Rng(6))
        design = SampleDesign.uniform(12, 0.7)
        inc = Rng(7).gen.random((40, 12)) < design.inclusion_prob
        means = np.zeros((12, g.weight.shape[1]))
        for t in range(40):
            chosen = np.flatnonzero(inc[t])
            for v in range(12):
                means[v] += aggregate_sampled(g, v, chosen, design)
        means /= 40
        report = unbiasedness_mc_check(g, design, 40, Rng(7))
        for v in range(12):
            truth = aggregate_true(g, v)
            denom = max(float(np.linalg.norm(truth)), 1e-12)
            want = float(np.linalg.norm(means[v] - truth)) / denom
            assert report.rel_err[v] == pytest.approx(want, abs=1e-10)

    def test_checkpoints_are_prefix_means(self):
        g = random_graph(10, Rng(1))
        design = SampleDesign.uniform(10, 0.5)
        r_short = unbiasedness_mc_check(g, design, 200, Rng(2))
        r_long = unbiasedness_mc_check(g, design, 800, Rng(2),
                                       checkpoints=(200, 800))
        # same seed: the first 200 trials are shared, so the checkpoint
        # reproduces the short run exactly
        assert np.array_equal(r_long.rel_err_at[200], r_short.rel_err)
        assert np.array_equal(r_long.rel_err_at[800], r_long.rel_err)


class TestRandomGraph:
    def test_deterministic(self):
        a = random_graph(15, Rng(3))
        b = random_graph(15, Rng(3))
        assert a.neighbors == b.neighbors
        assert np.array_equal(a.features, b.features)

    def test_no_isolated_nodes(self):
        for seed in range(10):
            g = random_graph(10, Rng(seed), edge_prob=0.05)
            assert all(len(nbrs) > 0 for nbrs in g.neighbors)

    def test_symmetry(self):
        g = random_graph(12, Rng(9))
        for v, nbrs in enumerate(g.neighbors):
            for u in nbrs:
                assert v in g.neighbors[u]


def test_partition_on_synthetic_store():
    store = generate_synthetic(9, 64, Rng(0))
    batches = rss_partition(store, 4, 8, 4, training=True, rng=Rng(1))
    assert [len(b.node_index) for b in batches] == [2, 2, 2, 3]
    n_time = 64 - 8 - 4 + 1
    assert all(b.x.shape[0] == n_time for b in batches)
