"""End-to-end acceptance checks.

Each test prints exactly one line, ``ACCEPTANCE <n>: PASS|FAIL - <detail>``,
then asserts. Criteria cover decomposition exactness, gradient correctness,
the merged-mode equivalence, the partition law, estimator unbiasedness, the
ablation direction, run determinism, and default hyperparameters.
"""

import itertools
import json
import time

import numpy as np

from psld.cli import main as cli_main
from psld.dataset import SeriesStore, generate_synthetic
from psld.decomposition import decompose, make_config, recombine
from psld.model import (
    extract_merged_grad_blocks,
    finite_difference_check,
    forward,
    init_params,
    loss_and_backward,
    merge_params,
)
from psld.numerics import Rng
from psld.sampler import SampleDesign, random_graph, rss_partition, unbiasedness_mc_check
from psld.training import (
    TrainConfig,
    baseline_last_value,
    baseline_plain_mlp,
    evaluate,
    prepare_store,
    train,
)


def report(capsys, n: int, ok: bool, detail: str) -> None:
    with capsys.disabled():
        print(f"ACCEPTANCE {n}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"criterion {n}: {detail}"


def test_acceptance_1_decomposition_round_trip(capsys):
    t0 = time.perf_counter()
    worst = 0.0
    for kind in ("mvd", "stl"):
        cfg = make_config(kind)
        y = Rng(101).child(kind).gen.standard_normal((1000, 48))
        back = recombine(decompose(y, cfg), cfg)
        worst = max(worst, float(np.max(np.abs(back - y))))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-12 and elapsed < 1.0
    report(capsys, 1, ok,
           f"1000-window round trip err {worst:.2e} (tol 1e-12), {elapsed:.2f}s")


def test_acceptance_2_gradient_correctness(capsys):
    t0 = time.perf_counter()
    worst = 0.0
    kinks = 0
    for kind, mode in itertools.product(("mvd", "stl"),
                                        ("separate", "merged")):
        for seed in range(20):
            out = finite_difference_check(kind, mode, seed=seed)
            worst = max(worst, out["max_rel_err"])
            kinks += out["kinks_skipped"]
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-4 and elapsed < 30.0
    report(capsys, 2, ok,
           f"4 combos x 20 seeds, max rel err {worst:.2e} (tol 1e-4), "
           f"{kinks} kink entries skipped, {elapsed:.1f}s")


def test_acceptance_3_merged_separate_equivalence(capsys):
    t0 = time.perf_counter()
    worst_fwd = 0.0
    worst_grad = 0.0
    for kind in ("mvd", "stl"):
        cfg = make_config(kind, kappa_t=5, kappa_s=3)
        g = Rng(33).child(kind).gen
        x = g.standard_normal((12, 8))
        y = g.standard_normal((12, 4))
        xb, yb = decompose(x, cfg), decompose(y, cfg)
        sep = init_params(kind, 8, 4, 16, 0.0, "separate", Rng(7))
        mer = merge_params(sep)
        s_state, m_state = forward(sep, xb), forward(mer, xb)
        worst_fwd = max(worst_fwd,
                        float(np.max(np.abs(s_state.y_hat - m_state.y_hat))))
        _, s_grads = loss_and_backward(sep, s_state, yb, y, 1.0)
        _, m_grads = loss_and_backward(mer, m_state, yb, y, 1.0)
        blocks = extract_merged_grad_blocks(m_grads, sep)
        for name, grad in s_grads.items():
            worst_grad = max(worst_grad,
                             float(np.max(np.abs(grad - blocks[name]))))
    elapsed = time.perf_counter() - t0
    ok = worst_fwd <= 1e-10 and worst_grad <= 1e-10 and elapsed < 5.0
    report(capsys, 3, ok,
           f"forward err {worst_fwd:.2e}, grad err {worst_grad:.2e} "
           f"(tol 1e-10), {elapsed:.2f}s")


def test_acceptance_4_partition_law(capsys):
    t0 = time.perf_counter()
    ok = True
    detail = ""
    for n in range(1, 65):
        # ring plus one chord per node keeps the edge oracle nontrivial
        edges = []
        for v in range(n):
            for u in (v + 1, v + 7):
                if u < n:
                    edges.append((v, u, 1.0))
                    edges.append((u, v, 1.0))
        store = SeriesStore(values=np.zeros((n, 6)),
                            node_ids=tuple(str(i) for i in range(n)),
                            adjacency=tuple(edges))
        edge_set = {(a, b): w for a, b, w in store.adjacency}
        for k in range(1, n + 1):
            for training in (False, True):
                batches = rss_partition(store, k, 2, 2, training=training,
                                        rng=Rng(n * 1000 + k))
                sizes = [len(b.node_index) for b in batches]
                want = [n // k] * (k - 1) + [n // k + n % k]
                seen = sorted(i for b in batches
                              for i in b.node_index.tolist())
                if len(batches) != k or sizes != want or seen != list(range(n)):
                    ok = False
                    detail = f"n={n} k={k} training={training}: bad partition"
                    break
                for b in batches:
                    idx = b.node_index
                    for i, u in enumerate(idx):
                        for j, v in enumerate(idx):
                            if b.adjacency[i, j] != edge_set.get(
                                    (int(u), int(v)), 0.0):
                                ok = False
                                detail = f"n={n} k={k}: e_sub mismatch"
                                break
            if not ok:
                break
        if not ok:
            break
    elapsed = time.perf_counter() - t0
    ok = ok and elapsed < 10.0
    if not detail:
        detail = f"all n<=64, all k, both modes, e_sub oracle, {elapsed:.1f}s"
    report(capsys, 4, ok, detail)


def test_acceptance_5_unbiasedness_monte_carlo(capsys):
    t0 = time.perf_counter()
    g = random_graph(50, Rng(505).child("graph"))
    design = SampleDesign.uniform(50, 0.5)
    z_run = unbiasedness_mc_check(g, design, 20_000, Rng(505).child("mc"))
    shrink_run = unbiasedness_mc_check(g, design, 40_000,
                                       Rng(505).child("mc2"),
                                       checkpoints=(400, 40_000))
    early = shrink_run.rel_err_at[400]
    late = shrink_run.rel_err_at[40_000]
    frac = float(np.mean(late < early))
    elapsed = time.perf_counter() - t0
    ok = z_run.max_z <= 5.0 and frac >= 0.90 and elapsed < 60.0
    report(capsys, 5, ok,
           f"max z {z_run.max_z:.2f} (bound 5) at 20k trials, error shrinks "
           f"400->40k for {frac:.0%} of nodes (need 90%), {elapsed:.1f}s")


def test_acceptance_6_ablation_direction(capsys):
    t0 = time.perf_counter()
    psld_wins = 0
    beat_last = 0
    per_seed = []
    for seed in range(5):
        store = generate_synthetic(64, 600, Rng(seed))
        cfg = TrainConfig(seed=seed)
        params, _ = train(store, cfg)
        normed, ranges, _ = prepare_store(store, cfg)
        psld_mse = evaluate(params, normed, cfg, ranges["test"])["mse"]
        mlp_mse = baseline_plain_mlp(store, cfg)["mse"]
        last_mse = baseline_last_value(normed, cfg, ranges["test"])["mse"]
        per_seed.append((psld_mse, mlp_mse, last_mse))
        psld_wins += psld_mse < mlp_mse
        beat_last += psld_mse < last_mse and mlp_mse < last_mse
    elapsed = time.perf_counter() - t0
    ok = psld_wins >= 4 and beat_last >= 4 and elapsed < 600.0
    report(capsys, 6, ok,
           f"psld < mlp in {psld_wins}/5 seeds, both < last-value in "
           f"{beat_last}/5 (need 4/5 each), {elapsed:.0f}s")


def test_acceptance_7_run_determinism(capsys, tmp_path):
    t0 = time.perf_counter()
    data = tmp_path / "data"
    code = cli_main(["synth", "--nodes", "12", "--length", "160",
                     "--seed", "2", "--out", str(data)])
    assert code == 0
    blobs = []
    for tag in ("a", "b"):
        run = tmp_path / tag
        code = cli_main(["train", "--data", str(data / "series.csv"),
                         "--adjacency", str(data / "adjacency.csv"),
                         "--out", str(run), "--l-in", "12", "--l-out", "6",
                         "--epochs", "3", "--n-sub", "4", "--hidden", "16",
                         "--seed", "5"])
        assert code == 0
        blobs.append(((run / "metrics.json").read_bytes(),
                      (run / "checkpoint.psld").read_bytes()))
    same_metrics = blobs[0][0] == blobs[1][0]
    same_ckpt = blobs[0][1] == blobs[1][1]
    elapsed = time.perf_counter() - t0
    ok = same_metrics and same_ckpt
    report(capsys, 7, ok,
           f"metrics identical: {same_metrics}, checkpoint identical: "
           f"{same_ckpt}, {elapsed:.1f}s")


def test_acceptance_8_default_hyperparameters(capsys, tmp_path):
    data = tmp_path / "data"
    code = cli_main(["synth", "--nodes", "24", "--length", "400",
                     "--seed", "0", "--out", str(data)])
    assert code == 0
    run = tmp_path / "run"
    code = cli_main(["train", "--data", str(data / "series.csv"),
                     "--adjacency", str(data / "adjacency.csv"),
                     "--out", str(run)])
    assert code == 0
    config = json.loads((run / "manifest.json").read_text())["config"]
    want = {"hidden": 128, "dropout": 0.05, "lr": 1e-4, "epochs": 10,
            "n_subgraphs": 24}
    diffs = {k: config.get(k) for k, v in want.items() if config.get(k) != v}
    ok = not diffs
    detail = ("defaults echoed: hidden 128, dropout 0.05, lr 1e-4, "
              "epochs 10, n_subgraphs 24" if ok else f"mismatches: {diffs}")
    report(capsys, 8, ok, detail)
