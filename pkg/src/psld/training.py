"""Training loop, evaluation, and the two reference baselines.

Each epoch re-partitions the node set into random subgraphs, then takes
one ADAM step per subgraph on the mean loss of a freshly sampled window
minibatch. Validation after every epoch picks the returned parameters;
there is no early stopping. Everything is a pure function of the config
and seed: rerunning with identical inputs reproduces reports and
parameters bit for bit.

Callers normalize stores themselves (``prepare_store``); metrics are
computed on whatever scale the given store carries.
"""

from __future__ import annotations

import copy
import time
from dataclasses import dataclass, field, fields

import numpy as np

from . import decomposition as dc
from . import model as md
from .dataset import (
    SIGMA_FLOOR,
    SPLIT_RATIOS,
    NormStats,
    SeriesStore,
    apply_norm,
    fit_norm_stats,
    restrict_time,
    split_ranges,
)
from .exceptions import NumericError
from .numerics import Rng
from .sampler import rss_partition


@dataclass(frozen=True)
class TrainConfig:
    l_in: int = 36
    l_out: int = 36
    decomposer: str = "mvd"
    epsilon: float = 1e-5
    kappa_t: int = 25
    kappa_s: int = 7
    hidden: int = 128
    dropout: float = 0.05
    lr: float = 1e-4
    lam: float = 1.0
    epochs: int = 10
    n_subgraphs: int = 24
    minibatch: int = 32
    seed: int = 0
    sigma_floor: float = SIGMA_FLOOR
    mode: str = "separate"
    split: tuple = SPLIT_RATIOS

    def __post_init__(self):
        if self.l_in < 1 or self.l_out < 1:
            raise ValueError(f"l_in and l_out must be positive, got {self.l_in}, {self.l_out}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.minibatch < 1:
            raise ValueError(f"minibatch must be >= 1, got {self.minibatch}")
        if self.n_subgraphs < 1:
            raise ValueError(f"n_subgraphs must be >= 1, got {self.n_subgraphs}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        dc.make_config(self.decomposer, self.epsilon, self.kappa_t, self.kappa_s)
        if self.mode not in ("separate", "merged"):
            raise ValueError(f"mode must be 'separate' or 'merged', got {self.mode!r}")
        ratios = tuple(float(r) for r in self.split)
        if len(ratios) != 3 or any(r <= 0.0 for r in ratios):
            raise ValueError(f"split needs three positive ratios, got {self.split}")
        object.__setattr__(self, "split", ratios)

    def decomposer_config(self):
        return dc.make_config(self.decomposer, self.epsilon, self.kappa_t, self.kappa_s)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            key = "lambda" if f.name == "lam" else f.name
            value = getattr(self, f.name)
            out[key] = list(value) if isinstance(value, tuple) else value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        kwargs = {}
        for f in fields(cls):
            key = "lambda" if f.name == "lam" else f.name
            if key in data:
                value = data[key]
                kwargs[f.name] = tuple(value) if f.name == "split" else value
        return cls(**kwargs)


@dataclass(frozen=True)
class EpochReport:
    """Per-epoch training losses and validation metrics.

    Wall time is informational and excluded from equality so that reports
    from identical (config, seed) runs compare equal.
    """

    epoch: int
    train_total: float
    train_cbn: float
    train_cpn: float
    val_mse: float
    val_mae: float
    wall_time_s: float = field(default=0.0, compare=False)

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "train_total": self.train_total,
            "train_cbn": self.train_cbn,
            "train_cpn": self.train_cpn,
            "val_mse": self.val_mse,
            "val_mae": self.val_mae,
        }


def prepare_store(store: SeriesStore, config: TrainConfig):
    """Normalize with train-split stats; returns (store, ranges, stats)."""
    ranges = split_ranges(store.l_data, config.split)
    stats = fit_norm_stats(store, ranges["train"][1])
    normed = apply_norm(store, stats, config.sigma_floor)
    return normed, ranges, stats


def _stack_split(store: SeriesStore, l_in: int, l_out: int, split: tuple):
    """Stack every window of the split into (n_win * n_nodes, length) rows.

    Rows are ordered window-major, node within window, matching the layout
    the heads consume.
    """
    t0, t1 = split
    n_win = (t1 - t0) - l_in - l_out + 1
    if n_win < 1:
        raise ValueError(
            f"split of length {t1 - t0} too short for windows; needs at least {l_in + l_out}"
        )
    v = store.values
    xs, ys = [], []
    for k in range(n_win):
        s = t0 + k
        xs.append(v[:, s:s + l_in])
        ys.append(v[:, s + l_in:s + l_in + l_out])
    return np.concatenate(xs, axis=0), np.concatenate(ys, axis=0), n_win


def _metrics(pred: np.ndarray, truth: np.ndarray) -> dict:
    return {
        "mse": float(np.mean((pred - truth) ** 2)),
        "mae": float(np.mean(np.abs(pred - truth))),
    }


def _denorm_rows(rows: np.ndarray, stats: NormStats, n_win: int, sigma_floor: float) -> np.ndarray:
    mu = np.tile(stats.mu, n_win)[:, None]
    sigma = np.tile(np.maximum(stats.sigma, sigma_floor), n_win)[:, None]
    return rows * sigma + mu


def evaluate(params, store: SeriesStore, config: TrainConfig, split: tuple,
             denorm_stats: NormStats | None = None) -> dict:
    """MSE and MAE over all windows, horizon steps, and nodes of the split.

    With ``denorm_stats`` both forecast and truth are mapped back to the
    raw scale before the metrics.
    """
    x_rows, y_rows, n_win = _stack_split(store, config.l_in, config.l_out, split)
    pred = md.predict(params, x_rows, config.decomposer_config())
    if denorm_stats is not None:
        pred = _denorm_rows(pred, denorm_stats, n_win, config.sigma_floor)
        y_rows = _denorm_rows(y_rows, denorm_stats, n_win, config.sigma_floor)
    return _metrics(pred, y_rows)


def _sample_minibatch(batch, k: int, rng: Rng):
    """Stack up to k windows of the subgraph into head-layout rows."""
    n_win = batch.x.shape[0]
    take = min(k, n_win)
    idx = rng.gen.choice(n_win, size=take, replace=False)
    x = batch.x[idx].transpose(0, 2, 1)
    y = batch.y[idx].transpose(0, 2, 1)
    n_sub = x.shape[1]
    return x.reshape(take * n_sub, -1), y.reshape(take * n_sub, -1)


def train(store: SeriesStore, config: TrainConfig):
    """Train on the store's train split, validating after each epoch.

    Returns (best_params, reports) where best_params minimizes validation
    MSE over epochs (earliest epoch wins ties).
    """
    normed, ranges, _ = prepare_store(store, config)
    train_store = restrict_time(normed, *ranges["train"])
    root = Rng(config.seed)
    params = md.init_params(
        config.decomposer, config.l_in, config.l_out, config.hidden,
        config.dropout, config.mode, root.child("init"),
    )
    adam = md.AdamState.for_params(params)
    dcfg = config.decomposer_config()

    best_mse = np.inf
    best_params = copy.deepcopy(params)
    reports = []
    for epoch in range(config.epochs):
        started = time.perf_counter()
        erng = root.child("epoch", epoch)
        batches = rss_partition(
            train_store, config.n_subgraphs, config.l_in, config.l_out,
            training=True, rng=erng.child("partition"),
        )
        sums = np.zeros(3)
        for step, batch in enumerate(batches):
            x_rows, y_rows = _sample_minibatch(batch, config.minibatch,
                                               erng.child("minibatch", step))
            x_bundle = dc.decompose(x_rows, dcfg)
            y_bundle = dc.decompose(y_rows, dcfg)
            state = md.forward(params, x_bundle, training=True,
                               rng=erng.child("dropout", step))
            try:
                losses, grads = md.loss_and_backward(params, state, y_bundle,
                                                     y_rows, config.lam)
            except NumericError as err:
                raise NumericError(f"epoch {epoch}, subgraph {step}: {err}") from err
            md.adam_step(params, grads, adam, config.lr)
            sums += (losses.total, losses.cbn, losses.cpn)
        val = evaluate(params, normed, config, ranges["val"])
        reports.append(EpochReport(
            epoch=epoch,
            train_total=float(sums[0] / len(batches)),
            train_cbn=float(sums[1] / len(batches)),
            train_cpn=float(sums[2] / len(batches)),
            val_mse=val["mse"],
            val_mae=val["mae"],
            wall_time_s=time.perf_counter() - started,
        ))
        if val["mse"] < best_mse:
            best_mse = val["mse"]
            best_params = copy.deepcopy(params)
    return best_params, reports


def train_plain_mlp(store: SeriesStore, config: TrainConfig):
    """Same budget and loop as train(), with one head on raw windows and
    no decomposition or component losses."""
    normed, ranges, _ = prepare_store(store, config)
    train_store = restrict_time(normed, *ranges["train"])
    root = Rng(config.seed)
    params = md.init_plain_params(config.l_in, config.l_out, config.hidden,
                                  config.dropout, root.child("init"))
    adam = md.AdamState.for_params(params)

    best_mse = np.inf
    best_params = copy.deepcopy(params)
    reports = []
    for epoch in range(config.epochs):
        started = time.perf_counter()
        erng = root.child("epoch", epoch)
        batches = rss_partition(
            train_store, config.n_subgraphs, config.l_in, config.l_out,
            training=True, rng=erng.child("partition"),
        )
        total = 0.0
        for step, batch in enumerate(batches):
            x_rows, y_rows = _sample_minibatch(batch, config.minibatch,
                                               erng.child("minibatch", step))
            out, cache = md._head_forward(params.head, x_rows, True,
                                          erng.child("dropout", step))
            try:
                losses, grads = md.plain_loss_and_backward(params, cache, y_rows)
            except NumericError as err:
                raise NumericError(f"epoch {epoch}, subgraph {step}: {err}") from err
            md.adam_step(params, grads, adam, config.lr)
            total += losses.total
        val = evaluate(params, normed, config, ranges["val"])
        reports.append(EpochReport(
            epoch=epoch,
            train_total=total / len(batches),
            train_cbn=total / len(batches),
            train_cpn=0.0,
            val_mse=val["mse"],
            val_mae=val["mae"],
            wall_time_s=time.perf_counter() - started,
        ))
        if val["mse"] < best_mse:
            best_mse = val["mse"]
            best_params = copy.deepcopy(params)
    return best_params, reports


def baseline_last_value(store: SeriesStore, config: TrainConfig, split: tuple) -> dict:
    """Repeat the last observed input value across the whole horizon."""
    x_rows, y_rows, _ = _stack_split(store, config.l_in, config.l_out, split)
    pred = np.repeat(x_rows[:, -1:], config.l_out, axis=1)
    return _metrics(pred, y_rows)


def baseline_plain_mlp(store: SeriesStore, config: TrainConfig) -> dict:
    """Test metrics of the plain single-head model under the same budget."""
    params, _ = train_plain_mlp(store, config)
    normed, ranges, _ = prepare_store(store, config)
    return evaluate(params, normed, config, ranges["test"])
