"""Series storage, CSV round trips, synthetic data, normalization, windows.

A :class:`SeriesStore` holds one value row per node over a shared time axis,
plus an optional undirected weighted adjacency. Supervised windows pair an
input block of ``l_in`` timesteps with the following ``l_out`` timesteps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import FormatError, ParseError, ShapeError
from .numerics import Rng

SIGMA_FLOOR = 1e-8
SPLIT_RATIOS = (0.6, 0.2, 0.2)
MIN_SYNTH_LENGTH = 64


@dataclass(frozen=True)
class SeriesStore:
    """Node-major series values with node ids and an optional edge list.

    ``values`` has shape (n_nodes, l_data). ``adjacency`` stores directed
    entries (src, dst, weight); undirected inputs carry both directions.
    Instances are treated as immutable after construction.
    """

    values: np.ndarray
    node_ids: tuple
    adjacency: tuple | None = None

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        if v.ndim != 2:
            raise ShapeError(f"series values must be 2-D, got shape {v.shape}")
        if v.shape[0] < 1 or v.shape[1] < 2:
            raise ShapeError(f"need at least 1 node and 2 timesteps, got {v.shape}")
        object.__setattr__(self, "values", v)
        ids = tuple(str(i) for i in self.node_ids)
        if len(ids) != v.shape[0]:
            raise ShapeError(f"{len(ids)} node ids for {v.shape[0]} value rows")
        object.__setattr__(self, "node_ids", ids)
        if self.adjacency is not None:
            edges = []
            for src, dst, w in self.adjacency:
                src, dst, w = int(src), int(dst), float(w)
                if not (0 <= src < v.shape[0] and 0 <= dst < v.shape[0]):
                    raise ValueError(f"edge ({src}, {dst}) out of range for {v.shape[0]} nodes")
                if src == dst:
                    raise ValueError(f"self-loop on node {src} is not supported")
                edges.append((src, dst, w))
            object.__setattr__(self, "adjacency", tuple(edges))

    @property
    def n_nodes(self) -> int:
        return self.values.shape[0]

    @property
    def l_data(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class NormStats:
    """Per-node location and population scale fitted on a leading segment."""

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=np.float64))
        object.__setattr__(self, "sigma", np.asarray(self.sigma, dtype=np.float64))


@dataclass(frozen=True)
class WindowPair:
    """One supervised example: x is (l_in, n_nodes), y is (l_out, n_nodes)."""

    x: np.ndarray
    y: np.ndarray
    t0: int


def _parse_float(token: str, line_no: int, field_no: int) -> float:
    try:
        return float(token)
    except ValueError:
        raise ParseError(
            f"line {line_no}, field {field_no}: cannot parse {token!r} as a number"
        ) from None


def load_csv(path, adjacency_path=None) -> SeriesStore:
    """Read a series CSV (rows are nodes, columns timesteps).

    A leading id column is auto-detected: if the first field of the first
    data row is not numeric, every row is expected to start with an id.
    """
    with open(path, "r", encoding="utf-8") as f:
        raw_lines = f.read().splitlines()
    rows = [(no, line) for no, line in enumerate(raw_lines, 1) if line.strip()]
    if not rows:
        raise FormatError(f"{path}: empty series file")

    first_fields = rows[0][1].split(",")
    try:
        float(first_fields[0])
        has_ids = False
    except ValueError:
        has_ids = True

    ids, values = [], []
    width = None
    for line_no, line in rows:
        fields = [f.strip() for f in line.split(",")]
        if has_ids:
            ids.append(fields[0])
            fields = fields[1:]
        if width is None:
            width = len(fields)
        elif len(fields) != width:
            raise FormatError(f"line {line_no}: expected {width} values, got {len(fields)}")
        values.append([_parse_float(tok, line_no, i + 1) for i, tok in enumerate(fields)])
    if not has_ids:
        ids = [str(i) for i in range(len(values))]

    adjacency = None
    if adjacency_path is not None:
        adjacency = _load_adjacency(adjacency_path)
    return SeriesStore(np.array(values, dtype=np.float64), tuple(ids), adjacency)


def _load_adjacency(path) -> tuple:
    """Read 'src,dst[,weight]' lines; each line contributes both directions."""
    with open(path, "r", encoding="utf-8") as f:
        raw_lines = f.read().splitlines()
    edges = []
    for line_no, line in enumerate(raw_lines, 1):
        if not line.strip():
            continue
        fields = [f.strip() for f in line.split(",")]
        if len(fields) not in (2, 3):
            raise FormatError(
                f"line {line_no}: adjacency rows need 2 or 3 fields, got {len(fields)}"
            )
        try:
            src, dst = int(fields[0]), int(fields[1])
        except ValueError:
            raise ParseError(f"line {line_no}: node indices must be integers") from None
        w = _parse_float(fields[2], line_no, 3) if len(fields) == 3 else 1.0
        edges.append((src, dst, w))
        edges.append((dst, src, w))
    return tuple(edges)


def save_csv(store: SeriesStore, path) -> None:
    """Write the series with id column, full round-trip float precision."""
    with open(path, "w", encoding="utf-8") as f:
        for node_id, row in zip(store.node_ids, store.values):
            f.write(node_id + "," + ",".join(repr(float(x)) for x in row) + "\n")


def save_adjacency_csv(store: SeriesStore, path) -> None:
    """Write each undirected edge once as 'src,dst,weight'."""
    with open(path, "w", encoding="utf-8") as f:
        for src, dst, w in store.adjacency or ():
            if src < dst:
                f.write(f"{src},{dst},{repr(float(w))}\n")


def generate_synthetic(
    n_nodes: int,
    l_data: int,
    rng: Rng,
    noise_sigma: float = 0.1,
    modulation: bool = True,
    trend: bool = True,
    radius: float = 0.2,
) -> SeriesStore:
    """Seeded synthetic node series with a random geometric adjacency.

    Each node follows an amplitude-modulated sinusoid plus a linear trend
    and Gaussian noise: amplitude in [0.5, 2], modulation period in
    [80, 160], base period in [12, 24], trend slope in [-1, 1] spread over
    the full length. Nodes whose 2-D positions fall within ``radius``
    are connected with weight 1.
    """
    if n_nodes < 1:
        raise ValueError(f"need at least one node, got {n_nodes}")
    if l_data < MIN_SYNTH_LENGTH:
        raise ValueError(f"l_data must be >= {MIN_SYNTH_LENGTH}, got {l_data}")
    t = np.arange(l_data, dtype=np.float64)
    values = np.empty((n_nodes, l_data), dtype=np.float64)
    for i in range(n_nodes):
        g = rng.child("node", i).gen
        amp = g.uniform(0.5, 2.0)
        period_mod = g.uniform(80.0, 160.0)
        period = g.uniform(12.0, 24.0)
        slope = g.uniform(-1.0, 1.0)
        s = amp * np.sin(2.0 * np.pi * t / period)
        if modulation:
            s = s * (1.0 + 0.5 * np.sin(2.0 * np.pi * t / period_mod))
        if trend:
            s = s + slope * t / l_data
        if noise_sigma > 0.0:
            s = s + noise_sigma * g.standard_normal(l_data)
        values[i] = s

    pos = rng.child("positions").gen.random((n_nodes, 2))
    edges = []
    for i in range(n_nodes):
        for j in range(i + 1, n_nodes):
            if np.hypot(*(pos[i] - pos[j])) <= radius:
                edges.append((i, j, 1.0))
                edges.append((j, i, 1.0))
    ids = tuple(f"n{i:03d}" for i in range(n_nodes))
    return SeriesStore(values, ids, tuple(edges))


def fit_norm_stats(store: SeriesStore, train_len: int) -> NormStats:
    """Per-node mean and population std over timesteps [0, train_len)."""
    if not 2 <= train_len <= store.l_data:
        raise ValueError(
            f"train_len must be in [2, {store.l_data}] to fit a scale, got {train_len}"
        )
    head = store.values[:, :train_len]
    return NormStats(head.mean(axis=1), head.std(axis=1))


def apply_norm(store: SeriesStore, stats: NormStats, sigma_floor: float = SIGMA_FLOOR) -> SeriesStore:
    """Return a store with values (x - mu) / max(sigma, sigma_floor)."""
    if stats.mu.shape[0] != store.n_nodes:
        raise ShapeError(f"stats cover {stats.mu.shape[0]} nodes, store has {store.n_nodes}")
    scale = np.maximum(stats.sigma, sigma_floor)
    normed = (store.values - stats.mu[:, None]) / scale[:, None]
    return SeriesStore(normed, store.node_ids, store.adjacency)


def denorm_values(values: np.ndarray, mu: np.ndarray, sigma: np.ndarray,
                  sigma_floor: float = SIGMA_FLOOR) -> np.ndarray:
    """Inverse of apply_norm for arrays whose leading axis matches mu."""
    scale = np.maximum(sigma, sigma_floor)
    return values * scale + mu


def restrict_time(store: SeriesStore, t0: int, t1: int) -> SeriesStore:
    """Slice the store to timesteps [t0, t1), keeping ids and adjacency."""
    if not (0 <= t0 < t1 <= store.l_data):
        raise ValueError(f"invalid time range [{t0}, {t1}) for length {store.l_data}")
    return SeriesStore(store.values[:, t0:t1].copy(), store.node_ids, store.adjacency)


def split_ranges(l_data: int, ratios=SPLIT_RATIOS) -> dict:
    """Contiguous train/val/test timestep ranges from fractional ratios."""
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ValueError(f"need three positive ratios, got {ratios}")
    total = float(sum(ratios))
    a = int(l_data * ratios[0] / total)
    b = a + int(l_data * ratios[1] / total)
    if not 0 < a < b < l_data:
        raise ValueError(f"ratios {ratios} leave an empty split for length {l_data}")
    return {"train": (0, a), "val": (a, b), "test": (b, l_data)}


def make_windows(store: SeriesStore, l_in: int, l_out: int, split: tuple) -> list:
    """All stride-1 windows fully inside [split[0], split[1]).

    Produces (t1 - t0) - l_in - l_out + 1 pairs; x and y are transposed to
    (time, node) layout. Consecutive windows overlap in l_in - 1 input rows.
    """
    if l_in < 1 or l_out < 1:
        raise ValueError(f"l_in and l_out must be positive, got {l_in}, {l_out}")
    t0, t1 = split
    if not (0 <= t0 < t1 <= store.l_data):
        raise ValueError(f"invalid split [{t0}, {t1}) for length {store.l_data}")
    n_win = (t1 - t0) - l_in - l_out + 1
    if n_win < 1:
        raise ValueError(
            f"split of length {t1 - t0} too short for windows; needs at least {l_in + l_out}"
        )
    v = store.values
    out = []
    for k in range(n_win):
        s = t0 + k
        out.append(
            WindowPair(
                x=v[:, s:s + l_in].T.copy(),
                y=v[:, s + l_in:s + l_in + l_out].T.copy(),
                t0=s,
            )
        )
    return out
