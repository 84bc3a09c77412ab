"""Signal datasets: CSV I/O, chronological splits, z-scoring, windowing, synthetic benchmark."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from stc_dropout.graph import Graph, gaussian_kernel_adjacency, write_edge_list
from stc_dropout.numerics import make_rng

EASY = "easy"
HARD_TEMPORAL = "hard_temporal"
HARD_SPATIAL = "hard_spatial"
LABELS = (EASY, HARD_TEMPORAL, HARD_SPATIAL)

_SYNTH_STREAM = 11
_NOISE_STREAM = 13


@dataclass(frozen=True)
class SignalDataset:
    """Multivariate node signals of shape ``(T_steps, nodes, features)``.

    ``labels``, ``coords`` and ``clean`` are only populated for synthetic data.
    """

    values: np.ndarray
    node_ids: tuple[str, ...] = ()
    labels: tuple[str, ...] | None = None
    coords: np.ndarray | None = None
    clean: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim == 2:
            v = v[:, :, None]
        if v.ndim != 3:
            raise ValueError(f"values must be (T, nodes[, features]), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("values contain NaN or Inf")
        object.__setattr__(self, "values", v)
        if not self.node_ids:
            object.__setattr__(self, "node_ids", tuple(str(i) for i in range(v.shape[1])))
        if len(self.node_ids) != v.shape[1]:
            raise ValueError("node_ids length does not match the node axis")

    @property
    def num_steps(self) -> int:
        return self.values.shape[0]

    @property
    def num_nodes(self) -> int:
        return self.values.shape[1]

    @property
    def num_features(self) -> int:
        return self.values.shape[2]

    def slice(self, start: int, stop: int) -> "SignalDataset":
        clean = None if self.clean is None else self.clean[start:stop]
        return replace(self, values=self.values[start:stop], clean=clean)


@dataclass(frozen=True)
class ZScore:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, values: np.ndarray, allow_constant: bool = False) -> "ZScore":
        """Per-feature mean and population std; constant features get unit scale if allowed."""
        v = np.asarray(values, dtype=np.float64)
        mean = v.reshape(-1, v.shape[-1]).mean(axis=0)
        std = v.reshape(-1, v.shape[-1]).std(axis=0)
        bad = np.flatnonzero(std <= 0)
        if bad.size and allow_constant:
            std = np.where(std > 0, std, 1.0)
        elif bad.size:
            raise ValueError(f"feature(s) {bad.tolist()} are constant on the training split; cannot z-score")
        return cls(mean=mean, std=std)

    def transform(self, values):
        return (np.asarray(values) - self.mean) / self.std

    def inverse(self, values, feature: int | None = None):
        if feature is None:
            return np.asarray(values) * self.std + self.mean
        return np.asarray(values) * self.std[feature] + self.mean[feature]


@dataclass(frozen=True)
class Splits:
    train: SignalDataset
    val: SignalDataset
    test: SignalDataset
    scaler: ZScore

    def with_train(self, train: SignalDataset) -> "Splits":
        """Swap in a new training span (e.g. a noisy one) and refit the scaler on it."""
        return Splits(train, self.val, self.test, ZScore.fit(train.values))

    def normalized(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return tuple(self.scaler.transform(d.values) for d in (self.train, self.val, self.test))


# --- CSV ----------------------------------------------------------------------


def load_csv(path) -> SignalDataset:
    """Read a ``T_steps x nodes`` single-feature CSV whose header holds node ids."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        rows = []
        for r, row in enumerate(reader, start=1):
            if len(row) != len(header):
                raise ValueError(f"{path}: row {r} has {len(row)} cells, expected {len(header)}")
            vals = []
            for c, cell in enumerate(row):
                if not cell.strip():
                    raise ValueError(f"{path}: missing value at (row {r}, col {c})")
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise ValueError(f"{path}: non-numeric value {cell!r} at (row {r}, col {c})") from None
            rows.append(vals)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return SignalDataset(np.array(rows), node_ids=tuple(h.strip() for h in header))


def save_csv(ds: SignalDataset, path) -> None:
    if ds.num_features != 1:
        raise ValueError("CSV format holds a single feature per node")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ds.node_ids)
        for row in ds.values[:, :, 0]:
            writer.writerow([repr(float(x)) for x in row])


def write_nodes_meta(ds: SignalDataset, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node", "label", "x", "y"])
        for i in range(ds.num_nodes):
            label = ds.labels[i] if ds.labels else ""
            x, y = ds.coords[i] if ds.coords is not None else ("", "")
            writer.writerow([i, label, repr(float(x)) if x != "" else "", repr(float(y)) if y != "" else ""])


def read_nodes_meta(path) -> tuple[list[str], np.ndarray]:
    labels, xy = [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            labels.append(row["label"])
            xy.append((float(row["x"]), float(row["y"])))
    return labels, np.array(xy)


# --- splitting and windowing ------------------------------------------------


def _split_sizes(n: int, ratios) -> tuple[int, int, int]:
    total = sum(ratios)
    n_train = n * ratios[0] // total
    n_val = n * ratios[1] // total
    return n_train, n_val, n - n_train - n_val


def chronological_split(ds: SignalDataset, ratios=(7, 1, 2), min_span: int = 1, allow_constant: bool = False) -> Splits:
    """Contiguous train/val/test spans; floor for train and val, remainder to test.

    Every span must hold at least ``min_span`` steps (use ``N + S``).
    """
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ValueError("ratios must be three positive integers")
    sizes = _split_sizes(ds.num_steps, ratios)
    if min(sizes) < min_span:
        need = ds.num_steps
        while min(_split_sizes(need, ratios)) < min_span:
            need += 1
        raise ValueError(
            f"dataset too short: {ds.num_steps} steps give spans {sizes}; "
            f"need at least {need} steps for windows of {min_span}"
        )
    a, b = sizes[0], sizes[0] + sizes[1]
    train = ds.slice(0, a)
    return Splits(train, ds.slice(a, b), ds.slice(b, ds.num_steps), ZScore.fit(train.values, allow_constant))


def make_windows(values, window: int, horizon: int, target_feature: int = 0):
    """All stride-1 windows: inputs ``(W, N, nodes, D)`` and targets ``(W, S, nodes)``."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim == 2:
        v = v[:, :, None]
    count = v.shape[0] - window - horizon + 1
    if count < 1:
        raise ValueError(f"span of {v.shape[0]} steps is shorter than window + horizon = {window + horizon}")
    idx = np.arange(count)[:, None]
    x = v[idx + np.arange(window)]
    y = v[idx + window + np.arange(horizon), :, target_feature]
    return x, y


# --- synthetic benchmark ----------------------------------------------------


def _daily_pattern(phase: np.ndarray) -> np.ndarray:
    # two peaks per day of unequal height; a half-day shift anti-correlates it
    return np.sin(2 * np.pi * phase) + 0.5 * np.sin(4 * np.pi * phase + 0.8)


def _geometric_graph(coords: np.ndarray, mean_degree: int = 4) -> Graph:
    n = len(coords)
    dist = np.linalg.norm(coords[:, None, :] - coords[None, :, :], axis=-1)
    iu = np.triu_indices(n, 1)
    pair_d = np.sort(dist[iu])
    n_pairs = min(len(pair_d), mean_degree * n // 2)
    radius = pair_d[max(n_pairs, 1) - 1]
    keep = dist <= radius
    # no isolated nodes: always link the nearest neighbor
    nearest = np.argmin(dist + np.diag(np.full(n, np.inf)), axis=1)
    keep[np.arange(n), nearest] = True
    keep |= keep.T
    np.fill_diagonal(keep, False)
    masked = np.where(keep, dist, np.nan)
    return gaussian_kernel_adjacency(masked, sigma="auto")


def synth_generate(
    num_nodes: int = 40,
    num_easy: int | None = None,
    num_hard_temporal: int = 6,
    num_hard_spatial: int = 6,
    num_steps: int = 2000,
    seed: int = 0,
    steps_per_day: int = 48,
    base: float = 50.0,
    amplitude: float = 10.0,
) -> tuple[SignalDataset, Graph]:
    """Random geometric sensor graph with three planted node classes.

    * ``easy``: shared double-peak daily pattern, small phase jitter, noise 5% of amplitude.
    * ``hard_temporal``: reflected random walk, unrelated to the daily pattern.
    * ``hard_spatial``: the daily pattern shifted by half a day against its neighbors.
    """
    if num_nodes < 2:
        raise ValueError("need at least 2 nodes")
    if num_easy is None:
        num_easy = num_nodes - num_hard_temporal - num_hard_spatial
    if min(num_easy, num_hard_temporal, num_hard_spatial) < 0 or (
        num_easy + num_hard_temporal + num_hard_spatial != num_nodes
    ):
        raise ValueError("class counts must be non-negative and sum to num_nodes")

    rng = make_rng(seed, _SYNTH_STREAM)
    coords = rng.random((num_nodes, 2))
    g = _geometric_graph(coords)
    adj = g.adjacency > 0

    labels = [EASY] * num_nodes
    order = rng.permutation(num_nodes)
    spatial = []
    for v in order:
        if len(spatial) == num_hard_spatial:
            break
        if adj[v].any() and not any(adj[v, u] for u in spatial):
            spatial.append(int(v))
    for v in order:
        if len(spatial) == num_hard_spatial:
            break
        if v not in spatial:
            spatial.append(int(v))
    for v in spatial:
        labels[v] = HARD_SPATIAL
    # random walks preferably away from the anti-phase nodes so those keep sinusoid neighbors
    near_spatial = adj[spatial].any(axis=0) if spatial else np.zeros(num_nodes, bool)
    free = [int(v) for v in order if labels[v] == EASY]
    free.sort(key=lambda v: bool(near_spatial[v]))
    for v in free[:num_hard_temporal]:
        labels[v] = HARD_TEMPORAL

    steps = np.arange(num_steps)
    clean = np.empty((num_steps, num_nodes))
    for v in range(num_nodes):
        if labels[v] == HARD_TEMPORAL:
            walk = np.empty(num_steps)
            walk[0] = rng.uniform(-1.0, 1.0)
            jumps = rng.normal(0.0, 0.15, num_steps)
            for t in range(1, num_steps):
                x = walk[t - 1] + jumps[t]
                # reflect into [-1.5, 1.5]
                if x > 1.5:
                    x = 3.0 - x
                elif x < -1.5:
                    x = -3.0 - x
                walk[t] = x
            clean[:, v] = base + amplitude * walk
        else:
            jitter = rng.uniform(-0.02, 0.02)
            shift = 0.5 if labels[v] == HARD_SPATIAL else 0.0
            clean[:, v] = base + amplitude * _daily_pattern(steps / steps_per_day + shift + jitter)
    noisy = clean + rng.normal(0.0, 0.05 * amplitude, clean.shape)
    ds = SignalDataset(noisy, labels=tuple(labels), coords=coords, clean=clean)
    return ds, g


def write_synth(ds: SignalDataset, g: Graph, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"signals": out / "signals.csv", "edges": out / "edges.csv", "nodes_meta": out / "nodes_meta.csv"}
    save_csv(ds, paths["signals"])
    write_edge_list(g, paths["edges"])
    write_nodes_meta(ds, paths["nodes_meta"])
    return paths


def inject_noise(ds: SignalDataset, delta: float, seed: int = 0) -> SignalDataset:
    """Multiply every value by ``1 + d`` with ``d ~ U[-delta, delta]`` drawn i.i.d."""
    if delta < 0:
        raise ValueError(f"delta must be non-negative, got {delta}")
    if delta == 0:
        return ds
    rng = make_rng(seed, _NOISE_STREAM)
    d = rng.uniform(-delta, delta, ds.values.shape)
    return replace(ds, values=ds.values * (1.0 + d))
