"""Training loop with node-level curriculum dropout."""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from stc_dropout.curriculum import STRATEGIES, TRACE_HEADER, CurriculumState
from stc_dropout.data import SignalDataset, Splits, chronological_split, inject_noise, make_windows
from stc_dropout.difficulty import DifficultyReport, difficulty_scores
from stc_dropout.graph import Graph, NeighborIndex, k_order_neighbors, normalized_adjacency
from stc_dropout.metrics import evaluate
from stc_dropout.model import ModelConfig, STModel
from stc_dropout.numerics import make_rng

_SHUFFLE_STREAM = 5
_EVAL_SAMPLE_STREAM = 9


class ConfigError(ValueError):
    """Invalid configuration value; the message names the field and its valid range."""


@dataclass(frozen=True)
class TrainConfig:
    window: int = 12
    horizon: int = 3
    batch_size: int = 64
    lr: float = 1e-3
    max_epochs: int = 200
    patience: int = 10
    min_delta: float = 1e-4
    alpha_bar: float = 0.3
    rho: float = 0.3
    k: int = 2
    beta: float | None = None
    strategy: str = "stc"
    refresh_every: int | None = None
    node_weighting: bool = True
    dropout_p: float = 0.1
    seed: int = 0
    tap_layer: int = 0
    eval_batch_windows: int = 256
    channels: tuple[int, ...] = (16, 16)
    kernel: int = 3
    symmetrize: bool = False
    split: tuple[int, int, int] = (7, 1, 2)
    epsilon: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "split", tuple(int(c) for c in self.split))
        self.validate()

    def validate(self) -> None:
        def need(ok, name, expected):
            if not ok:
                raise ConfigError(f"{name}={getattr(self, name)!r}: expected {expected}")

        for name in ("window", "horizon", "batch_size", "max_epochs", "patience", "k", "eval_batch_windows", "kernel"):
            need(isinstance(getattr(self, name), int) and getattr(self, name) >= 1, name, "integer >= 1")
        need(self.lr > 0, "lr", "lr > 0")
        need(self.min_delta >= 0, "min_delta", "min_delta >= 0")
        need(0 < self.alpha_bar <= 1, "alpha_bar", "value in (0, 1]")
        need(0 < self.rho < 1, "rho", "value in (0, 1)")
        need(self.beta is None or self.beta > 0, "beta", "'auto' or a value > 0")
        need(self.strategy in STRATEGIES, "strategy", f"one of {', '.join(STRATEGIES)}")
        need(self.refresh_every is None or self.refresh_every >= 1, "refresh_every", "'auto' or integer >= 1")
        need(0 <= self.dropout_p < 1, "dropout_p", "value in [0, 1)")
        need(self.seed >= 0, "seed", "integer >= 0")
        need(0 <= self.tap_layer < len(self.channels), "tap_layer", f"integer in [0, {len(self.channels) - 1}]")
        need(len(self.channels) >= 1 and min(self.channels) >= 1, "channels", "non-empty list of positive ints")
        need(len(self.split) == 3 and min(self.split) >= 1, "split", "three positive integers")
        need(self.epsilon > 0, "epsilon", "epsilon > 0")
        min_window = len(self.channels) * (self.kernel - 1) + 1
        need(self.window >= min_window, "window", f"window >= {min_window} for the temporal kernels")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        d["split"] = list(self.split)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        return cls(**d)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def model_config(self, in_features: int = 1) -> ModelConfig:
        return ModelConfig(
            window=self.window,
            horizon=self.horizon,
            in_features=in_features,
            channels=self.channels,
            kernel=self.kernel,
            tap_layer=self.tap_layer,
            seed=self.seed,
        )


@dataclass
class RunRecord:
    config: dict
    config_hash: str
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    step_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = math.inf
    stopped_early: bool = False
    total_updates: int = 0
    beta: float | None = None
    test_metrics: list[dict] = field(default_factory=list)
    trace_file: str | None = None
    wall_seconds: float = 0.0
    trace: list[tuple] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("trace")
        return d

    def write(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def read(cls, path) -> "RunRecord":
        with open(path) as fh:
            return cls(**json.load(fh))

    def write_trace(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(",".join(TRACE_HEADER) + "\n")
            for t, pi, s, kept, mw in self.trace:
                fh.write(f"{t},{pi!r},{s!r},{kept},{mw!r}\n")


# --- loss and optimizer ----------------------------------------------------


def weighted_loss(pred, target, weights) -> tuple[float, np.ndarray]:
    """Node-weighted squared error and its gradient w.r.t. ``pred``.

    ``sum((w_i * (target - pred))**2) / (batch * S * #{w_i > 0})``.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"pred {pred.shape} and target {target.shape} differ")
    if pred.ndim != 3 or w.shape != (pred.shape[2],):
        raise ValueError("expected (batch, S, nodes) arrays and one weight per node")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    active = np.count_nonzero(w)
    if active == 0:
        raise ValueError("empty curriculum: every node weight is zero")
    norm = pred.shape[0] * pred.shape[1] * active
    r = w * (target - pred)
    loss = float(np.sum(r * r) / norm)
    grad = -2.0 * w * r / norm
    return loss, grad


def adam_step(theta, grad, m, v, t: int, lr: float = 1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; ``t`` is the 1-based step number."""
    theta, grad, m, v = (np.asarray(a, dtype=np.float64) for a in (theta, grad, m, v))
    if not theta.shape == grad.shape == m.shape == v.shape:
        raise ValueError(f"shape mismatch: {theta.shape}, {grad.shape}, {m.shape}, {v.shape}")
    m = beta1 * m + (1 - beta1) * grad
    v = beta2 * v + (1 - beta2) * grad * grad
    m_hat = m / (1 - beta1**t)
    v_hat = v / (1 - beta2**t)
    return theta - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        self.t += 1
        out = {}
        for k, g in grads.items():
            m = self.m.get(k, np.zeros_like(g))
            v = self.v.get(k, np.zeros_like(g))
            out[k], self.m[k], self.v[k] = adam_step(
                params[k], g, m, v, self.t, self.lr, self.beta1, self.beta2, self.eps
            )
        return out


# --- early stopping --------------------------------------------------------


@dataclass(frozen=True)
class EarlyStop:
    stop: bool
    best_epoch: int


def early_stopping_monitor(history, patience: int = 10, min_delta: float = 1e-4) -> EarlyStop:
    """Stop once ``patience`` consecutive epochs fail to beat the best loss.

    An epoch improves when its loss is below ``best * (1 - min_delta)``
    (relative improvement).
    """
    if len(history) == 0:
        raise ValueError("empty history")
    best_epoch, best, stale = 0, history[0], 0
    for i, loss in enumerate(history[1:], start=1):
        if loss < best - min_delta * abs(best):
            best_epoch, best, stale = i, loss, 0
        else:
            stale += 1
    return EarlyStop(stop=stale >= patience, best_epoch=best_epoch)


# --- fitting ---------------------------------------------------------------


@dataclass
class PreparedData:
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    splits: Splits

    @classmethod
    def from_splits(cls, splits: Splits, window: int, horizon: int) -> "PreparedData":
        train, val, test = splits.normalized()
        return cls(
            *make_windows(train, window, horizon),
            *make_windows(val, window, horizon),
            *make_windows(test, window, horizon),
            splits=splits,
        )


def eval_sample(num_windows: int, size: int, seed: int) -> np.ndarray:
    """Fixed, sorted sample of training-window indices used for difficulty scoring."""
    if num_windows <= size:
        return np.arange(num_windows)
    rng = make_rng(seed, _EVAL_SAMPLE_STREAM)
    return np.sort(rng.choice(num_windows, size=size, replace=False))


def score_model(model: STModel, x, support, nbrs: NeighborIndex, rho: float) -> DifficultyReport:
    return difficulty_scores(model.mean_tap(x, support), nbrs=nbrs, rho=rho)


def fit(model: STModel, data: PreparedData, g: Graph, cfg: TrainConfig) -> tuple[STModel, RunRecord]:
    """Train ``model`` in place with the configured curriculum strategy.

    Per update: refresh difficulty scores when due, advance the curriculum,
    then run a masked forward pass, the node-weighted loss, backward and Adam.
    Validation MSE (unweighted, normalized scale) drives early stopping; the
    best-validation parameters are restored before test evaluation.
    """
    start = time.perf_counter()
    n_train = len(data.x_train)
    if n_train < 1:
        raise ValueError("training set smaller than one window")
    support = normalized_adjacency(g)
    nbrs = k_order_neighbors(g, cfg.k, symmetrize=cfg.symmetrize)
    updates_per_epoch = math.ceil(n_train / cfg.batch_size)
    total_updates = cfg.max_epochs * updates_per_epoch
    state = CurriculumState(
        num_nodes=g.num_nodes,
        total_updates=total_updates,
        alpha_bar=cfg.alpha_bar,
        beta=cfg.beta,
        strategy=cfg.strategy,
        refresh_every=cfg.refresh_every or updates_per_epoch,
        dropout_p=cfg.dropout_p,
        node_weighting=cfg.node_weighting,
        neighbors=nbrs,
        seed=cfg.seed,
    )
    record = RunRecord(config=cfg.to_dict(), config_hash=cfg.hash(), total_updates=total_updates, beta=state.beta)
    x_eval = data.x_train[eval_sample(n_train, cfg.eval_batch_windows, cfg.seed)]
    shuffle = make_rng(cfg.seed, _SHUFFLE_STREAM)
    opt = Adam(lr=cfg.lr)
    best_params = model.copy_params()

    for epoch in range(cfg.max_epochs):
        order = shuffle.permutation(n_train)
        epoch_loss = 0.0
        for b in range(updates_per_epoch):
            fresh = score_model(model, x_eval, support, nbrs, cfg.rho) if state.refresh_due else None
            t = state.t
            state.step(fresh)
            record.trace.append(state.trace_row(t))
            idx = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            if cfg.strategy == "none":
                pred, _ = model.forward(data.x_train[idx], support)
            else:
                pred, _ = model.forward(data.x_train[idx], support, mask=state.mask, fill=state.fill_matrix())
            loss, dpred = weighted_loss(pred, data.y_train[idx], state.weights)
            grads = model.backward(dpred)
            model.update(opt.step(model.params, grads))
            record.step_loss.append(loss)
            epoch_loss += loss
        record.train_loss.append(epoch_loss / updates_per_epoch)
        val = float(np.mean((model.predict(data.x_val, support) - data.y_val) ** 2))
        record.val_loss.append(val)
        decision = early_stopping_monitor(record.val_loss, cfg.patience, cfg.min_delta)
        if decision.best_epoch == epoch:
            best_params = model.copy_params()
        if decision.stop:
            record.stopped_early = True
            break

    model.update(best_params)
    record.best_epoch = early_stopping_monitor(record.val_loss, cfg.patience, cfg.min_delta).best_epoch
    record.best_val_loss = record.val_loss[record.best_epoch]
    record.test_metrics = [asdict(m) for m in evaluate_split(model, data, g, cfg)]
    record.wall_seconds = time.perf_counter() - start
    return model, record


def evaluate_split(model: STModel, data: PreparedData, g: Graph, cfg: TrainConfig, split: str = "test"):
    x, y = (data.x_test, data.y_test) if split == "test" else (data.x_val, data.y_val)
    scaler = data.splits.scaler
    pred = scaler.inverse(model.predict(x, normalized_adjacency(g)), feature=0)
    return evaluate(pred, scaler.inverse(y, feature=0), epsilon=cfg.epsilon)



def prepare(ds: SignalDataset, cfg: TrainConfig, noise: float = 0.0) -> PreparedData:
    """Split chronologically, optionally corrupt the training span, z-score, window."""
    splits = chronological_split(ds, cfg.split, min_span=cfg.window + cfg.horizon)
    if noise > 0:
        splits = splits.with_train(inject_noise(splits.train, noise, seed=cfg.seed))
    return PreparedData.from_splits(splits, cfg.window, cfg.horizon)


def run(ds: SignalDataset, g: Graph, cfg: TrainConfig, noise: float = 0.0) -> tuple[STModel, RunRecord, PreparedData]:
    data = prepare(ds, cfg, noise)
    model = STModel.init(cfg.model_config(ds.num_features))
    model, record = fit(model, data, g, cfg)
    return model, record, data


def rmse_of(record: RunRecord) -> float:
    return next(m["rmse"] for m in record.test_metrics if m["horizon"] == "all")
