"""Compact spatial-temporal graph forecaster with hand-written backward pass.

Each block is ``causal temporal conv -> graph conv -> ReLU``. Temporal convs are
"valid", so every block shortens the time axis by ``kernel - 1``; the readout
maps each node's flattened (time, channel) features to ``horizon`` outputs.
The activations after block ``tap_layer`` are the hidden representation used
for difficulty scoring, and that is where the node mask is applied.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np

from stc_dropout.graph import Graph, normalized_adjacency
from stc_dropout.numerics import make_rng

_INIT_STREAM = 3
CHECKPOINT_FORMAT = "stc-dropout-checkpoint/1"


@dataclass(frozen=True)
class ModelConfig:
    window: int = 12
    horizon: int = 3
    in_features: int = 1
    channels: tuple[int, ...] = (16, 16)
    kernel: int = 3
    tap_layer: int = 0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        for name in ("window", "horizon", "in_features", "kernel"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not self.channels or min(self.channels) < 1:
            raise ValueError("channels must be a non-empty list of positive sizes")
        if not 0 <= self.tap_layer < len(self.channels):
            raise ValueError(f"tap_layer must lie in [0, {len(self.channels) - 1}]")
        need = self.min_window
        if self.window < need:
            raise ValueError(
                f"window {self.window} too short for {len(self.channels)} temporal kernels of width "
                f"{self.kernel}; need window >= {need}"
            )

    @property
    def min_window(self) -> int:
        return len(self.channels) * (self.kernel - 1) + 1

    def time_after(self, block: int) -> int:
        return self.window - (block + 1) * (self.kernel - 1)

    @property
    def tap_dim(self) -> int:
        return self.time_after(self.tap_layer) * self.channels[self.tap_layer]

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {}
        c_in = self.in_features
        for i, c_out in enumerate(self.channels):
            shapes[f"block{i}.temporal.w"] = (self.kernel, c_in, c_out)
            shapes[f"block{i}.temporal.b"] = (c_out,)
            shapes[f"block{i}.graph.w"] = (c_out, c_out)
            shapes[f"block{i}.graph.b"] = (c_out,)
            c_in = c_out
        last = len(self.channels) - 1
        shapes["readout.w"] = (self.time_after(last) * self.channels[last], self.horizon)
        shapes["readout.b"] = (self.horizon,)
        return shapes

    def hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


class STModel:
    """Forecaster mapping ``(batch, N, nodes, D_in)`` windows to ``(batch, S, nodes)``."""

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray] | None = None):
        self.config = config
        if params is None:
            params = self._init_params()
        shapes = config.param_shapes()
        if set(params) != set(shapes):
            raise ValueError(f"parameter names {sorted(params)} do not match config {sorted(shapes)}")
        for k, shape in shapes.items():
            if tuple(params[k].shape) != shape:
                raise ValueError(f"{k}: shape {params[k].shape}, expected {shape}")
        self.params = {k: np.array(params[k], dtype=np.float64) for k in shapes}
        self._version = 0
        self._ctx = None

    @classmethod
    def init(cls, config: ModelConfig) -> "STModel":
        return cls(config)

    def _init_params(self) -> dict[str, np.ndarray]:
        cfg = self.config
        rng = make_rng(cfg.seed, _INIT_STREAM)
        out = {}
        for name, shape in cfg.param_shapes().items():
            if name.endswith(".b"):
                out[name] = np.zeros(shape)
                continue
            if name.endswith("temporal.w"):
                k, c_in, c_out = shape
                a = glorot_bound(k * c_in, k * c_out)
            else:
                a = glorot_bound(*shape)
            out[name] = rng.uniform(-a, a, shape)
        return out

    @property
    def num_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def update(self, new_params: dict[str, np.ndarray]) -> None:
        for k, v in new_params.items():
            self.params[k] = v
        self._version += 1
        self._ctx = None

    def copy_params(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    # -- forward / backward ---------------------------------------------------

    def forward(self, x, graph: Graph | np.ndarray, mask=None, fill=None):
        """Return ``(prediction, tap)``.

        ``tap`` is the pre-mask activation after block ``tap_layer``, flattened
        per node to shape ``(batch, nodes, T_tap * C_tap)``. ``mask`` (0/1 per
        node) scales the tap activations; ``fill`` is a general ``(nodes, nodes)``
        mixing matrix applied instead (used to mean-fill dropped nodes).
        ``graph`` may be a :class:`Graph` or a precomputed normalized support.
        """
        cfg = self.config
        x = np.asarray(x, dtype=np.float64)
        support = normalized_adjacency(graph) if isinstance(graph, Graph) else np.asarray(graph)
        n = support.shape[0]
        if x.ndim != 4 or x.shape[1] != cfg.window or x.shape[2] != n or x.shape[3] != cfg.in_features:
            raise ValueError(f"input shape {x.shape} != (batch, {cfg.window}, {n}, {cfg.in_features})")
        mix = None
        if fill is not None:
            mix = np.asarray(fill, dtype=np.float64)
            if mix.shape != (n, n):
                raise ValueError(f"fill matrix must be ({n}, {n})")
        elif mask is not None:
            m = np.asarray(mask, dtype=np.float64)
            if m.shape != (n,):
                raise ValueError(f"mask must have length {n}")
            mix = m

        p = self.params
        h = x
        caches = []
        tap = None
        for i in range(len(cfg.channels)):
            wt, bt = p[f"block{i}.temporal.w"], p[f"block{i}.temporal.b"]
            wg, bg = p[f"block{i}.graph.w"], p[f"block{i}.graph.b"]
            t_out = h.shape[1] - cfg.kernel + 1
            z = bt + sum(h[:, k : k + t_out] @ wt[k] for k in range(cfg.kernel))
            m = support @ z
            g = m @ wg + bg
            y = np.maximum(g, 0.0)
            caches.append((h, m, g))
            if i == cfg.tap_layer:
                b, t, _, c = y.shape
                tap = y.transpose(0, 2, 1, 3).reshape(b, n, t * c)
                if mix is not None:
                    y = y * mix[:, None] if mix.ndim == 1 else mix @ y
            h = y
        b, t, _, c = h.shape
        feat = h.transpose(0, 2, 1, 3).reshape(b, n, t * c)
        out = feat @ p["readout.w"] + p["readout.b"]
        pred = out.transpose(0, 2, 1)
        self._ctx = dict(support=support, mix=mix, caches=caches, feat=feat, last_shape=h.shape, version=self._version)
        return pred, tap

    def backward(self, loss_grad) -> dict[str, np.ndarray]:
        """Gradients of ``sum(prediction * loss_grad)`` for every parameter.

        Uses the context of the most recent :meth:`forward`; fails if there is
        none or if the parameters changed since.
        """
        ctx = self._ctx
        if ctx is None or ctx["version"] != self._version:
            raise RuntimeError("backward needs a forward pass on the current parameters")
        cfg = self.config
        p = self.params
        dpred = np.asarray(loss_grad, dtype=np.float64)
        feat = ctx["feat"]
        b, n, f = feat.shape
        if dpred.shape != (b, cfg.horizon, n):
            raise ValueError(f"loss_grad shape {dpred.shape} != prediction shape {(b, cfg.horizon, n)}")
        support, mix = ctx["support"], ctx["mix"]

        grads = {}
        dout = dpred.transpose(0, 2, 1)
        grads["readout.w"] = feat.reshape(-1, f).T @ dout.reshape(-1, cfg.horizon)
        grads["readout.b"] = dout.sum(axis=(0, 1))
        dfeat = dout @ p["readout.w"].T
        bl, tl, nl, cl = ctx["last_shape"]
        dh = dfeat.reshape(bl, nl, tl, cl).transpose(0, 2, 1, 3)

        for i in reversed(range(len(cfg.channels))):
            h_in, m, g = ctx["caches"][i]
            if i == cfg.tap_layer and mix is not None:
                dh = dh * mix[:, None] if mix.ndim == 1 else mix.T @ dh
            wt, wg = p[f"block{i}.temporal.w"], p[f"block{i}.graph.w"]
            dg = dh * (g > 0)
            c_out = wg.shape[0]
            grads[f"block{i}.graph.w"] = m.reshape(-1, c_out).T @ dg.reshape(-1, c_out)
            grads[f"block{i}.graph.b"] = dg.sum(axis=(0, 1, 2))
            dz = support.T @ (dg @ wg.T)
            grads[f"block{i}.temporal.b"] = dz.sum(axis=(0, 1, 2))
            t_out = dz.shape[1]
            c_in = h_in.shape[-1]
            dwt = np.empty_like(wt)
            dh_in = np.zeros_like(h_in)
            dz_flat = dz.reshape(-1, c_out)
            for k in range(cfg.kernel):
                window = h_in[:, k : k + t_out]
                dwt[k] = window.reshape(-1, c_in).T @ dz_flat
                dh_in[:, k : k + t_out] += dz @ wt[k].T
            grads[f"block{i}.temporal.w"] = dwt
            dh = dh_in
        return grads

    def predict(self, x, graph, batch_size: int = 256) -> np.ndarray:
        support = normalized_adjacency(graph) if isinstance(graph, Graph) else graph
        outs = [self.forward(x[i : i + batch_size], support)[0] for i in range(0, len(x), batch_size)]
        self._ctx = None
        return np.concatenate(outs, axis=0)

    def mean_tap(self, x, graph, batch_size: int = 256) -> np.ndarray:
        """Per-node tap representation averaged over all windows in ``x``."""
        support = normalized_adjacency(graph) if isinstance(graph, Graph) else graph
        total = None
        for i in range(0, len(x), batch_size):
            _, tap = self.forward(x[i : i + batch_size], support)
            s = tap.sum(axis=0)
            total = s if total is None else total + s
        self._ctx = None
        return total / len(x)

    # -- checkpoints ----------------------------------------------------------

    def save(self, path, extra: dict | None = None) -> None:
        """Write an ``.npz`` with every parameter plus a JSON ``__meta__`` entry.

        The metadata records the format tag, model config, config hash and any
        ``extra`` fields (the trainer stores normalization statistics there).
        """
        meta = {
            "format": CHECKPOINT_FORMAT,
            "config": asdict(self.config),
            "config_hash": self.config.hash(),
            "shapes": {k: list(v.shape) for k, v in self.params.items()},
            "extra": extra or {},
        }
        with open(path, "wb") as fh:
            np.savez(fh, __meta__=np.array(json.dumps(meta, sort_keys=True)), **self.params)

    @classmethod
    def load(cls, path) -> tuple["STModel", dict]:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["__meta__"]))
            if meta.get("format") != CHECKPOINT_FORMAT:
                raise ValueError(f"{path}: unknown checkpoint format {meta.get('format')!r}")
            params = {k: z[k] for k in z.files if k != "__meta__"}
        cfg = ModelConfig(**meta["config"])
        if cfg.hash() != meta["config_hash"]:
            raise ValueError(f"{path}: config hash mismatch")
        return cls(cfg, params), meta["extra"]
