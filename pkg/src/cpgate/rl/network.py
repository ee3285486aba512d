"""Convolutional Q-network written directly against numpy.

Layer stack: three zero-padded ("same") convolutions with rectified-linear
activations, a 512-unit fully connected layer that also receives the scalar
network load, and a 2-unit output (Transmit, Discard).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

CONV_LAYERS = (("conv1", 32, 8, 2), ("conv2", 64, 4, 2), ("conv3", 64, 3, 1))
HIDDEN = 512
N_ACTIONS = 2
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Checkpoint file is unreadable or does not match the expected layout."""


def same_padding(size: int, kernel: int, stride: int) -> tuple[int, int, int]:
    """Output size and (before, after) padding for "same" convolution."""
    out = math.ceil(size / stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return out, total // 2, total - total // 2


def conv_forward(x, w, b, stride):
    """Strided "same" convolution as one im2col matrix product."""
    n, c, h, wd = x.shape
    o, k = w.shape[0], w.shape[-1]
    ho, pt, pb = same_padding(h, k, stride)
    wo, pl, pr = same_padding(wd, k, stride)
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
    out = (cols @ w.reshape(o, -1).T + b).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    return out, (x.shape, xp.shape, cols, (pt, pl), stride)


def conv_backward(dy, w, cache, need_dx: bool = True):
    x_shape, xp_shape, cols, (pt, pl), stride = cache
    n, o, ho, wo = dy.shape
    c, k = w.shape[1], w.shape[-1]
    dy2 = dy.transpose(0, 2, 3, 1).reshape(-1, o)
    dw = (dy2.T @ cols).reshape(w.shape)
    db = dy2.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = (dy2 @ w.reshape(o, -1)).reshape(n, ho, wo, c, k, k)
    dxp = np.zeros(xp_shape)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[..., i, j].transpose(0, 3, 1, 2)
    dx = dxp[:, :, pt:pt + x_shape[2], pl:pl + x_shape[3]]
    return dx, dw, db


@dataclass
class QNetwork:
    """Action-value function over (13 x window x 15) one-hot images plus load."""

    window: int
    channels: int = 13
    width: int = 15
    params: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def create(cls, window: int = 10, seed: int = 0, channels: int = 13, width: int = 15,
               zero_output: bool = False) -> "QNetwork":
        net = cls(window=window, channels=channels, width=width)
        rng = np.random.default_rng(seed)
        c_in, h, w = channels, window, width
        for name, c_out, k, s in CONV_LAYERS:
            fan_in = c_in * k * k
            net.params[f"{name}_w"] = rng.normal(0.0, math.sqrt(2.0 / fan_in), (c_out, c_in, k, k))
            net.params[f"{name}_b"] = np.zeros(c_out)
            h, _, _ = same_padding(h, k, s)
            w, _, _ = same_padding(w, k, s)
            c_in = c_out
        flat = c_in * h * w + 1
        net.params["fc1_w"] = rng.normal(0.0, math.sqrt(2.0 / flat), (flat, HIDDEN))
        net.params["fc1_b"] = np.zeros(HIDDEN)
        if zero_output:
            net.params["fc2_w"] = np.zeros((HIDDEN, N_ACTIONS))
        else:
            net.params["fc2_w"] = rng.normal(0.0, math.sqrt(1.0 / HIDDEN), (HIDDEN, N_ACTIONS))
        net.params["fc2_b"] = np.zeros(N_ACTIONS)
        return net

    @property
    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def copy(self) -> "QNetwork":
        return QNetwork(self.window, self.channels, self.width, {k: v.copy() for k, v in self.params.items()})

    def forward(self, inputs, keep_cache: bool = False):
        """Q-values (N, 2) for ``inputs = (images, load)``."""
        x, load = inputs
        p = self.params
        cache = []
        h = x
        for name, _, _, s in CONV_LAYERS:
            z, cc = conv_forward(h, p[f"{name}_w"], p[f"{name}_b"], s)
            h = np.maximum(z, 0.0)
            cache.append((cc, z))
        conv_shape = h.shape
        flat = np.concatenate([h.reshape(len(h), -1), np.asarray(load, dtype=h.dtype).reshape(-1, 1)], axis=1)
        z1 = flat @ p["fc1_w"] + p["fc1_b"]
        a1 = np.maximum(z1, 0.0)
        q = a1 @ p["fc2_w"] + p["fc2_b"]
        if not keep_cache:
            return q, None
        return q, (cache, conv_shape, flat, z1, a1)

    def backward(self, cache, dq) -> dict[str, np.ndarray]:
        conv_cache, conv_shape, flat, z1, a1 = cache
        p = self.params
        g = {}
        g["fc2_w"] = a1.T @ dq
        g["fc2_b"] = dq.sum(axis=0)
        dz1 = (dq @ p["fc2_w"].T) * (z1 > 0)
        g["fc1_w"] = flat.T @ dz1
        g["fc1_b"] = dz1.sum(axis=0)
        dflat = dz1 @ p["fc1_w"].T
        dh = dflat[:, :-1].reshape(conv_shape)
        for (name, _, _, _), (cc, z) in zip(reversed(CONV_LAYERS), reversed(conv_cache)):
            dz = dh * (z > 0)
            # the input image needs no gradient
            dh, g[f"{name}_w"], g[f"{name}_b"] = conv_backward(dz, p[f"{name}_w"], cc, need_dx=name != "conv1")
        return g

    def prepare(self, raw):
        from .encoding import encode_batch

        return encode_batch(raw, self.window, self.width)

    def save(self, path, train_config: dict | None = None, extra: dict | None = None) -> None:
        meta = {
            "format_version": FORMAT_VERSION,
            "window": self.window,
            "channels": self.channels,
            "width": self.width,
            "layers": {k: list(v.shape) for k, v in self.params.items()},
            "train_config": train_config or {},
            "extra": extra or {},
        }
        with open(path, "wb") as fh:
            np.savez(fh, __meta__=np.array(json.dumps(meta, sort_keys=True)), **self.params)

    @classmethod
    def load(cls, path, window: int | None = None) -> tuple["QNetwork", dict]:
        try:
            with np.load(path, allow_pickle=False) as data:
                meta = json.loads(str(data["__meta__"]))
                params = {k: data[k].astype(np.float64) for k in data.files if k != "__meta__"}
        except (OSError, KeyError, ValueError) as exc:
            raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
        if meta.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint format in {path}")
        net = cls(meta["window"], meta["channels"], meta["width"], params)
        expected = cls.create(meta["window"], channels=meta["channels"], width=meta["width"])
        for k, v in expected.params.items():
            if k not in params or params[k].shape != v.shape:
                raise CheckpointError(f"parameter {k} missing or mis-shaped in {path}")
        if window is not None and window != net.window:
            raise CheckpointError(f"checkpoint window {net.window} does not match configured window {window}")
        return net, meta


@dataclass
class LinearQ:
    """Lookup-table-capacity Q-function over integer state ids (one weight per state-action)."""

    n_states: int
    params: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def create(cls, n_states: int, n_actions: int = N_ACTIONS) -> "LinearQ":
        return cls(n_states, {"table": np.zeros((n_states, n_actions))})

    def copy(self) -> "LinearQ":
        return LinearQ(self.n_states, {k: v.copy() for k, v in self.params.items()})

    def prepare(self, raw):
        return np.eye(self.n_states)[np.asarray(raw, dtype=int).reshape(-1)]

    def forward(self, inputs, keep_cache: bool = False):
        q = inputs @ self.params["table"]
        return q, (inputs if keep_cache else None)

    def backward(self, cache, dq):
        return {"table": cache.T @ dq}


@dataclass
class Sgd:
    """Stochastic gradient descent with optional momentum and global-norm clipping."""

    lr: float = 1e-3
    momentum: float = 0.0
    max_grad_norm: float | None = None
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> float:
        norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        scale = 1.0
        if self.max_grad_norm is not None and norm > self.max_grad_norm:
            scale = self.max_grad_norm / norm
        for k, g in grads.items():
            if self.momentum:
                v = self.velocity.get(k)
                v = g * scale if v is None else self.momentum * v + g * scale
                self.velocity[k] = v
                params[k] -= self.lr * v
            else:
                params[k] -= self.lr * scale * g
        return norm
