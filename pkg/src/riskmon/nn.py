"""Minimal neural-net layer kernels with hand-written forward/backward passes.

No autodiff: every layer implements `forward` returning an activation plus a
cache, and `backward` consuming that cache. Convolutions are fixed to 3x3,
stride 1, pad 1 (shape preserving) and pooling to 2x2, which gives the clean
64 -> 32 -> 16 -> 8 -> 4 spatial ladder used by the encoder.

Tensors are numpy float64 arrays; image tensors are (batch, channel, h, w).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeMismatch(Exception):
    pass


def _he_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


class Layer:
    """Base layer: trainable params in `params`, non-trainable state in `buffers`."""

    kind = "base"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def forward(self, x, mode="train", rng=None):
        raise NotImplementedError

    def backward(self, cache, grad_out):
        raise NotImplementedError

    def config(self) -> dict:
        return {}

    def spec(self) -> dict:
        return {"kind": self.kind, **self.config()}


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_size: int, out_size: int, rng: np.random.Generator | None = None):
        super().__init__()
        self.in_size, self.out_size = in_size, out_size
        rng = rng or np.random.default_rng(0)
        self.params["w"] = _he_init(rng, (out_size, in_size), in_size)
        self.params["b"] = np.zeros(out_size)

    def config(self):
        return {"in_size": self.in_size, "out_size": self.out_size}

    def forward(self, x, mode="train", rng=None):
        if x.ndim != 2 or x.shape[1] != self.in_size:
            raise ShapeMismatch(f"dense expects (B,{self.in_size}), got {x.shape}")
        return x @ self.params["w"].T + self.params["b"], x

    def backward(self, cache, grad_out):
        x = cache
        if grad_out.shape != (x.shape[0], self.out_size):
            raise ShapeMismatch("dense backward shape mismatch")
        grads = {"w": grad_out.T @ x, "b": grad_out.sum(axis=0)}
        return grad_out @ self.params["w"], grads


class Conv3x3(Layer):
    """3x3 convolution, stride 1, pad 1, via im2col + GEMM."""

    kind = "conv3x3"

    def __init__(self, in_ch: int, out_ch: int, rng: np.random.Generator | None = None):
        super().__init__()
        self.in_ch, self.out_ch = in_ch, out_ch
        rng = rng or np.random.default_rng(0)
        self.params["w"] = _he_init(rng, (out_ch, in_ch, 3, 3), in_ch * 9)
        self.params["b"] = np.zeros(out_ch)

    def config(self):
        return {"in_ch": self.in_ch, "out_ch": self.out_ch}

    def _im2col(self, x):
        b, c, h, w = x.shape
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        win = sliding_window_view(xp, (3, 3), axis=(2, 3))  # (b,c,h,w,3,3)
        # -> (c*9, b*h*w)
        return np.ascontiguousarray(win.transpose(1, 4, 5, 0, 2, 3)).reshape(
            c * 9, b * h * w
        )

    def forward(self, x, mode="train", rng=None):
        if x.ndim != 4 or x.shape[1] != self.in_ch:
            raise ShapeMismatch(f"conv expects (B,{self.in_ch},H,W), got {x.shape}")
        b, c, h, w = x.shape
        cols = self._im2col(x)
        wmat = self.params["w"].reshape(self.out_ch, c * 9)
        out = (wmat @ cols).reshape(self.out_ch, b, h, w).transpose(1, 0, 2, 3)
        out = out + self.params["b"][None, :, None, None]
        return out, (cols, x.shape)

    def backward(self, cache, grad_out):
        cols, xshape = cache
        b, c, h, w = xshape
        if grad_out.shape != (b, self.out_ch, h, w):
            raise ShapeMismatch("conv backward shape mismatch")
        gmat = grad_out.transpose(1, 0, 2, 3).reshape(self.out_ch, b * h * w)
        grads = {
            "w": (gmat @ cols.T).reshape(self.params["w"].shape),
            "b": grad_out.sum(axis=(0, 2, 3)),
        }
        gcols = self.params["w"].reshape(self.out_ch, c * 9).T @ gmat
        gcols = gcols.reshape(c, 3, 3, b, h, w)
        gx = np.zeros((b, c, h + 2, w + 2))
        for di in range(3):
            for dj in range(3):
                gx[:, :, di : di + h, dj : dj + w] += gcols[:, di, dj].transpose(
                    1, 0, 2, 3
                )
        return gx[:, :, 1 : 1 + h, 1 : 1 + w], grads


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, mode="train", rng=None):
        return np.maximum(x, 0.0), x > 0

    def backward(self, cache, grad_out):
        if grad_out.shape != cache.shape:
            raise ShapeMismatch("relu backward shape mismatch")
        return grad_out * cache, {}


class Sigmoid(Layer):
    kind = "sigmoid"

    def forward(self, x, mode="train", rng=None):
        out = 1.0 / (1.0 + np.exp(-x))
        return out, out

    def backward(self, cache, grad_out):
        if grad_out.shape != cache.shape:
            raise ShapeMismatch("sigmoid backward shape mismatch")
        return grad_out * cache * (1.0 - cache), {}


class ChannelNorm(Layer):
    """Per-channel standardization over (batch, h, w) with learned scale/shift.

    Running statistics collected in train mode make eval-mode output a pure
    function of the input, so single-frame inference is deterministic.
    """

    kind = "channel_norm"
    EPS = 1e-5
    MOMENTUM = 0.1

    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels
        self.params["gamma"] = np.ones(channels)
        self.params["beta"] = np.zeros(channels)
        self.buffers["running_mean"] = np.zeros(channels)
        self.buffers["running_var"] = np.ones(channels)

    def config(self):
        return {"channels": self.channels}

    def forward(self, x, mode="train", rng=None):
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeMismatch(f"channel_norm expects (B,{self.channels},H,W)")
        if mode == "train":
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            m = self.MOMENTUM
            self.buffers["running_mean"] = (1 - m) * self.buffers["running_mean"] + m * mean
            self.buffers["running_var"] = (1 - m) * self.buffers["running_var"] + m * var
        else:
            mean = self.buffers["running_mean"]
            var = self.buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.EPS)
        xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
        out = self.params["gamma"][None, :, None, None] * xhat + self.params["beta"][
            None, :, None, None
        ]
        return out, (xhat, inv_std, mode)

    def backward(self, cache, grad_out):
        xhat, inv_std, mode = cache
        if grad_out.shape != xhat.shape:
            raise ShapeMismatch("channel_norm backward shape mismatch")
        grads = {
            "gamma": (grad_out * xhat).sum(axis=(0, 2, 3)),
            "beta": grad_out.sum(axis=(0, 2, 3)),
        }
        g = grad_out * self.params["gamma"][None, :, None, None]
        if mode != "train":
            return g * inv_std[None, :, None, None], grads
        n = xhat.shape[0] * xhat.shape[2] * xhat.shape[3]
        gmean = g.mean(axis=(0, 2, 3))
        gxhat_mean = (g * xhat).mean(axis=(0, 2, 3))
        gx = (
            g
            - gmean[None, :, None, None]
            - xhat * gxhat_mean[None, :, None, None]
        ) * inv_std[None, :, None, None]
        del n
        return gx, grads


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, p: float):
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise ValueError("dropout probability must be in [0, 1)")
        self.p = p

    def config(self):
        return {"p": self.p}

    def forward(self, x, mode="train", rng=None):
        if mode != "train" or self.p == 0.0:
            return x, None
        if rng is None:
            raise ValueError("train-mode dropout needs an rng")
        mask = (rng.random(x.shape) >= self.p) / (1.0 - self.p)
        return x * mask, mask

    def backward(self, cache, grad_out):
        if cache is None:
            return grad_out, {}
        if grad_out.shape != cache.shape:
            raise ShapeMismatch("dropout backward shape mismatch")
        return grad_out * cache, {}


class MaxPool2x2(Layer):
    kind = "maxpool2x2"

    def forward(self, x, mode="train", rng=None):
        b, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ShapeMismatch("maxpool2x2 needs even spatial dims")
        xr = x.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
        xr = xr.reshape(b, c, h // 2, w // 2, 4)
        idx = xr.argmax(axis=-1)
        out = np.take_along_axis(xr, idx[..., None], axis=-1)[..., 0]
        return out, (idx, x.shape)

    def backward(self, cache, grad_out):
        idx, xshape = cache
        b, c, h, w = xshape
        if grad_out.shape != (b, c, h // 2, w // 2):
            raise ShapeMismatch("maxpool backward shape mismatch")
        gx = np.zeros((b, c, h // 2, w // 2, 4))
        np.put_along_axis(gx, idx[..., None], grad_out[..., None], axis=-1)
        gx = gx.reshape(b, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return gx.reshape(b, c, h, w), {}


class Upsample2x2(Layer):
    """Nearest-neighbor 2x upsampling."""

    kind = "upsample2x2"

    def forward(self, x, mode="train", rng=None):
        if x.ndim != 4:
            raise ShapeMismatch("upsample expects (B,C,H,W)")
        out = x.repeat(2, axis=2).repeat(2, axis=3)
        return out, x.shape

    def backward(self, cache, grad_out):
        b, c, h, w = cache
        if grad_out.shape != (b, c, 2 * h, 2 * w):
            raise ShapeMismatch("upsample backward shape mismatch")
        g = grad_out.reshape(b, c, h, 2, w, 2)
        return g.sum(axis=(3, 5)), {}


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, mode="train", rng=None):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, cache, grad_out):
        return grad_out.reshape(cache), {}


class Reshape(Layer):
    kind = "reshape"

    def __init__(self, shape):
        super().__init__()
        self.shape = tuple(shape)

    def config(self):
        return {"shape": list(self.shape)}

    def forward(self, x, mode="train", rng=None):
        return x.reshape((x.shape[0],) + self.shape), x.shape

    def backward(self, cache, grad_out):
        return grad_out.reshape(cache), {}


_LAYER_KINDS = {
    cls.kind: cls
    for cls in (
        Dense,
        Conv3x3,
        ReLU,
        Sigmoid,
        ChannelNorm,
        Dropout,
        MaxPool2x2,
        Upsample2x2,
        Flatten,
        Reshape,
    )
}


def layer_from_spec(spec: dict) -> Layer:
    kind = spec["kind"]
    if kind not in _LAYER_KINDS:
        raise ValueError(f"unknown layer kind {kind!r}")
    cfg = {k: v for k, v in spec.items() if k != "kind"}
    cls = _LAYER_KINDS[kind]
    if cls in (Dense, Conv3x3):
        cfg["rng"] = np.random.default_rng(0)
    return cls(**cfg)


class Sequential:
    """Plain layer stack with explicit forward/backward bookkeeping."""

    def __init__(self, layers: list[Layer]):
        self.layers = layers

    def forward(self, x, mode="train", rng=None):
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x, mode=mode, rng=rng)
            caches.append(cache)
        return x, caches

    def backward(self, caches, grad_out):
        grads = [None] * len(self.layers)
        for i in reversed(range(len(self.layers))):
            grad_out, g = self.layers[i].backward(caches[i], grad_out)
            grads[i] = g
        return grad_out, grads

    def parameters(self):
        """(layer_index, name, array) triples for every trainable parameter."""
        out = []
        for i, layer in enumerate(self.layers):
            for name, arr in layer.params.items():
                out.append((i, name, arr))
        return out

    def to_state(self) -> dict:
        return {
            "layers": [layer.spec() for layer in self.layers],
            "params": [
                {name: arr.tolist() for name, arr in layer.params.items()}
                for layer in self.layers
            ],
            "buffers": [
                {name: arr.tolist() for name, arr in layer.buffers.items()}
                for layer in self.layers
            ],
        }

    @classmethod
    def from_state(cls, state: dict) -> "Sequential":
        layers = [layer_from_spec(s) for s in state["layers"]]
        for layer, params, buffers in zip(layers, state["params"], state["buffers"]):
            for name, vals in params.items():
                layer.params[name] = np.asarray(vals, dtype=float).reshape(
                    layer.params[name].shape
                )
            for name, vals in buffers.items():
                layer.buffers[name] = np.asarray(vals, dtype=float).reshape(
                    layer.buffers[name].shape
                )
        return cls(layers)


class Adam:
    """Adam with decoupled weight decay, matched to the layer stack above."""

    def __init__(
        self,
        params: list[np.ndarray],
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads: list[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise ShapeMismatch("grad list does not match parameter list")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if g.shape != p.shape:
                raise ShapeMismatch("gradient shape does not match parameter")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if self.weight_decay:
                p *= 1.0 - self.lr * self.weight_decay
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def adam_step(state: Adam, params: list[np.ndarray], grads: list[np.ndarray]):
    """Functional wrapper over Adam.step for callers that prefer it."""
    if params is not state.params and any(
        p is not q for p, q in zip(params, state.params)
    ):
        raise ShapeMismatch("params do not match the optimizer state")
    state.step(grads)
    return params
