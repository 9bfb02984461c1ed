"""MLP and logistic-regression risk estimators.

Both share the 13-dimensional observation input and produce a probability in
(0, 1) through a final sigmoid; neither carries an epistemic uncertainty
term, which is exactly why they are interesting as baselines. Trained with
binary cross-entropy via Adam (lr 1e-3, weight decay 1e-5).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .dataset import TrainingView

OBS_DIM = 13
FORMAT_VERSION = 1
_EPS = 1e-7


class DivergedTraining(Exception):
    pass


@dataclass
class BaselineModel:
    kind: str  # "mlp" | "lr"
    net: nn.Sequential
    training_meta: dict = field(default_factory=dict)


def build_baseline(kind: str, in_dim: int = OBS_DIM, seed: int = 0) -> BaselineModel:
    rng = np.random.default_rng(seed)
    if kind == "mlp":
        layers: list[nn.Layer] = []
        width = 32
        prev = in_dim
        for _ in range(3):
            layers += [nn.Dense(prev, width, rng), nn.ReLU(), nn.Dropout(0.1)]
            prev = width
        layers += [nn.Dense(prev, 1, rng), nn.Sigmoid()]
    elif kind == "lr":
        layers = [nn.Dense(in_dim, 1, rng), nn.Sigmoid()]
    else:
        raise ValueError(f"unknown baseline kind {kind!r}")
    return BaselineModel(kind=kind, net=nn.Sequential(layers))


def train_baseline(
    kind: str,
    view: TrainingView,
    epochs: int = 400,
    seed: int = 0,
    lr: float = 1e-3,
    weight_decay: float = 1e-5,
    batch_size: int = 64,
) -> BaselineModel:
    """Fit a baseline on a training view; deterministic given the seed."""
    x_all = np.asarray(view.x, dtype=float)
    y_all = np.asarray(view.y, dtype=float).ravel()
    if x_all.size == 0:
        raise ValueError("empty training view")

    model = build_baseline(kind, in_dim=x_all.shape[1], seed=seed)
    rng = np.random.default_rng((seed, 0xB5))
    params = [arr for _, _, arr in model.net.parameters()]
    opt = nn.Adam(params, lr=lr, weight_decay=weight_decay)

    n = x_all.shape[0]
    first_loss = None
    mean_loss = None
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            x, y = x_all[idx], y_all[idx]
            p, caches = model.net.forward(x, mode="train", rng=rng)
            p = p[:, 0]
            pc = np.clip(p, _EPS, 1.0 - _EPS)
            loss = float(-(y * np.log(pc) + (1 - y) * np.log(1 - pc)).mean())
            total += loss * idx.size
            grad = ((pc - y) / (pc * (1 - pc)) / idx.size)[:, None]
            _, grads = model.net.backward(caches, grad)
            flat = [
                g[name]
                for layer, g in zip(model.net.layers, grads)
                for name in layer.params
            ]
            opt.step(flat)
        mean_loss = total / n
        if not np.isfinite(mean_loss):
            raise DivergedTraining(f"non-finite BCE at epoch {epoch}")
        if first_loss is None:
            first_loss = mean_loss

    model.training_meta = {
        "kind": kind,
        "epochs": epochs,
        "seed": seed,
        "first_epoch_bce": first_loss,
        "final_epoch_bce": mean_loss,
    }
    return model


def predict_proba(model: BaselineModel, x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    p, _ = model.net.forward(x, mode="eval")
    return p[:, 0]


def save_baseline(model: BaselineModel, path) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": model.kind,
        "net": model.net.to_state(),
        "training_meta": model.training_meta,
    }
    Path(path).write_text(json.dumps(doc))


def load_baseline(path) -> BaselineModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported baseline format_version {doc.get('format_version')}")
    return BaselineModel(
        kind=doc["kind"],
        net=nn.Sequential.from_state(doc["net"]),
        training_meta=doc.get("training_meta", {}),
    )
