"""Convolutional autoencoder embedding 64x64 grayscale frames into R^12.

Four encoder blocks (conv3x3 -> channel norm -> relu -> dropout -> maxpool)
with channels 8/16/32/64 take a frame down to 4x4x64, then a dense layer to
the latent vector; the decoder mirrors the encoder with nearest-neighbor
upsampling and a final sigmoid. Reconstruction loss is per-pixel MSE, and the
distribution of per-frame losses over the final training epoch is kept on the
model so outlier frames ("the encoder has not seen anything like this") can
be flagged at inference time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn

LATENT_DIM = 12
FRAME_SHAPE = (64, 64)
OUTLIER_SIGMAS = 3.0
FORMAT_VERSION = 1

ENCODER_CHANNELS = (8, 16, 32, 64)


class EmptyDataset(Exception):
    pass


class DivergedTraining(Exception):
    pass


class StatsUnavailable(Exception):
    pass


@dataclass
class AEModel:
    encoder: nn.Sequential
    decoder: nn.Sequential
    latent_dim: int = LATENT_DIM
    train_loss_stats: tuple[float, float] | None = None  # (mean, std)
    first_epoch_loss: float | None = None
    training_meta: dict = field(default_factory=dict)


def build_autoencoder(latent_dim: int = LATENT_DIM, seed: int = 0) -> AEModel:
    rng = np.random.default_rng(seed)
    enc_layers: list[nn.Layer] = []
    in_ch = 1
    for ch in ENCODER_CHANNELS:
        enc_layers += [
            nn.Conv3x3(in_ch, ch, rng),
            nn.ChannelNorm(ch),
            nn.ReLU(),
            nn.Dropout(0.1),
            nn.MaxPool2x2(),
        ]
        in_ch = ch
    enc_layers += [nn.Flatten(), nn.Dense(4 * 4 * ENCODER_CHANNELS[-1], latent_dim, rng)]

    dec_layers: list[nn.Layer] = [
        nn.Dense(latent_dim, 4 * 4 * ENCODER_CHANNELS[-1], rng),
        nn.Reshape((ENCODER_CHANNELS[-1], 4, 4)),
    ]
    chans = list(reversed(ENCODER_CHANNELS))  # 64, 32, 16, 8
    for src, dst in zip(chans, chans[1:]):
        dec_layers += [
            nn.Upsample2x2(),
            nn.Conv3x3(src, dst, rng),
            nn.ChannelNorm(dst),
            nn.ReLU(),
        ]
    dec_layers += [nn.Upsample2x2(), nn.Conv3x3(chans[-1], 1, rng), nn.Sigmoid()]
    return AEModel(nn.Sequential(enc_layers), nn.Sequential(dec_layers), latent_dim)


def _as_batch(frames: np.ndarray) -> np.ndarray:
    frames = np.asarray(frames, dtype=float)
    if frames.ndim == 2:
        frames = frames[None]
    if frames.shape[1:] != FRAME_SHAPE:
        raise ValueError(f"frames must be (N, 64, 64), got {frames.shape}")
    return frames[:, None, :, :]


def train_autoencoder(
    frames,
    epochs: int = 400,
    lr: float = 0.01,
    seed: int = 0,
    batch_size: int = 32,
    latent_dim: int = LATENT_DIM,
    weight_decay: float = 0.0,
    val_frames=None,
    early_stop_patience: int | None = None,
) -> AEModel:
    """Train the autoencoder on a frame set; deterministic given the seed.

    Early stopping on validation loss is available (pass val_frames and a
    patience) but off by default.
    """
    x_all = _as_batch(frames)
    n = x_all.shape[0]
    if n < 16:
        raise EmptyDataset(f"need at least 16 frames, got {n}")
    if epochs < 1:
        raise ValueError("epochs must be >= 1")

    model = build_autoencoder(latent_dim=latent_dim, seed=seed)
    rng = np.random.default_rng((seed, 0xAE))
    params = [arr for _, _, arr in model.encoder.parameters()] + [
        arr for _, _, arr in model.decoder.parameters()
    ]
    opt = nn.Adam(params, lr=lr, weight_decay=weight_decay)

    best_val = np.inf
    stall = 0
    first_epoch_loss = None
    last_losses = None
    for epoch in range(epochs):
        order = rng.permutation(n)
        epoch_losses = np.empty(n)
        pos = 0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            x = x_all[idx]
            z, enc_caches = model.encoder.forward(x, mode="train", rng=rng)
            xhat, dec_caches = model.decoder.forward(z, mode="train", rng=rng)
            diff = xhat - x
            per_sample = (diff**2).mean(axis=(1, 2, 3))
            epoch_losses[pos : pos + idx.size] = per_sample
            pos += idx.size
            grad = 2.0 * diff / diff[0].size / idx.size
            gz, dec_grads = model.decoder.backward(dec_caches, grad)
            _, enc_grads = model.encoder.backward(enc_caches, gz)
            flat = [
                g[name]
                for seq, grads in (
                    (model.encoder, enc_grads),
                    (model.decoder, dec_grads),
                )
                for layer, g in zip(seq.layers, grads)
                for name in layer.params
            ]
            opt.step(flat)
        mean_loss = float(epoch_losses.mean())
        if not np.isfinite(mean_loss):
            raise DivergedTraining(f"non-finite loss at epoch {epoch}")
        if first_epoch_loss is None:
            first_epoch_loss = mean_loss
        last_losses = epoch_losses
        if val_frames is not None and early_stop_patience:
            val_loss = float(np.mean(reconstruct_batch(model, np.asarray(val_frames))[1]))
            if val_loss < best_val - 1e-6:
                best_val, stall = val_loss, 0
            else:
                stall += 1
                if stall >= early_stop_patience:
                    break

    model.train_loss_stats = (float(last_losses.mean()), float(last_losses.std()))
    model.first_epoch_loss = first_epoch_loss
    model.training_meta = {
        "epochs": epochs,
        "lr": lr,
        "seed": seed,
        "num_frames": n,
        "final_loss": float(last_losses.mean()),
    }
    return model


def encode_batch(model: AEModel, frames, chunk: int = 64) -> np.ndarray:
    x = _as_batch(frames)
    out = []
    for start in range(0, x.shape[0], chunk):
        z, _ = model.encoder.forward(x[start : start + chunk], mode="eval")
        out.append(z)
    return np.vstack(out)


def encode(model: AEModel, frame) -> np.ndarray:
    """Eval-mode latent vector of a single frame (deterministic)."""
    return encode_batch(model, np.asarray(frame, dtype=float)[None])[0]


def reconstruct_batch(model: AEModel, frames, chunk: int = 64):
    x = _as_batch(frames)
    recons = []
    losses = []
    for start in range(0, x.shape[0], chunk):
        xb = x[start : start + chunk]
        z, _ = model.encoder.forward(xb, mode="eval")
        xhat, _ = model.decoder.forward(z, mode="eval")
        recons.append(xhat[:, 0])
        losses.append(((xhat - xb) ** 2).mean(axis=(1, 2, 3)))
    return np.vstack(recons), np.concatenate(losses)


def reconstruct(model: AEModel, frame) -> tuple[np.ndarray, float]:
    recon, loss = reconstruct_batch(model, np.asarray(frame, dtype=float)[None])
    return recon[0], float(loss[0])


def reconstruction_unreliable(
    model: AEModel, loss: float, sigmas: float = OUTLIER_SIGMAS
) -> bool:
    """True iff the loss is beyond mean + sigmas * std of the training losses."""
    if model.train_loss_stats is None:
        raise StatsUnavailable("model has no training loss statistics")
    mean, std = model.train_loss_stats
    return bool(loss > mean + sigmas * std)


def save_checkpoint(model: AEModel, path) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "latent_dim": model.latent_dim,
        "encoder": model.encoder.to_state(),
        "decoder": model.decoder.to_state(),
        "train_loss_stats": list(model.train_loss_stats)
        if model.train_loss_stats
        else None,
        "first_epoch_loss": model.first_epoch_loss,
        "training_meta": model.training_meta,
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> AEModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValueError(
            f"unsupported checkpoint format_version {doc.get('format_version')}"
        )
    stats = doc.get("train_loss_stats")
    return AEModel(
        encoder=nn.Sequential.from_state(doc["encoder"]),
        decoder=nn.Sequential.from_state(doc["decoder"]),
        latent_dim=int(doc["latent_dim"]),
        train_loss_stats=tuple(stats) if stats else None,
        first_epoch_loss=doc.get("first_epoch_loss"),
        training_meta=doc.get("training_meta", {}),
    )
