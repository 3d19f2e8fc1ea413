"""Mini-batch training with optional order augmentation and DP-SGD.

One top-level record is one example. Under differential privacy the backward
pass runs per example so each example's whole gradient can be clipped before
aggregation; Gaussian noise is added to the clipped mean. Privacy accounting
(epsilon/delta) is deliberately not computed here; the run log keeps every
quantity an external accountant needs (clip norm, noise multiplier, batch
size, dataset size, step count).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass

import numpy as np

from .batches import n_rows, take
from .codecs.base import per_example_gradients, train_step, unflatten_gradients
from .optim import make_optimizer
from .rng import BATCH, DP_NOISE, SHUFFLE, stream

log = logging.getLogger("nestgen.trainer")


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 256
    lr: float = 1e-3
    optimizer: str = "adam"
    shuffle_passes: int = 1
    seed: int = 0

    def validate(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.shuffle_passes < 1:
            raise ValueError("shuffle_passes must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")


@dataclass
class DpConfig:
    clip_norm: float = 1e-3
    noise_multiplier: float = 1.08
    enabled: bool = True

    def validate(self):
        if not self.clip_norm > 0:
            raise ValueError("clip norm must be positive")
        if self.noise_multiplier < 0:
            raise ValueError("noise multiplier must be >= 0")


def dp_step(per_example_grads: np.ndarray, dp: DpConfig, rng) -> np.ndarray:
    """Clip each row to L2 norm <= C, average, add N(0, (sigma*C/B)^2) noise
    per coordinate. Rows are flat per-example gradient vectors."""
    dp.validate()
    g = np.asarray(per_example_grads, dtype=np.float64)
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    factors = np.minimum(1.0, dp.clip_norm / np.maximum(norms, 1e-300))
    mean = (g * factors).mean(axis=0)
    if dp.noise_multiplier > 0:
        std = dp.noise_multiplier * dp.clip_norm / g.shape[0]
        mean = mean + rng.normal(0.0, std, size=mean.shape)
    return mean


def fit(codec, store, data, cfg: TrainConfig, dp: DpConfig | None = None,
        log_path=None) -> list[dict]:
    """Train the codec parameters in place. Returns the per-batch history,
    one record per optimizer step: {epoch, batch, loss, grad_norm, dp}.
    The same records go to `log_path` as JSON lines when given."""
    cfg.validate()
    dp_on = dp is not None and dp.enabled
    if dp_on:
        dp.validate()
    if cfg.shuffle_passes > 1 and not codec.has_shuffle():
        raise ValueError("shuffle_passes > 1 needs a shuffled node in the schema")
    n = n_rows(data)
    if n < 1:
        raise ValueError("empty dataset")
    opt = make_optimizer(cfg.optimizer, cfg.lr)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    history = []
    sink = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(cfg.epochs):
            order = stream(cfg.seed, BATCH, epoch).permutation(n)
            epoch_losses = []
            for b in range(steps_per_epoch):
                idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
                batch = take(data, idx)
                shuffle_rng = (stream(cfg.seed, SHUFFLE, epoch, b)
                               if codec.has_shuffle() else None)
                try:
                    if dp_on:
                        losses, g = per_example_gradients(
                            codec, store, batch, rng=shuffle_rng,
                            passes=cfg.shuffle_passes)
                        loss = float(losses.mean())
                        noisy = dp_step(g, dp, stream(cfg.seed, DP_NOISE, epoch, b))
                        grads = unflatten_gradients(store, noisy)
                        grad_norm = float(np.linalg.norm(noisy))
                    else:
                        loss, grads = train_step(codec, store, batch,
                                                 rng=shuffle_rng,
                                                 passes=cfg.shuffle_passes)
                        grad_norm = float(math.sqrt(sum(
                            float((v * v).sum()) for v in grads.values())))
                    opt.step(store, grads)
                except FloatingPointError as e:
                    raise FloatingPointError(
                        f"epoch {epoch} batch {b}: {e}") from None
                rec = {"epoch": epoch, "batch": b, "loss": loss,
                       "grad_norm": grad_norm,
                       "dp": ({"C": dp.clip_norm, "sigma": dp.noise_multiplier}
                              if dp_on else None)}
                history.append(rec)
                epoch_losses.append(loss)
                if sink:
                    sink.write(json.dumps(rec) + "\n")
                    sink.flush()
            log.info("epoch %d: mean loss %.6f over %d batches",
                     epoch, float(np.mean(epoch_losses)), steps_per_epoch)
    finally:
        if sink:
            sink.close()
    return history


def epoch_means(history: list[dict]) -> list[float]:
    """Mean loss per epoch from a fit history."""
    out = {}
    for rec in history:
        out.setdefault(rec["epoch"], []).append(rec["loss"])
    return [float(np.mean(out[e])) for e in sorted(out)]
