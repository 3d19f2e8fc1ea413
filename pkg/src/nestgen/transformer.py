"""Causal self-attention over short field sequences.

The default block is deliberately reduced: multi-head causal attention plus a
residual connection and nothing else. No layer norm, no feed-forward, no
positional encoding. Sequences here are a handful of field embeddings, not
natural-language tokens, and position information already arrives through the
residual stream (position k's output always contains its own input embedding).
`full_block=True` switches every block to the conventional pre-norm layout
with a dense layer for comparison runs.

Masked score entries are filled with the most negative finite float before the
softmax, so exp() underflows to exactly 0.0: causality and padding are bitwise
guarantees, not approximations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import MASK_FILL, Tensor
from .params import ParamStore


@dataclass
class TransformerConfig:
    width: int = 64
    blocks: int = 2
    heads: int = 8
    full_block: bool = False

    def validate(self):
        if self.width % self.heads != 0:
            raise ValueError(f"width {self.width} not divisible by heads {self.heads}")
        if self.blocks < 1:
            raise ValueError("need at least one block")


class AttentionStack:
    """Parameters and forward pass for a stack of attention blocks."""

    def __init__(self, cfg: TransformerConfig, store: ParamStore, prefix: str,
                 rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        self.blocks = []
        d = cfg.width
        for i in range(cfg.blocks):
            p = f"{prefix}/b{i}"
            blk = {
                "wq": store.allocate(f"{p}/wq", (d, d), rng),
                "wk": store.allocate(f"{p}/wk", (d, d), rng),
                "wv": store.allocate(f"{p}/wv", (d, d), rng),
                "wo": store.allocate(f"{p}/wo", (d, d), rng),
            }
            if cfg.full_block:
                blk["ln1_g"] = store.allocate(f"{p}/ln1_g", (d,), rng)
                blk["ln1_b"] = store.allocate(f"{p}/ln1_b", (d,), rng)
                blk["ln2_g"] = store.allocate(f"{p}/ln2_g", (d,), rng)
                blk["ln2_b"] = store.allocate(f"{p}/ln2_b", (d,), rng)
                blk["wd"] = store.allocate(f"{p}/wd", (d, d), rng)
                blk["bd"] = store.allocate(f"{p}/bd", (d,), rng)
            self.blocks.append(blk)

    def __call__(self, x: Tensor, valid: np.ndarray | None = None) -> Tensor:
        """Run the stack on x of shape (B, L, d).

        valid: optional (B, L) boolean; False columns can never be attended.
        Rows are causal regardless: position k sees positions <= k only.
        """
        if x.data.ndim != 3 or x.data.shape[2] != self.cfg.width:
            raise ValueError(
                f"input of shape {x.data.shape} does not match model width {self.cfg.width}")
        B, L, d = x.data.shape
        if L == 0:
            raise ValueError("attention needs at least one position")
        H = self.cfg.heads
        dh = d // H
        causal = np.tril(np.ones((L, L), dtype=bool))
        if valid is None:
            blocked = ~causal[None, None, :, :]
        else:
            allowed = causal[None, :, :] & valid[:, None, :].astype(bool)
            blocked = ~allowed[:, None, :, :]

        for blk in self.blocks:
            if self.cfg.full_block:
                xin = ad.layer_norm(x, blk["ln1_g"], blk["ln1_b"])
            else:
                xin = x
            q = _heads(ad.matmul(xin, blk["wq"]), H, dh)
            k = _heads(ad.matmul(xin, blk["wk"]), H, dh)
            v = _heads(ad.matmul(xin, blk["wv"]), H, dh)
            scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
            scores = ad.masked_fill(scores, blocked, MASK_FILL)
            w = ad.softmax(scores)
            ctx = ad.matmul(w, v)                      # (B, H, L, dh)
            ctx = ad.transpose(ctx, (0, 2, 1, 3))      # (B, L, H, dh)
            ctx = ad.reshape(ctx, (B, L, d))
            y = ad.matmul(ctx, blk["wo"])
            x = ad.add(y, x)
            if self.cfg.full_block:
                z = ad.layer_norm(x, blk["ln2_g"], blk["ln2_b"])
                x = ad.add(ad.add_bias(ad.matmul(z, blk["wd"]), blk["bd"]), z)
        return x


def _heads(t: Tensor, H: int, dh: int) -> Tensor:
    B, L, d = t.data.shape
    return ad.transpose(ad.reshape(t, (B, L, H, dh)), (0, 2, 1, 3))
