"""The codec contract: encoder, decoder, sampler, loss for one schema node.

A codec turns an observation into a fixed-width embedding plus a context, and
turns a conditioning vector plus that context into a distribution
representation whose negative log likelihood against the observation is the
training loss. Sampling inverts the decoder autoregressively. Composite
codecs own child codecs and wire them together with causal attention; the
root codec is decoded from a fixed initial conditioning vector, and the
embedding it produces is simply unused there.
"""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tape, Tensor
from ..batches import concat_trees, n_rows, take
from ..params import ParamStore

C0_PATH = "~c0"


class TrivialCtx:
    """Context of a codec that needs nothing from its encoder at decode time."""

    def take(self, idx):
        return self


TRIVIAL = TrivialCtx()


class Codec:
    path: str
    width: int

    def encode(self, x, rng=None, perms=None):
        """Return (embedding (B, d) Tensor, context). rng drives shuffle
        permutations; rng=None means identity order everywhere. perms maps
        codec path to a forced permutation (test hook)."""
        raise NotImplementedError

    def decode(self, cond: Tensor, ctx):
        raise NotImplementedError

    def loss_terms(self, rep, x) -> Tensor:
        """Per-example negative log likelihood, shape (B,)."""
        raise NotImplementedError

    def sample(self, cond, rng):
        """Draw observations given conditioning rows; returns (batch tree,
        embedding of the sampled values)."""
        raise NotImplementedError

    def reshuffle(self, ctx, rng, perms=None):
        """Redraw shuffle permutations reusing cached child encodings.

        Returns (embedding or None, context, changed). Plain codecs pass
        through untouched; see composite codecs for the real work.
        """
        return None, ctx, False

    def children(self):
        return []

    def walk(self):
        yield self
        for c in self.children():
            yield from c.walk()

    def has_shuffle(self) -> bool:
        return any(getattr(c, "shuffled", False) for c in self.walk())

    def zero_batch(self, n: int):
        """An all-zeros observation batch of this codec's input shape."""
        raise NotImplementedError

    def n_outcomes(self, cap: int = 10**9) -> int:
        """Number of distinct observations, saturating at cap."""
        raise NotImplementedError


def root_conditioning(store: ParamStore, n: int, width: int) -> Tensor:
    """The fixed initial conditioning rows for a batch of n examples.

    Compiled models carry either a trainable ~c0 vector (compile-time flag)
    or a fixed nonzero constant; a bare store falls back to zeros.
    """
    if C0_PATH in store:
        return ad.broadcast_rows(store[C0_PATH], n)
    c0 = store.constant(C0_PATH)
    if c0 is not None:
        return Tensor(np.tile(c0, (n, 1)))
    return Tensor(np.zeros((n, width)))


def pass_losses(codec: Codec, store: ParamStore, batch, rng=None, passes: int = 1,
                perms=None) -> list[Tensor]:
    """Per-example loss vector for each decoding pass.

    The observation is encoded once; later passes redraw shuffle permutations
    on the cached child encodings. With no shuffled node anywhere, passes > 1
    is a configuration error rather than silent duplicate work.
    """
    if passes < 1:
        raise ValueError("passes must be >= 1")
    if passes > 1 and not codec.has_shuffle():
        raise ValueError("multiple decoding passes need at least one shuffled node")
    n = n_rows(batch)
    emb, ctx = codec.encode(batch, rng=rng, perms=perms)
    out = []
    for p in range(passes):
        if p > 0:
            _, ctx, _ = codec.reshuffle(ctx, rng, perms=perms)
        rep = codec.decode(root_conditioning(store, n, codec.width), ctx)
        out.append(codec.loss_terms(rep, batch))
    return out


def train_step(codec: Codec, store: ParamStore, batch, rng=None, passes: int = 1):
    """One forward/backward: returns (mean loss float, gradients by path)."""
    store.zero_grads()
    with Tape() as tape:
        per_pass = pass_losses(codec, store, batch, rng=rng, passes=passes)
        total = per_pass[0]
        for extra in per_pass[1:]:
            total = ad.add(total, extra)
        loss = ad.scale(ad.mean_all(total), 1.0 / passes)
    tape.backward(loss)
    if not np.isfinite(loss.data):
        raise FloatingPointError("non-finite training loss")
    return float(loss.data), store.gradients()


def per_example_gradients(codec: Codec, store: ParamStore, batch, rng=None,
                          passes: int = 1):
    """Loss and flat gradient vector for each example separately (DP path)."""
    n = n_rows(batch)
    order = store.paths()
    losses = np.empty(n)
    grads = []
    for i in range(n):
        one = take(batch, np.array([i]))
        loss, g = train_step(codec, store, one, rng=rng, passes=passes)
        losses[i] = loss
        grads.append(np.concatenate([g[p].ravel() for p in order]))
    return losses, np.stack(grads)


def unflatten_gradients(store: ParamStore, flat: np.ndarray) -> dict[str, np.ndarray]:
    out = {}
    pos = 0
    for path, t in store.items():
        size = t.data.size
        out[path] = flat[pos:pos + size].reshape(t.data.shape)
        pos += size
    return out


def sample_rows(codec: Codec, store: ParamStore, count: int, rng,
                chunk: int = 32768):
    """Draw `count` observations from the root codec in bounded chunks."""
    parts = []
    left = count
    while left > 0:
        n = min(left, chunk)
        cond = root_conditioning(store, n, codec.width)
        tree, _ = codec.sample(cond, rng)
        parts.append(tree)
        left -= n
    return parts[0] if len(parts) == 1 else concat_trees(parts)
