"""Composite codecs: structs over named fields and variable-length lists.

Child observations are encoded bottom-up into fixed-width embeddings; a
causal attention stack turns the embedding sequence into running digests, and
a second stack turns (conditioning, digests) into one conditioning vector per
child for decoding. Optionally the order children enter the digest sequence
is shuffled per pass, which trains the model to be usable under any
autoregressive factorisation of the node.

Indexing convention used throughout (0-based): for a struct with n fields the
encoder reads embeddings at positions 0..n-1 and the decoder reads
(conditioning, digest 0, ..., digest n-2), so decoder output slot k
conditions field k. For a list, encoder position 0 is the length embedding
and position 1+i is element i; decoder output slot 0 conditions the length
and slot 1+i conditions element i. Padded positions are masked out of
attention and contribute exactly zero loss and gradient.
"""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..batches import (LeafBatch, ListBatch, StructBatch, merge_leading,
                       split_leading, stack_positions, take_positions)
from ..transformer import AttentionStack, TransformerConfig
from .base import Codec, TRIVIAL
from .primitives import CategoricalCodec, LogitsRep


class StructCtx:
    __slots__ = ("digests", "embs", "child_ctxs", "perm")

    def __init__(self, digests, embs, child_ctxs, perm):
        self.digests = digests
        self.embs = embs
        self.child_ctxs = child_ctxs
        self.perm = perm

    def take(self, idx):
        return StructCtx(ad.take_rows(self.digests, idx),
                         [ad.take_rows(e, idx) for e in self.embs],
                         [c.take(idx) for c in self.child_ctxs],
                         self.perm)


class StructRep:
    __slots__ = ("fields", "perm")

    def __init__(self, fields, perm):
        self.fields = fields
        self.perm = perm


class ListCtx:
    __slots__ = ("digests", "len_emb", "val_embs", "val_ctx", "slot_embs",
                 "slot_ctx", "lengths", "mask", "perm")

    def __init__(self, digests, len_emb, val_embs, val_ctx, slot_embs, slot_ctx,
                 lengths, mask, perm):
        self.digests = digests
        self.len_emb = len_emb
        self.val_embs = val_embs
        self.val_ctx = val_ctx
        self.slot_embs = slot_embs
        self.slot_ctx = slot_ctx
        self.lengths = lengths
        self.mask = mask
        self.perm = perm

    def take(self, idx):
        idx = np.asarray(idx)
        P = self.mask.shape[1]
        flat = (idx[:, None] * P + np.arange(P)).ravel()
        vctx = self.val_ctx.take(flat)
        if self.perm is None:
            slot_embs = ad.take_rows(self.val_embs, idx)
            slot_ctx = vctx
            new_perm = None
        else:
            slot_embs = ad.take_rows(self.slot_embs, idx)
            slot_ctx = self.slot_ctx.take(flat)
            new_perm = self.perm[idx]
        return ListCtx(ad.take_rows(self.digests, idx),
                       ad.take_rows(self.len_emb, idx),
                       ad.take_rows(self.val_embs, idx),
                       vctx, slot_embs, slot_ctx,
                       self.lengths[idx], self.mask[idx], new_perm)


class ListRep:
    __slots__ = ("length", "values", "lengths", "mask", "perm")

    def __init__(self, length, values, lengths, mask, perm):
        self.length = length
        self.values = values
        self.lengths = lengths
        self.mask = mask
        self.perm = perm


class StructCodec(Codec):
    def __init__(self, path: str, names, children, tcfg: TransformerConfig,
                 store, rng, shuffled: bool = False):
        if len(names) != len(children) or not children:
            raise ValueError(f"{path}: struct needs at least one named child")
        self.path = path
        self.names = list(names)
        self._children = list(children)
        self.shuffled = shuffled
        self.width = tcfg.width
        self.enc = AttentionStack(tcfg, store, f"{path}/~enc", rng)
        self.dec = AttentionStack(tcfg, store, f"{path}/~dec", rng)

    def children(self):
        return self._children

    def _draw_perm(self, rng, perms):
        if perms and self.path in perms:
            return tuple(int(i) for i in perms[self.path])
        if self.shuffled and rng is not None:
            return tuple(int(i) for i in rng.permutation(len(self._children)))
        return tuple(range(len(self._children)))

    def _digest(self, embs, ctxs, perm):
        seq = ad.stack_columns([embs[k] for k in perm])
        digests = self.enc(seq)
        n = len(self._children)
        B = digests.data.shape[0]
        emb = ad.reshape(ad.narrow(digests, 1, n - 1, 1), (B, self.width))
        return emb, StructCtx(digests, embs, ctxs, perm)

    def encode(self, x: StructBatch, rng=None, perms=None):
        missing = [n for n in self.names if n not in x.fields]
        if missing:
            raise ValueError(f"{self.path}: batch is missing fields {missing}")
        embs, ctxs = [], []
        for name, child in zip(self.names, self._children):
            e, c = child.encode(x.fields[name], rng=rng, perms=perms)
            embs.append(e)
            ctxs.append(c)
        return self._digest(embs, ctxs, self._draw_perm(rng, perms))

    def decode(self, cond: Tensor, ctx: StructCtx) -> StructRep:
        n = len(self._children)
        B = cond.data.shape[0]
        c_col = ad.reshape(cond, (B, 1, self.width))
        if n > 1:
            dec_in = ad.concat([c_col, ad.narrow(ctx.digests, 1, 0, n - 1)], axis=1)
        else:
            dec_in = c_col
        h = self.dec(dec_in)
        reps = [None] * n
        for slot in range(n):
            k = ctx.perm[slot]
            cond_k = ad.reshape(ad.narrow(h, 1, slot, 1), (B, self.width))
            reps[k] = self._children[k].decode(cond_k, ctx.child_ctxs[k])
        return StructRep(reps, ctx.perm)

    def loss_terms(self, rep: StructRep, x: StructBatch, omega=None) -> Tensor:
        # summed in decoder slot order so a shuffled pass is bitwise equal to
        # a plain codec whose children were reordered the same way
        total = None
        for slot in range(len(self._children)):
            k = rep.perm[slot]
            term = self._children[k].loss_terms(rep.fields[k], x.fields[self.names[k]],
                                                omega)
            total = term if total is None else ad.add(total, term)
        return total

    def reshuffle(self, ctx: StructCtx, rng, perms=None):
        embs = list(ctx.embs)
        ctxs = []
        changed = False
        for k, child in enumerate(self._children):
            e, c, ch = child.reshuffle(ctx.child_ctxs[k], rng, perms=perms)
            if ch:
                embs[k] = e
                changed = True
            ctxs.append(c)
        forced = perms is not None and self.path in perms
        if not (changed or self.shuffled or forced):
            return None, ctx, False
        emb, ctx2 = self._digest(embs, ctxs, self._draw_perm(rng, perms))
        return emb, ctx2, True

    def sample(self, cond, rng):
        cond = cond if isinstance(cond, Tensor) else Tensor(cond)
        B = cond.data.shape[0]
        c_col = ad.reshape(cond, (B, 1, self.width))
        embs, out = [], {}
        for k, (name, child) in enumerate(zip(self.names, self._children)):
            if k == 0:
                dec_in = c_col
            else:
                dec_in = ad.concat([c_col, self.enc(ad.stack_columns(embs))], axis=1)
            h = self.dec(dec_in)
            cond_k = ad.reshape(ad.narrow(h, 1, k, 1), (B, self.width))
            xk, ek = child.sample(cond_k, rng)
            out[name] = xk
            embs.append(ek)
        digests = self.enc(ad.stack_columns(embs))
        emb = ad.reshape(ad.narrow(digests, 1, len(embs) - 1, 1), (B, self.width))
        return StructBatch(out), emb

    def zero_batch(self, n):
        return StructBatch({name: c.zero_batch(n)
                            for name, c in zip(self.names, self._children)})

    def n_outcomes(self, cap=10**9):
        total = 1
        for c in self._children:
            total = min(total * c.n_outcomes(cap), cap)
        return total


class ListCodec(Codec):
    """Variable-length list: a categorical codec over lengths 0..max_len plus
    one value codec shared by all positions, run on the batch flattened to
    (B*max_len) rows."""

    def __init__(self, path: str, value_codec: Codec, max_len: int,
                 tcfg: TransformerConfig, store, rng, shuffled: bool = False,
                 positional: bool = False):
        if max_len < 1:
            raise ValueError(f"{path}: max_len must be >= 1")
        self.path = path
        self.value_codec = value_codec
        self.max_len = max_len
        self.shuffled = shuffled
        self.width = tcfg.width
        self.len_codec = CategoricalCodec(f"{path}/~len", max_len + 1,
                                          tcfg.width, store, rng)
        self.enc = AttentionStack(tcfg, store, f"{path}/~enc", rng)
        self.dec = AttentionStack(tcfg, store, f"{path}/~dec", rng)
        # learned position table for the encoder sequence, off by default:
        # element order otherwise reaches the digests only through causality
        self.pos = (store.allocate(f"{path}/~pos", (max_len + 1, tcfg.width), rng)
                    if positional else None)

    def children(self):
        return [self.len_codec, self.value_codec]

    def _draw_perm(self, rng, perms, mask):
        """Per-row permutation of the valid prefix; padded slots stay put.
        Returns None when no shuffling applies."""
        if perms and self.path in perms:
            return np.asarray(perms[self.path], dtype=np.int64)
        if self.shuffled and rng is not None:
            B, P = mask.shape
            keys = np.where(mask, rng.random((B, P)), 1.0 + np.arange(P)[None, :])
            return np.argsort(keys, axis=1).astype(np.int64)
        return None

    def _digest(self, e_len, val_embs, val_ctx, lengths, mask, perm):
        B = lengths.shape[0]
        P = self.max_len
        if perm is not None:
            slot_embs = ad.gather_positions(val_embs, perm)
            flat = (np.arange(B)[:, None] * P + perm).ravel()
            slot_ctx = val_ctx.take(flat)
        else:
            slot_embs, slot_ctx = val_embs, val_ctx
        seq = ad.concat([ad.reshape(e_len, (B, 1, self.width)), slot_embs], axis=1)
        if self.pos is not None:
            seq = ad.add_seq(seq, self.pos)
        valid = np.concatenate([np.ones((B, 1), dtype=bool), mask], axis=1)
        digests = self.enc(seq, valid=valid)
        emb = ad.reshape(ad.gather_positions(digests, lengths[:, None]), (B, self.width))
        ctx = ListCtx(digests, e_len, val_embs, val_ctx, slot_embs, slot_ctx,
                      lengths, mask, perm)
        return emb, ctx

    def encode(self, x: ListBatch, rng=None, perms=None):
        lengths = np.asarray(x.lengths, dtype=np.int64)
        P = self.max_len
        if lengths.min(initial=0) < 0 or lengths.max(initial=0) > P:
            raise ValueError(f"{self.path}: length out of range 0..{P}")
        mask = np.arange(P)[None, :] < lengths[:, None]
        e_len, _ = self.len_codec.encode(LeafBatch(lengths))
        ev_flat, val_ctx = self.value_codec.encode(merge_leading(x.values),
                                                   rng=rng, perms=perms)
        B = lengths.shape[0]
        val_embs = ad.reshape(ev_flat, (B, P, self.width))
        perm = self._draw_perm(rng, perms, mask)
        return self._digest(e_len, val_embs, val_ctx, lengths, mask, perm)

    def decode(self, cond: Tensor, ctx: ListCtx) -> ListRep:
        B = cond.data.shape[0]
        P = self.max_len
        c_col = ad.reshape(cond, (B, 1, self.width))
        dec_in = ad.concat([c_col, ad.narrow(ctx.digests, 1, 0, P)], axis=1)
        pos = np.arange(P + 1)[None, :]
        valid = (pos <= ctx.lengths[:, None]) | (pos <= 1)
        h = self.dec(dec_in, valid=valid)
        d_len = self.len_codec.decode(ad.reshape(ad.narrow(h, 1, 0, 1), (B, self.width)),
                                      TRIVIAL)
        val_cond = ad.reshape(ad.narrow(h, 1, 1, P), (B * P, self.width))
        d_val = self.value_codec.decode(val_cond, ctx.slot_ctx)
        return ListRep(d_len, d_val, ctx.lengths, ctx.mask, ctx.perm)

    def loss_terms(self, rep: ListRep, x: ListBatch, omega=None) -> Tensor:
        # length loss plus the sum over valid element positions, unnormalised:
        # a longer list is a larger observation and weighs accordingly
        lengths = np.asarray(x.lengths, dtype=np.int64)
        B, P = rep.mask.shape
        len_loss = self.len_codec.loss_terms(rep.length, LeafBatch(lengths), omega)
        targets = x.values if rep.perm is None else take_positions(x.values, rep.perm)
        v = self.value_codec.loss_terms(rep.values, merge_leading(targets), omega)
        v = ad.mul_const(ad.reshape(v, (B, P)), rep.mask.astype(np.float64))
        return ad.add(len_loss, ad.sum_axis(v, 1))

    def reshuffle(self, ctx: ListCtx, rng, perms=None):
        B, P = ctx.mask.shape
        e2, vctx2, changed = self.value_codec.reshuffle(ctx.val_ctx, rng, perms=perms)
        val_embs = ad.reshape(e2, (B, P, self.width)) if changed else ctx.val_embs
        vctx = vctx2 if changed else ctx.val_ctx
        forced = perms is not None and self.path in perms
        if not (changed or self.shuffled or forced):
            return None, ctx, False
        perm = self._draw_perm(rng, perms, ctx.mask)
        return (*self._digest(ctx.len_emb, val_embs, vctx, ctx.lengths, ctx.mask, perm),
                True)

    def sample(self, cond, rng):
        cond = cond if isinstance(cond, Tensor) else Tensor(cond)
        B = cond.data.shape[0]
        P = self.max_len
        c_col = ad.reshape(cond, (B, 1, self.width))
        h0 = self.dec(c_col)
        m_batch, e_len = self.len_codec.sample(
            ad.reshape(ad.narrow(h0, 1, 0, 1), (B, self.width)), rng)
        m = m_batch.codes
        steps = int(m.max(initial=0))
        embs, pieces = [e_len], []
        for i in range(steps):
            dec_in = ad.concat([c_col, self._enc_prefix(embs)], axis=1)
            h = self.dec(dec_in)
            cond_i = ad.reshape(ad.narrow(h, 1, i + 1, 1), (B, self.width))
            xi, ei = self.value_codec.sample(cond_i, rng)
            pieces.append(xi)
            embs.append(ei)
        if pieces:
            values = stack_positions(pieces, P)
        else:
            values = split_leading(self.value_codec.zero_batch(B * P), B, P)
        digests = self._enc_prefix(embs)
        emb = ad.reshape(ad.gather_positions(digests, m[:, None]), (B, self.width))
        return ListBatch(m, values), emb

    def _enc_prefix(self, embs):
        seq = ad.stack_columns(embs)
        if self.pos is not None:
            seq = ad.add_seq(seq, ad.narrow(self.pos, 0, 0, len(embs)))
        return self.enc(seq)

    def zero_batch(self, n):
        return ListBatch(np.zeros(n, dtype=np.int64),
                         split_leading(self.value_codec.zero_batch(n * self.max_len),
                                       n, self.max_len))

    def n_outcomes(self, cap=10**9):
        v = self.value_codec.n_outcomes(cap)
        total = 0
        term = 1
        for _ in range(self.max_len + 1):
            total = min(total + term, cap)
            if total >= cap:
                return cap
            term = min(term * v, cap)
        return total
