"""Shared test helpers: finite-difference gradient checks, random schema and
batch generators, and a tiny loss wrapper used across the suite."""

import numpy as np
import pytest

from nestgen import autodiff as ad
from nestgen.autodiff import Tape, Tensor
from nestgen.batches import LeafBatch, ListBatch, StructBatch, split_leading
from nestgen.codecs.base import pass_losses, root_conditioning
from nestgen.codecs.composites import ListCodec, StructCodec
from nestgen.codecs.primitives import CategoricalCodec, NumericalCodec


def fd_gradient(f, tensor, step=1e-5, coords=None):
    """Central finite differences of the scalar f() w.r.t. tensor.data.
    coords limits the check to a subset of flat indices (None = all)."""
    flat = tensor.data.ravel()
    idx = range(flat.size) if coords is None else coords
    grad = np.zeros(flat.size)
    for i in idx:
        orig = flat[i]
        flat[i] = orig + step
        hi = f()
        flat[i] = orig - step
        lo = f()
        flat[i] = orig
        grad[i] = (hi - lo) / (2.0 * step)
    return grad.reshape(tensor.data.shape)


def check_op_gradients(build, tensors, rng, rtol=1e-4, atol=1e-8, step=1e-5):
    """build() -> output Tensor computed from `tensors`. Checks the gradient
    of a fixed random weighted sum of the output against finite differences
    for every input tensor, every coordinate."""
    w = rng.standard_normal(build().data.shape)

    def scalar():
        return float((build().data * w).sum())

    for t in tensors:
        t.grad = None
    with Tape() as tape:
        out = build()
        loss = ad.sum_all(ad.mul_const(out, w))
    tape.backward(loss)
    for t in tensors:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = fd_gradient(scalar, t, step=step)
        np.testing.assert_allclose(analytic, numeric, rtol=rtol, atol=atol)


def forward_loss(codec, store, batch, perms=None, passes=1):
    """Scalar training loss outside any tape (for finite differencing)."""
    per_pass = pass_losses(codec, store, batch, rng=None, passes=passes,
                           perms=perms)
    total = per_pass[0]
    for extra in per_pass[1:]:
        total = ad.add(total, extra)
    return float(total.data.mean()) / passes


def loss_gradients(codec, store, batch, perms=None, passes=1):
    """(loss, grads-by-path) with the mean-over-batch convention."""
    store.zero_grads()
    with Tape() as tape:
        per_pass = pass_losses(codec, store, batch, rng=None, passes=passes,
                               perms=perms)
        total = per_pass[0]
        for extra in per_pass[1:]:
            total = ad.add(total, extra)
        loss = ad.scale(ad.mean_all(total), 1.0 / passes)
    tape.backward(loss)
    return float(loss.data), store.gradients()


def random_batch(codec, n, rng, garbage_padding=True):
    """Random observations shaped for the codec. Padded list slots hold
    random garbage by default, which stresses the masking invariants."""
    if isinstance(codec, NumericalCodec):
        return LeafBatch(rng.integers(0, codec.cat.cardinality, size=n))
    if isinstance(codec, CategoricalCodec):
        return LeafBatch(rng.integers(0, codec.cardinality, size=n))
    if isinstance(codec, StructCodec):
        return StructBatch({name: random_batch(c, n, rng, garbage_padding)
                            for name, c in zip(codec.names, codec.children())})
    if isinstance(codec, ListCodec):
        lengths = rng.integers(0, codec.max_len + 1, size=n)
        flat = random_batch(codec.value_codec, n * codec.max_len, rng,
                            garbage_padding)
        if not garbage_padding:
            mask = (np.arange(codec.max_len)[None, :]
                    < lengths[:, None]).ravel()
            flat = _zero_where(flat, ~mask, codec.value_codec)
        return ListBatch(lengths.astype(np.int64),
                         split_leading(flat, n, codec.max_len))
    raise TypeError(type(codec).__name__)


def _zero_where(tree, mask, codec):
    if isinstance(tree, LeafBatch):
        codes = tree.codes.copy()
        codes[mask] = 0
        return LeafBatch(codes)
    if isinstance(tree, StructBatch):
        return StructBatch({k: _zero_where(v, mask, c) for (k, v), c in
                            zip(tree.fields.items(), codec.children())})
    if isinstance(tree, ListBatch):
        lengths = tree.lengths.copy()
        lengths[mask] = 0
        return ListBatch(lengths, tree.values)
    raise TypeError(type(tree).__name__)


def random_schema_doc(rng, max_depth=2, shuffle_ok=True):
    """Small random schema document: struct/list nesting with categorical
    and numeric leaves, for property suites."""
    counter = [0]

    def fresh(prefix):
        counter[0] += 1
        return f"{prefix}{counter[0]}"

    def leaf():
        if rng.random() < 0.5:
            return {"type": "enum", "name": fresh("c"),
                    "cardinality": int(rng.integers(2, 5))}
        return {"type": "long", "name": fresh("n"),
                "bins": int(rng.integers(2, 5))}

    def node(depth):
        r = rng.random()
        if depth >= max_depth or r < 0.35:
            return leaf()
        if r < 0.7:
            n_fields = int(rng.integers(1, 4))
            return {"type": "record", "name": fresh("s"),
                    "fields": [{"name": fresh("f"), "type": node(depth + 1)}
                               for _ in range(n_fields)],
                    "shuffled": bool(shuffle_ok and rng.random() < 0.4)}
        return {"type": "array", "name": fresh("l"),
                "max_len": int(rng.integers(1, 4)),
                "items": node(depth + 1),
                "shuffled": bool(shuffle_ok and rng.random() < 0.4)}

    # root must be a record
    n_fields = int(rng.integers(1, 4))
    return {"type": "record", "name": "root",
            "fields": [{"name": fresh("f"), "type": node(1)}
                       for _ in range(n_fields)],
            "shuffled": bool(shuffle_ok and rng.random() < 0.4)}


def attach_tables(codec, rng):
    """Give every numerical codec in the tree a quantile table so sampling
    works (tests that never ingest real data need this)."""
    from nestgen.codecs.primitives import QuantileTable
    for node in codec.walk():
        if isinstance(node, NumericalCodec) and node.table is None:
            vals = rng.standard_normal(200)
            node.table = QuantileTable.fit(vals, node.cat.cardinality)
    return codec


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
