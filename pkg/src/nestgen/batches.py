"""Transposed batch layout for nested observations.

A batch of N nested records is stored as one tree whose leaves are arrays with
a leading batch axis, not as N python objects. List nodes carry a lengths
array plus a values subtree padded to the list's capacity; every array under
the values subtree gains one extra leading capacity axis. Flattening the first
two axes turns a (B, P, ...) subtree into a (B*P, ...) batch for the element
codec, and a validity mask marks which of those rows are real.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np


@dataclass
class LeafBatch:
    codes: np.ndarray  # int64 category/bin codes, or floats in sampled output


@dataclass
class StructBatch:
    fields: dict[str, Any]


@dataclass
class ListBatch:
    lengths: np.ndarray
    values: Any  # subtree; arrays carry an extra capacity axis after the batch axis


def n_rows(tree) -> int:
    if isinstance(tree, LeafBatch):
        return tree.codes.shape[0]
    if isinstance(tree, ListBatch):
        return tree.lengths.shape[0]
    return n_rows(next(iter(tree.fields.values())))


def take(tree, idx):
    """Select rows along the batch axis (fancy indexing, so idx may reorder
    or repeat)."""
    if isinstance(tree, LeafBatch):
        return LeafBatch(tree.codes[idx])
    if isinstance(tree, ListBatch):
        return ListBatch(tree.lengths[idx], take(tree.values, idx))
    return StructBatch({k: take(v, idx) for k, v in tree.fields.items()})


def take_positions(tree, idx):
    """Per-row gather along the capacity axis: out[b, i] = tree[b, idx[b, i]]."""
    rows = np.arange(idx.shape[0])[:, None]
    if isinstance(tree, LeafBatch):
        return LeafBatch(tree.codes[rows, idx])
    if isinstance(tree, ListBatch):
        return ListBatch(tree.lengths[rows, idx], take_positions(tree.values, idx))
    return StructBatch({k: take_positions(v, idx) for k, v in tree.fields.items()})


def merge_leading(tree):
    """Merge the first two axes of every array: (B, P, ...) -> (B*P, ...)."""
    if isinstance(tree, LeafBatch):
        c = tree.codes
        return LeafBatch(c.reshape((c.shape[0] * c.shape[1],) + c.shape[2:]))
    if isinstance(tree, ListBatch):
        ln = tree.lengths
        return ListBatch(ln.reshape(ln.shape[0] * ln.shape[1]), merge_leading(tree.values))
    return StructBatch({k: merge_leading(v) for k, v in tree.fields.items()})


def concat_trees(trees):
    """Concatenate batches along the batch axis. Shapes past the batch axis
    must agree (lists padded to the same capacity)."""
    first = trees[0]
    if isinstance(first, LeafBatch):
        return LeafBatch(np.concatenate([t.codes for t in trees], axis=0))
    if isinstance(first, ListBatch):
        return ListBatch(np.concatenate([t.lengths for t in trees], axis=0),
                         concat_trees([t.values for t in trees]))
    return StructBatch({k: concat_trees([t.fields[k] for t in trees]) for k in first.fields})


def stack_positions(trees, capacity: int):
    """Stack per-position batches into one list-values subtree.

    trees[i] holds position i for every row; the result gains a capacity axis
    of size `capacity` right after the batch axis, zero padded past len(trees).
    """
    if not trees:
        raise ValueError("need at least one position to stack")
    first = trees[0]
    if isinstance(first, LeafBatch):
        stacked = np.stack([t.codes for t in trees], axis=1)
        return LeafBatch(_pad_axis1(stacked, capacity))
    if isinstance(first, ListBatch):
        lengths = _pad_axis1(np.stack([t.lengths for t in trees], axis=1), capacity)
        return ListBatch(lengths, stack_positions([t.values for t in trees], capacity))
    return StructBatch({k: stack_positions([t.fields[k] for t in trees], capacity)
                        for k in first.fields})


def _pad_axis1(arr, capacity):
    if arr.shape[1] > capacity:
        raise ValueError(f"{arr.shape[1]} positions exceed capacity {capacity}")
    if arr.shape[1] == capacity:
        return arr
    pad = [(0, 0)] * arr.ndim
    pad[1] = (0, capacity - arr.shape[1])
    return np.pad(arr, pad)


def split_leading(tree, b: int, p: int):
    """Inverse of merge_leading: (b*p, ...) -> (b, p, ...) on every array."""
    if isinstance(tree, LeafBatch):
        c = tree.codes
        return LeafBatch(c.reshape((b, p) + c.shape[1:]))
    if isinstance(tree, ListBatch):
        return ListBatch(tree.lengths.reshape(b, p), split_leading(tree.values, b, p))
    return StructBatch({k: split_leading(v, b, p) for k, v in tree.fields.items()})
