"""Gradient descent updates over a ParamStore."""

from __future__ import annotations

import numpy as np

from .params import ParamStore


class Sgd:
    def __init__(self, lr: float = 1e-3):
        self.lr = lr
        self.step_count = 0

    def step(self, store: ParamStore, grads: dict[str, np.ndarray]):
        self.step_count += 1
        for path, g in grads.items():
            _check_grad(path, g, store[path].data.shape)
            store[path].data -= self.lr * g


class Adam:
    """Adam with bias correction; defaults beta1=0.9, beta2=0.999, eps=1e-8."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, store: ParamStore, grads: dict[str, np.ndarray]):
        self.step_count += 1
        t = self.step_count
        for path, g in grads.items():
            _check_grad(path, g, store[path].data.shape)
            m = self._m.get(path)
            if m is None:
                m = np.zeros_like(g)
                self._v[path] = np.zeros_like(g)
            v = self._v[path]
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * g * g
            self._m[path] = m
            self._v[path] = v
            mhat = m / (1.0 - self.beta1 ** t)
            vhat = v / (1.0 - self.beta2 ** t)
            store[path].data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def _check_grad(path: str, g: np.ndarray, shape: tuple):
    if g.shape != shape:
        raise ValueError(
            f"gradient shape {g.shape} does not match parameter {path} of shape {shape}")
    if not np.all(np.isfinite(g)):
        raise FloatingPointError(f"non-finite gradient for parameter {path}")


def make_optimizer(name: str, lr: float):
    if name == "adam":
        return Adam(lr=lr)
    if name == "sgd":
        return Sgd(lr=lr)
    raise ValueError(f"unknown optimizer: {name!r} (expected 'adam' or 'sgd')")
