"""Minimal dense float64 kernel: affine maps, activations, norm clipping, RNG.

All arrays are plain numpy float64. Vectors are 1-D; matrices 2-D row-major.
The layer code passes batched inputs (B, d) where a vector is expected and
gets the batched result back -- every function here broadcasts over a
leading batch axis.

Randomness: `seeded_rng(seed, *stream)` builds a PCG64 generator from
``SeedSequence(seed, spawn_key=stream)``.  Distinct stream tuples give
statistically independent, platform-stable streams, so each parameter
tensor can draw from its own reproducible stream.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError, ShapeError

__all__ = [
    "as_f64",
    "check_finite",
    "affine",
    "activation",
    "global_norm",
    "clip_global_norm",
    "seeded_rng",
]


def as_f64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def check_finite(name: str, a: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise NumericError(f"{name}: non-finite values present")
    return a


def affine(W, x, b) -> np.ndarray:
    """Return W @ x + b.  x may be (d,) or batched (B, d)."""
    W, x, b = as_f64(W), as_f64(x), as_f64(b)
    if W.ndim != 2 or b.ndim != 1 or x.ndim not in (1, 2):
        raise ShapeError(f"affine: bad ranks W{W.shape} x{x.shape} b{b.shape}")
    if x.shape[-1] != W.shape[1] or b.shape[0] != W.shape[0]:
        raise ShapeError(f"affine: W{W.shape} incompatible with x{x.shape}, b{b.shape}")
    return x @ W.T + b


def activation(kind: str, x, slope: float = 0.01):
    """Elementwise activation; returns (value, derivative) at x."""
    x = check_finite("activation input", as_f64(x))
    if kind == "sigmoid":
        v = 1.0 / (1.0 + np.exp(-x))
        return v, v * (1.0 - v)
    if kind == "tanh":
        v = np.tanh(x)
        return v, 1.0 - v * v
    if kind == "leaky_relu":
        if slope <= 0:
            raise ValueError(f"leaky_relu slope must be > 0, got {slope}")
        v = np.where(x >= 0, x, slope * x)
        d = np.where(x >= 0, 1.0, slope)
        return v, d
    raise ValueError(f"unknown activation kind: {kind!r}")


def global_norm(tensors) -> float:
    """l2 norm over the concatenation of all entries of all tensors."""
    total = 0.0
    for t in tensors:
        t = as_f64(t)
        total += float(np.sum(t * t))
    return float(np.sqrt(total))


def clip_global_norm(grads, max_norm: float):
    """Scale all grads so their joint l2 norm is at most max_norm.

    Returns (scaled grads, pre-clip norm).  Grads at or below the bound are
    returned unchanged (same objects).
    """
    if max_norm <= 0:
        raise ValueError(f"max_norm must be > 0, got {max_norm}")
    grads = list(grads)
    norm = global_norm(grads)
    if norm <= max_norm or norm == 0.0:
        return grads, norm
    scale = max_norm / norm
    return [as_f64(g) * scale for g in grads], norm


def seeded_rng(seed: int, *stream: int) -> np.random.Generator:
    """Deterministic PCG64 generator for (seed, stream...)."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(stream))
    return np.random.Generator(np.random.PCG64(ss))
