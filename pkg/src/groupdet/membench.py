"""Transient-memory comparison of relation block construction strategies.

Two numerically identical ways to build the (T, N, N, M) attention block:
the projection strategy used by the model (project embeddings once, one
contraction) versus the reference edge-feature strategy that materializes a
concatenated feature per subject pair before projecting both halves. Peak
allocation is measured with tracemalloc over float64 numpy arrays, which
tracks the full transient footprint of each strategy.
"""

from __future__ import annotations

import math
import tracemalloc
from dataclasses import dataclass

import numpy as np


def _random_inputs(t, n, m, proj_len, embed_dim, seed):
    rng = np.random.default_rng(seed)
    e = rng.standard_normal((t, n, embed_dim))
    w = rng.standard_normal((m, proj_len, embed_dim)) / math.sqrt(embed_dim)
    b = rng.standard_normal((m, proj_len)) * 0.1
    return e, w, b


def build_block_projected(e: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Stacked attention as shipped: (T, N, M, L) projections, then one contraction."""
    theta = np.einsum("mlc,tnc->tnml", w, e) + b
    return np.einsum("timl,tjml->tijm", theta, theta) / math.sqrt(w.shape[1])


def build_block_pair_concat(e: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Reference edge features: concatenate (e_i, e_j) per pair, then project each half."""
    t, n, c = e.shape
    m, proj_len, _ = w.shape
    pair = np.concatenate(
        [np.broadcast_to(e[:, :, None, :], (t, n, n, c)), np.broadcast_to(e[:, None, :, :], (t, n, n, c))],
        axis=-1,
    )  # (T, N, N, 2C) materialized edge features
    u = np.empty((t, n, n, m))
    for head in range(m):
        theta_i = pair[..., :c] @ w[head].T + b[head]
        theta_j = pair[..., c:] @ w[head].T + b[head]
        u[..., head] = (theta_i * theta_j).sum(axis=-1) / math.sqrt(proj_len)
    return u


def measure_peak_bytes(fn, *args):
    tracemalloc.start()
    tracemalloc.reset_peak()
    result = fn(*args)
    _, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    return peak, result


@dataclass(frozen=True)
class MemoryComparison:
    projected_peak: int
    concat_peak: int
    ratio: float
    max_abs_diff: float


def compare_strategies(t=10, n=50, m=8, proj_len=32, embed_dim=64, seed=0) -> MemoryComparison:
    e, w, b = _random_inputs(t, n, m, proj_len, embed_dim, seed)
    concat_peak, u_ref = measure_peak_bytes(build_block_pair_concat, e, w, b)
    projected_peak, u = measure_peak_bytes(build_block_projected, e, w, b)
    return MemoryComparison(
        projected_peak=projected_peak,
        concat_peak=concat_peak,
        ratio=projected_peak / concat_peak,
        max_abs_diff=float(np.abs(u - u_ref).max()),
    )
