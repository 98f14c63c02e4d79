"""Small shared helpers for deterministic training."""

from __future__ import annotations

import numpy as np
import torch


def derive_seed(*parts: int) -> int:
    """Stable child seed from an integer path (run seed, stream tag, epoch, ...)."""
    seq = np.random.SeedSequence([int(p) & 0xFFFFFFFFFFFF for p in parts])
    return int(seq.generate_state(1)[0])


def single_thread() -> None:
    """Pin intra-op parallelism to one thread so reruns are bit-identical."""
    torch.set_num_threads(1)


def to_tensor(a: np.ndarray, dtype: torch.dtype) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(a)).to(dtype)
