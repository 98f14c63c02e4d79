"""Parameter checkpoints: schema-versioned binary blobs of named arrays.

Checkpoints are pickled dicts of numpy arrays plus a metadata section
(configs, seed, loss trace, provenance). Writing is byte-deterministic for
identical contents, so rerunning a training command from its config snapshot
reproduces the checkpoint file exactly and hashes can serve as provenance.
"""

from __future__ import annotations

import hashlib
import pickle
from dataclasses import dataclass

import numpy as np
import torch

from .errors import StateError

SCHEMA_VERSION = 1
_PICKLE_PROTOCOL = 4


@dataclass
class Checkpoint:
    kind: str  # "stage1" | "stage2"
    params: dict[str, np.ndarray]
    meta: dict

    def sha256(self) -> str:
        return hashlib.sha256(checkpoint_bytes(self)).hexdigest()


def module_state_numpy(module: torch.nn.Module, prefix: str = "") -> dict[str, np.ndarray]:
    return {prefix + name: tensor.detach().cpu().numpy().copy() for name, tensor in module.state_dict().items()}


def load_module_state(module: torch.nn.Module, params: dict[str, np.ndarray], prefix: str = "") -> None:
    dtype = next(module.parameters()).dtype
    state = {
        name[len(prefix):]: torch.from_numpy(np.array(arr)).to(dtype)
        for name, arr in params.items()
        if name.startswith(prefix)
    }
    try:
        module.load_state_dict(state, strict=True)
    except RuntimeError as e:
        raise StateError(f"checkpoint parameters do not fit the model: {e}") from e


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    payload = {
        "schema_version": SCHEMA_VERSION,
        "kind": ckpt.kind,
        "params": {k: ckpt.params[k] for k in sorted(ckpt.params)},
        "meta": ckpt.meta,
    }
    return pickle.dumps(payload, protocol=_PICKLE_PROTOCOL)


def save_checkpoint(path: str, ckpt: Checkpoint) -> str:
    """Write the checkpoint; returns its sha256 hex digest."""
    data = checkpoint_bytes(ckpt)
    with open(path, "wb") as fh:
        fh.write(data)
    return hashlib.sha256(data).hexdigest()


def load_checkpoint(path: str, expect_kind: str | None = None) -> Checkpoint:
    try:
        with open(path, "rb") as fh:
            payload = pickle.load(fh)
    except FileNotFoundError:
        raise StateError(f"checkpoint not found: {path}") from None
    except Exception as e:
        raise StateError(f"unreadable checkpoint {path}: {e}") from e
    if not isinstance(payload, dict) or "schema_version" not in payload:
        raise StateError(f"not a checkpoint file: {path}")
    if payload["schema_version"] != SCHEMA_VERSION:
        raise StateError(f"checkpoint schema {payload['schema_version']} unsupported (expected {SCHEMA_VERSION})")
    ckpt = Checkpoint(kind=payload["kind"], params=payload["params"], meta=payload.get("meta", {}))
    if expect_kind is not None and ckpt.kind != expect_kind:
        raise StateError(f"expected a {expect_kind} checkpoint, found {ckpt.kind}: {path}")
    return ckpt


def file_sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def params_equal(a: dict[str, np.ndarray], b: dict[str, np.ndarray]) -> bool:
    return set(a) == set(b) and all(np.array_equal(a[k], b[k]) for k in a)
