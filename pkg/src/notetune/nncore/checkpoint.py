"""Versioned checkpoint container: one .npz holding config JSON + named tensors."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .tensor import Tensor

FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path, params: dict[str, Tensor], config: dict, extra: dict | None = None):
    """Write parameters plus a JSON config blob; keys are sorted for stable bytes."""
    payload = {f"param/{k}": p.data for k, p in sorted(params.items())}
    meta = {"format_version": FORMAT_VERSION, "config": config, "extra": extra or {}}
    payload["__meta__"] = np.frombuffer(
        json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_checkpoint(path, params: dict[str, Tensor] | None = None) -> dict:
    """Load a checkpoint; if `params` is given, fill it in-place after
    validating the shape manifest."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    with np.load(path) as zf:
        meta = json.loads(bytes(zf["__meta__"]).decode("utf-8"))
        if meta.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version in {path}")
        stored = {k[len("param/") :]: zf[k] for k in zf.files if k.startswith("param/")}
    if params is not None:
        missing = sorted(set(params) - set(stored))
        surplus = sorted(set(stored) - set(params))
        if missing or surplus:
            raise CheckpointError(
                f"parameter manifest mismatch in {path}: missing={missing} surplus={surplus}"
            )
        for k, p in params.items():
            if stored[k].shape != p.data.shape:
                raise CheckpointError(
                    f"shape mismatch for {k!r} in {path}: "
                    f"stored {stored[k].shape}, expected {p.data.shape}"
                )
            p.data = stored[k].astype(np.float64)
    meta["params"] = stored
    return meta
