"""Seeding, determinism and array validation helpers."""
from __future__ import annotations

import hashlib
import json
import os

import numpy as np
import torch

from .errors import ValidationError


def derive_seed(seed: int, *keys: int) -> int:
    """Derive an independent 63-bit seed from ``seed`` and integer ``keys``."""
    ss = np.random.SeedSequence([int(seed), *[int(k) for k in keys]])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def torch_generator(seed: int) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(int(seed))
    return g


def configure_determinism(flag: bool | None = None) -> bool:
    """Enable deterministic torch kernels when requested.

    ``flag=None`` reads the ``SPECDM_DETERMINISTIC`` environment variable.
    """
    if flag is None:
        flag = os.environ.get("SPECDM_DETERMINISTIC", "0") == "1"
    if flag:
        torch.use_deterministic_algorithms(True)
    return bool(flag)


def json_hash(obj) -> str:
    payload = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_json_default)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def check_finite(arr: np.ndarray, name: str = "array") -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains NaN or Inf")
    return arr


def check_images(X, name: str = "X", ndim: int = 4) -> np.ndarray:
    """Validate a channels-last image batch of shape (N, H, W, C)."""
    X = np.asarray(X)
    if X.ndim != ndim:
        raise ValidationError(f"{name} must have {ndim} dimensions, got shape {X.shape}")
    if not np.issubdtype(X.dtype, np.floating):
        X = X.astype(np.float32)
    return check_finite(X, name)


def check_masks(y, n_classes: int | None = None, name: str = "y") -> np.ndarray:
    """Validate an integer mask batch; values must lie in [0, n_classes)."""
    y = np.asarray(y)
    if not np.issubdtype(y.dtype, np.integer):
        if np.issubdtype(y.dtype, np.floating) and np.all(np.mod(y, 1) == 0):
            y = y.astype(np.int64)
        else:
            raise ValidationError(f"{name} must contain integer class ids")
    if y.size and y.min() < 0:
        raise ValidationError(f"{name} contains negative class id {int(y.min())}")
    if n_classes is not None and y.size and y.max() >= n_classes:
        raise ValidationError(f"{name} contains class id {int(y.max())} >= K={n_classes}")
    return y
