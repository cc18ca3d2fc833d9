"""Spectral angle and the reconstruction objectives of the two-stream codec.

Every function accepts numpy arrays or torch tensors. Numpy inputs are
evaluated in float64 and return numpy/python values; tensors keep autograd.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from ..errors import ValidationError



def _safe_norm(a: torch.Tensor, dim: int) -> torch.Tensor:
    """Euclidean norm whose gradient at the origin is 0 instead of NaN."""
    sq = (a ** 2).sum(dim)
    pos = sq > 0
    return torch.where(pos, torch.sqrt(torch.where(pos, sq, torch.ones_like(sq))), torch.zeros_like(sq))


def _as_tensor(a):
    if isinstance(a, torch.Tensor):
        return a, False
    arr = np.ascontiguousarray(a, dtype=np.float64)
    # dataset arrays are write-locked and torch refuses to wrap read-only buffers
    return torch.from_numpy(arr if arr.flags.writeable else arr.copy()), True


def _sad_tensor(x: torch.Tensor, x_hat: torch.Tensor, dim: int):
    nx = torch.linalg.vector_norm(x, dim=dim, keepdim=True)
    nh = torch.linalg.vector_norm(x_hat, dim=dim, keepdim=True)
    degenerate = (nx == 0) | (nh == 0)
    u = x / torch.where(nx == 0, torch.ones_like(nx), nx)
    v = x_hat / torch.where(nh == 0, torch.ones_like(nh), nh)
    # half-angle form: exact zero for parallel spectra, bounded gradient near it
    angle = 2.0 * torch.atan2(_safe_norm(u - v, dim), _safe_norm(u + v, dim))
    degenerate = degenerate.squeeze(dim)
    return torch.where(degenerate, torch.zeros_like(angle), angle), degenerate


def sad(x, x_hat, channel_dim: int = -1, return_degenerate: bool = False):
    """Per-pixel spectral angle (radians, in [0, pi]) between ``x`` and ``x_hat``.

    Pixels where either spectrum has zero norm get angle 0; their count is
    returned as a second value when ``return_degenerate`` is true.
    """
    if tuple(x.shape) != tuple(x_hat.shape):
        raise ValidationError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    if x.shape[channel_dim] < 2:
        raise ValidationError("spectral angle needs at least 2 bands")
    tx, was_np = _as_tensor(x)
    th, _ = _as_tensor(x_hat)
    angle, degenerate = _sad_tensor(tx, th, channel_dim)
    n_degenerate = int(degenerate.sum())
    if was_np:
        angle = angle.numpy()
    return (angle, n_degenerate) if return_degenerate else angle


def mean_sad(x, x_hat, channel_dim: int = -1):
    a = sad(x, x_hat, channel_dim)
    return a.mean() if isinstance(a, torch.Tensor) else float(np.mean(a))


def _check_no_nan(*arrays):
    for a in arrays:
        bad = torch.isnan(a).any() if isinstance(a, torch.Tensor) else np.isnan(np.asarray(a)).any()
        if bad:
            raise ValidationError("NaN in loss inputs")


def image_loss(x, x_hat, lambda_sad: float = 0.1, sad_enabled: bool = True, channel_dim: int = -1):
    """Mean absolute error plus ``lambda_sad`` times the mean spectral angle."""
    _check_no_nan(x, x_hat)
    tx, was_np = _as_tensor(x)
    th, _ = _as_tensor(x_hat)
    if tx.shape != th.shape:
        raise ValidationError(f"shape mismatch: {tuple(tx.shape)} vs {tuple(th.shape)}")
    loss = (tx - th).abs().mean()
    if sad_enabled:
        loss = loss + lambda_sad * _sad_tensor(tx, th, channel_dim)[0].mean()
    return float(loss) if was_np else loss


def mask_loss(y, logits, channel_dim: int = -1):
    """Mean per-pixel cross entropy of ``softmax(logits)`` against mask ``y``."""
    tl, was_np = _as_tensor(logits)
    ty = torch.as_tensor(np.asarray(y)) if not isinstance(y, torch.Tensor) else y
    ty = ty.long()
    if not torch.isfinite(tl).all():
        raise ValidationError("logits must be finite")
    K = tl.shape[channel_dim]
    if ty.numel() and (ty.min() < 0 or ty.max() >= K):
        raise ValidationError(f"mask values outside [0, {K})")
    tl = torch.movedim(tl, channel_dim, -1)
    if tuple(tl.shape[:-1]) != tuple(ty.shape):
        raise ValidationError(f"logits {tuple(tl.shape)} do not match mask {tuple(ty.shape)}")
    loss = F.cross_entropy(tl.reshape(-1, K), ty.reshape(-1))
    return float(loss) if was_np else loss


def kl_standard_normal(mean, logvar):
    """Mean-reduced KL(N(mean, exp(logvar)) || N(0, I))."""
    tm, was_np = _as_tensor(mean)
    tv, _ = _as_tensor(logvar)
    kl = -0.5 * torch.mean(1 + tv - tm ** 2 - torch.exp(tv))
    return float(kl) if was_np else kl


@dataclass(frozen=True)
class LossBreakdown:
    l1: float
    sad: float
    ce: float
    kl: float
    total: float

    def as_dict(self) -> dict:
        return {"l1": self.l1, "sad": self.sad, "ce": self.ce, "kl": self.kl, "total": self.total}


def total_loss(x, x_hat, y, logits, posteriors, lambda_sad: float = 0.1, kl_weight: float = 1e-6,
               sad_enabled: bool = True, channel_dim: int = -1):
    """Image loss + mask cross entropy + ``kl_weight`` times the summed posterior KLs.

    ``posteriors`` is an iterable of objects with ``mean`` and ``logvar``
    (one per stream). Returns ``(total, LossBreakdown)``.
    """
    _check_no_nan(x, x_hat)
    tx, was_np = _as_tensor(x)
    th, _ = _as_tensor(x_hat)
    l1 = (tx - th).abs().mean()
    angle = _sad_tensor(tx, th, channel_dim)[0].mean()
    ce = mask_loss(y, _as_tensor(logits)[0], channel_dim)
    kl = torch.zeros((), dtype=tx.dtype)
    for p in posteriors:
        kl = kl + kl_standard_normal(_as_tensor(p.mean)[0], _as_tensor(p.logvar)[0])
    total = l1 + ce + kl_weight * kl
    if sad_enabled:
        total = total + lambda_sad * angle
    parts = LossBreakdown(*(float(v.detach()) for v in (l1, angle, ce, kl, total)))
    return (float(total) if was_np else total), parts

