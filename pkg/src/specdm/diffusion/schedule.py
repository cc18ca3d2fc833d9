"""Linear noise schedule and the closed-form forward process.

Timesteps are 1-based at the API (``t`` in ``[1, T]``); arrays are indexed
with ``t - 1``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..errors import ValidationError

DEFAULT_T = 1000
DEFAULT_BETA_START = 0.0015
DEFAULT_BETA_END = 0.0155


@dataclass(frozen=True)
class NoiseSchedule:
    """Float64 schedule arrays, each of length ``T``."""

    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    alpha_bar_prev: np.ndarray
    beta_tilde: np.ndarray
    beta_start: float
    beta_end: float

    @property
    def T(self) -> int:
        return len(self.beta)

    def check_t(self, t) -> None:
        ts = np.asarray(t.cpu().numpy() if isinstance(t, torch.Tensor) else t)
        if ts.size and (ts.min() < 1 or ts.max() > self.T):
            raise ValidationError(f"timestep must lie in [1, {self.T}], got {ts.min()}..{ts.max()}")

    def params(self) -> dict:
        return {"T": self.T, "beta_start": self.beta_start, "beta_end": self.beta_end, "kind": "linear"}


def make_schedule(T: int = DEFAULT_T, beta_start: float = DEFAULT_BETA_START,
                  beta_end: float = DEFAULT_BETA_END) -> NoiseSchedule:
    if T < 1:
        raise ValidationError("T must be >= 1")
    if not 0 < beta_start <= beta_end < 1:
        raise ValidationError(f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    if T == 1:
        beta = np.array([beta_start], dtype=np.float64)
    else:
        beta = beta_start + (beta_end - beta_start) * np.arange(T, dtype=np.float64) / (T - 1)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    alpha_bar_prev = np.concatenate([[1.0], alpha_bar[:-1]])
    beta_tilde = beta * (1.0 - alpha_bar_prev) / (1.0 - alpha_bar)
    for a in (beta, alpha, alpha_bar, alpha_bar_prev, beta_tilde):
        a.setflags(write=False)
    return NoiseSchedule(beta, alpha, alpha_bar, alpha_bar_prev, beta_tilde, float(beta_start), float(beta_end))


def _coef(arr: np.ndarray, t, like):
    """Gather ``arr[t - 1]`` broadcastable against ``like`` (batch on axis 0)."""
    if isinstance(like, torch.Tensor):
        tt = torch.as_tensor(t, dtype=torch.long)
        c = torch.tensor(arr, dtype=like.dtype)[tt - 1]
        return c.reshape(-1, *([1] * (like.dim() - 1))) if c.dim() else c
    c = arr[np.asarray(t) - 1]
    return c.reshape(-1, *([1] * (np.ndim(like) - 1))) if np.ndim(c) else c


def forward_step(z_prev, t: int, seed: int | None, schedule: NoiseSchedule, noise=None):
    """One step of the noising chain: ``sqrt(1 - beta_t) z + sqrt(beta_t) xi``.

    ``noise`` overrides the seeded draw of ``xi``.
    """
    schedule.check_t(t)
    z_prev = np.asarray(z_prev, dtype=np.float64)
    if noise is None:
        noise = np.random.default_rng(seed).standard_normal(z_prev.shape)
    b = schedule.beta[t - 1]
    return np.sqrt(1.0 - b) * z_prev + np.sqrt(b) * np.asarray(noise)


def q_sample(z0, t, epsilon, schedule: NoiseSchedule):
    """Jump straight to step ``t``: ``sqrt(abar_t) z0 + sqrt(1 - abar_t) eps``.

    ``t`` is a scalar or a per-sample array along axis 0. Works on numpy
    arrays and torch tensors.
    """
    if tuple(np.shape(z0)) != tuple(np.shape(epsilon)):
        raise ValidationError(f"z0 {tuple(np.shape(z0))} and epsilon {tuple(np.shape(epsilon))} differ")
    schedule.check_t(t)
    sa = _coef(np.sqrt(schedule.alpha_bar), t, z0)
    so = _coef(np.sqrt(1.0 - schedule.alpha_bar), t, z0)
    return sa * z0 + so * epsilon


def diffusion_loss(epsilon, epsilon_pred):
    """Mean squared error over all elements."""
    if tuple(np.shape(epsilon)) != tuple(np.shape(epsilon_pred)):
        raise ValidationError("epsilon and epsilon_pred must have the same shape")
    if isinstance(epsilon_pred, torch.Tensor):
        if torch.isnan(epsilon_pred).any() or torch.isnan(torch.as_tensor(epsilon)).any():
            raise ValidationError("NaN in diffusion loss inputs")
        return ((epsilon_pred - epsilon) ** 2).mean()
    e, p = np.asarray(epsilon, dtype=np.float64), np.asarray(epsilon_pred, dtype=np.float64)
    if np.isnan(e).any() or np.isnan(p).any():
        raise ValidationError("NaN in diffusion loss inputs")
    return float(np.mean((p - e) ** 2))
