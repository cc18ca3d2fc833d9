"""Ancestral DDPM sampling."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
import torch

from ..errors import ValidationError
from ..utils import derive_seed, torch_generator
from .schedule import NoiseSchedule

DenoiserFn = Callable[[torch.Tensor, torch.Tensor], torch.Tensor]


def _per_sample_noise(gens: Sequence[torch.Generator], shape, dtype) -> torch.Tensor:
    return torch.stack([torch.randn(shape, generator=g, dtype=dtype) for g in gens])


def ddpm_sample_step(z_t: torch.Tensor, t: int, denoiser: DenoiserFn, schedule: NoiseSchedule,
                     seed=None, noise: torch.Tensor | None = None, stochastic: bool = True) -> torch.Tensor:
    """Draw ``z_{t-1}`` from the learned reverse transition.

    Posterior variance ``beta_tilde`` is used; it is zero at ``t = 1`` so the
    final step is noiseless. ``stochastic=False`` drops the noise entirely.
    """
    schedule.check_t(t)
    i = t - 1
    tt = torch.full((z_t.shape[0],), t, dtype=torch.long)
    with torch.no_grad():
        eps = denoiser(z_t, tt)
    coef = float(schedule.beta[i] / np.sqrt(1.0 - schedule.alpha_bar[i]))
    mean = (z_t - coef * eps) / float(np.sqrt(schedule.alpha[i]))
    sigma = float(np.sqrt(schedule.beta_tilde[i]))
    if not stochastic or sigma == 0.0:
        return mean
    if noise is None:
        noise = torch.randn(z_t.shape, generator=torch_generator(seed), dtype=z_t.dtype)
    return mean + sigma * noise


def ddpm_sample(shape, denoiser: DenoiserFn, schedule: NoiseSchedule, seed: int = 0,
                sample_seeds: Sequence[int] | None = None, stochastic: bool = True,
                dtype=torch.float32) -> torch.Tensor:
    """Run the full reverse chain from ``z_T ~ N(0, I)``.

    Each sample ``i`` draws all of its noise from its own generator seeded
    with ``derive_seed(seed, i)`` (or ``sample_seeds[i]``), so results do not
    depend on how samples are batched.
    """
    shape = tuple(shape)
    n = shape[0]
    seeds = list(sample_seeds) if sample_seeds is not None else [derive_seed(seed, i) for i in range(n)]
    if len(seeds) != n:
        raise ValidationError("need one seed per sample")
    gens = [torch_generator(s) for s in seeds]
    z = _per_sample_noise(gens, shape[1:], dtype)
    for t in range(schedule.T, 0, -1):
        noise = _per_sample_noise(gens, shape[1:], dtype) if stochastic and t > 1 else None
        z = ddpm_sample_step(z, t, denoiser, schedule, noise=noise, stochastic=stochastic)
    return z
