"""Latent DDPM: schedule, forward process, denoiser and sampler."""
from .estimator import LatentDiffusion
from .sampling import ddpm_sample, ddpm_sample_step
from .schedule import NoiseSchedule, diffusion_loss, forward_step, make_schedule, q_sample
from .unet import Denoiser, timestep_embedding

__all__ = [
    "Denoiser", "LatentDiffusion", "NoiseSchedule", "ddpm_sample", "ddpm_sample_step",
    "diffusion_loss", "forward_step", "make_schedule", "q_sample", "timestep_embedding",
]
