"""Convolutional encoder/decoder branches of the KL autoencoder."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

LOGVAR_RANGE = (-30.0, 20.0)


def group_norm(channels: int) -> nn.GroupNorm:
    return nn.GroupNorm(math.gcd(8, channels), channels, eps=1e-6)


class ResBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int):
        super().__init__()
        self.body = nn.Sequential(
            group_norm(c_in), nn.SiLU(), nn.Conv2d(c_in, c_out, 3, padding=1),
            group_norm(c_out), nn.SiLU(), nn.Conv2d(c_out, c_out, 3, padding=1),
        )
        self.skip = nn.Identity() if c_in == c_out else nn.Conv2d(c_in, c_out, 1)

    def forward(self, x):
        return self.skip(x) + self.body(x)


class Encoder(nn.Module):
    """Maps ``(N, in_ch, H, W)`` to moments ``(N, 2 * z_ch, H / 2**levels, W / 2**levels)``."""

    def __init__(self, in_ch: int, z_ch: int, width: int = 32, levels: int = 2, num_res_blocks: int = 1):
        super().__init__()
        layers: list[nn.Module] = [nn.Conv2d(in_ch, width, 3, padding=1)]
        for _ in range(levels):
            layers += [ResBlock(width, width) for _ in range(num_res_blocks)]
            layers.append(nn.Conv2d(width, width, 3, stride=2, padding=1))
        layers += [ResBlock(width, width) for _ in range(num_res_blocks)]
        layers += [group_norm(width), nn.SiLU(), nn.Conv2d(width, 2 * z_ch, 3, padding=1)]
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


class Decoder(nn.Module):
    def __init__(self, z_ch: int, out_ch: int, width: int = 32, levels: int = 2, num_res_blocks: int = 1):
        super().__init__()
        layers: list[nn.Module] = [nn.Conv2d(z_ch, width, 3, padding=1)]
        layers += [ResBlock(width, width) for _ in range(num_res_blocks)]
        for _ in range(levels):
            layers += [nn.Upsample(scale_factor=2, mode="nearest"), nn.Conv2d(width, width, 3, padding=1)]
            layers += [ResBlock(width, width) for _ in range(num_res_blocks)]
        layers += [group_norm(width), nn.SiLU(), nn.Conv2d(width, out_ch, 3, padding=1)]
        self.net = nn.Sequential(*layers)

    def forward(self, z):
        return self.net(z)


@dataclass
class GaussianPosterior:
    """Diagonal Gaussian over latents; arrays may be tensors or numpy."""

    mean: torch.Tensor | np.ndarray
    logvar: torch.Tensor | np.ndarray

    def sample(self, noise):
        if isinstance(self.mean, torch.Tensor):
            return self.mean + torch.exp(0.5 * self.logvar) * noise
        return self.mean + np.exp(0.5 * self.logvar) * noise

    @property
    def shape(self):
        return tuple(self.mean.shape)


class AutoencoderBranch(nn.Module):
    """One stream of the codec: encoder, moment split and decoder."""

    def __init__(self, in_ch: int, out_ch: int, z_ch: int, width: int, levels: int, num_res_blocks: int):
        super().__init__()
        self.encoder = Encoder(in_ch, z_ch, width, levels, num_res_blocks)
        self.decoder = Decoder(z_ch, out_ch, width, levels, num_res_blocks)

    def encode(self, x) -> GaussianPosterior:
        mean, logvar = self.encoder(x).chunk(2, dim=1)
        return GaussianPosterior(mean, logvar.clamp(*LOGVAR_RANGE))

    def decode(self, z):
        return self.decoder(z)


class TwoStreamCodec(nn.Module):
    """Image and mask branches with disjoint parameters.

    In ``single_stream_baseline`` mode only ``fused`` exists: it encodes the
    channel concatenation ``[image(s), one-hot mask]``.
    """

    def __init__(self, n_bands: int, n_classes: int, z_ch: int = 4, width: int = 32, levels: int = 2,
                 num_res_blocks: int = 1, mode: str = "two_stream", n_images: int = 1):
        super().__init__()
        self.mode = mode
        self.n_bands, self.n_classes, self.n_images = n_bands, n_classes, n_images
        if mode == "two_stream":
            self.image_branch = AutoencoderBranch(n_bands, n_bands, z_ch, width, levels, num_res_blocks)
            self.mask_branch = AutoencoderBranch(n_classes, n_classes, z_ch, width, levels, num_res_blocks)
        elif mode == "single_stream_baseline":
            ch = n_images * n_bands + n_classes
            self.fused = AutoencoderBranch(ch, ch, z_ch, width, levels, num_res_blocks)
        else:
            raise ValueError(f"unknown codec mode {mode!r}")
