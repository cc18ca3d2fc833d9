"""Small timestep-conditioned U-Net predicting the injected noise."""
from __future__ import annotations

import math

import torch
from torch import nn

from ..vae.networks import group_norm


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10_000.0) -> torch.Tensor:
    """Sinusoidal features of (float) timesteps, shape ``(B, dim)``."""
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float32) / half)
    args = t.float()[:, None] * freqs[None]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[:, :1])], dim=-1)
    return emb


class TimeResBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, t_dim: int):
        super().__init__()
        self.in_layers = nn.Sequential(group_norm(c_in), nn.SiLU(), nn.Conv2d(c_in, c_out, 3, padding=1))
        self.t_proj = nn.Sequential(nn.SiLU(), nn.Linear(t_dim, c_out))
        self.out_layers = nn.Sequential(group_norm(c_out), nn.SiLU(), nn.Conv2d(c_out, c_out, 3, padding=1))
        self.skip = nn.Identity() if c_in == c_out else nn.Conv2d(c_in, c_out, 1)

    def forward(self, x, temb):
        h = self.in_layers(x) + self.t_proj(temb)[:, :, None, None]
        return self.skip(x) + self.out_layers(h)


class Denoiser(nn.Module):
    """``eps_theta(z_t, t)`` on NCHW latents. Output shape equals input shape.

    Spatial size must be divisible by ``2 ** (len(channel_mult) - 1)``.
    """

    def __init__(self, in_channels: int, base_width: int = 32, channel_mult=(1, 2),
                 num_res_blocks: int = 1, time_embed_dim: int = 64):
        super().__init__()
        self.in_channels = in_channels
        self.time_embed_dim = time_embed_dim
        t_dim = 4 * base_width
        self.time_mlp = nn.Sequential(nn.Linear(time_embed_dim, t_dim), nn.SiLU(), nn.Linear(t_dim, t_dim))
        self.conv_in = nn.Conv2d(in_channels, base_width, 3, padding=1)

        widths = [base_width * m for m in channel_mult]
        self.down = nn.ModuleList()
        self.downsample = nn.ModuleList()
        skips = [base_width]
        ch = base_width
        for lvl, w in enumerate(widths):
            blocks = nn.ModuleList()
            for _ in range(num_res_blocks):
                blocks.append(TimeResBlock(ch, w, t_dim))
                ch = w
                skips.append(ch)
            self.down.append(blocks)
            if lvl < len(widths) - 1:
                self.downsample.append(nn.Conv2d(ch, ch, 3, stride=2, padding=1))
                skips.append(ch)
        self.mid = nn.ModuleList([TimeResBlock(ch, ch, t_dim), TimeResBlock(ch, ch, t_dim)])

        self.up = nn.ModuleList()
        self.upsample = nn.ModuleList()
        for lvl, w in reversed(list(enumerate(widths))):
            blocks = nn.ModuleList()
            for _ in range(num_res_blocks + 1):
                blocks.append(TimeResBlock(ch + skips.pop(), w, t_dim))
                ch = w
            self.up.append(blocks)
            if lvl > 0:
                self.upsample.append(nn.Sequential(nn.Upsample(scale_factor=2, mode="nearest"),
                                                   nn.Conv2d(ch, ch, 3, padding=1)))
        self.out = nn.Sequential(group_norm(ch), nn.SiLU(), nn.Conv2d(ch, in_channels, 3, padding=1))
        nn.init.zeros_(self.out[-1].weight)
        nn.init.zeros_(self.out[-1].bias)

    def forward(self, z, t):
        temb = self.time_mlp(timestep_embedding(t, self.time_embed_dim).to(z.dtype))
        h = self.conv_in(z)
        hs = [h]
        for lvl, blocks in enumerate(self.down):
            for blk in blocks:
                h = blk(h, temb)
                hs.append(h)
            if lvl < len(self.downsample):
                h = self.downsample[lvl](h)
                hs.append(h)
        for blk in self.mid:
            h = blk(h, temb)
        for i, blocks in enumerate(self.up):
            for blk in blocks:
                h = blk(torch.cat([h, hs.pop()], dim=1), temb)
            if i < len(self.upsample):
                h = self.upsample[i](h)
        return self.out(h)
