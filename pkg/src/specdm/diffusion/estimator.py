"""Scikit-learn style wrapper training and sampling the latent DDPM."""
from __future__ import annotations

import copy
import json
import logging
from pathlib import Path

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .. import __version__
from ..errors import TrainingDivergedError, ValidationError
from ..utils import check_finite, derive_seed, torch_generator
from .sampling import ddpm_sample
from .schedule import DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_T, diffusion_loss, make_schedule, q_sample
from .unet import Denoiser

logger = logging.getLogger(__name__)

_SAMPLE_BATCH = 512


class LatentDiffusion(BaseEstimator):
    """Epsilon-prediction DDPM over channels-last latents ``(N, h, w, ch)``.

    Latents are multiplied by ``scale_ = 1 / std(Z)`` before training when
    ``scale_latents`` is true; :meth:`sample` returns latents in the original
    units.

    Parameters
    ----------
    timesteps, beta_start, beta_end
        Linear schedule definition.
    base_width, channel_mult, num_res_blocks, time_embed_dim
        U-Net shape.
    learning_rate : float
        Base Adam rate, multiplied by ``batch_size`` when ``scale_lr``.
    n_steps, batch_size : int
        Optimisation budget.
    ema_decay : float or None
        Exponential moving average of weights used for sampling.
    random_state : int
    """

    def __init__(self, timesteps=DEFAULT_T, beta_start=DEFAULT_BETA_START, beta_end=DEFAULT_BETA_END,
                 base_width=32, channel_mult=(1, 2), num_res_blocks=1, time_embed_dim=64,
                 learning_rate=5.0e-6, scale_lr=True, batch_size=64, n_steps=2000, ema_decay=0.999,
                 scale_latents=True, random_state=0, metrics_path=None, verbose=0):
        self.timesteps = timesteps
        self.beta_start = beta_start
        self.beta_end = beta_end
        self.base_width = base_width
        self.channel_mult = channel_mult
        self.num_res_blocks = num_res_blocks
        self.time_embed_dim = time_embed_dim
        self.learning_rate = learning_rate
        self.scale_lr = scale_lr
        self.batch_size = batch_size
        self.n_steps = n_steps
        self.ema_decay = ema_decay
        self.scale_latents = scale_latents
        self.random_state = random_state
        self.metrics_path = metrics_path
        self.verbose = verbose

    def _build(self, latent_shape):
        h, w, ch = latent_shape
        div = 2 ** (len(self.channel_mult) - 1)
        if h % div or w % div:
            raise ValidationError(f"latent size {h}x{w} must be divisible by {div}")
        self.latent_shape_ = (int(h), int(w), int(ch))
        self.schedule_ = make_schedule(self.timesteps, self.beta_start, self.beta_end)
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(derive_seed(self.random_state, 0))
            self.model_ = Denoiser(ch, self.base_width, tuple(self.channel_mult), self.num_res_blocks,
                                   self.time_embed_dim)
        self.ema_model_ = copy.deepcopy(self.model_) if self.ema_decay else self.model_
        self.model_.eval()
        self.ema_model_.eval()

    def fit(self, Z, y=None):
        Z = check_finite(np.asarray(Z, dtype=np.float32), "Z")
        if Z.ndim != 4:
            raise ValidationError(f"Z must be (N, h, w, ch), got {Z.shape}")
        self._build(Z.shape[1:])
        if self.scale_latents and not Z.std() > 0:
            raise ValidationError("latents are constant; cannot scale to unit variance")
        self.scale_ = float(1.0 / Z.std()) if self.scale_latents else 1.0
        z0_all = torch.from_numpy(np.ascontiguousarray(np.moveaxis(Z * self.scale_, -1, 1)))
        lr = self.learning_rate * (self.batch_size if self.scale_lr else 1)
        opt = torch.optim.Adam(self.model_.parameters(), lr=lr)
        gen = torch_generator(derive_seed(self.random_state, 1))
        T = self.schedule_.T
        self.history_ = []
        sink = open(self.metrics_path, "w", encoding="utf-8") if self.metrics_path else None
        self.model_.train()
        try:
            for step in range(self.n_steps):
                idx = torch.randint(0, len(z0_all), (min(self.batch_size, len(z0_all)),), generator=gen)
                z0 = z0_all[idx]
                t = torch.randint(1, T + 1, (len(idx),), generator=gen)
                eps = torch.randn(z0.shape, generator=gen)
                loss = diffusion_loss(eps, self.model_(q_sample(z0, t, eps, self.schedule_), t))
                if not torch.isfinite(loss):
                    raise TrainingDivergedError(f"diffusion loss non-finite at step {step}")
                opt.zero_grad(set_to_none=True)
                loss.backward()
                opt.step()
                if self.ema_decay:
                    with torch.no_grad():
                        for pe, p in zip(self.ema_model_.parameters(), self.model_.parameters()):
                            pe.mul_(self.ema_decay).add_(p, alpha=1 - self.ema_decay)
                record = {"step": step, "loss": float(loss.detach())}
                self.history_.append(record)
                if sink:
                    sink.write(json.dumps(record) + "\n")
                if self.verbose and step % 500 == 0:
                    logger.info("diffusion step %d loss %.5f", step, record["loss"])
        finally:
            self.model_.eval()
            if sink:
                sink.close()
        return self

    @property
    def losses_(self) -> np.ndarray:
        return np.array([r["loss"] for r in self.history_])

    def denoise_fn(self):
        """Callable ``(z_t NCHW, t) -> eps`` using the EMA weights."""
        check_is_fitted(self, "model_")
        model = self.ema_model_

        def fn(z, t):
            with torch.no_grad():
                return model(z, t)
        return fn

    def sample(self, n_samples: int, random_state: int = 0, sample_seeds=None, scaled: bool = False):
        """Draw ``n_samples`` latents ``(n, h, w, ch)`` with per-sample seeds."""
        check_is_fitted(self, "model_")
        seeds = list(sample_seeds) if sample_seeds is not None else [
            derive_seed(random_state, i) for i in range(n_samples)]
        h, w, ch = self.latent_shape_
        outs = []
        for s in range(0, len(seeds), _SAMPLE_BATCH):
            chunk = seeds[s:s + _SAMPLE_BATCH]
            z = ddpm_sample((len(chunk), ch, h, w), self.denoise_fn(), self.schedule_, sample_seeds=chunk)
            outs.append(np.moveaxis(z.numpy(), 1, -1))
        Z = np.concatenate(outs) if outs else np.zeros((0, h, w, ch), np.float32)
        return Z if scaled else Z / self.scale_

    # -- persistence ------------------------------------------------------
    def save(self, path, extra: dict | None = None) -> Path:
        check_is_fitted(self, "model_")
        root = Path(path)
        root.mkdir(parents=True, exist_ok=True)
        torch.save({"model": self.model_.state_dict(), "ema": self.ema_model_.state_dict()},
                   root / "denoiser.pt")
        params = self.get_params()
        params["metrics_path"] = None
        params["channel_mult"] = list(self.channel_mult)
        meta = {"params": params, "schedule": self.schedule_.params(), "latent_scale": self.scale_,
                "latent_shape": list(self.latent_shape_), "version": __version__, **(extra or {})}
        (root / "denoiser.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return root

    @classmethod
    def load(cls, path) -> "LatentDiffusion":
        root = Path(path)
        meta = json.loads((root / "denoiser.json").read_text(encoding="utf-8"))
        params = dict(meta["params"])
        params["channel_mult"] = tuple(params["channel_mult"])
        est = cls(**params)
        est._build(tuple(meta["latent_shape"]))
        state = torch.load(root / "denoiser.pt", weights_only=True)
        est.model_.load_state_dict(state["model"])
        est.ema_model_.load_state_dict(state["ema"])
        est.scale_ = float(meta["latent_scale"])
        est.sidecar_ = meta
        return est
