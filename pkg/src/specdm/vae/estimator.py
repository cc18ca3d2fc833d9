"""Scikit-learn style estimator wrapping the two-stream KL autoencoder."""
from __future__ import annotations

import json
import logging
import math
from pathlib import Path

import numpy as np
import torch
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .. import __version__
from ..errors import TrainingDivergedError, ValidationError
from ..utils import check_images, check_masks, derive_seed, torch_generator
from .losses import image_loss, mean_sad, total_loss
from .networks import GaussianPosterior, TwoStreamCodec

logger = logging.getLogger(__name__)

MODES = ("two_stream", "single_stream_baseline")
_INFER_BATCH = 256


def split_channels(z: np.ndarray, k: int, c: int) -> list[np.ndarray]:
    """Channel-contiguous split of a channels-last latent into ``k`` parts of ``c``."""
    if z.shape[-1] != k * c:
        raise ValidationError(f"latent has {z.shape[-1]} channels, expected {k}*{c}={k * c}")
    return [z[..., i * c:(i + 1) * c] for i in range(k)]


def _nchw(a: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(np.moveaxis(a, -1, -3)))


def _nhwc(t: torch.Tensor) -> np.ndarray:
    return np.ascontiguousarray(torch.movedim(t, -3, -1).numpy())


class TwoStreamVAE(TransformerMixin, BaseEstimator):
    """Joint image/mask autoencoder producing a channel-concatenated latent.

    ``fit(X, y)`` takes normalised images ``X`` of shape ``(N, H, W, C)`` for
    segmentation or ``(N, 2, H, W, C)`` for bi-temporal change detection, and
    integer masks ``y`` of shape ``(N, H, W)``. ``transform`` returns the
    joint latent (posterior means), channels ordered images first, mask last.

    Parameters
    ----------
    latent_channels : int
        Latent channels per stream.
    downsample_factor : int
        Spatial reduction ``H / h``; must be a power of two.
    lambda_sad : float
        Weight of the spectral-angle term of the image loss.
    kl_weight : float
        Weight of the KL regulariser.
    sad_loss_enabled : bool
        When false the spectral-angle term is dropped from the objective.
    mode : {"two_stream", "single_stream_baseline"}
    base_width, num_res_blocks : int
        Network width and residual blocks per resolution.
    learning_rate : float
        Base Adam learning rate; multiplied by ``batch_size`` when
        ``scale_lr``.
    batch_size, epochs : int
    random_state : int
        Seeds initialisation, shuffling and reparameterisation noise.
    metrics_path : str or None
        If set, per-epoch JSON lines are written there.
    """

    def __init__(self, latent_channels=4, downsample_factor=4, lambda_sad=0.1, kl_weight=1e-6,
                 sad_loss_enabled=True, mode="two_stream", base_width=32, num_res_blocks=1,
                 learning_rate=4.5e-6, scale_lr=True, batch_size=32, epochs=10, random_state=0,
                 metrics_path=None, verbose=0):
        self.latent_channels = latent_channels
        self.downsample_factor = downsample_factor
        self.lambda_sad = lambda_sad
        self.kl_weight = kl_weight
        self.sad_loss_enabled = sad_loss_enabled
        self.mode = mode
        self.base_width = base_width
        self.num_res_blocks = num_res_blocks
        self.learning_rate = learning_rate
        self.scale_lr = scale_lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.random_state = random_state
        self.metrics_path = metrics_path
        self.verbose = verbose

    # -- configuration --------------------------------------------------
    def _check_params(self):
        f = self.downsample_factor
        if f < 1 or f & (f - 1):
            raise ValidationError(f"downsample_factor must be a power of 2, got {f}")
        if self.latent_channels < 1:
            raise ValidationError("latent_channels must be >= 1")
        if self.lambda_sad < 0 or self.kl_weight < 0:
            raise ValidationError("lambda_sad and kl_weight must be >= 0")
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}")

    @property
    def levels(self) -> int:
        return int(math.log2(self.downsample_factor))

    def _build(self, n_bands, n_classes, n_images, image_size):
        self._check_params()
        H, W = image_size
        f = self.downsample_factor
        if H % f or W % f:
            raise ValidationError(f"H={H}, W={W} must be divisible by downsample_factor={f}")
        self.task_ = "SS" if n_images == 1 else "CD"
        self.n_bands_, self.n_classes_, self.n_images_ = n_bands, n_classes, n_images
        self.image_size_ = (H, W)
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(derive_seed(self.random_state, 0))
            self.codec_ = TwoStreamCodec(n_bands, n_classes, self.latent_channels, self.base_width,
                                         self.levels, self.num_res_blocks, self.mode, n_images)
        self.codec_.eval()

    @property
    def n_streams_(self) -> int:
        return self.n_images_ + 1

    @property
    def joint_channels_(self) -> int:
        if self.mode == "single_stream_baseline":
            return self.latent_channels
        return self.n_streams_ * self.latent_channels

    # -- training -------------------------------------------------------
    def _prepare(self, X, y, n_classes=None):
        X = check_images(X, ndim=np.asarray(X).ndim)
        if X.ndim == 4:
            n_images = 1
        elif X.ndim == 5 and X.shape[1] == 2:
            n_images = 2
        else:
            raise ValidationError(f"X must be (N,H,W,C) or (N,2,H,W,C), got {X.shape}")
        y = check_masks(y, n_classes)
        if y.shape != X.shape[:1] + X.shape[-3:-1]:
            raise ValidationError(f"mask shape {y.shape} does not match images {X.shape}")
        return X.astype(np.float32), y, n_images

    def fit(self, X, y, n_classes=None):
        X, y, n_images = self._prepare(X, y, n_classes)
        K = n_classes or (2 if n_images == 2 else int(y.max()) + 1)
        self._build(X.shape[-1], K, n_images, X.shape[-3:-1])
        xt = _nchw(X)
        yt = torch.from_numpy(y.astype(np.int64))
        onehot = torch.nn.functional.one_hot(yt, K).permute(0, 3, 1, 2).float()
        lr = self.learning_rate * (self.batch_size if self.scale_lr else 1)
        opt = torch.optim.Adam(self.codec_.parameters(), lr=lr)
        rng = np.random.default_rng(derive_seed(self.random_state, 1))
        gen = torch_generator(derive_seed(self.random_state, 2))
        self.history_ = []
        sink = open(self.metrics_path, "w", encoding="utf-8") if self.metrics_path else None
        self.codec_.train()
        try:
            for epoch in range(self.epochs):
                perm = rng.permutation(len(X))
                sums = dict.fromkeys(("l1", "sad", "ce", "kl", "total"), 0.0)
                n_batches = 0
                for start in range(0, len(X), self.batch_size):
                    idx = torch.from_numpy(perm[start:start + self.batch_size])
                    loss, parts = self._batch_loss(xt[idx], yt[idx], onehot[idx], gen)
                    if not torch.isfinite(loss):
                        raise TrainingDivergedError(
                            f"VAE loss became non-finite at epoch {epoch}, batch {n_batches}: {parts}")
                    opt.zero_grad(set_to_none=True)
                    loss.backward()
                    opt.step()
                    for k, v in parts.as_dict().items():
                        sums[k] += v
                    n_batches += 1
                record = {"epoch": epoch, **{k: v / n_batches for k, v in sums.items()}}
                self.history_.append(record)
                if sink:
                    sink.write(json.dumps(record) + "\n")
                    sink.flush()
                if self.verbose:
                    logger.info("vae epoch %d %s", epoch, record)
        finally:
            self.codec_.eval()
            if sink:
                sink.close()
        self.final_losses_ = dict(self.history_[-1]) if self.history_ else {}
        return self

    def _batch_loss(self, x, y, onehot, gen, sample=True):
        """Total loss for one batch. ``x`` is (B, C, H, W) or (B, 2, C, H, W)."""
        B = x.shape[0]
        x_imgs = x.reshape(B * self.n_images_, *x.shape[-3:])
        noise = lambda shape: torch.randn(shape, generator=gen) if sample else 0.0  # noqa: E731
        codec = self.codec_
        if self.mode == "two_stream":
            q_img = codec.image_branch.encode(x_imgs)
            x_hat = codec.image_branch.decode(q_img.sample(noise(q_img.shape)))
            q_msk = codec.mask_branch.encode(onehot)
            logits = codec.mask_branch.decode(q_msk.sample(noise(q_msk.shape)))
            posteriors = [q_img, q_msk]
        else:
            inp = torch.cat([x.reshape(B, -1, *x.shape[-2:]), onehot], dim=1)
            q = codec.fused.encode(inp)
            out = codec.fused.decode(q.sample(noise(q.shape)))
            nc = self.n_images_ * self.n_bands_
            x_hat = out[:, :nc].reshape(x_imgs.shape)
            logits = out[:, nc:]
            posteriors = [q]
        return total_loss(x_imgs, x_hat, y, logits, posteriors, self.lambda_sad, self.kl_weight,
                          self.sad_loss_enabled, channel_dim=1)

    # -- per-stream inference ---------------------------------------------
    def _run(self, fn, *arrays):
        outs = []
        with torch.no_grad():
            for s in range(0, len(arrays[0]), _INFER_BATCH):
                outs.append(fn(*[a[s:s + _INFER_BATCH] for a in arrays]))
        if isinstance(outs[0], tuple):
            return tuple(np.concatenate(p) for p in zip(*outs))
        return np.concatenate(outs)

    def _two_stream(self):
        check_is_fitted(self, "codec_")
        if self.mode != "two_stream":
            raise ValidationError("per-stream encode/decode is only defined in two_stream mode")

    def _posterior(self, branch, x):
        def enc(b):
            q = branch.encode(_nchw(b))
            return _nhwc(q.mean), _nhwc(q.logvar)
        squeeze = x.ndim == 3
        x = x[None] if squeeze else x
        mean, logvar = self._run(enc, x.astype(np.float32))
        if squeeze:
            mean, logvar = mean[0], logvar[0]
        return GaussianPosterior(mean, logvar)

    def encode_image(self, x) -> GaussianPosterior:
        """Posterior of normalised image(s) ``(…, H, W, C)`` → ``(…, h, w, c)``."""
        self._two_stream()
        return self._posterior(self.codec_.image_branch, check_images(x, ndim=np.asarray(x).ndim))

    def encode_mask(self, y_onehot) -> GaussianPosterior:
        self._two_stream()
        y_onehot = np.asarray(y_onehot, dtype=np.float32)
        if y_onehot.shape[-1] != self.n_classes_:
            raise ValidationError(f"one-hot mask needs {self.n_classes_} channels")
        return self._posterior(self.codec_.mask_branch, y_onehot)

    @staticmethod
    def sample_latent(posterior: GaussianPosterior, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        noise = rng.standard_normal(posterior.shape).astype(np.float32)
        return posterior.sample(noise).astype(np.float32)

    def _decode(self, branch, z):
        z = np.asarray(z, dtype=np.float32)
        if z.shape[-1] != self.latent_channels:
            raise ValidationError(f"latent must have {self.latent_channels} channels, got {z.shape[-1]}")
        squeeze = z.ndim == 3
        z = z[None] if squeeze else z
        out = self._run(lambda b: _nhwc(branch.decode(_nchw(b))), z)
        return out[0] if squeeze else out

    def decode_image(self, z_x) -> np.ndarray:
        self._two_stream()
        return self._decode(self.codec_.image_branch, z_x)

    def decode_mask(self, z_y) -> np.ndarray:
        """Per-pixel class logits ``(…, H, W, K)``."""
        self._two_stream()
        return self._decode(self.codec_.mask_branch, z_y)

    @staticmethod
    def mask_from_logits(logits) -> np.ndarray:
        """Argmax over classes; ties resolve to the lowest class index."""
        return np.argmax(np.asarray(logits), axis=-1).astype(np.int32)

    # -- joint latent -----------------------------------------------------
    def _onehot(self, y):
        return (y[..., None] == np.arange(self.n_classes_)).astype(np.float32)

    def transform(self, X, y, sample_seed=None):
        """Joint latent ``(N, h, w, joint_channels_)``.

        Posterior means by default; seeded posterior samples when
        ``sample_seed`` is given.
        """
        check_is_fitted(self, "codec_")
        X, y, n_images = self._prepare(X, y, self.n_classes_)
        if n_images != self.n_images_:
            raise ValidationError("task of X does not match the fitted codec")
        oh = self._onehot(y)
        if self.mode == "two_stream":
            imgs = [X] if n_images == 1 else [X[:, 0], X[:, 1]]
            posts = [self._posterior(self.codec_.image_branch, a) for a in imgs]
            posts.append(self._posterior(self.codec_.mask_branch, oh))
        else:
            fused_in = np.concatenate([np.moveaxis(X, 1, -2).reshape(*y.shape, -1) if n_images == 2 else X,
                                       oh], axis=-1)
            posts = [self._posterior(self.codec_.fused, fused_in)]
        if sample_seed is None:
            parts = [p.mean for p in posts]
        else:
            parts = [self.sample_latent(p, derive_seed(sample_seed, i)) for i, p in enumerate(posts)]
        return np.concatenate(parts, axis=-1).astype(np.float32)

    def inverse_transform(self, Z):
        """Decode a joint latent into ``(images, masks)``.

        ``images`` is ``(N, H, W, C)`` for SS and ``(N, 2, H, W, C)`` for CD
        (normalised domain); ``masks`` is the argmax integer mask.
        """
        images, logits = self.decode_joint(Z)
        return images, self.mask_from_logits(logits)

    def decode_joint(self, Z):
        check_is_fitted(self, "codec_")
        Z = np.asarray(Z, dtype=np.float32)
        if self.mode == "two_stream":
            parts = split_channels(Z, self.n_streams_, self.latent_channels)
            imgs = [self._decode(self.codec_.image_branch, p) for p in parts[:-1]]
            logits = self._decode(self.codec_.mask_branch, parts[-1])
            images = imgs[0] if self.n_images_ == 1 else np.stack(imgs, axis=-4)
            return images, logits
        if Z.shape[-1] != self.latent_channels:
            raise ValidationError(f"latent must have {self.latent_channels} channels")
        out = self._decode(self.codec_.fused, Z)
        nc = self.n_images_ * self.n_bands_
        images = out[..., :nc]
        if self.n_images_ == 2:
            images = np.moveaxis(images.reshape(*images.shape[:-1], 2, self.n_bands_), -2, -4)
        return images, out[..., nc:]

    # -- diagnostics ------------------------------------------------------
    def reconstruction_report(self, X, y, seed: int = 0) -> dict:
        """Round-trip quality through seeded posterior samples."""
        X, y, _ = self._prepare(X, y, self.n_classes_)
        Z = self.transform(X, y, sample_seed=seed)
        X_hat, y_hat = self.inverse_transform(Z)
        flat = lambda a: a.reshape(-1, a.shape[-1])  # noqa: E731
        return {
            "l1": float(np.abs(X - X_hat).mean()),
            "rmse": float(np.sqrt(((X - X_hat) ** 2).mean())),
            "sad": float(mean_sad(flat(X), flat(X_hat))),
            "image_loss": float(image_loss(flat(X), flat(X_hat), self.lambda_sad, self.sad_loss_enabled)),
            "mask_accuracy": float((y_hat == y).mean()),
        }

    # -- persistence ------------------------------------------------------
    def save(self, path, extra: dict | None = None) -> Path:
        """Write ``codec.pt`` (state dict) and the ``codec.json`` sidecar."""
        check_is_fitted(self, "codec_")
        root = Path(path)
        root.mkdir(parents=True, exist_ok=True)
        torch.save(self.codec_.state_dict(), root / "codec.pt")
        params = self.get_params()
        params["metrics_path"] = None
        meta = {
            "params": params,
            "task": self.task_,
            "n_bands": self.n_bands_,
            "n_classes": self.n_classes_,
            "n_images": self.n_images_,
            "image_size": list(self.image_size_),
            "concat_order": ["image"] * self.n_images_ + ["mask"],
            "final_losses": getattr(self, "final_losses_", {}),
            "version": __version__,
            **(extra or {}),
        }
        (root / "codec.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return root

    @classmethod
    def load(cls, path) -> "TwoStreamVAE":
        root = Path(path)
        meta = json.loads((root / "codec.json").read_text(encoding="utf-8"))
        est = cls(**meta["params"])
        est._build(meta["n_bands"], meta["n_classes"], meta["n_images"], tuple(meta["image_size"]))
        est.codec_.load_state_dict(torch.load(root / "codec.pt", weights_only=True))
        est.codec_.eval()
        est.final_losses_ = meta.get("final_losses", {})
        est.sidecar_ = meta
        return est
