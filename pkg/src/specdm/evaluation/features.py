"""Feature extractors feeding the Fréchet distance."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..data import Dataset, normalize
from ..errors import ValidationError

KINDS = ("band_stats", "codec_latent_pool", "external")


def band_stats_features(images: np.ndarray) -> np.ndarray:
    """Per image: band means (C), band stds (C), adjacent-band correlations (C-1)."""
    X = np.asarray(images, dtype=np.float64)
    if X.ndim != 4:
        raise ValidationError(f"images must be (N, H, W, C), got {X.shape}")
    N, _, _, C = X.shape
    pix = X.reshape(N, -1, C)
    mean = pix.mean(axis=1)
    centred = pix - mean[:, None, :]
    std = np.sqrt((centred ** 2).mean(axis=1))
    cov_adj = (centred[:, :, :-1] * centred[:, :, 1:]).mean(axis=1)
    denom = std[:, :-1] * std[:, 1:]
    corr = np.divide(cov_adj, denom, out=np.zeros_like(cov_adj), where=denom > 0)
    return np.concatenate([mean, std, corr], axis=1)


def mask_features(masks: np.ndarray, K: int) -> np.ndarray:
    """Class frequencies (K) plus upper-triangular 4-neighbour co-occurrence (K(K+1)/2)."""
    M = np.asarray(masks, dtype=np.int64)
    N = len(M)
    flat = M.reshape(N, -1)
    freq = np.stack([np.bincount(r, minlength=K) for r in flat]).astype(np.float64)
    freq /= flat.shape[1]
    pairs_a = np.concatenate([M[:, :, :-1].reshape(N, -1), M[:, :-1, :].reshape(N, -1)], axis=1)
    pairs_b = np.concatenate([M[:, :, 1:].reshape(N, -1), M[:, 1:, :].reshape(N, -1)], axis=1)
    lo, hi = np.minimum(pairs_a, pairs_b), np.maximum(pairs_a, pairs_b)
    code = lo * K + hi
    iu = np.triu_indices(K)
    keep = iu[0] * K + iu[1]
    co = np.stack([np.bincount(r, minlength=K * K)[keep] for r in code]).astype(np.float64)
    co /= max(pairs_a.shape[1], 1)
    return np.concatenate([freq, co], axis=1)


@dataclass
class FeatureExtractor:
    """Maps an image stack ``(N, H, W, C)`` (raw reflectance) to ``(N, d)``.

    ``band_stats`` needs nothing else. ``codec_latent_pool`` averages the
    posterior mean of a fitted two-stream codec over space and needs
    ``codec`` plus a normalisation ``manifest``. ``external`` wraps any
    callable ``fn``.
    """

    kind: str = "band_stats"
    codec: object | None = None
    manifest: object | None = None
    fn: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"extractor kind must be one of {KINDS}")
        if self.kind == "codec_latent_pool" and (self.codec is None or self.manifest is None):
            raise ValidationError("codec_latent_pool needs a codec and a manifest")
        if self.kind == "external" and self.fn is None:
            raise ValidationError("external extractor needs fn")

    def __call__(self, images: np.ndarray) -> np.ndarray:
        if self.kind == "band_stats":
            return band_stats_features(images)
        if self.kind == "codec_latent_pool":
            post = self.codec.encode_image(normalize(images, self.manifest))
            return np.asarray(post.mean, dtype=np.float64).mean(axis=(1, 2))
        return np.asarray(self.fn(images), dtype=np.float64)

    def describe(self) -> str:
        return self.kind


def dataset_images(dataset: Dataset, which: str = "image") -> np.ndarray:
    if which == "image":
        return dataset.images if dataset.task == "SS" else dataset.images_t1
    if which == "image_t2":
        if dataset.task != "CD":
            raise ValidationError("image_t2 only exists for CD datasets")
        return dataset.images_t2
    raise ValidationError(f"unknown image selector {which!r}")
