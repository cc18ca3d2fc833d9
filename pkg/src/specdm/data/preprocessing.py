"""Band normalisation, one-hot encoding and class statistics."""
from __future__ import annotations

import logging
import warnings

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ..errors import ValidationError
from ..utils import check_finite, check_masks
from .dataset import Dataset, DatasetManifest

logger = logging.getLogger(__name__)

LOW_PERCENTILE = 1.0
HIGH_PERCENTILE = 99.0


def one_hot(mask, K: int) -> np.ndarray:
    """Expand integer ``mask`` (..., H, W) to float32 (..., H, W, K)."""
    mask = check_masks(mask, K, name="mask")
    return (mask[..., None] == np.arange(K)).astype(np.float32)


def percentile_stats(images: np.ndarray, low: float = LOW_PERCENTILE,
                     high: float = HIGH_PERCENTILE) -> tuple[np.ndarray, np.ndarray]:
    """Per-band low/high percentiles over every pixel of ``images`` (..., C).

    Order statistics rather than interpolation, so at most ``low`` percent
    of values fall below ``lo`` and at most ``100 - high`` percent above ``hi``.
    """
    flat = np.asarray(images, dtype=np.float64).reshape(-1, np.shape(images)[-1])
    lo = np.percentile(flat, low, axis=0, method="lower")
    hi = np.percentile(flat, high, axis=0, method="higher")
    return lo, hi


def _affine(lo, hi):
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    span = hi - lo
    degenerate = span <= 0
    return lo, np.where(degenerate, 1.0, span), degenerate


def normalize_array(image, lo, hi) -> np.ndarray:
    """Map each band into [-1, 1] via ``2 * clip((v - lo) / (hi - lo), 0, 1) - 1``.

    Degenerate bands (``hi == lo``) map to 0 and raise a ``RuntimeWarning``.
    """
    image = check_finite(np.asarray(image), "image")
    lo, span, degenerate = _affine(lo, hi)
    if image.shape[-1] != lo.shape[0]:
        raise ValidationError(f"image has {image.shape[-1]} bands, stats have {lo.shape[0]}")
    out = 2.0 * np.clip((image - lo) / span, 0.0, 1.0) - 1.0
    if degenerate.any():
        warnings.warn(f"degenerate bands {np.flatnonzero(degenerate).tolist()} mapped to 0",
                      RuntimeWarning, stacklevel=2)
        out[..., degenerate] = 0.0
    return out.astype(np.float32)


def denormalize_array(image_norm, lo, hi) -> np.ndarray:
    lo, span, degenerate = _affine(lo, hi)
    out = (np.asarray(image_norm, dtype=np.float64) + 1.0) * 0.5 * span + lo
    out[..., degenerate] = lo[degenerate]
    return out.astype(np.float32)


def _manifest_stats(manifest: DatasetManifest):
    if not manifest.has_normalization:
        raise ValidationError("manifest carries no normalization statistics")
    return manifest.norm_lo, manifest.norm_hi


def normalize(image, manifest: DatasetManifest) -> np.ndarray:
    return normalize_array(image, *_manifest_stats(manifest))


def denormalize(image_norm, manifest: DatasetManifest) -> np.ndarray:
    return denormalize_array(image_norm, *_manifest_stats(manifest))


def with_training_normalization(dataset: Dataset) -> Dataset:
    """Return ``dataset`` with per-band percentile stats of its own pixels."""
    stacked = np.concatenate([a.reshape(-1, dataset.manifest.C) for a in dataset.image_arrays()])
    lo, hi = percentile_stats(stacked)
    return dataset.with_manifest(norm_lo=lo.tolist(), norm_hi=hi.tolist())


class BandNormalizer(TransformerMixin, BaseEstimator):
    """Per-band robust affine scaler onto [-1, 1].

    Parameters
    ----------
    low_percentile, high_percentile : float
        Percentiles used as the band's ``lo`` and ``hi`` anchors.
    """

    def __init__(self, low_percentile: float = LOW_PERCENTILE, high_percentile: float = HIGH_PERCENTILE):
        self.low_percentile = low_percentile
        self.high_percentile = high_percentile

    def fit(self, X, y=None):
        X = check_finite(np.asarray(X, dtype=np.float64), "X")
        self.lo_, self.hi_ = percentile_stats(X, self.low_percentile, self.high_percentile)
        self.n_bands_ = X.shape[-1]
        return self

    @classmethod
    def from_manifest(cls, manifest: DatasetManifest) -> "BandNormalizer":
        norm = cls()
        lo, hi = _manifest_stats(manifest)
        norm.lo_, norm.hi_ = np.asarray(lo, dtype=np.float64), np.asarray(hi, dtype=np.float64)
        norm.n_bands_ = len(lo)
        return norm

    def transform(self, X):
        check_is_fitted(self, "lo_")
        return normalize_array(X, self.lo_, self.hi_)

    def inverse_transform(self, X):
        check_is_fitted(self, "lo_")
        return denormalize_array(X, self.lo_, self.hi_)


def class_distribution(dataset: Dataset) -> np.ndarray:
    """Fraction of all mask pixels belonging to each class."""
    if len(dataset) == 0:
        raise ValidationError("class_distribution of an empty dataset")
    counts = np.bincount(dataset.masks.ravel(), minlength=dataset.n_classes).astype(np.float64)
    return counts / counts.sum()
