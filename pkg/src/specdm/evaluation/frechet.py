"""Fréchet distance between Gaussians fitted to feature sets."""
from __future__ import annotations

import warnings

import numpy as np

from ..errors import ValidationError

SHRINKAGE = 1e-6


def _sym_psd(cov: np.ndarray) -> np.ndarray:
    cov = 0.5 * (cov + cov.T)
    w, v = np.linalg.eigh(cov)
    if w.min() < -1e-10:
        w = np.clip(w, 0.0, None)
        cov = (v * w) @ v.T
    return cov


def _sqrt_psd(mat: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (mat + mat.T))
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def frechet_gaussian(mu1, cov1, mu2, cov2) -> float:
    """``|mu1 - mu2|^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2})``.

    The trace of ``(S1 S2)^{1/2}`` is computed from the symmetric product
    ``S1^{1/2} S2 S1^{1/2}``, whose eigenvalues equal those of ``S1 S2``.
    Negative eigenvalues are clipped to zero.
    """
    mu1 = np.atleast_1d(np.asarray(mu1, dtype=np.float64))
    mu2 = np.atleast_1d(np.asarray(mu2, dtype=np.float64))
    cov1 = np.atleast_2d(np.asarray(cov1, dtype=np.float64))
    cov2 = np.atleast_2d(np.asarray(cov2, dtype=np.float64))
    d = mu1.shape[0]
    if mu2.shape != (d,) or cov1.shape != (d, d) or cov2.shape != (d, d):
        raise ValidationError(f"dimension mismatch: mu {mu1.shape}/{mu2.shape}, cov {cov1.shape}/{cov2.shape}")
    cov1, cov2 = _sym_psd(cov1), _sym_psd(cov2)
    s1 = _sqrt_psd(cov1)
    w = np.linalg.eigvalsh(_sym_psd(s1 @ cov2 @ s1))
    tr_sqrt = np.sqrt(np.clip(w, 0.0, None)).sum()
    diff = mu1 - mu2
    value = diff @ diff + np.trace(cov1) + np.trace(cov2) - 2.0 * tr_sqrt
    return float(max(value, 0.0))


def fit_gaussian(features: np.ndarray, shrinkage: float = SHRINKAGE) -> tuple[np.ndarray, np.ndarray]:
    """Mean and maximum-likelihood covariance (``ddof=0``).

    With fewer than ``d + 1`` samples the covariance is rank deficient; a
    warning is issued and ``shrinkage * I`` is added.
    """
    F = np.asarray(features, dtype=np.float64)
    if F.ndim != 2 or len(F) == 0:
        raise ValidationError("features must be a non-empty (n, d) array")
    n, d = F.shape
    mu = F.mean(axis=0)
    cov = np.atleast_2d(np.cov(F, rowvar=False, ddof=0)) if n > 1 else np.zeros((d, d))
    if n < d + 1:
        warnings.warn(f"{n} samples for {d}-dim features; adding {shrinkage}*I to the covariance",
                      RuntimeWarning, stacklevel=2)
        cov = cov + shrinkage * np.eye(d)
    return mu, cov


def frechet_distance_features(f_real: np.ndarray, f_syn: np.ndarray) -> float:
    return frechet_gaussian(*fit_gaussian(f_real), *fit_gaussian(f_syn))
