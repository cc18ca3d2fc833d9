"""Synthesis-quality metrics: FID analogue, mSAD, class-distribution divergence, profiles."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..data import Dataset, class_distribution
from ..errors import ValidationError
from ..vae.losses import sad
from .features import FeatureExtractor, dataset_images, mask_features
from .frechet import frechet_distance_features


def fid(real: Dataset, syn: Dataset, extractor: FeatureExtractor | None = None, which: str = "image") -> float:
    """Fréchet distance between feature Gaussians of two image sets."""
    if len(real) == 0 or len(syn) == 0:
        raise ValidationError("fid needs non-empty datasets")
    extractor = extractor or FeatureExtractor()
    return frechet_distance_features(extractor(dataset_images(real, which)),
                                     extractor(dataset_images(syn, which)))


def fid_mask(real: Dataset, syn: Dataset) -> float:
    if len(real) == 0 or len(syn) == 0:
        raise ValidationError("fid needs non-empty datasets")
    if real.n_classes != syn.n_classes:
        raise ValidationError("datasets disagree on K")
    K = real.n_classes
    return frechet_distance_features(mask_features(real.masks, K), mask_features(syn.masks, K))


def _class_sums(images: np.ndarray, masks: np.ndarray, K: int):
    C = images.shape[-1]
    lab = masks.reshape(-1)
    pix = images.reshape(-1, C).astype(np.float64)
    counts = np.bincount(lab, minlength=K)
    sums = np.stack([np.bincount(lab, weights=pix[:, b], minlength=K) for b in range(C)], axis=1)
    return counts, sums, lab, pix


def class_mean_spectra(dataset: Dataset, which: str = "image") -> tuple[np.ndarray, np.ndarray]:
    """``(K, C)`` mean spectra (NaN rows for absent classes) and per-class pixel counts."""
    counts, sums, _, _ = _class_sums(dataset_images(dataset, which), dataset.masks, dataset.n_classes)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = sums / counts[:, None]
    means[counts == 0] = np.nan
    return means, counts


@dataclass(frozen=True)
class MSADResult:
    msad: float
    per_class: dict[int, float]
    coverage_gaps: list[int]


def msad(real: Dataset, syn: Dataset) -> MSADResult:
    """Mean over shared classes of the angle between real and synthetic class-mean spectra."""
    if real.n_classes != syn.n_classes or real.manifest.C != syn.manifest.C:
        raise ValidationError("datasets must share K and C")
    mr, cr = class_mean_spectra(real)
    ms, cs = class_mean_spectra(syn)
    common = [k for k in range(real.n_classes) if cr[k] > 0 and cs[k] > 0]
    gaps = [k for k in range(real.n_classes) if k not in common]
    if not common:
        raise ValidationError("no class present in both datasets")
    angles = sad(mr[common], ms[common])
    per_class = {k: float(a) for k, a in zip(common, angles)}
    return MSADResult(float(np.mean(angles)), per_class, gaps)


@dataclass(frozen=True)
class SpectralProfile:
    class_id: int
    mean: np.ndarray
    std: np.ndarray
    pixel_count: int


def spectral_profiles(dataset: Dataset, which: str = "image") -> list[SpectralProfile]:
    """Per-class mean and (population) std spectrum for every class present."""
    if len(dataset) == 0:
        raise ValidationError("spectral_profiles of an empty dataset")
    counts, sums, lab, pix = _class_sums(dataset_images(dataset, which), dataset.masks, dataset.n_classes)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = sums / counts[:, None]
    resid = (pix - np.nan_to_num(means)[lab]) ** 2
    sq = np.stack([np.bincount(lab, weights=resid[:, b], minlength=len(counts))
                   for b in range(pix.shape[1])], axis=1)
    out = []
    for k in range(dataset.n_classes):
        if counts[k] == 0:
            continue
        out.append(SpectralProfile(k, means[k], np.sqrt(sq[k] / counts[k]), int(counts[k])))
    return out


def export_profiles(profiles: list[SpectralProfile], path) -> Path:
    """CSV with columns ``class, band, mean, std``."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["class", "band", "mean", "std"])
        for p in profiles:
            for b, (m, s) in enumerate(zip(p.mean, p.std)):
                w.writerow([p.class_id, b, repr(float(m)), repr(float(s))])
    return path


def read_profiles(path) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    rows: dict[int, list[tuple[int, float, float]]] = {}
    with Path(path).open(encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            rows.setdefault(int(r["class"]), []).append((int(r["band"]), float(r["mean"]), float(r["std"])))
    out = {}
    for k, vals in rows.items():
        vals.sort()
        out[k] = (np.array([v[1] for v in vals]), np.array([v[2] for v in vals]))
    return out


def distribution_divergence(p, q) -> float:
    """Total-variation distance ``0.5 * sum |p_k - q_k|``.

    Accepts class-fraction vectors or datasets.
    """
    if isinstance(p, Dataset):
        p = class_distribution(p)
    if isinstance(q, Dataset):
        q = class_distribution(q)
    p, q = np.asarray(p, dtype=np.float64), np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValidationError("distributions must share K")
    return float(0.5 * np.abs(p - q).sum())


def pixel_change_score(images_t1: np.ndarray, images_t2: np.ndarray) -> np.ndarray:
    """Per-pixel spectral angle between the two dates, shape ``(N, H, W)``.

    The angle ignores the illumination scaling that multiplies whole spectra.
    """
    return sad(np.asarray(images_t1, dtype=np.float64), np.asarray(images_t2, dtype=np.float64))


def calibrate_change_threshold(dataset: Dataset) -> tuple[float, float]:
    """Threshold on :func:`pixel_change_score` maximising pixel agreement with the change masks.

    Returns ``(tau, agreement)``; a pixel is flagged changed when its score exceeds ``tau``.
    """
    if dataset.task != "CD":
        raise ValidationError("change-threshold calibration needs a CD dataset")
    score = pixel_change_score(dataset.images_t1, dataset.images_t2).ravel()
    truth = dataset.masks.ravel().astype(bool)
    order = np.argsort(score, kind="stable")
    s, t = score[order], truth[order]
    # flag everything above position i: correct = negatives at or below i + positives above i
    neg_below = np.concatenate([[0], np.cumsum(~t)])
    pos_above = t.sum() - np.concatenate([[0], np.cumsum(t)])
    correct = neg_below + pos_above
    # only cut between distinct scores
    valid = np.concatenate([[True], s[1:] != s[:-1], [True]])
    correct = np.where(valid, correct, -1)
    i = int(np.argmax(correct))
    if i == 0:
        tau = float(s[0]) - 1.0
    elif i == len(s):
        tau = float(s[-1])
    else:
        tau = float(0.5 * (s[i - 1] + s[i]))
    return tau, float(correct[i] / len(s))


def change_agreement(dataset: Dataset, tau: float) -> float:
    """Fraction of pixels where the stored change mask equals ``score > tau``."""
    if dataset.task != "CD":
        raise ValidationError("change agreement needs a CD dataset")
    flagged = pixel_change_score(dataset.images_t1, dataset.images_t2) > tau
    return float(np.mean(flagged == dataset.masks.astype(bool)))


def evaluate(real: Dataset, syn: Dataset, extractor: FeatureExtractor | None = None) -> dict:
    """Assemble the ``metrics.json`` report."""
    extractor = extractor or FeatureExtractor()
    report = {
        "fid_image": fid(real, syn, extractor, "image"),
        "fid_image_t2": fid(real, syn, extractor, "image_t2") if real.task == "CD" else None,
        "fid_mask": fid_mask(real, syn),
        "msad": None,
        "msad_per_class": None,
        "tv_distance": distribution_divergence(real, syn),
        "extractor": extractor.describe(),
        "n_real": len(real),
        "n_syn": len(syn),
    }
    if real.task == "SS":
        res = msad(real, syn)
        report["msad"] = res.msad
        report["msad_per_class"] = {str(k): v for k, v in res.per_class.items()}
        report["msad_coverage_gaps"] = res.coverage_gaps
    else:
        tau, real_agree = calibrate_change_threshold(real)
        report["change_threshold"] = tau
        report["change_agreement_real"] = real_agree
        report["change_agreement_syn"] = change_agreement(syn, tau)
    return report


def write_report(report: dict, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
