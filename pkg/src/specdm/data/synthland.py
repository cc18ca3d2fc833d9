"""SynthLand: procedural hyperspectral scenes with known class spectra.

Every pixel spectrum is ``illumination(p) * class_spectrum[mask(p)] + noise``,
where the mask is a seeded Voronoi partition and the illumination is a smooth
positive multiplicative field. Because the spectral angle is scale
invariant, the noiseless images have zero angle to their class spectrum.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ValidationError
from .dataset import Dataset, DatasetManifest
from .preprocessing import with_training_normalization

MAX_SPECTRA_ATTEMPTS = 10_000


@dataclass(frozen=True)
class SynthLandConfig:
    """Generator settings.

    For ``task="CD"``, ``K`` is the number of land-cover classes; the stored
    mask is the binary change mask (manifest ``K == 2``).
    """

    K: int = 4
    C: int = 8
    H: int = 32
    W: int = 32
    n_samples: int = 100
    region_count_range: tuple[int, int] = (4, 10)
    spectrum_noise_std: float = 0.01
    illumination_strength: float = 0.3
    seed: int = 0
    task: str = "SS"
    change_region_count_range: tuple[int, int] = (1, 3)
    min_pairwise_sad: float = 0.3

    def __post_init__(self):
        object.__setattr__(self, "region_count_range", tuple(int(v) for v in self.region_count_range))
        object.__setattr__(self, "change_region_count_range",
                           tuple(int(v) for v in self.change_region_count_range))
        if self.K < 2:
            raise ValidationError("SynthLand requires K >= 2")
        if self.C < 2:
            raise ValidationError("SynthLand requires C >= 2")
        if self.H < 1 or self.W < 1 or self.n_samples < 1:
            raise ValidationError("H, W and n_samples must be positive")
        lo, hi = self.region_count_range
        if not 1 <= lo <= hi:
            raise ValidationError(f"invalid region_count_range {self.region_count_range}")
        if self.spectrum_noise_std < 0:
            raise ValidationError("spectrum_noise_std must be >= 0")
        if not 0 <= self.illumination_strength < 1:
            raise ValidationError("illumination_strength must lie in [0, 1)")
        if self.task not in ("SS", "CD"):
            raise ValidationError(f"unknown task {self.task!r}")
        clo, chi = self.change_region_count_range
        if self.task == "CD" and not (0 <= clo <= chi):
            raise ValidationError(f"invalid change_region_count_range {self.change_region_count_range}")
        if not 0 <= self.min_pairwise_sad < np.pi / 2:
            raise ValidationError("min_pairwise_sad must lie in [0, pi/2)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["region_count_range"] = list(self.region_count_range)
        d["change_region_count_range"] = list(self.change_region_count_range)
        return d


def _angle(a: np.ndarray, b: np.ndarray) -> float:
    cos = float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))
    return float(np.arccos(np.clip(cos, -1.0, 1.0)))


def draw_class_spectra(rng: np.random.Generator, K: int, C: int, min_sad: float) -> np.ndarray:
    """Positive unit-norm spectra with pairwise angle at least ``min_sad``."""
    spectra: list[np.ndarray] = []
    for _ in range(MAX_SPECTRA_ATTEMPTS):
        s = rng.uniform(0.05, 1.0, size=C)
        s /= np.linalg.norm(s)
        if all(_angle(s, t) >= min_sad for t in spectra):
            spectra.append(s)
            if len(spectra) == K:
                return np.stack(spectra)
    raise ValidationError(f"could not draw {K} spectra in {C} bands with pairwise SAD >= {min_sad}")


def voronoi_partition(rng: np.random.Generator, H: int, W: int, n_regions: int) -> np.ndarray:
    """Label each pixel with the index of its nearest random site."""
    sites = rng.uniform(0, 1, size=(n_regions, 2)) * np.array([H, W])
    yy, xx = np.mgrid[0:H, 0:W]
    pix = np.stack([yy + 0.5, xx + 0.5], axis=-1).reshape(-1, 1, 2)
    d2 = ((pix - sites[None]) ** 2).sum(-1)
    return d2.argmin(axis=1).reshape(H, W)


def illumination_field(rng: np.random.Generator, H: int, W: int, strength: float) -> np.ndarray:
    """Smooth positive field in ``[1 - strength, 1 + strength]``."""
    if strength == 0:
        return np.ones((H, W))
    yy, xx = np.mgrid[0:H, 0:W]
    g = np.zeros((H, W))
    n_waves = 2
    for _ in range(n_waves):
        fy, fx = rng.uniform(-1.0, 1.0, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        g += np.cos(2 * np.pi * (fy * yy / H + fx * xx / W) + phase)
    return 1.0 + strength * g / n_waves


def _render(rng, classes, spectra, cfg) -> np.ndarray:
    illum = illumination_field(rng, cfg.H, cfg.W, cfg.illumination_strength)
    img = illum[..., None] * spectra[classes]
    if cfg.spectrum_noise_std > 0:
        img = img + rng.normal(0.0, cfg.spectrum_noise_std, size=img.shape)
    return img


def generate_synthland(cfg: SynthLandConfig) -> Dataset:
    """Generate ``cfg.n_samples`` scenes; a pure function of ``cfg``."""
    rng = np.random.default_rng(cfg.seed)
    spectra = draw_class_spectra(rng, cfg.K, cfg.C, cfg.min_pairwise_sad)
    lo_r, hi_r = cfg.region_count_range
    masks, images, images_t2 = [], [], []
    for _ in range(cfg.n_samples):
        n_regions = int(rng.integers(lo_r, hi_r + 1))
        regions = voronoi_partition(rng, cfg.H, cfg.W, n_regions)
        region_class = rng.integers(0, cfg.K, size=n_regions)
        classes = region_class[regions]
        images.append(_render(rng, classes, spectra, cfg))
        if cfg.task == "SS":
            masks.append(classes)
            continue
        clo, chi = cfg.change_region_count_range
        n_change = min(int(rng.integers(clo, chi + 1)), n_regions)
        changed = rng.choice(n_regions, size=n_change, replace=False)
        region_class_t2 = region_class.copy()
        for r in changed:
            others = np.delete(np.arange(cfg.K), region_class[r])
            region_class_t2[r] = rng.choice(others)
        classes_t2 = region_class_t2[regions]
        images_t2.append(_render(rng, classes_t2, spectra, cfg))
        masks.append((classes != classes_t2).astype(np.int32))

    meta = {"class_spectra": spectra.tolist(), "config": cfg.to_dict(), "seed": cfg.seed}
    if cfg.task == "SS":
        names = [f"class_{k}" for k in range(cfg.K)]
        K_mask = cfg.K
    else:
        names = ["unchanged", "changed"]
        K_mask = 2
    man = DatasetManifest(task=cfg.task, K=K_mask, C=cfg.C, H=cfg.H, W=cfg.W, class_names=names,
                          sample_count=cfg.n_samples, synthland=meta)
    if cfg.task == "SS":
        ds = Dataset(man, np.stack(masks), images=np.stack(images))
    else:
        ds = Dataset(man, np.stack(masks), images_t1=np.stack(images), images_t2=np.stack(images_t2))
    return with_training_normalization(ds)


def oracle_spectra(dataset: Dataset) -> np.ndarray:
    if not dataset.manifest.synthland:
        raise ValidationError("dataset carries no SynthLand oracle spectra")
    return np.asarray(dataset.manifest.synthland["class_spectra"], dtype=np.float64)
