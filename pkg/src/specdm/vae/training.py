"""Dataset-level entry points around :class:`TwoStreamVAE`."""
from __future__ import annotations

import numpy as np

from ..data import Dataset, normalize
from ..errors import ValidationError
from .estimator import TwoStreamVAE


def dataset_arrays(dataset: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Normalised image stack and masks in the layout ``TwoStreamVAE.fit`` expects."""
    man = dataset.manifest
    if dataset.task == "SS":
        X = normalize(dataset.images, man)
    else:
        X = np.stack([normalize(dataset.images_t1, man), normalize(dataset.images_t2, man)], axis=1)
    return X, np.asarray(dataset.masks)


def train_vae(dataset: Dataset, seed: int = 0, **params) -> TwoStreamVAE:
    """Fit a codec on ``dataset`` (normalised with its manifest statistics)."""
    if len(dataset) == 0:
        raise ValidationError("cannot train on an empty dataset")
    X, y = dataset_arrays(dataset)
    vae = TwoStreamVAE(random_state=seed, **params)
    return vae.fit(X, y, n_classes=dataset.n_classes)
