"""Reference segmentation and change-detection models with an estimator API."""
from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted
from torch import nn
from torch.nn import functional as F

from ..errors import TrainingDivergedError, ValidationError
from ..utils import check_images, check_masks, derive_seed, torch_generator
from ..vae.networks import group_norm
from .metrics import f1, miou

_INFER_BATCH = 256


def _block(c_in, c_out):
    return nn.Sequential(nn.Conv2d(c_in, c_out, 3, padding=1), group_norm(c_out), nn.ReLU(inplace=True),
                         nn.Conv2d(c_out, c_out, 3, padding=1), group_norm(c_out), nn.ReLU(inplace=True))


class _Encoder(nn.Module):
    def __init__(self, in_ch, width, levels):
        super().__init__()
        widths = [width * 2 ** i for i in range(levels)]
        self.widths = widths
        self.blocks = nn.ModuleList(_block(c_in, c_out) for c_in, c_out in zip([in_ch] + widths[:-1], widths))

    def forward(self, x):
        feats = []
        for i, blk in enumerate(self.blocks):
            x = blk(x if i == 0 else F.max_pool2d(x, 2))
            feats.append(x)
        return feats


class _Decoder(nn.Module):
    def __init__(self, widths, n_out):
        super().__init__()
        self.ups = nn.ModuleList(_block(widths[i] + widths[i + 1], widths[i]) for i in range(len(widths) - 1))
        self.head = nn.Conv2d(widths[0], n_out, 1)

    def forward(self, feats):
        x = feats[-1]
        for i in range(len(feats) - 2, -1, -1):
            x = F.interpolate(x, scale_factor=2, mode="nearest")
            x = self.ups[i](torch.cat([x, feats[i]], dim=1))
        return self.head(x)


class UNetSegmenter(nn.Module):
    def __init__(self, in_ch, n_classes, width=24, levels=4):
        super().__init__()
        self.encoder = _Encoder(in_ch, width, levels)
        self.decoder = _Decoder(self.encoder.widths, n_classes)

    def forward(self, x):
        return self.decoder(self.encoder(x))


class SiameseCD(nn.Module):
    """Shared encoder on both dates; skips are absolute feature differences."""

    def __init__(self, in_ch, width=24, levels=4):
        super().__init__()
        self.encoder = _Encoder(in_ch, width, levels)
        self.decoder = _Decoder(self.encoder.widths, 2)

    def forward(self, x1, x2):
        f1_, f2_ = self.encoder(x1), self.encoder(x2)
        return self.decoder([torch.abs(a - b) for a, b in zip(f1_, f2_)])


class _TorchDenseClassifier(ClassifierMixin, BaseEstimator):
    """Shared fit/predict loop; subclasses define the network and input split."""

    n_images = 1

    def __init__(self, base_width=24, levels=4, epochs=10, batch_size=16, learning_rate=1e-3,
                 random_state=0, verbose=0):
        self.base_width = base_width
        self.levels = levels
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.random_state = random_state
        self.verbose = verbose

    def _tensor(self, X):
        X = check_images(X, ndim=4 if self.n_images == 1 else 5)
        if self.n_images == 2 and X.shape[1] != 2:
            raise ValidationError("change detection input must be (N, 2, H, W, C)")
        div = 2 ** (self.levels - 1)
        if X.shape[-3] % div or X.shape[-2] % div:
            raise ValidationError(f"H and W must be divisible by {div}")
        return torch.from_numpy(np.ascontiguousarray(np.moveaxis(X.astype(np.float32), -1, -3)))

    def fit(self, X, y, n_classes=None):
        xt = self._tensor(X)
        y = check_masks(y, n_classes)
        K = n_classes or (2 if self.n_images == 2 else int(y.max()) + 1)
        self.n_classes_ = K
        self.classes_ = np.arange(K)
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(derive_seed(self.random_state, 0))
            self.model_ = self._make_net(xt.shape[-3], K)
        yt = torch.from_numpy(y.astype(np.int64))
        opt = torch.optim.Adam(self.model_.parameters(), lr=self.learning_rate)
        gen = torch_generator(derive_seed(self.random_state, 1))
        self.history_ = []
        self.model_.train()
        for epoch in range(self.epochs):
            perm = torch.randperm(len(xt), generator=gen)
            total, nb = 0.0, 0
            for s in range(0, len(xt), self.batch_size):
                idx = perm[s:s + self.batch_size]
                loss = F.cross_entropy(self._forward(xt[idx]), yt[idx])
                if not torch.isfinite(loss):
                    raise TrainingDivergedError(f"{type(self).__name__} loss non-finite at epoch {epoch}")
                opt.zero_grad(set_to_none=True)
                loss.backward()
                opt.step()
                total += float(loss.detach())
                nb += 1
            self.history_.append({"epoch": epoch, "loss": total / max(nb, 1)})
        self.model_.eval()
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        xt = self._tensor(X)
        outs = []
        with torch.no_grad():
            for s in range(0, len(xt), _INFER_BATCH):
                outs.append(torch.softmax(self._forward(xt[s:s + _INFER_BATCH]), dim=1))
        return np.moveaxis(torch.cat(outs).numpy(), 1, -1)

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=-1).astype(np.int32)

    def evaluate(self, X, y) -> dict:
        pred = self.predict(X)
        return {"miou": miou(pred, y, self.n_classes_),
                "f1": f1(pred, y, self.n_classes_, binary=self.n_images == 2)}

    def score(self, X, y, sample_weight=None):
        return self.evaluate(X, y)["miou"]


class SmallSegmenter(_TorchDenseClassifier):
    """Four-level encoder-decoder trained with per-pixel cross entropy.

    ``base_width=24`` gives roughly one million parameters.
    """

    def _make_net(self, in_ch, K):
        return UNetSegmenter(in_ch, K, self.base_width, self.levels)

    def _forward(self, x):
        return self.model_(x)


class SiameseChangeDetector(_TorchDenseClassifier):
    """Binary change detector on ``(N, 2, H, W, C)`` bi-temporal stacks."""

    n_images = 2

    def _make_net(self, in_ch, K):
        if K != 2:
            raise ValidationError("change detection is binary")
        return SiameseCD(in_ch, self.base_width, self.levels)

    def _forward(self, x):
        return self.model_(x[:, 0], x[:, 1])
