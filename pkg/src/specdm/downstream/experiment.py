"""Real / synthetic / augmented training-set comparison for downstream models."""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ..data import Dataset, normalize
from ..errors import ValidationError
from .models import SiameseChangeDetector, SmallSegmenter

logger = logging.getLogger(__name__)

MODELS = {"small_segmenter": ("SS", SmallSegmenter), "small_siamese_cd": ("CD", SiameseChangeDetector)}


def _inputs(dataset: Dataset, norm_manifest=None) -> np.ndarray:
    man = norm_manifest or dataset.manifest
    if dataset.task == "SS":
        return normalize(dataset.images, man)
    return np.stack([normalize(dataset.images_t1, man), normalize(dataset.images_t2, man)], axis=1)


def _check_pair(a: Dataset, b: Dataset) -> None:
    ma, mb = a.manifest, b.manifest
    if (ma.task, ma.K, ma.C, ma.H, ma.W) != (mb.task, mb.K, mb.C, mb.H, mb.W):
        raise ValidationError("train and test sets must share task, K, C, H and W")


def train_segmenter(train_set: Dataset, cfg: dict | None = None, seed: int = 0, norm_manifest=None):
    """Fit a :class:`SmallSegmenter` on an SS dataset.

    ``norm_manifest`` supplies normalisation statistics (defaults to the
    training set's own manifest).
    """
    if train_set.task != "SS":
        raise ValidationError("train_segmenter needs an SS dataset")
    model = SmallSegmenter(**{**(cfg or {}), "random_state": seed})
    return model.fit(_inputs(train_set, norm_manifest), train_set.masks, n_classes=train_set.n_classes)


def train_cd_model(train_set: Dataset, cfg: dict | None = None, seed: int = 0, norm_manifest=None):
    if train_set.task != "CD":
        raise ValidationError("train_cd_model needs a CD dataset")
    model = SiameseChangeDetector(**{**(cfg or {}), "random_state": seed})
    return model.fit(_inputs(train_set, norm_manifest), train_set.masks, n_classes=2)


def evaluate(model, test_set: Dataset, norm_manifest=None) -> dict:
    """``{"miou", "f1"}`` of ``model`` on ``test_set``."""
    return model.evaluate(_inputs(test_set, norm_manifest), test_set.masks)


def sample_digests(dataset: Dataset) -> set[str]:
    out = set()
    for i in range(len(dataset)):
        h = hashlib.sha256(dataset.masks[i].tobytes())
        for arr in dataset.image_arrays():
            h.update(arr[i].tobytes())
        out.add(h.hexdigest())
    return out


def assert_disjoint(train: Dataset, test: Dataset) -> None:
    shared = sample_digests(train) & sample_digests(test)
    if shared:
        raise ValidationError(f"{len(shared)} samples appear in both the training subset and the test split")


@dataclass(frozen=True)
class ExperimentGrid:
    """Training-set configurations to compare.

    Rows: real-only (``real_n`` real samples), synthetic-only (largest
    multiplier times ``real_n`` synthetic samples) and one augmented row per
    positive multiplier ``m`` (``real_n`` real plus ``m * real_n``
    synthetic). Evaluation is always on the real test split.
    """

    real_n: int
    syn_multipliers: tuple[int, ...] = (0, 1, 3, 5)
    model: str = "small_segmenter"
    seeds: tuple[int, ...] = (0, 1, 2)
    epochs: int = 10
    model_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValidationError(f"model must be one of {sorted(MODELS)}")
        if self.real_n < 1:
            raise ValidationError("real_n must be >= 1")
        if not self.seeds:
            raise ValidationError("at least one seed is required")
        if any(m < 0 for m in self.syn_multipliers):
            raise ValidationError("syn_multipliers must be non-negative")
        object.__setattr__(self, "syn_multipliers", tuple(int(m) for m in self.syn_multipliers))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))

    @property
    def task(self) -> str:
        return MODELS[self.model][0]

    def configurations(self) -> list[tuple[str, int, int]]:
        """``(name, real_n, syn_n)`` per row."""
        rows = [("real", self.real_n, 0)]
        pos = sorted({m for m in self.syn_multipliers if m > 0})
        if pos:
            rows.append(("syn", 0, pos[-1] * self.real_n))
            rows += [(f"real+syn x{m}", self.real_n, m * self.real_n) for m in pos]
        return rows

    def to_dict(self) -> dict:
        return asdict(self)


def run_experiment(grid: ExperimentGrid, real_train: Dataset, real_test: Dataset,
                   synthetic: Dataset | None = None, model_factory: Callable | None = None) -> dict:
    """Train one model per (configuration, seed) and score it on ``real_test``.

    ``model_factory(seed)`` may supply any estimator with ``fit(X, y,
    n_classes)`` and ``evaluate(X, y)``; the default builds the grid's
    reference model. Images are normalised with ``real_train``'s manifest.
    """
    configs = grid.configurations()
    # every check happens before the first model is trained
    for ds, name in ((real_train, "real_train"), (real_test, "real_test")):
        if ds is None:
            raise ValidationError(f"{name} dataset is missing")
        if ds.task != grid.task:
            raise ValidationError(f"{name} is a {ds.task} dataset but model {grid.model} needs {grid.task}")
    _check_pair(real_train, real_test)
    if len(real_train) < grid.real_n:
        raise ValidationError(f"real_train has {len(real_train)} samples, grid needs {grid.real_n}")
    syn_needed = max(s for _, _, s in configs)
    if syn_needed:
        if synthetic is None:
            raise ValidationError("grid has synthetic rows but no synthetic dataset was given")
        _check_pair(real_train, synthetic)
        if len(synthetic) < syn_needed:
            raise ValidationError(f"synthetic set has {len(synthetic)} samples, grid needs {syn_needed}")
    norm = real_train.manifest
    if not norm.has_normalization:
        raise ValidationError("real_train manifest carries no normalisation statistics")
    real_sub = real_train.subset(np.arange(grid.real_n))
    assert_disjoint(real_sub, real_test)

    X_test = _inputs(real_test, norm)
    y_test = real_test.masks
    K = real_train.n_classes
    cls = MODELS[grid.model][1]
    factory = model_factory or (lambda seed: cls(**{**grid.model_params, "epochs": grid.epochs,
                                                    "random_state": seed}))
    records, aggregates = [], []
    for name, rn, sn in configs:
        parts = []
        if rn:
            parts.append(real_sub)
        if sn:
            parts.append(synthetic.subset(np.arange(sn)))
        train = parts[0] if len(parts) == 1 else parts[0].concat(parts[1])
        X, y = _inputs(train, norm), train.masks
        rows = []
        for seed in grid.seeds:
            model = factory(seed).fit(X, y, n_classes=K)
            scores = model.evaluate(X_test, y_test)
            rec = {"model": grid.model, "config": name, "real_n": rn, "syn_n": sn, "seed": seed,
                   "miou": float(scores["miou"]), "f1": float(scores["f1"])}
            logger.info("%s seed=%d miou=%.4f f1=%.4f", name, seed, rec["miou"], rec["f1"])
            rows.append(rec)
        records += rows
        mi = np.array([r["miou"] for r in rows])
        f = np.array([r["f1"] for r in rows])
        aggregates.append({"model": grid.model, "config": name, "real_n": rn, "syn_n": sn,
                           "n_seeds": len(rows), "miou_mean": float(mi.mean()), "miou_std": float(mi.std()),
                           "f1_mean": float(f.mean()), "f1_std": float(f.std()), "per_seed": rows})
    return {"grid": grid.to_dict(), "n_test": len(real_test), "records": records, "aggregates": aggregates}


def render_table(report: dict) -> str:
    head = f"{'config':<16}{'real':>7}{'syn':>7}   {'mIoU':<17}{'F1':<17}"
    lines = [f"model: {report['grid']['model']}  (test n={report['n_test']}, seeds={len(report['grid']['seeds'])})",
             head, "-" * len(head)]
    for a in report["aggregates"]:
        real = str(a["real_n"]) if a["real_n"] else "-"
        syn = str(a["syn_n"]) if a["syn_n"] else "-"
        mi = f"{a['miou_mean']:.4f}±{a['miou_std']:.4f}"
        f = f"{a['f1_mean']:.4f}±{a['f1_std']:.4f}"
        lines.append(f"{a['config']:<16}{real:>7}{syn:>7}   {mi:<17}{f:<17}")
    return "\n".join(lines) + "\n"


def write_experiment_report(report: dict, out_dir) -> tuple[Path, Path]:
    """Write ``experiment_report.json`` and ``experiment_table.txt`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jp, tp = out / "experiment_report.json", out / "experiment_table.txt"
    jp.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    tp.write_text(render_table(report), encoding="utf-8")
    return jp, tp
