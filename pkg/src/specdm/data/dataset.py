"""In-memory dataset containers and the on-disk directory format."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Iterator

import numpy as np

from ..errors import DatasetFormatError, ValidationError, VersionMismatchError
from ..utils import json_hash
from .arrayio import read_array, write_array

FORMAT_VERSION = 1
TASKS = ("SS", "CD")


@dataclass(frozen=True)
class HsiSample:
    """A single training instance.

    SS samples carry ``image``; CD samples carry ``image_t1`` and ``image_t2``
    and a binary change ``mask``.
    """

    mask: np.ndarray
    image: np.ndarray | None = None
    image_t1: np.ndarray | None = None
    image_t2: np.ndarray | None = None


@dataclass(frozen=True)
class DatasetManifest:
    task: str
    K: int
    C: int
    H: int
    W: int
    class_names: list[str]
    sample_count: int
    norm_lo: list[float] | None = None
    norm_hi: list[float] | None = None
    format_version: int = FORMAT_VERSION
    synthland: dict | None = None
    synthetic: bool = False
    provenance: dict | None = None

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValidationError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.K < 2 or self.C < 1 or self.H < 1 or self.W < 1:
            raise ValidationError("manifest requires K >= 2 and positive C, H, W")
        if len(self.class_names) != self.K:
            raise ValidationError(f"len(class_names)={len(self.class_names)} != K={self.K}")
        if (self.norm_lo is None) != (self.norm_hi is None):
            raise ValidationError("norm_lo and norm_hi must be given together")
        if self.norm_lo is not None:
            if len(self.norm_lo) != self.C or len(self.norm_hi) != self.C:
                raise ValidationError("normalization arrays must have length C")
            if any(lo > hi for lo, hi in zip(self.norm_lo, self.norm_hi)):
                raise ValidationError("normalization requires lo <= hi for every band")

    @property
    def has_normalization(self) -> bool:
        return self.norm_lo is not None

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "DatasetManifest":
        version = d.get("format_version")
        if version != FORMAT_VERSION:
            raise VersionMismatchError(
                f"unsupported format_version {version!r}; this reader handles {FORMAT_VERSION}")
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise DatasetFormatError(f"unknown manifest fields: {sorted(unknown)}")
        return cls(**d)

    def digest(self) -> str:
        return json_hash(self.to_dict())


def _frozen(a: np.ndarray | None, dtype) -> np.ndarray | None:
    if a is None:
        return None
    a = np.ascontiguousarray(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Immutable stack of samples sharing one manifest.

    Arrays are channels-last: images ``(N, H, W, C)`` float32 and masks
    ``(N, H, W)`` int32.
    """

    manifest: DatasetManifest
    masks: np.ndarray
    images: np.ndarray | None = None
    images_t1: np.ndarray | None = None
    images_t2: np.ndarray | None = None
    warnings: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "masks", _frozen(self.masks, np.int32))
        for name in ("images", "images_t1", "images_t2"):
            object.__setattr__(self, name, _frozen(getattr(self, name), np.float32))
        self.validate()

    # -- invariants ---------------------------------------------------
    def validate(self) -> None:
        m = self.manifest
        n = len(self.masks)
        if self.masks.ndim != 3 or self.masks.shape[1:] != (m.H, m.W):
            raise ValidationError(f"masks must have shape (N, {m.H}, {m.W}), got {self.masks.shape}")
        if n != m.sample_count:
            raise ValidationError(f"manifest sample_count={m.sample_count} but {n} masks stored")
        if n and (self.masks.min() < 0 or self.masks.max() >= m.K):
            raise ValidationError(
                f"mask values must lie in [0, {m.K}); found range "
                f"[{int(self.masks.min())}, {int(self.masks.max())}]")
        arrays = self.image_arrays()
        if m.task == "SS":
            if self.images is None or self.images_t1 is not None or self.images_t2 is not None:
                raise ValidationError("SS dataset needs `images` only")
        else:
            if self.images is not None or self.images_t1 is None or self.images_t2 is None:
                raise ValidationError("CD dataset needs `images_t1` and `images_t2`")
            if n and self.masks.max() > 1:
                raise ValidationError("CD change masks must be binary")
        for arr in arrays:
            if arr.shape != (n, m.H, m.W, m.C):
                raise ValidationError(f"image stack must have shape {(n, m.H, m.W, m.C)}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValidationError("images contain NaN or Inf")

    # -- accessors ----------------------------------------------------
    @property
    def task(self) -> str:
        return self.manifest.task

    @property
    def n_classes(self) -> int:
        return self.manifest.K

    def image_arrays(self) -> list[np.ndarray]:
        if self.manifest.task == "SS":
            return [a for a in (self.images,) if a is not None]
        return [a for a in (self.images_t1, self.images_t2) if a is not None]

    def __len__(self) -> int:
        return len(self.masks)

    def __getitem__(self, i: int) -> HsiSample:
        if self.task == "SS":
            return HsiSample(mask=self.masks[i], image=self.images[i])
        return HsiSample(mask=self.masks[i], image_t1=self.images_t1[i], image_t2=self.images_t2[i])

    def __iter__(self) -> Iterator[HsiSample]:
        for i in range(len(self)):
            yield self[i]

    # -- derived datasets ----------------------------------------------
    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        take = lambda a: None if a is None else a[idx]  # noqa: E731
        man = replace(self.manifest, sample_count=len(idx))
        return Dataset(man, take(self.masks), take(self.images), take(self.images_t1), take(self.images_t2))

    def with_manifest(self, **changes) -> "Dataset":
        return Dataset(replace(self.manifest, **changes), self.masks, self.images,
                       self.images_t1, self.images_t2, self.warnings)

    def concat(self, other: "Dataset") -> "Dataset":
        """Pure union of two datasets; records both sources in provenance."""
        a, b = self.manifest, other.manifest
        if (a.task, a.K, a.C, a.H, a.W) != (b.task, b.K, b.C, b.H, b.W):
            raise ValidationError("cannot concatenate datasets with different task/K/C/H/W")
        cat = lambda x, y: None if x is None else np.concatenate([x, y])  # noqa: E731
        prov = {"union_of": [
            {"sample_count": a.sample_count, "synthetic": a.synthetic, "provenance": a.provenance},
            {"sample_count": b.sample_count, "synthetic": b.synthetic, "provenance": b.provenance},
        ]}
        man = replace(a, sample_count=len(self) + len(other), provenance=prov,
                      synthetic=a.synthetic and b.synthetic)
        return Dataset(man, cat(self.masks, other.masks), cat(self.images, other.images),
                       cat(self.images_t1, other.images_t1), cat(self.images_t2, other.images_t2))

    def split(self, n_test: int, seed: int = 0) -> tuple["Dataset", "Dataset"]:
        """Random disjoint (train, test) partition."""
        if not 0 < n_test < len(self):
            raise ValidationError(f"n_test must be in (0, {len(self)})")
        perm = np.random.default_rng(seed).permutation(len(self))
        return self.subset(np.sort(perm[n_test:])), self.subset(np.sort(perm[:n_test]))


# -- disk format ------------------------------------------------------

def _sample_dir(root: Path, i: int, n: int) -> Path:
    return root / "samples" / str(i).zfill(max(6, len(str(n))))


def save_dataset(dataset: Dataset, path) -> Path:
    """Write ``dataset`` to directory ``path`` (created if missing)."""
    root = Path(path)
    (root / "samples").mkdir(parents=True, exist_ok=True)
    man = dataset.manifest.to_dict()
    (root / "manifest.json").write_text(json.dumps(man, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    n = len(dataset)
    for i in range(n):
        d = _sample_dir(root, i, n)
        d.mkdir(exist_ok=True)
        write_array(d / "mask.arr", dataset.masks[i])
        if dataset.task == "SS":
            write_array(d / "image.arr", dataset.images[i])
        else:
            write_array(d / "image_t1.arr", dataset.images_t1[i])
            write_array(d / "image_t2.arr", dataset.images_t2[i])
    return root


def load_dataset(path) -> Dataset:
    root = Path(path)
    mpath = root / "manifest.json"
    if not mpath.is_file():
        raise DatasetFormatError(f"no manifest.json in {root}")
    try:
        raw = json.loads(mpath.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"manifest.json is not valid JSON: {exc}") from exc
    manifest = DatasetManifest.from_dict(raw)
    n = manifest.sample_count
    names = ["image"] if manifest.task == "SS" else ["image_t1", "image_t2"]
    masks, stacks = [], {k: [] for k in names}
    for i in range(n):
        d = _sample_dir(root, i, n)
        if not d.is_dir():
            raise DatasetFormatError(f"missing sample directory {d}")
        masks.append(read_array(d / "mask.arr"))
        for k in names:
            stacks[k].append(read_array(d / f"{k}.arr"))
    empty_img = np.zeros((0, manifest.H, manifest.W, manifest.C), np.float32)
    empty_msk = np.zeros((0, manifest.H, manifest.W), np.int32)
    arrays = {k: (np.stack(v) if v else empty_img) for k, v in stacks.items()}
    mask_arr = np.stack(masks) if masks else empty_msk
    if manifest.task == "SS":
        return Dataset(manifest, mask_arr, images=arrays["image"])
    return Dataset(manifest, mask_arr, images_t1=arrays["image_t1"], images_t2=arrays["image_t2"])


def import_npz(path, task: str = "SS", class_names: list[str] | None = None,
               n_classes: int | None = None) -> Dataset:
    """Build a dataset from an ``.npz`` archive.

    Expected keys: ``images`` (N, H, W, C) and ``masks`` (N, H, W) for SS;
    ``images_t1``, ``images_t2`` and ``masks`` for CD. Arrays exported from
    HDF5/MATLAB/GeoTIFF stacks can be converted with ``numpy.savez`` first.
    """
    with np.load(path) as z:
        arrays = {k: z[k] for k in z.files}
    if "masks" not in arrays:
        raise DatasetFormatError("npz archive lacks a `masks` array")
    masks = arrays["masks"].astype(np.int32)
    key = "images" if task == "SS" else "images_t1"
    if key not in arrays:
        raise DatasetFormatError(f"npz archive lacks `{key}`")
    N, H, W, C = arrays[key].shape
    K = n_classes or (2 if task == "CD" else int(masks.max()) + 1)
    names = class_names or [f"class_{k}" for k in range(K)]
    man = DatasetManifest(task=task, K=K, C=C, H=H, W=W, class_names=list(names), sample_count=N)
    if task == "SS":
        return Dataset(man, masks, images=arrays["images"])
    return Dataset(man, masks, images_t1=arrays["images_t1"], images_t2=arrays["images_t2"])
