"""Generate synthetic paired datasets from a trained codec and denoiser."""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .data import Dataset, DatasetManifest, denormalize, save_dataset
from .diffusion import LatentDiffusion
from .errors import ValidationError
from .utils import derive_seed, file_hash
from .vae import TwoStreamVAE, split_channels

logger = logging.getLogger(__name__)

STREAMS = {"SS": 2, "CD": 3}
MAX_ATTEMPTS = 10


def split_latent(z_joint: np.ndarray, task: str, c: int) -> list[np.ndarray]:
    """Split ``(…, h, w, k*c)`` into ``k`` latents: image(s) first, mask last."""
    if task not in STREAMS:
        raise ValidationError(f"unknown task {task!r}")
    return split_channels(np.asarray(z_joint), STREAMS[task], c)


def concat_latent(parts) -> np.ndarray:
    return np.concatenate(list(parts), axis=-1)


@dataclass(frozen=True)
class SynthesisJob:
    task: str
    n_samples: int
    seed: int
    codec_path: str
    denoiser_path: str
    out_path: str | None = None
    batch_size: int = 256


def codec_digest(codec_dir) -> str:
    return file_hash(Path(codec_dir) / "codec.pt")


def check_compatible(vae: TwoStreamVAE, diffusion: LatentDiffusion, task: str,
                     codec_hash: str | None = None) -> None:
    if vae.task_ != task:
        raise ValidationError(f"codec was trained for {vae.task_}, job asks for {task}")
    h, w, ch = diffusion.latent_shape_
    f = vae.downsample_factor
    H, W = vae.image_size_
    if (h * f, w * f) != (H, W):
        raise ValidationError(f"denoiser latent {h}x{w} incompatible with codec image {H}x{W}, f={f}")
    if ch != vae.joint_channels_:
        raise ValidationError(f"denoiser has {ch} channels, codec joint latent has {vae.joint_channels_}")
    want = getattr(diffusion, "sidecar_", {}).get("codec_hash")
    if codec_hash and want and want != codec_hash:
        raise ValidationError("denoiser was trained on latents of a different codec checkpoint")


def generate(vae: TwoStreamVAE, diffusion: LatentDiffusion, manifest: DatasetManifest, n_samples: int,
             seed: int = 0, batch_size: int = 256, provenance: dict | None = None) -> Dataset:
    """Sample ``n_samples`` pairs (SS) or triples (CD).

    Sample ``i`` uses seed ``derive_seed(seed, i, attempt)``; a non-finite
    decode is rejected and retried with the next attempt index.
    """
    task = manifest.task
    check_compatible(vae, diffusion, task)
    if n_samples < 1:
        raise ValidationError("n_samples must be >= 1")
    images, masks, used_seeds = [], [], []
    rejections = 0
    for start in range(0, n_samples, batch_size):
        idx = list(range(start, min(start + batch_size, n_samples)))
        attempt = {i: 0 for i in idx}
        done: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        pending = list(idx)
        while pending:
            seeds = [derive_seed(seed, i, attempt[i]) for i in pending]
            Z = diffusion.sample(len(pending), sample_seeds=seeds)
            imgs_norm, y = vae.inverse_transform(Z)
            retry = []
            for j, i in enumerate(pending):
                if np.all(np.isfinite(imgs_norm[j])):
                    done[i] = (denormalize(imgs_norm[j], manifest), y[j])
                    used_seeds.append(seeds[j])
                    continue
                rejections += 1
                attempt[i] += 1
                if attempt[i] >= MAX_ATTEMPTS:
                    raise ValidationError(f"sample {i} failed to decode after {MAX_ATTEMPTS} attempts")
                retry.append(i)
            pending = retry
        for i in idx:
            images.append(done[i][0])
            masks.append(done[i][1])
        logger.info("generated %d/%d samples", len(masks), n_samples)
    if rejections:
        logger.warning("rejected %d non-finite decodes", rejections)
    prov = {"seed": seed, "sample_seeds": used_seeds, "rejections": rejections,
            "schedule": diffusion.schedule_.params(), "latent_scale": diffusion.scale_,
            "codec_mode": vae.mode, **(provenance or {})}
    man = replace(manifest, sample_count=n_samples, synthetic=True, synthland=None, provenance=prov)
    M = np.stack(masks).astype(np.int32)
    X = np.stack(images)
    if task == "SS":
        return Dataset(man, M, images=X)
    return Dataset(man, M, images_t1=X[:, 0], images_t2=X[:, 1])


def _run_job(job: SynthesisJob, manifest: DatasetManifest | None) -> Dataset:
    vae = TwoStreamVAE.load(job.codec_path)
    if manifest is None:
        if "manifest" not in vae.sidecar_:
            raise ValidationError("codec sidecar carries no dataset manifest; pass one explicitly")
        manifest = DatasetManifest.from_dict(vae.sidecar_["manifest"])
    if manifest.task != job.task:
        raise ValidationError(f"job task {job.task} does not match manifest task {manifest.task}")
    diffusion = LatentDiffusion.load(job.denoiser_path)
    chash = codec_digest(job.codec_path)
    check_compatible(vae, diffusion, job.task, codec_hash=chash)
    prov = {"codec_hash": chash, "denoiser_hash": file_hash(Path(job.denoiser_path) / "denoiser.pt")}
    ds = generate(vae, diffusion, manifest, job.n_samples, job.seed, job.batch_size, prov)
    if job.out_path:
        save_dataset(ds, job.out_path)
    return ds


def synthesize_ss(job: SynthesisJob, manifest: DatasetManifest | None = None) -> Dataset:
    """Segmentation pairs from checkpoints.

    ``manifest`` supplies K, C and normalisation; by default it is the
    training manifest recorded in the codec sidecar.
    """
    if job.task != "SS":
        raise ValidationError("synthesize_ss needs an SS job")
    return _run_job(job, manifest)


def synthesize_cd(job: SynthesisJob, manifest: DatasetManifest | None = None) -> Dataset:
    if job.task != "CD":
        raise ValidationError("synthesize_cd needs a CD job")
    return _run_job(job, manifest)
