"""Train, generate, augment, evaluate: composable stages and the end-to-end driver."""
from __future__ import annotations

import dataclasses
import json
import logging
from pathlib import Path

import numpy as np

from .config import RunConfig, dump_config
from .data import (Dataset, DatasetManifest, generate_synthland, load_dataset, save_dataset,
                   with_training_normalization)
from .diffusion import LatentDiffusion
from .downstream import ExperimentGrid, run_experiment, write_experiment_report
from .errors import ValidationError
from .evaluation import FeatureExtractor, evaluate, export_profiles, spectral_profiles, write_report
from .synthesis import codec_digest, generate
from .utils import file_hash
from .vae import TwoStreamVAE, dataset_arrays

logger = logging.getLogger(__name__)


def prepare_data(cfg: RunConfig, seed: int) -> tuple[Dataset, Dataset]:
    """Real (train, test) split; normalisation statistics come from the train split only."""
    d = cfg.data
    if d.path:
        full = load_dataset(d.path)
        if full.task != d.task:
            raise ValidationError(f"data.path holds a {full.task} dataset, config says {d.task}")
    else:
        full = generate_synthland(d.synthland(seed))
    if not 0 < d.n_test < len(full):
        raise ValidationError(f"data.n_test={d.n_test} incompatible with {len(full)} samples")
    train, test = full.split(d.n_test, seed=d.split_seed)
    train = with_training_normalization(train)
    test = test.with_manifest(norm_lo=train.manifest.norm_lo, norm_hi=train.manifest.norm_hi)
    return train, test


def fit_codec(train: Dataset, cfg: RunConfig, seed: int, metrics_path=None, **overrides) -> TwoStreamVAE:
    params = {**dataclasses.asdict(cfg.codec), **overrides}
    X, y = dataset_arrays(train)
    vae = TwoStreamVAE(random_state=seed, metrics_path=metrics_path, **params)
    return vae.fit(X, y, n_classes=train.n_classes)


def encode_latents(vae: TwoStreamVAE, dataset: Dataset) -> np.ndarray:
    """Joint posterior-mean latents ``(N, h, w, k*c)`` of ``dataset``."""
    X, y = dataset_arrays(dataset)
    return vae.transform(X, y)


def fit_denoiser(Z: np.ndarray, cfg: RunConfig, seed: int, metrics_path=None, **overrides) -> LatentDiffusion:
    params = {**dataclasses.asdict(cfg.diffusion), **overrides}
    params["channel_mult"] = tuple(params["channel_mult"])
    return LatentDiffusion(random_state=seed, metrics_path=metrics_path, **params).fit(Z)


def save_codec(vae: TwoStreamVAE, path, manifest: DatasetManifest) -> str:
    """Save the codec with its training manifest; returns the checkpoint digest."""
    vae.save(path, extra={"manifest": manifest.to_dict()})
    return codec_digest(path)


def save_denoiser(diffusion: LatentDiffusion, path, codec_hash: str) -> str:
    diffusion.save(path, extra={"codec_hash": codec_hash})
    return file_hash(Path(path) / "denoiser.pt")


def make_extractor(cfg: RunConfig, vae: TwoStreamVAE | None, manifest: DatasetManifest) -> FeatureExtractor:
    if cfg.evaluation.extractor == "codec_latent_pool":
        return FeatureExtractor("codec_latent_pool", codec=vae, manifest=manifest)
    return FeatureExtractor("band_stats")


def evaluate_to_dir(real: Dataset, syn: Dataset, out, extractor: FeatureExtractor,
                    profiles: bool = True) -> dict:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    report = evaluate(real, syn, extractor)
    write_report(report, out / "metrics.json")
    if profiles and real.task == "SS":
        export_profiles(spectral_profiles(real), out / "profiles_real.csv")
        export_profiles(spectral_profiles(syn), out / "profiles_syn.csv")
    return report


def downstream_grid(cfg: RunConfig) -> ExperimentGrid:
    ds = cfg.downstream
    model = "small_segmenter" if cfg.data.task == "SS" else "small_siamese_cd"
    return ExperimentGrid(real_n=ds.real_n, syn_multipliers=ds.syn_multipliers, model=model, seeds=ds.seeds,
                          epochs=ds.epochs,
                          model_params={"base_width": ds.base_width, "levels": ds.levels,
                                        "batch_size": ds.batch_size, "learning_rate": ds.learning_rate})


def _check_budget(cfg: RunConfig) -> None:
    if not cfg.downstream.enabled:
        return
    grid = downstream_grid(cfg)
    n_train = cfg.data.n_samples - cfg.data.n_test if not cfg.data.path else None
    if n_train is not None and grid.real_n > n_train:
        raise ValidationError(f"downstream.real_n={grid.real_n} exceeds the {n_train} real training samples")
    need = max(s for _, _, s in grid.configurations())
    if need > cfg.synthesis.n_samples:
        raise ValidationError(f"downstream grid needs {need} synthetic samples, synthesis.n_samples="
                              f"{cfg.synthesis.n_samples}")


def run_pipeline(cfg: RunConfig, out, seed: int | None = None) -> dict:
    """Run every stage and write all artifacts under ``out``.

    Layout: ``config.yaml``, ``data/real_train``, ``data/real_test``,
    ``codec/``, ``denoiser/``, ``synthetic/``, ``metrics.json``, spectral
    profile CSVs and, unless disabled, ``experiment_report.json``.
    """
    seed = cfg.seed if seed is None else seed
    _check_budget(cfg)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(dump_config(dataclasses.replace(cfg, seed=seed)), encoding="utf-8")

    train, test = prepare_data(cfg, seed)
    save_dataset(train, out / "data" / "real_train")
    save_dataset(test, out / "data" / "real_test")
    logger.info("data: %d train / %d test %s samples", len(train), len(test), train.task)

    vae = fit_codec(train, cfg, seed, metrics_path=out / "codec_metrics.jsonl")
    chash = save_codec(vae, out / "codec", train.manifest)
    logger.info("codec trained: %s", vae.final_losses_)

    Z = encode_latents(vae, train)
    diffusion = fit_denoiser(Z, cfg, seed, metrics_path=out / "diffusion_metrics.jsonl")
    dhash = save_denoiser(diffusion, out / "denoiser", chash)
    logger.info("denoiser trained, final loss %.4f", float(np.mean(diffusion.losses_[-100:])))

    syn = generate(vae, diffusion, train.manifest, cfg.synthesis.n_samples, seed=seed,
                   batch_size=cfg.synthesis.batch_size,
                   provenance={"codec_hash": chash, "denoiser_hash": dhash})
    save_dataset(syn, out / "synthetic")

    report = evaluate_to_dir(train, syn, out, make_extractor(cfg, vae, train.manifest),
                             profiles=cfg.evaluation.export_profiles)
    summary = {"out": str(out), "metrics": report}
    if cfg.downstream.enabled:
        exp = run_experiment(downstream_grid(cfg), train, test, syn)
        write_experiment_report(exp, out)
        summary["experiment"] = exp["aggregates"]
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True, default=str) + "\n",
                                      encoding="utf-8")
    return summary
