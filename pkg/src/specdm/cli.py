"""``specdm`` command-line entry point.

Exit codes: 0 success, 1 invalid input (bad flags, config, data), 2 runtime failure.
Logs go to stderr; machine-readable results go to files under ``--out``.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .errors import DatasetFormatError, TrainingDivergedError, ValidationError

logger = logging.getLogger("specdm")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; route it to the validation exit code instead
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def _common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
    p.add_argument("--config", type=Path, help="YAML run configuration (defaults apply to omitted keys)")
    p.add_argument("--seed", type=int, help="master seed; overrides the config's `seed`")
    p.add_argument("--out", type=Path, required=out_required, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="specdm", description="Paired hyperspectral image/mask synthesis with latent diffusion.")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    data = sub.add_parser("data", help="dataset utilities")
    dsub = data.add_subparsers(dest="data_command", required=True, parser_class=_Parser)
    p = dsub.add_parser("synth-toy", help="generate a SynthLand dataset from the config's data section")
    _common(p)
    p.add_argument("--n-samples", type=int, help="override data.n_samples")
    p.add_argument("--task", choices=["SS", "CD"], help="override data.task")
    p.set_defaults(func=cmd_synth_toy)
    p = dsub.add_parser("stats", help="summarise a dataset directory as JSON")
    p.add_argument("dataset", type=Path)
    p.add_argument("--out", type=Path, help="write JSON here instead of stdout")
    p.set_defaults(func=cmd_stats)
    p = dsub.add_parser("import", help="convert an .npz archive into a dataset directory")
    p.add_argument("source", type=Path)
    p.add_argument("--task", choices=["SS", "CD"], default="SS")
    p.add_argument("--n-classes", type=int)
    p.add_argument("--class-names", nargs="+")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_import)

    train = sub.add_parser("train", help="train the codec or the latent denoiser")
    tsub = train.add_subparsers(dest="train_command", required=True, parser_class=_Parser)
    p = tsub.add_parser("vae", help="train the two-stream (or single-stream) codec")
    _common(p)
    p.add_argument("--data", type=Path, required=True, help="training dataset directory")
    p.add_argument("--mode", choices=["two_stream", "single_stream_baseline"], help="override codec.mode")
    p.set_defaults(func=cmd_train_vae)
    p = tsub.add_parser("diffusion", help="train the denoiser on codec latents")
    _common(p)
    p.add_argument("--data", type=Path, required=True, help="training dataset directory")
    p.add_argument("--codec", type=Path, required=True, help="codec checkpoint directory")
    p.set_defaults(func=cmd_train_diffusion)

    p = sub.add_parser("generate", help="sample a synthetic dataset")
    _common(p)
    p.add_argument("--codec", type=Path, required=True)
    p.add_argument("--denoiser", type=Path, required=True)
    p.add_argument("--n-samples", type=int, help="override synthesis.n_samples")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval", help="compare a synthetic dataset against a real one; writes metrics.json")
    _common(p)
    p.add_argument("--real", type=Path, required=True)
    p.add_argument("--syn", type=Path, required=True)
    p.add_argument("--codec", type=Path, help="codec checkpoint (needed by the codec_latent_pool extractor)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("downstream", help="real / synthetic / augmented training comparison")
    _common(p)
    p.add_argument("--train", type=Path, required=True, help="real training dataset")
    p.add_argument("--test", type=Path, required=True, help="real test dataset")
    p.add_argument("--synthetic", type=Path, help="synthetic dataset (required when multipliers > 0)")
    p.set_defaults(func=cmd_downstream)

    p = sub.add_parser("pipeline", help="data, codec, denoiser, synthesis, evaluation and downstream in one run")
    _common(p)
    p.set_defaults(func=cmd_pipeline)
    return parser


# -- helpers ----------------------------------------------------------

def _config(args):
    from .config import RunConfig, load_config

    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _write_json(obj, path: Path | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path is None:
        sys.stdout.write(text)
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _load_real(path):
    from .data import load_dataset, with_training_normalization

    ds = load_dataset(path)
    if not ds.manifest.has_normalization:
        logger.info("%s has no normalisation statistics; computing them from its pixels", path)
        ds = with_training_normalization(ds)
    return ds


# -- subcommands ------------------------------------------------------

def cmd_synth_toy(args) -> int:
    from .data import generate_synthland, save_dataset

    cfg = _config(args)
    d = cfg.data
    if args.n_samples is not None:
        d = dataclasses.replace(d, n_samples=args.n_samples)
    if args.task:
        d = dataclasses.replace(d, task=args.task)
    ds = generate_synthland(d.synthland(cfg.seed))
    save_dataset(ds, args.out)
    logger.info("wrote %d %s samples to %s", len(ds), ds.task, args.out)
    return EXIT_OK


def cmd_stats(args) -> int:
    import numpy as np

    from .data import class_distribution, load_dataset

    ds = load_dataset(args.dataset)
    m = ds.manifest
    stats = {"task": m.task, "sample_count": len(ds), "K": m.K, "C": m.C, "H": m.H, "W": m.W,
             "class_names": list(m.class_names), "synthetic": m.synthetic,
             "class_distribution": class_distribution(ds).tolist(),
             "band_mean": np.mean([a.reshape(-1, m.C).mean(axis=0) for a in ds.image_arrays()],
                                  axis=0).tolist() if len(ds) else None,
             "has_normalization": m.has_normalization, "manifest_digest": m.digest()}
    _write_json(stats, args.out)
    return EXIT_OK


def cmd_import(args) -> int:
    from .data import import_npz, save_dataset

    if not args.source.is_file():
        raise ValidationError(f"{args.source} does not exist")
    ds = import_npz(args.source, task=args.task, class_names=args.class_names, n_classes=args.n_classes)
    save_dataset(ds, args.out)
    logger.info("imported %d samples into %s", len(ds), args.out)
    return EXIT_OK


def cmd_train_vae(args) -> int:
    from .pipeline import fit_codec, save_codec

    cfg = _config(args)
    train = _load_real(args.data)
    over = {"mode": args.mode} if args.mode else {}
    args.out.mkdir(parents=True, exist_ok=True)
    vae = fit_codec(train, cfg, cfg.seed, metrics_path=args.out / "metrics.jsonl", **over)
    digest = save_codec(vae, args.out, train.manifest)
    logger.info("codec saved to %s (sha256 %s)", args.out, digest[:12])
    return EXIT_OK


def cmd_train_diffusion(args) -> int:
    from .data import DatasetManifest, load_dataset
    from .pipeline import encode_latents, fit_denoiser, save_denoiser
    from .synthesis import codec_digest
    from .vae import TwoStreamVAE

    cfg = _config(args)
    vae = TwoStreamVAE.load(args.codec)
    ds = load_dataset(args.data)
    if "manifest" in vae.sidecar_:
        # encode with the statistics the codec was trained under
        trained = DatasetManifest.from_dict(vae.sidecar_["manifest"])
        ds = ds.with_manifest(norm_lo=trained.norm_lo, norm_hi=trained.norm_hi)
    elif not ds.manifest.has_normalization:
        raise ValidationError("neither the codec nor the dataset carries normalisation statistics")
    args.out.mkdir(parents=True, exist_ok=True)
    diffusion = fit_denoiser(encode_latents(vae, ds), cfg, cfg.seed, metrics_path=args.out / "metrics.jsonl")
    save_denoiser(diffusion, args.out, codec_digest(args.codec))
    logger.info("denoiser saved to %s", args.out)
    return EXIT_OK


def cmd_generate(args) -> int:
    from .synthesis import SynthesisJob, synthesize_cd, synthesize_ss
    from .vae import TwoStreamVAE

    cfg = _config(args)
    task = TwoStreamVAE.load(args.codec).task_
    n = args.n_samples if args.n_samples is not None else cfg.synthesis.n_samples
    job = SynthesisJob(task=task, n_samples=n, seed=cfg.seed, codec_path=str(args.codec),
                       denoiser_path=str(args.denoiser), out_path=str(args.out),
                       batch_size=cfg.synthesis.batch_size)
    ds = synthesize_ss(job) if task == "SS" else synthesize_cd(job)
    logger.info("wrote %d synthetic %s samples to %s", len(ds), task, args.out)
    return EXIT_OK


def cmd_eval(args) -> int:
    from .data import load_dataset
    from .pipeline import evaluate_to_dir, make_extractor
    from .vae import TwoStreamVAE

    cfg = _config(args)
    real, syn = _load_real(args.real), load_dataset(args.syn)
    vae = TwoStreamVAE.load(args.codec) if args.codec else None
    if cfg.evaluation.extractor == "codec_latent_pool" and vae is None:
        raise ValidationError("the codec_latent_pool extractor needs --codec")
    report = evaluate_to_dir(real, syn, args.out, make_extractor(cfg, vae, real.manifest),
                             profiles=cfg.evaluation.export_profiles)
    logger.info("fid_image=%.4f fid_mask=%.4f", report["fid_image"], report["fid_mask"])
    return EXIT_OK


def cmd_downstream(args) -> int:
    from .data import load_dataset
    from .downstream import render_table, run_experiment, write_experiment_report
    from .pipeline import downstream_grid

    cfg = _config(args)
    train = _load_real(args.train)
    cfg = dataclasses.replace(cfg, data=dataclasses.replace(cfg.data, task=train.task))
    test = load_dataset(args.test)
    syn = load_dataset(args.synthetic) if args.synthetic else None
    report = run_experiment(downstream_grid(cfg), train, test, syn)
    write_experiment_report(report, args.out)
    sys.stderr.write(render_table(report))
    return EXIT_OK


def cmd_pipeline(args) -> int:
    from .pipeline import run_pipeline

    cfg = _config(args)
    summary = run_pipeline(cfg, args.out)
    logger.info("pipeline finished; metrics in %s", Path(summary["out"]) / "metrics.json")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return EXIT_INVALID
    except SystemExit as exc:
        # --help exits 0 from inside argparse
        return int(exc.code or 0)
    logging.basicConfig(stream=sys.stderr, level=getattr(logging, args.log_level),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", force=True)
    from .utils import configure_determinism

    configure_determinism()
    try:
        return args.func(args)
    except (ValidationError, DatasetFormatError, FileNotFoundError) as exc:
        logger.error("%s", exc)
        return EXIT_INVALID
    except TrainingDivergedError as exc:
        logger.error("training diverged: %s", exc)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001
        logger.exception("runtime failure: %s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
