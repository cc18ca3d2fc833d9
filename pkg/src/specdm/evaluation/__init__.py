"""Synthesis-quality metrics."""
from .features import FeatureExtractor, band_stats_features, dataset_images, mask_features
from .frechet import fit_gaussian, frechet_distance_features, frechet_gaussian
from .metrics import (
    MSADResult,
    SpectralProfile,
    calibrate_change_threshold,
    change_agreement,
    class_mean_spectra,
    distribution_divergence,
    evaluate,
    export_profiles,
    fid,
    fid_mask,
    msad,
    pixel_change_score,
    read_profiles,
    spectral_profiles,
    write_report,
)

__all__ = [
    "FeatureExtractor", "MSADResult", "SpectralProfile", "band_stats_features", "calibrate_change_threshold",
    "change_agreement", "class_mean_spectra", "dataset_images", "distribution_divergence", "evaluate",
    "export_profiles", "fid", "fid_mask", "fit_gaussian", "frechet_distance_features", "frechet_gaussian",
    "mask_features", "msad", "pixel_change_score", "read_profiles", "spectral_profiles", "write_report",
]
