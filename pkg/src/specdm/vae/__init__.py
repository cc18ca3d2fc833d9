"""Two-stream KL autoencoder and its losses."""
from .estimator import TwoStreamVAE, split_channels
from .losses import LossBreakdown, image_loss, kl_standard_normal, mask_loss, mean_sad, sad, total_loss
from .networks import GaussianPosterior, TwoStreamCodec
from .training import dataset_arrays, train_vae

__all__ = [
    "GaussianPosterior", "LossBreakdown", "TwoStreamCodec", "TwoStreamVAE", "dataset_arrays",
    "image_loss", "kl_standard_normal", "mask_loss", "mean_sad", "sad", "split_channels",
    "total_loss", "train_vae",
]
