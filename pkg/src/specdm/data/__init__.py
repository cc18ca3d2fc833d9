"""Dataset containers, disk format, preprocessing and the SynthLand oracle."""
from .arrayio import read_array, write_array
from .dataset import Dataset, DatasetManifest, HsiSample, import_npz, load_dataset, save_dataset
from .preprocessing import (
    BandNormalizer,
    class_distribution,
    denormalize,
    normalize,
    one_hot,
    with_training_normalization,
)
from .synthland import SynthLandConfig, generate_synthland, oracle_spectra

__all__ = [
    "BandNormalizer", "Dataset", "DatasetManifest", "HsiSample", "SynthLandConfig",
    "class_distribution", "denormalize", "generate_synthland", "import_npz", "load_dataset",
    "normalize", "one_hot", "oracle_spectra", "read_array", "save_dataset",
    "with_training_normalization", "write_array",
]
