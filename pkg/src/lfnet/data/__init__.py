"""Dataset containers, CSV I/O, preprocessing and the synthetic generator."""

from .dataset import Dataset, UpdateStream
from .io import load_dataset, load_dataset_dir, read_locations, write_dataset
from .preprocess import DatasetSplit, Normalizer, fill_updates, fit_normalizer, normalize, split_dataset
from .synthetic import SyntheticConfig, generate_synthetic

__all__ = [
    "Dataset", "DatasetSplit", "Normalizer", "SyntheticConfig", "UpdateStream", "fill_updates",
    "fit_normalizer", "generate_synthetic", "load_dataset", "load_dataset_dir", "normalize",
    "read_locations", "split_dataset", "write_dataset",
]
