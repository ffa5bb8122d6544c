"""Class-conditional latent diffusion for synthesizing 1-D spectra."""

from .augment import DAAugmenter, DAParams, generate_da
from .classifier import SpectraCNNClassifier, augmentation_experiment
from .diffusion import LatentDDPM, linear_beta_schedule
from .figure import FigureTransformer, figure_to_spectrum, spectrum_to_figure
from .io import LabeledDataset, Spectrum, SynthSpec, generate_synthetic, load_csv, save_csv
from .metrics import similarity_report
from .pipeline import DiffRaman
from .vqvae import VQVAE

__version__ = "0.1.0"

__all__ = [
    "DAAugmenter", "DAParams", "DiffRaman", "FigureTransformer", "LabeledDataset", "LatentDDPM",
    "Spectrum", "SpectraCNNClassifier", "SynthSpec", "VQVAE", "augmentation_experiment",
    "figure_to_spectrum", "generate_da", "generate_synthetic", "linear_beta_schedule",
    "load_csv", "save_csv", "similarity_report", "spectrum_to_figure",
]
