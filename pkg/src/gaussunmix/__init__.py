"""Hyperspectral unmixing with a neighborhood-smoothed, pseudo-supervised autoencoder.

The pipeline: an approximation network (AN) smooths each pixel from its eight
Moore neighbors, an unmixing network (UN) maps the smoothed spectrum to
abundances, and a mixing network (MN) maps abundances back to spectra. Feeding
the identity matrix through the trained MN yields the endmembers.
"""
__version__ = "0.1.0"

from .hsi import DataError, HsiCube, build_neighborhood_matrix, cube_to_matrix, matrix_to_cube
from .metrics import EvalReport, evaluate
from .networks import GaussModel, build_model, estimate_abundances, extract_endmembers
from .nn import NumericalError
from .pgt import kmeans, kmeans_pseudo_gt
from .synth import SynthConfig, make_scene
from .trainer import TrainConfig, TrainReport, train_blind, train_gauss, train_gauss_extended, train_prime

__all__ = [
    "DataError", "EvalReport", "GaussModel", "HsiCube", "NumericalError", "SynthConfig",
    "TrainConfig", "TrainReport", "build_model", "build_neighborhood_matrix", "cube_to_matrix",
    "estimate_abundances", "evaluate", "extract_endmembers", "kmeans", "kmeans_pseudo_gt",
    "make_scene", "matrix_to_cube", "train_blind", "train_gauss", "train_gauss_extended",
    "train_prime",
]
