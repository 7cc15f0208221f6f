"""Active learning for perceptual metric embeddings from triplet comparisons.

Train a small fully-connected embedding network on "A is more like B than C"
judgments, and pick each batch of new questions by combining an
informativeness score with a farthest-point-sampling diversity step.
"""

from .acquisition import AcquisitionConfig
from .data import ObjectSet, TripletPool, generate_synthetic, sample_triplets
from .evaluation import ExperimentGrid, GridCell, compute_tga, run_grid
from .loop import DatasetOracle, ExperimentConfig, TrainBudget, run_experiment
from .metric import EmbeddingModel, LabeledTriplet, Triplet

__all__ = [
    "AcquisitionConfig",
    "DatasetOracle",
    "EmbeddingModel",
    "ExperimentConfig",
    "ExperimentGrid",
    "GridCell",
    "LabeledTriplet",
    "ObjectSet",
    "TrainBudget",
    "Triplet",
    "TripletPool",
    "compute_tga",
    "generate_synthetic",
    "run_experiment",
    "run_grid",
    "sample_triplets",
]

__version__ = "0.1.0"
