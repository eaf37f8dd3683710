"""Texture classification benchmark: CNN layer taps vs. codebook encodings, scored by linear SVMs."""

from .dataset import Dataset, ImagePatch, SyntheticSpec, TextureSpec, generate_synthetic, load_dataset
from .encode import FeatureVector, encode_bovw, encode_fisher, encode_vlad
from .harness import ExperimentResult, PipelineSpec, layer_sweep, report, run_cv, run_trials
from .localfeat import DenseSamplingSpec, extract_dense_sift
from .svm import LinearSvmModel, SvmTrainConfig, train_binary, train_ovr

__version__ = "0.1.0"

__all__ = [
    "Dataset", "DenseSamplingSpec", "ExperimentResult", "FeatureVector", "ImagePatch",
    "LinearSvmModel", "PipelineSpec", "SvmTrainConfig", "SyntheticSpec", "TextureSpec",
    "encode_bovw", "encode_fisher", "encode_vlad", "extract_dense_sift", "generate_synthetic",
    "layer_sweep", "load_dataset", "report", "run_cv", "run_trials", "train_binary", "train_ovr",
]
