"""Numpy implementation of a jointly trained sketch-to-photo generator and
proxy-based retrieval encoder for zero-shot sketch-based image retrieval."""
from .tensor import Tensor, concat, no_grad, split, tensor
from .models import Discriminator, Encoder, Generator
from .losses import LossWeights, ProxyBank
from .data import ImageDataset, SyntheticShapeSpec, generate_synthetic_dataset, make_zero_shot_split
from .retrieval import EmbeddingSet, binarize_hash, hamming_rank, map_at_k, precision_at_k, rank_gallery
from .trainer import ACNetTrainer, ExperimentConfig, TrainLog, run_ablation_grid, train_joint, train_two_stage

__version__ = "0.1.0"
