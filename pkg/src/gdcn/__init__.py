"""Multi-view clustering with generative diffusion fusion.

Per-view autoencoders embed each view; B reverse-diffusion chains conditioned
on the concatenated embeddings generate fused per-sample features that are
averaged for robustness; a structure-weighted contrastive loss aligns the
fused and per-view projections; k-means on the fused features yields the
clustering.  Everything runs on a self-contained float64 autodiff core.
"""

from .autodiff import Tape, Tensor, backward, forward_op, grad_check, param
from .autoencoder import ViewAutoencoder, decode, encode, reconstruction_loss
from .contrastive import (
    ContrastiveConfig, ProjectionHeads, compute_similarity, contrastive_loss,
    project,
)
from .data import (
    CorruptionSpec, MultiViewDataset, corrupt, generate_synthetic,
    load_dataset, minmax_normalize, save_dataset,
)
from .metrics import MetricsReport, accuracy, evaluate_labels, kmeans, nmi, purity
from .model import GDCNModel
from .sgdf import (
    Denoiser, NoiseSchedule, SamplerConfig, TimeGrid, alpha_bar,
    build_condition, denoise_step, fuse, make_grid, sqrt_noise_schedule,
)
from .trainer import (
    EpochLog, TrainConfig, evaluate_model, finetune, optimizer_step,
    pretrain, train_pipeline,
)

__version__ = "0.1.0"
