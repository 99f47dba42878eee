"""Numpy convolutional VAE with hand-written reverse-mode gradients."""

from .gradcheck import gradient_check
from .layers import (
    ShapeError,
    conv1d_backward,
    conv1d_forward,
    conv_out_len,
    transposed_conv1d_backward,
    transposed_conv1d_forward,
)
from .optim import AdamHyper, AdamState, TrainingError, adam_step
from .train import (
    TrainConfig,
    evaluate_against,
    evaluate_dataset,
    evaluate_record,
    mean_predictor_mse,
    reconstruct_dataset,
    split_indices,
    train,
)
from .vae import (
    CheckpointError,
    GaussianLatent,
    VaeConfig,
    VaeParams,
    backward,
    decode,
    elbo_loss,
    encode,
    forward_loss,
    kl_divergence,
    load_checkpoint,
    loss_and_grad,
    reparameterize,
    save_checkpoint,
)

__all__ = [
    "adam_step",
    "AdamHyper",
    "AdamState",
    "backward",
    "CheckpointError",
    "conv1d_backward",
    "conv1d_forward",
    "conv_out_len",
    "decode",
    "elbo_loss",
    "encode",
    "evaluate_against",
    "evaluate_dataset",
    "evaluate_record",
    "forward_loss",
    "GaussianLatent",
    "gradient_check",
    "kl_divergence",
    "load_checkpoint",
    "loss_and_grad",
    "mean_predictor_mse",
    "reconstruct_dataset",
    "reparameterize",
    "save_checkpoint",
    "ShapeError",
    "split_indices",
    "train",
    "TrainConfig",
    "TrainingError",
    "transposed_conv1d_backward",
    "transposed_conv1d_forward",
    "VaeConfig",
    "VaeParams",
]
