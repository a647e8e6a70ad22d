"""Regularization by artifact removal for undersampled radial MRI.

A NumPy implementation of the RARE fixed-point reconstruction with a CNN
prior trained by Artifact2Artifact, together with the measurement model,
baselines, metrics and a seeded experiment harness.
"""

from .metrics import MetricReport, evaluate_run, psnr, ssim
from .network import NetWeights, conv_net_forward, identity_weights, init_weights
from .operators import (
    DenseOperator,
    MeasurementOperator,
    SamplingPattern,
    adjoint_apply,
    datafid_gradient,
    forward_apply,
    operator_norm_estimate,
    pseudoinverse_recon,
)
from .priors import (
    IdentityRemover,
    NetRemover,
    ScalingRemover,
    TVDenoiser,
    TVParams,
    red_residual,
    red_value,
    tv_denoise,
)
from .simulation import AcquisitionConfig, PhantomConfig, acquire, make_dataset, make_phantom
from .solvers import (
    RAREReconstructor,
    SolverConfig,
    TVReconstructor,
    fista_tv_solve,
    nesterov_q_update,
    operator_G,
    rare_solve,
)
from .training import ArtifactRemovalNet, TrainConfig, build_pairs, loss_gradient, mixed_loss, train

__version__ = "0.1.0"

__all__ = [
    "AcquisitionConfig",
    "ArtifactRemovalNet",
    "DenseOperator",
    "IdentityRemover",
    "MeasurementOperator",
    "MetricReport",
    "NetRemover",
    "NetWeights",
    "PhantomConfig",
    "RAREReconstructor",
    "SamplingPattern",
    "ScalingRemover",
    "SolverConfig",
    "TVDenoiser",
    "TVParams",
    "TVReconstructor",
    "TrainConfig",
    "acquire",
    "adjoint_apply",
    "build_pairs",
    "conv_net_forward",
    "datafid_gradient",
    "evaluate_run",
    "fista_tv_solve",
    "forward_apply",
    "identity_weights",
    "init_weights",
    "loss_gradient",
    "make_dataset",
    "make_phantom",
    "mixed_loss",
    "nesterov_q_update",
    "operator_G",
    "operator_norm_estimate",
    "pseudoinverse_recon",
    "psnr",
    "rare_solve",
    "red_residual",
    "red_value",
    "ssim",
    "train",
    "tv_denoise",
]
