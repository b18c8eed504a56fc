""" Minimal layer library (nn-core)

1-D convolution, batch normalization, ReLU/clip activations, focal loss,
optimizers and a finite-difference gradient checker, all on numpy arrays
laid out as (batch, channels, time).

Example:

    Build a causal depthwise convolution and run it

    >>> import numpy as np
    >>> from repcnn_kws.nn import Conv1d
    >>> conv = Conv1d(4, 4, kernel_size=7, groups=4, bias=False, rng=0)
    >>> y = conv(np.random.randn(2, 4, 32).astype(np.float32))
    >>> y.shape
    (2, 4, 32)

    Backward pass, gradients land on the parameters

    >>> grad_x = conv.backward(np.ones_like(y))
    >>> conv.weight.grad.shape
    (4, 1, 7)

    Focal loss and one Adam step

    >>> from repcnn_kws.nn import focal_loss, Adam
    >>> loss, grad = focal_loss(np.array([0.0]), np.array([1]), gamma=2.0, alpha=0.25)
    >>> round(loss, 5)
    0.04332
    >>> Adam(lr=1e-3).step(conv.parameters())

    Check a layer against central differences

    >>> from repcnn_kws.nn import check_layer
    >>> errors = check_layer(conv.astype(np.float64), np.random.randn(1, 4, 16), np.random.default_rng(0))
    >>> max(errors.values()) < 1e-3
    True
"""

from .functional import (
    CAUSAL, NO_PADDING, conv1d_forward, conv1d_backward, batchnorm_forward, batchnorm_backward,
    relu, relu_backward, clip, clip_backward, conv_output_length,
)
from .layers import DTYPE, BN_EPS, Parameter, Layer, Conv1d, BatchNorm1d, ReLU, Clip
from .loss import FOCAL_GAMMA, FOCAL_ALPHA, focal_loss, focal_loss_per_sample
from .optim import Optimizer, SGD, Adam, build_optimizer, optimizer_step
from .gradcheck import numeric_gradient, relative_error, finite_difference_check, check_layer

__all__ = [
    "CAUSAL", "NO_PADDING", "conv1d_forward", "conv1d_backward", "batchnorm_forward", "batchnorm_backward",
    "relu", "relu_backward", "clip", "clip_backward", "conv_output_length",
    "DTYPE", "BN_EPS", "Parameter", "Layer", "Conv1d", "BatchNorm1d", "ReLU", "Clip",
    "FOCAL_GAMMA", "FOCAL_ALPHA", "focal_loss", "focal_loss_per_sample",
    "Optimizer", "SGD", "Adam", "build_optimizer", "optimizer_step",
    "numeric_gradient", "relative_error", "finite_difference_check", "check_layer",
]
