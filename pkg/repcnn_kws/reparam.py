""" Structural re-parameterization: fold conv + batch norm, embed 1x1 kernels,
merge parallel branches and rewrite a training graph into its fused
inference graph.

Example:

    >>> from repcnn_kws.model import RepCNNConfig, build_repcnn
    >>> from repcnn_kws.reparam import fuse_model, equivalence_report
    >>> graph = build_repcnn(RepCNNConfig(), rng=0)
    >>> fused = fuse_model(graph)
    >>> fused.count("batchnorm1d")
    0
    >>> equivalence_report(graph, fused, num_inputs=2)["max_rel"] < 1e-4
    True
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from ._errors import FusionError, ShapeError
from .graph import FUSED, TRAIN, ModelGraph, is_activation
from .nn.functional import CAUSAL
from .nn.layers import BatchNorm1d, Clip, Conv1d, Layer, ReLU

log = logging.getLogger(__name__)

SYMMETRIC = "symmetric"
""" Centered padding, (k - 1) / 2 zeros on each side """

CLIP_MARGIN = 1.05
""" Calibrated clip bound = margin * max observed activation """


@dataclass
class FusedKernel:
    """ Convolution weight and bias produced by the fusion algebra

    Attributes:
        weight (np.ndarray): (C_out, C_in / groups, k)
        bias (np.ndarray): (C_out,)
    """
    weight: np.ndarray
    bias: np.ndarray

    @property
    def kernel_size(self) -> int:
        return int(self.weight.shape[-1])

    def to_conv(self, stride: int = 1, groups: int = 1, padding: str = CAUSAL) -> Conv1d:
        """ Build a :class:`~repcnn_kws.nn.layers.Conv1d` with this weight and bias """
        out_channels, cin_g, k = self.weight.shape
        conv = Conv1d(cin_g * groups, out_channels, k, stride=stride, groups=groups, bias=True, padding=padding)
        conv.weight.data = self.weight.astype(conv.weight.data.dtype)
        conv.bias.data = self.bias.astype(conv.bias.data.dtype)
        return conv


def check_statistics(bn: BatchNorm1d) -> None:
    """ Raise unless the running statistics can be folded

    Raises:
        FusionError: Missing, non-finite or negative running statistics
    """
    mean, var = bn.running_mean, bn.running_var
    if mean is None or var is None:
        raise FusionError("batch norm running statistics were never initialized")
    if mean.shape != (bn.num_features,) or var.shape != (bn.num_features,):
        raise FusionError(f"batch norm statistics have shapes {mean.shape}/{var.shape}, expected ({bn.num_features},)")
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(var))):
        raise FusionError("batch norm running statistics hold non-finite values")
    if np.any(var < 0):
        raise FusionError("batch norm running variance is negative")


def fold_conv_bn(conv: Conv1d, bn: BatchNorm1d) -> FusedKernel:
    """ Fold an eval-mode batch norm into the convolution before it

    W = (alpha / sigma) * w per output channel and
    b = beta - alpha * mu / sigma (+ alpha / sigma * conv bias),
    with sigma = sqrt(running_var + eps).

    Args:
        conv (Conv1d): Convolution
        bn (BatchNorm1d): Batch norm applied to the convolution output

    Returns:
        FusedKernel: Equivalent weight and bias

    Raises:
        ShapeError: Channel mismatch
        FusionError: Invalid running statistics
    """
    if bn.num_features != conv.out_channels:
        raise ShapeError(f"batch norm has {bn.num_features} channels, conv outputs {conv.out_channels}")
    check_statistics(bn)
    dtype = conv.weight.data.dtype
    sigma = np.sqrt(bn.running_var.astype(np.float64) + bn.eps)
    scale = bn.weight.data.astype(np.float64) / sigma
    weight = conv.weight.data.astype(np.float64) * scale[:, None, None]
    bias = bn.bias.data.astype(np.float64) - scale * bn.running_mean.astype(np.float64)
    if conv.bias is not None:
        bias = bias + scale * conv.bias.data.astype(np.float64)
    return FusedKernel(weight.astype(dtype), bias.astype(dtype))


def embed_1x1(kernel: FusedKernel, k: int, padding: str = CAUSAL) -> FusedKernel:
    """ Widen a kernel of size 1 to size k

    The single tap goes where the k-kernel sees the current frame: the last
    tap under causal padding, the center tap under symmetric padding. The
    bias is carried through.

    Args:
        kernel (FusedKernel): Kernel of size 1
        k (int): Target kernel size
        padding (str, optional): ``causal`` or ``symmetric``, default is causal

    Returns:
        FusedKernel: Width-k kernel

    Raises:
        FusionError: Unsupported padding, k < 1 or source kernel size != 1
    """
    if k < 1:
        raise FusionError(f"target kernel size must be >= 1, got {k}")
    if kernel.kernel_size != 1:
        raise FusionError(f"embed_1x1 needs a kernel of size 1, got {kernel.kernel_size}")
    if padding == CAUSAL:
        tap = k - 1
    elif padding == SYMMETRIC:
        if k % 2 == 0:
            raise FusionError(f"symmetric padding needs an odd kernel size, got {k}")
        tap = k // 2
    else:
        raise FusionError(f"unsupported padding {padding!r} for embed_1x1")
    weight = np.zeros(kernel.weight.shape[:2] + (k,), dtype=kernel.weight.dtype)
    weight[:, :, tap] = kernel.weight[:, :, 0]
    return FusedKernel(weight, kernel.bias.copy())


def merge_parallel(kernels: Sequence[FusedKernel]) -> FusedKernel:
    """ Sum parallel kernels and their biases

    Summation runs in ascending branch index, so the result only depends on
    the list order.

    Args:
        kernels (list): Kernels of identical shape

    Returns:
        FusedKernel: Merged kernel

    Raises:
        FusionError: Empty list
        ShapeError: Shape mismatch
    """
    if not kernels:
        raise FusionError("merge_parallel needs at least one kernel")
    shape = kernels[0].weight.shape
    weight = np.array(kernels[0].weight, copy=True)
    bias = np.array(kernels[0].bias, copy=True)
    for i, kernel in enumerate(kernels[1:], start=1):
        if kernel.weight.shape != shape or kernel.bias.shape != bias.shape:
            raise ShapeError(f"branch {i} has shape {kernel.weight.shape}, expected {shape}")
        weight = weight + kernel.weight
        bias = bias + kernel.bias
    return FusedKernel(weight, bias)


def fuse_block_kernel(block) -> FusedKernel:
    """ Merged kernel of a :class:`~repcnn_kws.repblock.RepConvBlock` """
    kernels = [fold_conv_bn(conv, bn) for conv, bn in block.branches]
    one_conv, one_bn = block.one_by_one
    kernels.append(embed_1x1(fold_conv_bn(one_conv, one_bn), block.kernel_size, CAUSAL))
    return merge_parallel(kernels)


def calibrate_clip_bounds(graph: ModelGraph, inputs: np.ndarray, margin: float = CLIP_MARGIN) -> List[float]:
    """ Clip bounds from the largest activation seen on calibration inputs

    Args:
        graph (ModelGraph): Training graph, run in eval mode
        inputs (np.ndarray): Calibration features, (N, C, T)
        margin (float, optional): Multiplier on the observed maximum, default is CLIP_MARGIN

    Returns:
        list: One bound per activation, in graph order; +inf where nothing positive was seen
    """
    was_training = graph.training
    graph.eval()
    try:
        _, activations = graph.forward(inputs, collect=True)
    finally:
        graph.train(was_training)
    bounds = []
    for i, activation in enumerate(activations):
        peak = float(np.max(activation)) if activation.size else 0.0
        if peak <= 0:
            log.warning(f"activation {i} never positive during calibration, clip bound left at +inf")
            bounds.append(math.inf)
        else:
            bounds.append(margin * peak)
    return bounds


def fuse_model(graph: ModelGraph, clip_bounds: Optional[Sequence[float]] = None) -> ModelGraph:
    """ Rewrite a training graph into its single-branch inference graph

    Every RepConvBlock becomes one depthwise conv with bias followed by a
    clip, every conv + batch norm pair becomes one conv with bias and every
    ReLU becomes a clip.

    Args:
        graph (ModelGraph): Training graph
        clip_bounds (list, optional): Upper bound per activation in graph order, default is None (+inf)

    Returns:
        ModelGraph: Fused graph

    Raises:
        FusionError: Graph already fused, invalid statistics, or a batch norm without a conv before it
    """
    from .repblock import fuse_repblock

    if graph.mode != TRAIN:
        raise FusionError(f"graph is already {graph.mode}")
    num_activations = sum(1 for layer in graph.layers if is_activation(layer))
    if clip_bounds is None:
        clip_bounds = [math.inf] * num_activations
    if len(clip_bounds) != num_activations:
        raise FusionError(f"{len(clip_bounds)} clip bounds for {num_activations} activations")
    bounds = iter(clip_bounds)

    fused: List[Layer] = []
    layers = graph.layers
    i = 0
    while i < len(layers):
        layer = layers[i]
        if layer.kind == "repconvblock":
            fused.extend(fuse_repblock(layer, next(bounds)))
        elif isinstance(layer, Conv1d):
            following = layers[i + 1] if i + 1 < len(layers) else None
            if isinstance(following, BatchNorm1d):
                kernel = fold_conv_bn(layer, following)
                i += 1
            else:
                bias = layer.bias.data if layer.bias is not None else np.zeros(layer.out_channels, layer.weight.data.dtype)
                kernel = FusedKernel(np.array(layer.weight.data, copy=True), np.array(bias, copy=True))
            fused.append(kernel.to_conv(stride=layer.stride, groups=layer.groups, padding=layer.padding))
        elif isinstance(layer, ReLU):
            fused.append(Clip(0.0, next(bounds)))
        elif isinstance(layer, Clip):
            fused.append(Clip(layer.lower, min(layer.upper, next(bounds))))
        elif isinstance(layer, BatchNorm1d):
            raise FusionError(f"layer {i}: batch norm without a preceding conv cannot be folded")
        else:
            raise FusionError(f"layer {i}: cannot fuse {layer!r}")
        i += 1
    result = ModelGraph(fused, FUSED, config=graph.config, architecture=graph.architecture)
    result.hyperparameters = dict(graph.hyperparameters)
    log.debug(f"fused {len(layers)} layers into {len(fused)}")
    return result


def clip_bounds_of(graph: ModelGraph) -> List[float]:
    """ Upper bounds of the clip layers of a fused graph, in order """
    return [layer.upper for layer in graph.layers if isinstance(layer, Clip)]


def with_clip_bounds(graph: ModelGraph, bounds: Optional[Sequence[float]] = None) -> ModelGraph:
    """ Copy of a fused graph sharing its convs, with new clip upper bounds (default +inf) """
    clips = [layer for layer in graph.layers if isinstance(layer, Clip)]
    if bounds is None:
        bounds = [math.inf] * len(clips)
    if len(bounds) != len(clips):
        raise FusionError(f"{len(bounds)} clip bounds for {len(clips)} clip layers")
    bounds = iter(bounds)
    layers = [Clip(layer.lower, next(bounds)) if isinstance(layer, Clip) else layer for layer in graph.layers]
    result = ModelGraph(layers, graph.mode, config=graph.config, architecture=graph.architecture)
    result.hyperparameters = dict(graph.hyperparameters)
    return result


def equivalence_report(train_graph: ModelGraph, fused_graph: ModelGraph, num_inputs: int = 20,
                       frames: int = 300, seed: int = 0) -> dict:
    """ Largest deviation between a training graph and its fused form on random inputs

    The fused graph is compared with its clip bounds lifted to +inf, which
    measures the linear fusion algebra only.

    Args:
        train_graph (ModelGraph): Training graph, run in eval mode
        fused_graph (ModelGraph): Fused graph
        num_inputs (int, optional): Number of random inputs, default is 20
        frames (int, optional): Frames per input, default is 300 (3 s)
        seed (int, optional): Seed of the inputs, default is 0

    Returns:
        dict: ``max_abs``, ``max_rel`` and ``num_inputs``
    """
    rng = np.random.default_rng(seed)
    reference = with_clip_bounds(fused_graph)
    was_training = train_graph.training
    train_graph.eval()
    max_abs = 0.0
    max_rel = 0.0
    try:
        for _ in range(num_inputs):
            x = rng.standard_normal((1, train_graph.in_channels, frames)).astype(np.float32)
            expected = train_graph.forward(x).astype(np.float64)
            got = reference.forward(x).astype(np.float64)
            diff = float(np.max(np.abs(expected - got)))
            max_abs = max(max_abs, diff)
            max_rel = max(max_rel, diff / max(float(np.max(np.abs(expected))), 1e-12))
    finally:
        train_graph.train(was_training)
    return {"max_abs": max_abs, "max_rel": max_rel, "num_inputs": num_inputs}
