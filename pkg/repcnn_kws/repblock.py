""" RepConvBlock: n parallel depthwise k-kernels plus a depthwise 1x1 path,
each followed by its own batch norm, summed and then activated. Fuses into a
single depthwise k-kernel with bias for inference.
"""

from typing import Dict, List, Tuple

import numpy as np

from ._errors import ConfigError, ShapeError
from ._utils import make_rng
from .nn import functional as F
from .nn.layers import BatchNorm1d, Clip, Conv1d, Layer
from .reparam import fuse_block_kernel

NUM_BRANCHES = 2
""" Default number of parallel k-kernels """


class RepConvBlock(Layer):
    """ Re-parameterizable depthwise convolution block

    Args:
        channels (int): Channels C
        kernel_size (int): Kernel size k of the parallel branches
        num_branches (int, optional): Number n of parallel k-kernels, default is NUM_BRANCHES
        rng (np.random.Generator or int, optional): Initialization seed; every kernel is drawn independently
        bn_eps (float, optional): Batch norm epsilon
    """

    kind = "repconvblock"

    def __init__(self, channels: int, kernel_size: int, num_branches: int = NUM_BRANCHES, rng=None,
                 bn_eps: float = 1e-5) -> None:
        super().__init__()
        if num_branches < 1:
            raise ConfigError(f"num_branches must be >= 1, got {num_branches}")
        if kernel_size < 1 or channels < 1:
            raise ConfigError("channels and kernel_size must be positive")
        rng = make_rng(rng)
        self.channels = channels
        self.kernel_size = kernel_size
        self.num_branches = num_branches
        self.branches: List[Tuple[Conv1d, BatchNorm1d]] = [
            (Conv1d(channels, channels, kernel_size, groups=channels, bias=False, rng=rng), BatchNorm1d(channels, eps=bn_eps))
            for _ in range(num_branches)
        ]
        self.one_by_one: Tuple[Conv1d, BatchNorm1d] = (
            Conv1d(channels, channels, 1, groups=channels, bias=False, rng=rng), BatchNorm1d(channels, eps=bn_eps))
        self._pre = None

    def children(self) -> Dict[str, Layer]:
        children = {}
        for i, (conv, bn) in enumerate(self.branches):
            children[f"branches.{i}.conv"] = conv
            children[f"branches.{i}.bn"] = bn
        children["one_by_one.conv"] = self.one_by_one[0]
        children["one_by_one.bn"] = self.one_by_one[1]
        return children

    def set_buffer(self, name: str, value: np.ndarray) -> None:
        owner, _, buffer = name.rpartition(".")
        children = self.children()
        if owner not in children:
            raise KeyError(name)
        children[owner].set_buffer(buffer, value)

    def _paths(self):
        return list(self.branches) + [self.one_by_one]

    def forward_preactivation(self, x: np.ndarray) -> np.ndarray:
        """ Sum of all branch outputs before the activation """
        if np.shape(x)[-2] != self.channels:
            raise ShapeError(f"RepConvBlock expects {self.channels} channels, got {np.shape(x)[-2]}")
        total = None
        for conv, bn in self._paths():
            out = bn.forward(conv.forward(x))
            total = out if total is None else total + out
        return total

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        self._pre = self.forward_preactivation(x)
        return F.relu(self._pre)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._pre is None:
            raise ShapeError("RepConvBlock.backward() called before forward()")
        grad_pre = F.relu_backward(self._pre, grad_out)
        grad_x = None
        for conv, bn in self._paths():
            g = conv.backward(bn.backward(grad_pre))
            grad_x = g if grad_x is None else grad_x + g
        return grad_x

    def extra_repr(self) -> str:
        return f"{self.channels}, {self.channels}, k={self.kernel_size}, n={self.num_branches}"


def repblock_forward(x: np.ndarray, block: RepConvBlock, mode: str = "eval") -> np.ndarray:
    """ Forward a block in ``train`` (batch statistics) or ``eval`` mode """
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
    block.train(mode == "train")
    return block.forward(x)


def repblock_backward(block: RepConvBlock, grad_out: np.ndarray):
    """ Backward through every branch of the last forward

    Returns:
        tuple: (grad_x, grads) with grads keyed by dotted parameter name
    """
    grad_x = block.backward(grad_out)
    grads = {name: param.grad for name, param in block.parameters().items()}
    return grad_x, grads


def fuse_repblock(block: RepConvBlock, upper: float = float("inf")) -> Tuple[Conv1d, Clip]:
    """ Single depthwise k-kernel with bias plus the clip that replaces the ReLU

    Args:
        block (RepConvBlock): Block with valid running statistics
        upper (float, optional): Clip upper bound, default is +inf

    Returns:
        tuple: (Conv1d, Clip)
    """
    conv = fuse_block_kernel(block).to_conv(groups=block.channels)
    return conv, Clip(0.0, upper)
