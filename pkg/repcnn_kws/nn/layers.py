""" Layers with parameters, cached inputs and manual backward passes. """

import math
from typing import Dict, Optional

import numpy as np

from .._errors import ConfigError, ShapeError
from .._utils import make_rng
from . import functional as F

DTYPE = np.float32
""" Storage type of every parameter and activation """

BN_EPS = 1e-5
""" Batch norm epsilon, shared with the fusion algebra """

BN_MOMENTUM = 0.1
""" Weight of the newest batch in the running statistics """


class Parameter:
    """ Trainable array with its gradient

    Args:
        data (np.ndarray): Initial value
    """

    def __init__(self, data: np.ndarray) -> None:
        self.data = np.asarray(data)
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Parameter(shape={self.data.shape}, dtype={self.data.dtype})"


class Layer:
    """ Base class of all layers

    A layer caches its last forward input so that :meth:`backward` can be
    called with only the output gradient. Parameter gradients are stored on
    the :class:`Parameter` objects (overwritten, not accumulated).
    """

    kind = "layer"

    def __init__(self) -> None:
        self.training = True
        self._x: Optional[np.ndarray] = None

    def children(self) -> Dict[str, "Layer"]:
        """ Sub-layers by name, empty for leaf layers """
        return {}

    def parameters(self) -> Dict[str, Parameter]:
        """ Trainable parameters by dotted name """
        params = {}
        for prefix, child in self.children().items():
            for name, param in child.parameters().items():
                params[f"{prefix}.{name}"] = param
        return params

    def buffers(self) -> Dict[str, np.ndarray]:
        """ Non-trainable state by dotted name """
        buffers = {}
        for prefix, child in self.children().items():
            for name, value in child.buffers().items():
                buffers[f"{prefix}.{name}"] = value
        return buffers

    def set_buffer(self, name: str, value: np.ndarray) -> None:
        """ Replace a buffer by dotted name """
        prefix, _, rest = name.partition(".")
        children = self.children()
        if not rest or prefix not in children:
            raise KeyError(name)
        children[prefix].set_buffer(rest, value)

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)

    def _cached_input(self) -> np.ndarray:
        if self._x is None:
            raise ShapeError(f"{type(self).__name__}.backward() called before forward()")
        return self._x

    def train(self, mode: bool = True) -> "Layer":
        self.training = mode
        for child in self.children().values():
            child.train(mode)
        return self

    def eval(self) -> "Layer":
        return self.train(False)

    def zero_grad(self) -> None:
        for param in self.parameters().values():
            param.zero_grad()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def astype(self, dtype) -> "Layer":
        """ Cast parameters and buffers in place, e.g. to float64 for gradient checks """
        children = self.children()
        if children:
            for child in children.values():
                child.astype(dtype)
            return self
        for param in self.parameters().values():
            param.data = param.data.astype(dtype)
            param.grad = None
        return self

    def extra_repr(self) -> str:
        return ""

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.extra_repr()})"


class Conv1d(Layer):
    """ 1-D convolution over (channels, time)

    Args:
        in_channels (int): Input channels
        out_channels (int): Output channels
        kernel_size (int): Kernel size k
        stride (int, optional): Stride, default is 1
        groups (int, optional): Groups, default is 1; groups == channels is depthwise
        bias (bool, optional): Learn a bias, default is True
        padding (str, optional): ``causal`` (k - 1 zeros on the left) or ``none``, default is causal
        rng (np.random.Generator or int, optional): Initialization seed
    """

    kind = "conv1d"

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, stride: int = 1,
                 groups: int = 1, bias: bool = True, padding: str = F.CAUSAL, rng=None) -> None:
        super().__init__()
        if min(in_channels, out_channels, kernel_size, stride, groups) < 1:
            raise ConfigError("conv sizes, stride and groups must be positive")
        if in_channels % groups or out_channels % groups:
            raise ConfigError(f"channels {in_channels}->{out_channels} not divisible by groups={groups}")
        if padding not in F.PADDINGS:
            raise ConfigError(f"unsupported padding {padding!r}, expected one of {F.PADDINGS}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.groups = groups
        self.padding = padding

        # uniform fan-in initialization
        rng = make_rng(rng)
        fan_in = (in_channels // groups) * kernel_size
        bound = 1.0 / math.sqrt(fan_in)
        shape = (out_channels, in_channels // groups, kernel_size)
        self.weight = Parameter(rng.uniform(-bound, bound, size=shape).astype(DTYPE))
        self.bias = Parameter(rng.uniform(-bound, bound, size=out_channels).astype(DTYPE)) if bias else None

    @property
    def depthwise(self) -> bool:
        return self.groups == self.in_channels == self.out_channels

    def parameters(self) -> Dict[str, Parameter]:
        params = {"weight": self.weight}
        if self.bias is not None:
            params["bias"] = self.bias
        return params

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return F.conv1d_forward(x, self)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        grad_x, grads = F.conv1d_backward(self._cached_input(), self, grad_out)
        for name, grad in grads.items():
            self.parameters()[name].grad = grad
        return grad_x

    def output_length(self, length: int) -> int:
        return F.conv_output_length(length, self.kernel_size, self.stride, self.padding)

    def extra_repr(self) -> str:
        return (f"{self.in_channels}, {self.out_channels}, k={self.kernel_size}, s={self.stride}, "
                f"groups={self.groups}, bias={self.bias is not None}")


class BatchNorm1d(Layer):
    """ Batch normalization over (batch, time) per channel

    Args:
        num_features (int): Channels C
        eps (float, optional): Added to the variance, default is BN_EPS
        momentum (float, optional): Running statistics momentum in (0, 1), default is BN_MOMENTUM
    """

    kind = "batchnorm1d"

    def __init__(self, num_features: int, eps: float = BN_EPS, momentum: float = BN_MOMENTUM) -> None:
        super().__init__()
        if num_features < 1:
            raise ConfigError("batch norm needs at least one channel")
        if eps < 0:
            raise ConfigError(f"eps must be non-negative, got {eps}")
        if not 0 < momentum < 1:
            raise ConfigError(f"momentum must be in (0, 1), got {momentum}")
        self.num_features = num_features
        self.eps = eps
        self.momentum = momentum
        self.weight = Parameter(np.ones(num_features, dtype=DTYPE))
        self.bias = Parameter(np.zeros(num_features, dtype=DTYPE))
        self.running_mean = np.zeros(num_features, dtype=DTYPE)
        self.running_var = np.ones(num_features, dtype=DTYPE)

    def parameters(self) -> Dict[str, Parameter]:
        return {"weight": self.weight, "bias": self.bias}

    def buffers(self) -> Dict[str, np.ndarray]:
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def set_buffer(self, name: str, value: np.ndarray) -> None:
        if name not in ("running_mean", "running_var"):
            raise KeyError(name)
        setattr(self, name, np.asarray(value))

    def astype(self, dtype) -> "BatchNorm1d":
        super().astype(dtype)
        self.running_mean = self.running_mean.astype(dtype)
        self.running_var = self.running_var.astype(dtype)
        return self

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return F.batchnorm_forward(x, self)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        grad_x, grads = F.batchnorm_backward(self._cached_input(), self, grad_out)
        self.weight.grad = grads["weight"]
        self.bias.grad = grads["bias"]
        return grad_x

    def extra_repr(self) -> str:
        return f"{self.num_features}, eps={self.eps}, momentum={self.momentum}"


class ReLU(Layer):
    """ Rectified linear unit """

    kind = "relu"

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return F.relu(x)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return F.relu_backward(self._cached_input(), grad_out)


class Clip(Layer):
    """ Bounded activation used by fused graphs

    Args:
        lower (float, optional): Lower bound, default is 0
        upper (float, optional): Upper bound, default is +inf (then identical to ReLU)
    """

    kind = "clip"

    def __init__(self, lower: float = 0.0, upper: float = math.inf) -> None:
        super().__init__()
        if not lower < upper:
            raise ConfigError(f"clip needs lower < upper, got [{lower}, {upper}]")
        self.lower = float(lower)
        self.upper = float(upper)

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return F.clip(x, self.lower, self.upper)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return F.clip_backward(self._cached_input(), grad_out, self.lower, self.upper)

    def extra_repr(self) -> str:
        return f"{self.lower}, {self.upper}"
