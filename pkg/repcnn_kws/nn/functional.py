""" Pure forward/backward kernels for the layer library.

Activations are laid out ``(batch, channels, time)``; a 2-D ``(channels, time)``
input is treated as a batch of one and returned without the batch axis.
Each op reads the parameters of the layer it is given and never mutates
them, except the running statistics of a batch norm in train mode.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .._errors import ConfigError, ShapeError
from .._utils import check_finite

CAUSAL = "causal"
""" Left-only padding of kernel_size - 1 zeros """

NO_PADDING = "none"
""" Valid convolution, no padding """

PADDINGS = (CAUSAL, NO_PADDING)


def _as_batch(x: np.ndarray):
    x = np.asarray(x)
    if x.ndim == 2:
        return x[None], True
    if x.ndim != 3:
        raise ShapeError(f"expected (C, T) or (N, C, T) input, got shape {x.shape}")
    return x, False


def _unbatch(y: np.ndarray, squeeze: bool) -> np.ndarray:
    return y[0] if squeeze else y


def conv_output_length(length: int, kernel_size: int, stride: int, padding: str) -> int:
    """ Number of output frames of a 1-D convolution

    Args:
        length (int): Input frames
        kernel_size (int): Kernel size
        stride (int): Stride
        padding (str): ``causal`` or ``none``

    Returns:
        int: floor((T_padded - k) / stride) + 1
    """
    padded = length + kernel_size - 1 if padding == CAUSAL else length
    if padded < kernel_size:
        return 0
    return (padded - kernel_size) // stride + 1


def _conv_windows(x: np.ndarray, layer) -> np.ndarray:
    k = layer.kernel_size
    if layer.stride < 1:
        raise ConfigError(f"stride must be positive, got {layer.stride}")
    if layer.padding not in PADDINGS:
        raise ConfigError(f"unsupported padding {layer.padding!r}, expected one of {PADDINGS}")
    if x.shape[1] != layer.in_channels:
        raise ShapeError(f"conv expects {layer.in_channels} input channels, got {x.shape[1]}")
    if x.shape[2] < 1:
        raise ShapeError("conv input has no frames")
    if layer.padding == CAUSAL and k > 1:
        x = np.pad(x, ((0, 0), (0, 0), (k - 1, 0)))
    if x.shape[2] < k:
        raise ShapeError(f"input of {x.shape[2]} frames is shorter than kernel {k}")
    return sliding_window_view(x, k, axis=2)[:, :, ::layer.stride, :]


def _is_depthwise(layer) -> bool:
    return layer.groups == layer.in_channels == layer.out_channels


def conv1d_forward(x: np.ndarray, layer) -> np.ndarray:
    """ 1-D (grouped) convolution

    Args:
        x (np.ndarray): Input, (C_in, T) or (N, C_in, T)
        layer (:class:`repcnn_kws.nn.layers.Conv1d`): Layer holding weight, bias, stride, groups, padding

    Returns:
        np.ndarray: Output, (C_out, T_out) or (N, C_out, T_out)

    Raises:
        ShapeError: Channel mismatch or input shorter than the kernel
        ConfigError: Non-positive stride
    """
    x, squeeze = _as_batch(x)
    windows = _conv_windows(x, layer)
    weight = layer.weight.data
    n, _, t_out, k = windows.shape
    if _is_depthwise(layer):
        y = np.einsum("nctk,ck->nct", windows, weight[:, 0, :])
    else:
        g = layer.groups
        cin_g = layer.in_channels // g
        cout_g = layer.out_channels // g
        win = windows.reshape(n, g, cin_g, t_out, k).transpose(0, 1, 3, 2, 4).reshape(n, g, t_out, cin_g * k)
        wmat = weight.reshape(g, cout_g, cin_g * k).transpose(0, 2, 1)
        y = np.matmul(win, wmat).transpose(0, 1, 3, 2).reshape(n, layer.out_channels, t_out)
    if layer.bias is not None:
        y = y + layer.bias.data[None, :, None]
    check_finite(y, "conv1d forward")
    return _unbatch(y, squeeze)


def conv1d_backward(x: np.ndarray, layer, grad_out: np.ndarray):
    """ Gradients of :func:`conv1d_forward`

    Args:
        x (np.ndarray): Forward input
        layer (:class:`repcnn_kws.nn.layers.Conv1d`): Layer
        grad_out (np.ndarray): Gradient w.r.t. the forward output

    Returns:
        tuple: (grad_x, grads) where grads maps ``weight`` (and ``bias``) to arrays
    """
    x, squeeze = _as_batch(x)
    grad_out, _ = _as_batch(grad_out)
    windows = _conv_windows(x, layer)
    n, cin, t_out, k = windows.shape
    expected = (n, layer.out_channels, t_out)
    if grad_out.shape != expected:
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match conv output {expected}")
    weight = layer.weight.data

    if _is_depthwise(layer):
        grad_w = np.einsum("nctk,nct->ck", windows, grad_out)[:, None, :]
        grad_windows = np.einsum("nct,ck->nctk", grad_out, weight[:, 0, :])
    else:
        g = layer.groups
        cin_g = cin // g
        cout_g = layer.out_channels // g
        win = windows.reshape(n, g, cin_g, t_out, k).transpose(0, 1, 3, 2, 4).reshape(n, g, t_out, cin_g * k)
        go = grad_out.reshape(n, g, cout_g, t_out).transpose(0, 1, 3, 2)
        grad_wmat = np.einsum("ngtk,ngto->gko", win, go, optimize=True)
        grad_w = grad_wmat.transpose(0, 2, 1).reshape(layer.out_channels, cin_g, k)
        wmat = weight.reshape(g, cout_g, cin_g * k)
        grad_windows = np.matmul(go, wmat).reshape(n, g, t_out, cin_g, k).transpose(0, 1, 3, 2, 4).reshape(n, cin, t_out, k)

    padded_len = x.shape[2] + (k - 1 if layer.padding == CAUSAL else 0)
    grad_padded = np.zeros((n, cin, padded_len), dtype=grad_windows.dtype)
    span = layer.stride * (t_out - 1) + 1
    for j in range(k):
        grad_padded[:, :, j:j + span:layer.stride] += grad_windows[:, :, :, j]
    grad_x = grad_padded[:, :, k - 1:] if layer.padding == CAUSAL else grad_padded

    grads = {"weight": grad_w.astype(weight.dtype, copy=False)}
    if layer.bias is not None:
        grads["bias"] = grad_out.sum(axis=(0, 2)).astype(layer.bias.data.dtype, copy=False)
    check_finite(grad_x, "conv1d backward")
    return _unbatch(grad_x, squeeze), grads


def _bn_check(x: np.ndarray, layer):
    if x.shape[1] != layer.num_features:
        raise ShapeError(f"batch norm expects {layer.num_features} channels, got {x.shape[1]}")


def batchnorm_forward(x: np.ndarray, layer) -> np.ndarray:
    """ 1-D batch normalization

    Train mode normalizes with the batch statistics over (batch, time) and
    updates the layer's running statistics with its momentum; eval mode
    computes alpha * (x - mu) / sqrt(running_var + eps) + beta.

    Args:
        x (np.ndarray): Input, (C, T) or (N, C, T)
        layer (:class:`repcnn_kws.nn.layers.BatchNorm1d`): Layer

    Returns:
        np.ndarray: Normalized output, same shape as x

    Raises:
        ShapeError: Channel mismatch or fewer than 2 values per channel in train mode
    """
    x, squeeze = _as_batch(x)
    _bn_check(x, layer)
    alpha = layer.weight.data[None, :, None]
    beta = layer.bias.data[None, :, None]
    if layer.training:
        count = x.shape[0] * x.shape[2]
        if count < 2:
            raise ShapeError(f"train-mode batch norm needs batch*time >= 2, got {count}")
        mean = x.mean(axis=(0, 2))
        var = x.var(axis=(0, 2))
        xhat = (x - mean[None, :, None]) / np.sqrt(var + layer.eps)[None, :, None]
        m = layer.momentum
        layer.running_mean = ((1 - m) * layer.running_mean + m * mean).astype(layer.running_mean.dtype)
        layer.running_var = ((1 - m) * layer.running_var + m * var * count / (count - 1)).astype(layer.running_var.dtype)
    else:
        sigma = np.sqrt(layer.running_var + layer.eps)
        xhat = (x - layer.running_mean[None, :, None]) / sigma[None, :, None]
    y = alpha * xhat + beta
    check_finite(y, "batchnorm forward")
    return _unbatch(y, squeeze)


def batchnorm_backward(x: np.ndarray, layer, grad_out: np.ndarray):
    """ Gradients of :func:`batchnorm_forward`

    Train-mode gradients are taken through the batch statistics, which are
    recomputed from ``x``; running statistics are not touched.

    Args:
        x (np.ndarray): Forward input
        layer (:class:`repcnn_kws.nn.layers.BatchNorm1d`): Layer
        grad_out (np.ndarray): Gradient w.r.t. the forward output

    Returns:
        tuple: (grad_x, grads) where grads maps ``weight`` and ``bias`` to arrays
    """
    x, squeeze = _as_batch(x)
    grad_out, _ = _as_batch(grad_out)
    _bn_check(x, layer)
    if grad_out.shape != x.shape:
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match input {x.shape}")
    alpha = layer.weight.data
    if layer.training:
        count = x.shape[0] * x.shape[2]
        mean = x.mean(axis=(0, 2))
        var = x.var(axis=(0, 2))
        inv_std = 1.0 / np.sqrt(var + layer.eps)
        xhat = (x - mean[None, :, None]) * inv_std[None, :, None]
        dxhat = grad_out * alpha[None, :, None]
        sum1 = dxhat.sum(axis=(0, 2))[None, :, None]
        sum2 = (dxhat * xhat).sum(axis=(0, 2))[None, :, None]
        grad_x = (inv_std[None, :, None] / count) * (count * dxhat - sum1 - xhat * sum2)
    else:
        inv_std = 1.0 / np.sqrt(layer.running_var + layer.eps)
        xhat = (x - layer.running_mean[None, :, None]) * inv_std[None, :, None]
        grad_x = grad_out * (alpha * inv_std)[None, :, None]
    grads = {
        "weight": (grad_out * xhat).sum(axis=(0, 2)).astype(alpha.dtype, copy=False),
        "bias": grad_out.sum(axis=(0, 2)).astype(layer.bias.data.dtype, copy=False),
    }
    check_finite(grad_x, "batchnorm backward")
    return _unbatch(grad_x, squeeze), grads


def relu(x: np.ndarray) -> np.ndarray:
    """ Rectified linear unit, max(x, 0) """
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """ Gradient of :func:`relu`, passed where x > 0 """
    return grad_out * (x > 0)


def clip(x: np.ndarray, lower: float, upper: float) -> np.ndarray:
    """ Elementwise min(max(x, lower), upper)

    With lower = 0 and upper = +inf this is exactly :func:`relu`.

    Raises:
        ConfigError: If lower >= upper
    """
    if not lower < upper:
        raise ConfigError(f"clip needs lower < upper, got [{lower}, {upper}]")
    return np.minimum(np.maximum(x, lower), upper)


def clip_backward(x: np.ndarray, grad_out: np.ndarray, lower: float, upper: float) -> np.ndarray:
    """ Gradient of :func:`clip`, passed strictly inside (lower, upper) """
    return grad_out * ((x > lower) & (x < upper))
