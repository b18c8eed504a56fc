""" Central finite differences used as the oracle for every backward pass. """

from typing import Callable, Dict

import numpy as np

STEP = 1e-3
""" Default finite-difference step """


def numeric_gradient(func: Callable[[np.ndarray], float], point: np.ndarray, step: float = STEP) -> np.ndarray:
    """ (f(x + h) - f(x - h)) / 2h for every element of ``point``

    ``point`` is perturbed in place and restored, so it may be a live
    parameter array.
    """
    grad = np.zeros(point.shape, dtype=np.float64)
    flat = point.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        f_plus = func(point)
        flat[i] = orig - step
        f_minus = func(point)
        flat[i] = orig
        out[i] = (f_plus - f_minus) / (2 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """ max |a - n| normalized by the larger of max |a| and max |n| """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.max(np.abs(analytic), initial=0.0), np.max(np.abs(numeric), initial=0.0), 1e-12)
    return float(np.max(np.abs(analytic - numeric), initial=0.0) / scale)


def finite_difference_check(func: Callable[[np.ndarray], float], point: np.ndarray,
                            analytic: np.ndarray, step: float = STEP) -> float:
    """ Compare an analytic gradient against central differences

    Args:
        func (Callable): Scalar function of ``point``
        point (np.ndarray): Where to differentiate (perturbed in place, restored)
        analytic (np.ndarray): Analytic gradient at ``point``
        step (float, optional): Step h, default is STEP

    Returns:
        float: Max relative error
    """
    return relative_error(analytic, numeric_gradient(func, point, step))


def check_layer(layer, x: np.ndarray, rng: np.random.Generator, step: float = STEP) -> Dict[str, float]:
    """ Check input and parameter gradients of a layer

    Uses the scalar loss sum(forward(x) * r) with a fixed random projection r.

    Args:
        layer: Any :class:`~repcnn_kws.nn.layers.Layer`
        x (np.ndarray): Input point
        rng (np.random.Generator): Source of the projection
        step (float, optional): Finite-difference step

    Returns:
        dict: Relative error for ``input`` and every parameter name
    """
    x = np.array(x, dtype=np.float64)
    projection = rng.standard_normal(layer.forward(x).shape)

    def loss(_):
        return float(np.sum(layer.forward(x) * projection))

    layer.forward(x)
    grad_x = layer.backward(projection)
    analytic = {name: np.array(p.grad, copy=True) for name, p in layer.parameters().items()}

    errors = {"input": finite_difference_check(loss, x, grad_x, step)}
    for name, param in layer.parameters().items():
        errors[name] = finite_difference_check(loss, param.data, analytic[name], step)
    return errors
