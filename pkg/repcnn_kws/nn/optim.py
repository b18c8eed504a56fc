""" Optimizers updating :class:`~repcnn_kws.nn.layers.Parameter` objects in place. """

from typing import Dict

import numpy as np

from .._errors import ConfigError
from .layers import Parameter

LEARNING_RATE = 1e-3
""" Default learning rate """


class Optimizer:
    """ Base optimizer

    State is keyed by parameter name, so the same optimizer must always be
    stepped with the same parameter dictionary. Updates are plain numpy
    arithmetic and therefore deterministic.

    Args:
        lr (float, optional): Learning rate, default is LEARNING_RATE
    """

    def __init__(self, lr: float = LEARNING_RATE) -> None:
        if lr < 0:
            raise ConfigError(f"learning rate must be non-negative, got {lr}")
        self.lr = lr
        self.state: Dict[str, dict] = {}
        self.steps = 0

    def step(self, params: Dict[str, Parameter]) -> None:
        """ Apply one update to every parameter that has a gradient

        Args:
            params (dict): Parameters by name
        """
        self.steps += 1
        for name, param in params.items():
            if param.grad is None:
                continue
            update = self._update(name, param.grad.astype(np.float64))
            param.data = (param.data - update).astype(param.data.dtype)

    def _update(self, name: str, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class SGD(Optimizer):
    """ Stochastic gradient descent with optional momentum

    Args:
        lr (float, optional): Learning rate, default is LEARNING_RATE
        momentum (float, optional): Momentum in [0, 1), default is 0
    """

    def __init__(self, lr: float = LEARNING_RATE, momentum: float = 0.0) -> None:
        super().__init__(lr)
        if not 0 <= momentum < 1:
            raise ConfigError(f"momentum must be in [0, 1), got {momentum}")
        self.momentum = momentum

    def _update(self, name, grad):
        if self.momentum == 0:
            return self.lr * grad
        velocity = self.state.setdefault(name, {"velocity": np.zeros_like(grad)})
        velocity["velocity"] = self.momentum * velocity["velocity"] + grad
        return self.lr * velocity["velocity"]


class Adam(Optimizer):
    """ Adaptive moment estimation

    Args:
        lr (float, optional): Learning rate, default is LEARNING_RATE
        betas (tuple, optional): Moment decay rates, default is (0.9, 0.999)
        eps (float, optional): Denominator guard, default is 1e-8
    """

    def __init__(self, lr: float = LEARNING_RATE, betas: tuple = (0.9, 0.999), eps: float = 1e-8) -> None:
        super().__init__(lr)
        if not (0 <= betas[0] < 1 and 0 <= betas[1] < 1):
            raise ConfigError(f"betas must be in [0, 1), got {betas}")
        self.betas = betas
        self.eps = eps

    def _update(self, name, grad):
        b1, b2 = self.betas
        state = self.state.setdefault(name, {"m": np.zeros_like(grad), "v": np.zeros_like(grad)})
        state["m"] = b1 * state["m"] + (1 - b1) * grad
        state["v"] = b2 * state["v"] + (1 - b2) * grad * grad
        m_hat = state["m"] / (1 - b1 ** self.steps)
        v_hat = state["v"] / (1 - b2 ** self.steps)
        return self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


OPTIMIZERS = {"sgd": SGD, "adam": Adam}


def build_optimizer(name: str, lr: float = LEARNING_RATE, **kwargs) -> Optimizer:
    """ Build an optimizer by name (``sgd`` or ``adam``) """
    try:
        cls = OPTIMIZERS[name.lower()]
    except KeyError:
        raise ConfigError(f"unknown optimizer {name!r}, available: {sorted(OPTIMIZERS)}") from None
    return cls(lr=lr, **kwargs)


def optimizer_step(params: Dict[str, Parameter], grads: Dict[str, np.ndarray], optimizer: Optimizer) -> None:
    """ Attach ``grads`` to ``params`` and apply one optimizer update

    Args:
        params (dict): Parameters by name
        grads (dict): Gradients by the same names; missing names are skipped
        optimizer (Optimizer): Optimizer holding the update state and settings
    """
    for name, param in params.items():
        param.grad = grads.get(name)
    optimizer.step(params)
