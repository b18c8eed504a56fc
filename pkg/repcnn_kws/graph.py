""" Ordered layer container shared by the trainer, the fusion pass and the streaming engine. """

from typing import Dict, List, Optional, Sequence

import numpy as np

from ._errors import ConfigError, ShapeError
from .nn.layers import BatchNorm1d, Clip, Conv1d, Layer, ReLU

TRAIN = "train"
""" Multi-branch training graph """

FUSED = "fused"
""" Single-branch inference graph """

MODES = (TRAIN, FUSED)


class ModelGraph(Layer):
    """ Sequential model with a mode tag

    Args:
        layers (list): Layers, applied in order
        mode (str): ``train`` or ``fused``
        config (optional): The :class:`~repcnn_kws.model.RepCNNConfig` the graph was built from
        architecture (str, optional): ``repcnn`` or ``baseline``, default is repcnn

    Attributes:
        hyperparameters (dict): Free-form training settings carried into saved model files

    Raises:
        ConfigError: Unknown mode
        ShapeError: Inconsistent channel chain
    """

    kind = "graph"

    def __init__(self, layers: Sequence[Layer], mode: str, config=None, architecture: str = "repcnn") -> None:
        super().__init__()
        if mode not in MODES:
            raise ConfigError(f"unknown graph mode {mode!r}, expected one of {MODES}")
        self.layers: List[Layer] = list(layers)
        self.mode = mode
        self.config = config
        self.architecture = architecture
        self.hyperparameters: dict = {}
        self.out_channels = self._check_channel_chain()
        self.training = False
        for layer in self.layers:
            layer.train(False)

    def _check_channel_chain(self) -> Optional[int]:
        channels = None
        for i, layer in enumerate(self.layers):
            expected = _in_channels(layer)
            if expected is not None and channels is not None and expected != channels:
                raise ShapeError(f"layer {i} ({layer!r}) expects {expected} channels, previous layer gives {channels}")
            out = _out_channels(layer)
            if out is not None:
                channels = out
        return channels

    @property
    def in_channels(self) -> Optional[int]:
        for layer in self.layers:
            channels = _in_channels(layer)
            if channels is not None:
                return channels
        return None

    def children(self) -> Dict[str, Layer]:
        return {str(i): layer for i, layer in enumerate(self.layers)}

    def forward(self, x: np.ndarray, collect: bool = False):
        """ Run every layer in order

        Args:
            x (np.ndarray): Input features, (C, T) or (N, C, T)
            collect (bool, optional): Also return the output of every activation, default is False

        Returns:
            np.ndarray or tuple: Output logits, plus the list of activation outputs when ``collect``
        """
        activations = []
        for layer in self.layers:
            x = layer.forward(x)
            if collect and is_activation(layer):
                activations.append(x)
        return (x, activations) if collect else x

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            grad_out = layer.backward(grad_out)
        return grad_out

    def output_length(self, length: int) -> int:
        """ Output frames for an input of ``length`` frames """
        for layer in self.layers:
            if isinstance(layer, Conv1d):
                length = layer.output_length(length)
        return length

    def count(self, kind: str) -> int:
        """ Number of layers of a kind, e.g. ``conv1d`` or ``batchnorm1d`` """
        return sum(1 for layer in self.layers if layer.kind == kind)

    def summary(self) -> str:
        """ One line per layer with its parameter count """
        lines = [f"ModelGraph(mode={self.mode}, architecture={self.architecture})"]
        for i, layer in enumerate(self.layers):
            lines.append(f"  {i:2d} {layer!r:<60s} params={layer.num_parameters()}")
        lines.append(f"  total params={self.num_parameters()}")
        return "\n".join(lines)


def is_activation(layer: Layer) -> bool:
    """ True for layers whose output is an activation (ReLU, Clip, RepConvBlock) """
    return isinstance(layer, (ReLU, Clip)) or layer.kind == "repconvblock"


def _in_channels(layer: Layer) -> Optional[int]:
    if isinstance(layer, Conv1d):
        return layer.in_channels
    if isinstance(layer, BatchNorm1d):
        return layer.num_features
    return getattr(layer, "channels", None)


def _out_channels(layer: Layer) -> Optional[int]:
    if isinstance(layer, Conv1d):
        return layer.out_channels
    if isinstance(layer, BatchNorm1d):
        return layer.num_features
    return getattr(layer, "channels", None)
