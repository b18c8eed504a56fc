""" Frame-at-a-time causal inference with one ring buffer per convolution.

A convolution with kernel k keeps the last k - 1 frames it received; the
buffers start at zero, which is the causal zero padding of the batch path.
A convolution with stride s emits on every s-th frame it receives, starting
with the first, so the default model (stride-2 stem) emits on input frames
0, 2, 4, ... exactly like batch inference.

Example:

    >>> import numpy as np
    >>> from repcnn_kws.model import build_repcnn
    >>> from repcnn_kws.reparam import fuse_model
    >>> from repcnn_kws.stream import StreamEngine
    >>> engine = StreamEngine(fuse_model(build_repcnn(rng=0)))
    >>> len(engine.state.rings)
    9
    >>> engine.push(np.zeros(16, dtype=np.float32)) is not None
    True
    >>> engine.push(np.zeros(16, dtype=np.float32)) is None
    True
"""

from dataclasses import dataclass, field
from typing import List, Optional, Union

import numpy as np

from ._base import _Base
from ._errors import ConfigError, ShapeError
from .graph import ModelGraph
from .nn import functional as F
from .nn.layers import BatchNorm1d, Clip, Conv1d, ReLU

COUNTER_BYTES = 8
""" Size of one int64 counter or cursor """


class _Ring:
    """ Last ``size`` frames of a (channels,) stream, oldest first on read """

    __slots__ = ("buffer", "cursor")

    def __init__(self, channels: int, size: int, dtype) -> None:
        self.buffer = np.zeros((channels, size), dtype=dtype)
        self.cursor = 0

    def window(self, frame: np.ndarray) -> np.ndarray:
        """ (channels, size + 1) view of the stored frames followed by ``frame`` """
        buf, c = self.buffer, self.cursor
        return np.concatenate([buf[:, c:], buf[:, :c], frame[:, None]], axis=1)

    def push(self, frame: np.ndarray) -> None:
        self.buffer[:, self.cursor] = frame
        self.cursor = (self.cursor + 1) % self.buffer.shape[1]

    def reset(self) -> None:
        self.buffer.fill(0)
        self.cursor = 0


def _conv_frame(conv: Conv1d, window: np.ndarray) -> np.ndarray:
    """ One output frame of ``conv`` from a (C_in, k) window """
    weight = conv.weight.data
    if conv.depthwise:
        out = np.einsum("ck,ck->c", window, weight[:, 0, :])
    elif conv.groups == 1:
        out = np.einsum("ock,ck->o", weight, window)
    else:
        g = conv.groups
        w = weight.reshape(g, conv.out_channels // g, conv.in_channels // g, conv.kernel_size)
        out = np.einsum("gock,gck->go", w, window.reshape(g, conv.in_channels // g, -1)).reshape(-1)
    if conv.bias is not None:
        out = out + conv.bias.data
    return out.astype(weight.dtype, copy=False)


class _ConvStep:
    def __init__(self, conv: Conv1d, dtype, rings: list) -> None:
        if conv.padding != F.CAUSAL:
            raise ConfigError(f"streaming needs causal convolutions, got padding {conv.padding!r}")
        self.conv = conv
        self.ring = None
        if conv.kernel_size > 1:
            self.ring = _Ring(conv.in_channels, conv.kernel_size - 1, dtype)
            rings.append(self.ring)
        self.seen = 0

    def __call__(self, x: np.ndarray) -> Optional[np.ndarray]:
        if self.ring is None:
            window = x[:, None]
        else:
            window = self.ring.window(x)
            self.ring.push(x)
        emit = self.seen % self.conv.stride == 0
        self.seen += 1
        return _conv_frame(self.conv, window) if emit else None

    def reset(self) -> None:
        if self.ring is not None:
            self.ring.reset()
        self.seen = 0


class _PointStep:
    """ Frame-local layer: batch norm (eval), ReLU or clip """

    def __init__(self, layer) -> None:
        self.layer = layer

    def __call__(self, x: np.ndarray) -> np.ndarray:
        layer = self.layer
        if isinstance(layer, BatchNorm1d):
            return F.batchnorm_forward(x[:, None], layer)[:, 0]
        if isinstance(layer, Clip):
            return F.clip(x, layer.lower, layer.upper)
        return F.relu(x)

    def reset(self) -> None:
        pass


class _BlockStep:
    """ Multi-branch RepConvBlock in eval semantics, one ring per branch """

    def __init__(self, block, dtype, rings: list) -> None:
        self.paths = [(_ConvStep(conv, dtype, rings), _PointStep(bn)) for conv, bn in block.branches]
        conv, bn = block.one_by_one
        self.paths.append((_ConvStep(conv, dtype, rings), _PointStep(bn)))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        total = None
        for conv, bn in self.paths:
            out = bn(conv(x))
            total = out if total is None else total + out
        return F.relu(total)

    def reset(self) -> None:
        for conv, _ in self.paths:
            conv.reset()


@dataclass
class StreamState:
    """ Everything one audio stream needs between frames

    Attributes:
        graph (ModelGraph): Graph being streamed (layers run in eval semantics)
        steps (list): Per-layer streaming steps
        rings (list): Ring buffers, one per convolution with k > 1 (per branch in train graphs)
        frames_consumed (int): Input frames pushed since init/reset
        frames_emitted (int): Scores produced since init/reset
    """
    graph: ModelGraph
    steps: list
    rings: List[_Ring] = field(default_factory=list)
    frames_consumed: int = 0
    frames_emitted: int = 0

    @property
    def num_phase_counters(self) -> int:
        return sum(1 for step in _conv_steps(self.steps) if step.conv.stride > 1)

    @property
    def nbytes(self) -> int:
        """ Ring bytes plus one counter per ring cursor, per strided conv and the two frame counters """
        rings = sum(ring.buffer.nbytes for ring in self.rings)
        counters = 2 + len(self.rings) + self.num_phase_counters
        return int(rings + COUNTER_BYTES * counters)


def _conv_steps(steps):
    for step in steps:
        if isinstance(step, _ConvStep):
            yield step
        elif isinstance(step, _BlockStep):
            for conv, _ in step.paths:
                yield conv


def stream_init(graph: ModelGraph) -> StreamState:
    """ Zeroed streaming state for a graph

    Args:
        graph (ModelGraph): Fused graph, or a training graph run in eval semantics

    Returns:
        StreamState: Fresh state

    Raises:
        ConfigError: Layer that cannot be streamed
    """
    dtype = np.float32
    params = list(graph.parameters().values())
    if params:
        dtype = params[0].data.dtype
    rings: List[_Ring] = []
    steps = []
    for layer in graph.layers:
        if isinstance(layer, Conv1d):
            steps.append(_ConvStep(layer, dtype, rings))
        elif isinstance(layer, (BatchNorm1d, ReLU, Clip)):
            steps.append(_PointStep(layer))
        elif layer.kind == "repconvblock":
            steps.append(_BlockStep(layer, dtype, rings))
        else:
            raise ConfigError(f"cannot stream layer {layer!r}")
    return StreamState(graph, steps, rings)


def stream_reset(state: StreamState) -> StreamState:
    """ Return a state to its freshly initialized contents, in place """
    for step in state.steps:
        step.reset()
    state.frames_consumed = 0
    state.frames_emitted = 0
    return state


def stream_push(state: StreamState, mfcc_frame: np.ndarray) -> Optional[Union[float, np.ndarray]]:
    """ Feed one feature frame

    Args:
        state (StreamState): Stream state, updated in place
        mfcc_frame (np.ndarray): (in_channels,) feature frame

    Returns:
        float or None: Wake-word logit when the frame completes an output step
        (an array for graphs with more than one output channel), else None

    Raises:
        ShapeError: Wrong frame width
    """
    x = np.asarray(mfcc_frame)
    expected = state.graph.in_channels
    if x.shape != (expected,):
        raise ShapeError(f"stream frame must have shape ({expected},), got {x.shape}")
    x = x.astype(state.rings[0].buffer.dtype if state.rings else np.float32, copy=False)
    if state.graph.training:
        state.graph.eval()
    state.frames_consumed += 1
    for step in state.steps:
        x = step(x)
        if x is None:
            return None
    state.frames_emitted += 1
    return float(x[0]) if x.size == 1 else x


class StreamEngine(_Base):
    """ Streaming inference for one audio stream

    Args:
        graph (ModelGraph): Fused graph, or a training graph for the latency comparison
        *args: Passed to :class:`_Base`
        **kwargs: Passed to :class:`_Base`
    """

    def __init__(self, graph: ModelGraph, *args, **kwargs) -> None:
        super().__init__(*args, **kwargs)
        graph.eval()
        self.graph = graph
        self.state = stream_init(graph)
        self.log.debug(f"stream over {graph.mode} graph: {len(self.state.rings)} rings, {self.nbytes} bytes of state")

    @property
    def nbytes(self) -> int:
        return self.state.nbytes

    def push(self, frame: np.ndarray):
        return stream_push(self.state, frame)

    def push_many(self, frames: np.ndarray) -> List[float]:
        """ Push a (in_channels, T) block of frames and return the emitted scores """
        frames = np.asarray(frames)
        if frames.ndim != 2:
            raise ShapeError(f"expected (channels, frames), got shape {frames.shape}")
        scores = []
        for t in range(frames.shape[1]):
            score = self.push(frames[:, t])
            if score is not None:
                scores.append(score)
        return scores

    def reset(self) -> None:
        stream_reset(self.state)
