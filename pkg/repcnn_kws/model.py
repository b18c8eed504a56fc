""" RepCNN training graph, the single-branch baseline, receptive field and parameter counts.

Topology: stem conv (k=5, stride 2) + BN + ReLU; for every stage kernel k,
two RepConvBlocks(k) then a pointwise conv + BN + ReLU; a pointwise head
gives one wake-word logit per output frame.
"""

from dataclasses import asdict, dataclass, field, fields
from typing import List

from ._errors import ConfigError
from ._utils import make_rng
from .graph import FUSED, TRAIN, ModelGraph
from .nn.layers import BatchNorm1d, Conv1d, ReLU
from .repblock import NUM_BRANCHES, RepConvBlock

IN_CHANNELS = 16
""" MFCC coefficients per frame """

WIDTH = 44
""" Channels of every hidden layer """

STEM_KERNEL = 5
""" Stem kernel size """

STEM_STRIDE = 2
""" Stem stride, the only stride > 1 """

STAGE_KERNELS = [7, 9, 11, 13]
""" One stage per kernel size """

TEXT_STAGE_KERNELS = [5, 7, 11, 13]
""" Alternative kernel sizes, selectable through the config """

BLOCKS_PER_STAGE = 2
""" RepConvBlocks per stage """

REPCNN = "repcnn"
BASELINE = "baseline"
ARCHITECTURES = (REPCNN, BASELINE)


@dataclass
class RepCNNConfig:
    """ RepCNN hyperparameters

    Attributes:
        in_channels (int): Input features per frame
        width (int): Hidden channels C
        stem_kernel (int): Stem kernel size
        stem_stride (int): Stem stride
        stage_kernels (list): Kernel size of each stage
        blocks_per_stage (int): RepConvBlocks per stage
        num_branches (int): Parallel k-kernels n per block
    """
    in_channels: int = IN_CHANNELS
    width: int = WIDTH
    stem_kernel: int = STEM_KERNEL
    stem_stride: int = STEM_STRIDE
    stage_kernels: List[int] = field(default_factory=lambda: list(STAGE_KERNELS))
    blocks_per_stage: int = BLOCKS_PER_STAGE
    num_branches: int = NUM_BRANCHES

    def validate(self) -> "RepCNNConfig":
        """ Raise :class:`ConfigError` on invalid values """
        for name in ("in_channels", "width", "stem_kernel", "stem_stride", "blocks_per_stage"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.num_branches < 1:
            raise ConfigError(f"num_branches must be >= 1, got {self.num_branches}")
        if not self.stage_kernels:
            raise ConfigError("stage_kernels must not be empty")
        for k in self.stage_kernels:
            if k < 3 or k % 2 == 0:
                raise ConfigError(f"stage kernels must be odd and >= 3, got {k}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RepCNNConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        cfg = cls(**data)
        cfg.stage_kernels = [int(k) for k in cfg.stage_kernels]
        return cfg.validate()


def _stem(cfg: RepCNNConfig, rng) -> list:
    return [
        Conv1d(cfg.in_channels, cfg.width, cfg.stem_kernel, stride=cfg.stem_stride, bias=False, rng=rng),
        BatchNorm1d(cfg.width),
        ReLU(),
    ]


def _pointwise(cfg: RepCNNConfig, rng) -> list:
    return [Conv1d(cfg.width, cfg.width, 1, bias=False, rng=rng), BatchNorm1d(cfg.width), ReLU()]


def _head(cfg: RepCNNConfig, rng) -> Conv1d:
    return Conv1d(cfg.width, 1, 1, bias=True, rng=rng)


def build_repcnn(cfg: RepCNNConfig = None, rng=None) -> ModelGraph:
    """ Build the multi-branch RepCNN training graph

    Args:
        cfg (RepCNNConfig, optional): Config, default is RepCNNConfig()
        rng (np.random.Generator or int, optional): Initialization seed

    Returns:
        ModelGraph: Train-mode graph

    Raises:
        ConfigError: Invalid config
    """
    cfg = (cfg or RepCNNConfig()).validate()
    rng = make_rng(rng)
    layers = _stem(cfg, rng)
    for k in cfg.stage_kernels:
        for _ in range(cfg.blocks_per_stage):
            layers.append(RepConvBlock(cfg.width, k, cfg.num_branches, rng=rng))
        layers.extend(_pointwise(cfg, rng))
    layers.append(_head(cfg, rng))
    return ModelGraph(layers, TRAIN, config=cfg, architecture=REPCNN)


def build_single_branch_baseline(cfg: RepCNNConfig = None, rng=None) -> ModelGraph:
    """ Same topology with each RepConvBlock replaced by one depthwise conv + BN + ReLU

    Args:
        cfg (RepCNNConfig, optional): Config; ``num_branches`` is ignored
        rng (np.random.Generator or int, optional): Initialization seed

    Returns:
        ModelGraph: Train-mode graph
    """
    cfg = (cfg or RepCNNConfig()).validate()
    rng = make_rng(rng)
    layers = _stem(cfg, rng)
    for k in cfg.stage_kernels:
        for _ in range(cfg.blocks_per_stage):
            layers.extend([
                Conv1d(cfg.width, cfg.width, k, groups=cfg.width, bias=False, rng=rng),
                BatchNorm1d(cfg.width),
                ReLU(),
            ])
        layers.extend(_pointwise(cfg, rng))
    layers.append(_head(cfg, rng))
    return ModelGraph(layers, TRAIN, config=cfg, architecture=BASELINE)


def build_model(cfg: RepCNNConfig = None, architecture: str = REPCNN, rng=None) -> ModelGraph:
    """ Build a training graph by architecture name (``repcnn`` or ``baseline``) """
    if architecture == REPCNN:
        return build_repcnn(cfg, rng)
    if architecture == BASELINE:
        return build_single_branch_baseline(cfg, rng)
    raise ConfigError(f"unknown architecture {architecture!r}, expected one of {ARCHITECTURES}")


def receptive_field(cfg) -> int:
    """ Input frames that can influence one output

    RF = 1 + sum over convs of (k - 1) * jump, where jump is the product of
    the strides of the earlier layers.

    Args:
        cfg (RepCNNConfig or ModelGraph): Config, or any graph of convolutions

    Returns:
        int: Receptive field in frames
    """
    if isinstance(cfg, ModelGraph):
        kernels = []
        for layer in cfg.layers:
            if layer.kind == "repconvblock":
                kernels.append((layer.kernel_size, 1))
            elif isinstance(layer, Conv1d):
                kernels.append((layer.kernel_size, layer.stride))
    else:
        kernels = [(cfg.stem_kernel, cfg.stem_stride)]
        for k in cfg.stage_kernels:
            kernels.extend([(k, 1)] * cfg.blocks_per_stage)
            kernels.append((1, 1))
        kernels.append((1, 1))
    rf, jump = 1, 1
    for k, stride in kernels:
        rf += (k - 1) * jump
        jump *= stride
    return rf


def param_count(graph: ModelGraph, mode: str = None) -> int:
    """ Exact number of scalars in a graph

    Train mode counts trainable scalars (batch norm running statistics
    excluded); fused mode counts every stored scalar.

    Args:
        graph (ModelGraph): Graph
        mode (str, optional): ``train`` or ``fused``, default is the graph's own mode

    Returns:
        int: Parameter count
    """
    mode = mode or graph.mode
    if mode not in (TRAIN, FUSED):
        raise ConfigError(f"unknown mode {mode!r}")
    count = graph.num_parameters()
    if mode == FUSED:
        count += sum(int(buf.size) for buf in graph.buffers().values())
    return count
