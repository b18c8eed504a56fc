from ._version import __version__
from ._errors import (
    RepCNNError, ShapeError, ConfigError, NonFiniteError, WavFormatError, ManifestError, ModelFileError,
    FusionError, DivergenceError,
)
from ._logger import setup_logger
from .graph import ModelGraph, TRAIN, FUSED
from .model import RepCNNConfig, build_repcnn, build_single_branch_baseline, build_model, receptive_field, param_count
from .reparam import fuse_model, calibrate_clip_bounds, equivalence_report
from .features import MfccConfig, mfcc
from .stream import StreamEngine, stream_init, stream_push, stream_reset
from .train import TrainConfig, Trainer, train
from .model_file import save_model, load_model
