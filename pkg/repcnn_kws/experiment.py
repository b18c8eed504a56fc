""" Experiment spec and the train / evaluate / ablate workflows behind the CLI.

An experiment spec is a JSON file::

    {
        "manifest": "data/manifest.csv",
        "architecture": "repcnn",
        "model": {"num_branches": 2},
        "train": {"epochs": 10},
        "eval": {"fa_target": 3.0},
        "synth": {"num_train": 1000, "num_val": 200},
        "seeds": [0, 1, 2],
        "output_dir": "runs/default"
    }

Every key is optional. Relative paths resolve against the spec file's
directory.
"""

import csv
import json
import logging
import math
import os
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ._errors import ConfigError, ManifestError
from ._utils import derive_seed, format_float
from .data.manifest import TEST_NEGATIVE, TEST_POSITIVE, TRAIN, VAL, Manifest, load_manifest
from .data.synth import MANIFEST_NAME, SynthSpec
from .eval.metrics import EvalConfig, EvalSummary, DetCurve, evaluate, score_test_sets
from .features import MfccConfig
from .graph import ModelGraph
from .model import ARCHITECTURES, REPCNN, RepCNNConfig, build_model
from .reparam import fuse_model
from .train import SEEDS, EpochWindows, LossCurve, TrainConfig, Trainer, TrainingWindows, WindowDataset, build_window_dataset

log = logging.getLogger(__name__)

SPEC_KEYS = ("manifest", "architecture", "model", "train", "eval", "synth", "seeds", "output_dir")
""" Keys accepted in an experiment spec file """

ABLATION_BRANCHES = [1, 2, 3, 4, 5]
""" Branch counts of the default ablation """

ABLATION_FIELDS = ("branches", "mean_val_loss", "frr_at_target", "fa_target")
""" Ablation CSV columns """


@dataclass
class ExperimentSpec:
    """ Everything one experiment needs

    Attributes:
        manifest (str): Dataset manifest path
        architecture (str): ``repcnn`` or ``baseline``
        model (RepCNNConfig): Model config
        train (TrainConfig): Training config; its seeds are replaced by ``seeds``
        eval (EvalConfig): Event and operating point settings
        synth (SynthSpec): Synthetic dataset settings, used by ``repcnn synth``
        seeds (list): Seeds, one training run each
        output_dir (str): Directory every output goes to
        base_dir (str): Directory relative paths resolve against
    """
    manifest: str = MANIFEST_NAME
    architecture: str = REPCNN
    model: RepCNNConfig = field(default_factory=RepCNNConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    synth: SynthSpec = field(default_factory=SynthSpec)
    seeds: List[int] = field(default_factory=lambda: list(SEEDS))
    output_dir: str = "."
    base_dir: str = "."

    def _resolve(self, path: str) -> str:
        return path if os.path.isabs(path) else os.path.normpath(os.path.join(self.base_dir, path))

    @property
    def manifest_path(self) -> str:
        return self._resolve(self.manifest)

    @property
    def output_path(self) -> str:
        return self._resolve(self.output_dir)

    def validate(self, require_manifest: bool = True) -> "ExperimentSpec":
        """ Check every section, and that the manifest exists unless told otherwise

        Raises:
            ConfigError: Invalid value
            ManifestError: Manifest missing
        """
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.architecture!r}, expected one of {ARCHITECTURES}")
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        self.seeds = [int(s) for s in self.seeds]
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError(f"seeds must be distinct, got {self.seeds}")
        self.model.validate()
        self.train.seeds = list(self.seeds)
        self.train.validate()
        self.eval.validate()
        self.synth.validate()
        if require_manifest and not os.path.isfile(self.manifest_path):
            raise ManifestError(f"manifest not found: {self.manifest_path}")
        return self

    def to_dict(self) -> dict:
        return {
            "manifest": self.manifest,
            "architecture": self.architecture,
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "eval": self.eval.to_dict(),
            "synth": self.synth.to_dict(),
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_dict(cls, data: dict, base_dir: str = ".") -> "ExperimentSpec":
        if not isinstance(data, dict):
            raise ConfigError(f"experiment spec must be a JSON object, got {type(data).__name__}")
        unknown = set(data) - set(SPEC_KEYS)
        if unknown:
            raise ConfigError(f"unknown experiment spec keys: {sorted(unknown)}, expected some of {list(SPEC_KEYS)}")
        try:
            spec = cls(
                manifest=data.get("manifest", MANIFEST_NAME),
                architecture=data.get("architecture", REPCNN),
                model=RepCNNConfig.from_dict(data.get("model", {})),
                train=TrainConfig.from_dict(data.get("train", {})),
                eval=EvalConfig.from_dict(data.get("eval", {})),
                synth=SynthSpec.from_dict(data.get("synth", {})),
                seeds=list(data.get("seeds", SEEDS)),
                output_dir=data.get("output_dir", "."),
                base_dir=base_dir,
            )
        except TypeError as e:
            raise ConfigError(f"bad experiment spec value: {e}") from e
        return spec


def load_experiment(path: str, require_manifest: bool = True) -> ExperimentSpec:
    """ Read and validate an experiment spec file

    Args:
        path (str): JSON spec
        require_manifest (bool, optional): Fail if the manifest does not exist, default is True

    Returns:
        ExperimentSpec: Validated spec with ``base_dir`` set to the file's directory

    Raises:
        ConfigError: Unreadable JSON or invalid values
        ManifestError: Manifest missing
    """
    if not os.path.isfile(path):
        raise ConfigError(f"experiment spec not found: {path}")
    with open(path, encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from e
    spec = ExperimentSpec.from_dict(data, base_dir=os.path.dirname(os.path.abspath(path)))
    return spec.validate(require_manifest=require_manifest)


def save_experiment(spec: ExperimentSpec, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(spec.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")


def open_manifest(spec: ExperimentSpec, splits: Sequence[str] = (TRAIN, VAL)) -> Manifest:
    """ Load the spec's manifest and require records in every split of ``splits`` """
    manifest = load_manifest(spec.manifest_path)
    for split in splits:
        if not manifest.split(split):
            raise ManifestError(f"{spec.manifest_path} has no {split} records")
    return manifest


@dataclass
class SeedRun:
    """ Result of one training run """
    seed: int
    model: ModelGraph
    curve: LossCurve


def init_seed(seed: int) -> int:
    """ Seed of the weight initialization of a run """
    return derive_seed(seed, "init")


def hyperparameters_of(spec: ExperimentSpec, seed: int) -> dict:
    return {"seed": int(seed), "train": spec.train.to_dict(), "features": MfccConfig().to_dict()}


def window_datasets(spec: ExperimentSpec, manifest: Manifest, seed: int, threads: int = 1,
                    cache: bool = False) -> Tuple[EpochWindows, WindowDataset]:
    """ Per-epoch augmented training windows and fixed clean validation windows of one seed """
    train_data = EpochWindows(manifest, TRAIN, seed, spec.train, augment=spec.train.augment is not None,
                              threads=threads, cache=cache)
    val_data = build_window_dataset(manifest, VAL, seed, spec.train, threads=threads)
    return train_data, val_data


def train_seed(spec: ExperimentSpec, seed: int, train_data: TrainingWindows, val_data: WindowDataset,
               model_cfg: RepCNNConfig = None, progress: bool = True) -> SeedRun:
    """ Build a fresh model and train it for one seed """
    model = build_model(model_cfg or spec.model, spec.architecture, rng=init_seed(seed))
    model.hyperparameters = hyperparameters_of(spec, seed)
    log.debug(model.summary())
    model, curve = Trainer(spec.train, progress=progress).fit(model, train_data, val_data, seed)
    return SeedRun(seed, model, curve)


def train_experiment(spec: ExperimentSpec, threads: int = 1, progress: bool = True) -> List[SeedRun]:
    """ Train one model per seed of the spec

    Returns:
        list: SeedRun per seed, in seed order
    """
    manifest = open_manifest(spec)
    runs = []
    for seed in spec.seeds:
        train_data, val_data = window_datasets(spec, manifest, seed, threads)
        runs.append(train_seed(spec, seed, train_data, val_data, progress=progress))
    return runs


def merged_curve(runs: Sequence[SeedRun]) -> LossCurve:
    curve = LossCurve()
    for run in runs:
        curve.merge(run.curve)
    return curve


def evaluate_model(graph: ModelGraph, manifest: Manifest, cfg: EvalConfig = None,
                   threads: int = 1) -> Tuple[EvalSummary, DetCurve]:
    """ Stream the test splits of a manifest through a graph and compute the metrics

    Raises:
        ManifestError: A test split is empty
    """
    positives = manifest.split(TEST_POSITIVE)
    negatives = manifest.split(TEST_NEGATIVE)
    if not positives:
        raise ManifestError(f"manifest has no {TEST_POSITIVE} records")
    if not negatives:
        raise ManifestError(f"manifest has no {TEST_NEGATIVE} records")
    pos_scored, neg_scored = score_test_sets(
        graph, [manifest.load_utterance(r) for r in positives], [manifest.load_utterance(r) for r in negatives],
        threads=threads)
    return evaluate(pos_scored, neg_scored, cfg)


@dataclass
class AblationRow:
    """ One branch count of the ablation

    Attributes:
        branches (int): Parallel k-kernels per block
        mean_val_loss (float): Final validation loss averaged over seeds
        frr_at_target (float): FRR at the FA/hr target averaged over seeds, NaN without test splits
        fa_target (float): FA/hr operating point
        curve (LossCurve): Loss curves of every seed
    """
    branches: int
    mean_val_loss: float
    frr_at_target: float
    fa_target: float
    curve: LossCurve = field(default_factory=LossCurve, repr=False)


def ablate(spec: ExperimentSpec, branch_counts: Sequence[int] = None, threads: int = 1,
           progress: bool = True) -> List[AblationRow]:
    """ Train the spec for each branch count and report accuracy per count

    Every branch count trains on the same per-epoch windows of a seed,
    harvested once per epoch and cached, so branch counts differ only in
    the model.

    Args:
        spec (ExperimentSpec): Experiment, its ``model.num_branches`` is overridden
        branch_counts (list, optional): Branch counts, default is ABLATION_BRANCHES
        threads (int, optional): Worker threads for featurization and scoring
        progress (bool, optional): Show tqdm bars

    Returns:
        list: AblationRow per branch count, in the order given
    """
    branch_counts = list(ABLATION_BRANCHES if branch_counts is None else branch_counts)
    if not branch_counts:
        raise ConfigError("branch_counts must not be empty")
    for n in branch_counts:
        if int(n) < 1:
            raise ConfigError(f"branch counts must be >= 1, got {n}")
    manifest = open_manifest(spec)
    has_test = bool(manifest.split(TEST_POSITIVE)) and bool(manifest.split(TEST_NEGATIVE))
    if not has_test:
        log.warning("manifest has no test splits, FRR column left as NaN")
    datasets: Dict[int, Tuple[EpochWindows, WindowDataset]] = {
        seed: window_datasets(spec, manifest, seed, threads, cache=True) for seed in spec.seeds
    }
    rows = []
    for n in branch_counts:
        model_cfg = replace(spec.model, num_branches=int(n), stage_kernels=list(spec.model.stage_kernels))
        curve = LossCurve()
        frrs = []
        for seed in spec.seeds:
            run = train_seed(spec, seed, *datasets[seed], model_cfg=model_cfg, progress=progress)
            curve.merge(run.curve)
            if has_test:
                summary, _ = evaluate_model(fuse_model(run.model), manifest, spec.eval, threads)
                frrs.append(summary.frr_at_target)
        frr = sum(frrs) / len(frrs) if frrs else math.nan
        row = AblationRow(int(n), curve.final_val_loss(), frr, spec.eval.fa_target, curve)
        log.info(f"branches {row.branches}: mean val loss {row.mean_val_loss:.6f}, "
                 f"FRR {row.frr_at_target:.2f}% @ {row.fa_target} FA/hr")
        rows.append(row)
    return rows


def write_ablation_csv(rows: Sequence[AblationRow], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(ABLATION_FIELDS)
        for row in rows:
            writer.writerow([row.branches, format_float(row.mean_val_loss), format_float(row.frr_at_target),
                             format_float(row.fa_target)])


def calibration_inputs(spec: ExperimentSpec, seed: int = 0, threads: int = 1) -> Optional[np.ndarray]:
    """ Validation windows of the spec's manifest, (N, C, W), or None when there are none """
    manifest = open_manifest(spec, splits=(VAL,))
    data = build_window_dataset(manifest, VAL, seed, spec.train, threads=threads)
    return data.features if len(data) else None
