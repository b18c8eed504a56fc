""" Training loop: focal loss, top-K hard-negative mining, seed control and loss-curve export.

Each batch holds ``positives_per_batch`` positive windows and
``positives_per_batch * negatives_per_positive`` negative windows that share
one forward pass. The loss back-propagated is the mean over every positive
plus the ``top_k`` negatives with the largest focal loss; all other
negatives get a zero logit gradient.
"""

import csv
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from ._base import _Base
from ._errors import ConfigError, DivergenceError, NonFiniteError, ShapeError
from ._utils import check_finite, derive_seed, format_float, make_rng
from .data.augment import AugmentConfig, random_augment
from .data.harvest import NEGATIVES_PER_UTTERANCE, WINDOW_FRAMES, WindowSample, harvest_negatives, harvest_positive
from .data.manifest import Manifest
from .data.wav import read_wav
from .features import MfccConfig, mfcc
from .graph import TRAIN, ModelGraph
from .nn.loss import FOCAL_ALPHA, FOCAL_GAMMA, focal_loss_per_sample
from .nn.optim import LEARNING_RATE, build_optimizer, optimizer_step

log = logging.getLogger(__name__)

POSITIVES_PER_BATCH = 16
""" Positive windows per batch """

TOP_K = 50
""" Hardest negatives kept per batch """

EPOCHS = 10

SEEDS = [0, 1, 2]
""" Training repeats; reported numbers are their mean """

VAL_CHUNK = 512
""" Windows per forward pass during validation """

CURVE_FIELDS = ("seed", "epoch", "train_loss", "val_loss")
""" Loss-curve CSV columns """


@dataclass
class TrainConfig:
    """ Training hyperparameters

    Attributes:
        positives_per_batch (int): Positive windows per batch
        negatives_per_positive (int): Negative windows per positive in a batch
        top_k (int): Hardest negatives back-propagated per batch
        gamma (float): Focal loss focusing parameter
        alpha (float): Focal loss positive weight
        optimizer (str): ``adam`` or ``sgd``
        lr (float): Learning rate, 0 freezes the parameters
        momentum (float): SGD momentum
        epochs (int): Fixed epoch budget, no early stopping
        seeds (list): Seeds, one full run each
        val_every (int): Validate every this many epochs
        negatives_per_utterance (int): Negative windows harvested per utterance
        augment (AugmentConfig or None): Training-audio augmentation, None disables it
        noise_paths (list): WAV noise clips for augmentation
        rir_paths (list): WAV impulse responses for augmentation
    """
    positives_per_batch: int = POSITIVES_PER_BATCH
    negatives_per_positive: int = NEGATIVES_PER_UTTERANCE
    top_k: int = TOP_K
    gamma: float = FOCAL_GAMMA
    alpha: float = FOCAL_ALPHA
    optimizer: str = "adam"
    lr: float = LEARNING_RATE
    momentum: float = 0.0
    epochs: int = EPOCHS
    seeds: List[int] = field(default_factory=lambda: list(SEEDS))
    val_every: int = 1
    negatives_per_utterance: int = NEGATIVES_PER_UTTERANCE
    augment: Optional[AugmentConfig] = field(default_factory=AugmentConfig)
    noise_paths: List[str] = field(default_factory=list)
    rir_paths: List[str] = field(default_factory=list)

    @property
    def negatives_per_batch(self) -> int:
        return self.positives_per_batch * self.negatives_per_positive

    def validate(self) -> "TrainConfig":
        for name in ("positives_per_batch", "negatives_per_positive", "epochs", "val_every"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.top_k < 0:
            raise ConfigError(f"top_k must be >= 0, got {self.top_k}")
        if self.top_k > self.negatives_per_batch:
            raise ConfigError(f"top_k ({self.top_k}) exceeds the negatives per batch ({self.negatives_per_batch})")
        if self.negatives_per_utterance < 0:
            raise ConfigError(f"negatives_per_utterance must be >= 0, got {self.negatives_per_utterance}")
        if self.gamma < 0 or not 0 <= self.alpha <= 1:
            raise ConfigError(f"focal loss needs gamma >= 0 and alpha in [0, 1], got {self.gamma}, {self.alpha}")
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        self.seeds = [int(s) for s in self.seeds]
        if self.augment is not None:
            self.augment.validate()
        return self

    def to_dict(self) -> dict:
        data = asdict(self)
        data["augment"] = self.augment.to_dict() if self.augment is not None else None
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        data = dict(data)
        if "augment" in data and data["augment"] is not None:
            data["augment"] = AugmentConfig.from_dict(data["augment"])
        return cls(**data).validate()


class WindowDataset:
    """ Harvested windows stacked into one array

    Args:
        features (np.ndarray): (N, C, W) float32
        labels (np.ndarray): (N,) 0/1
        source_ids (list, optional): Utterance id of every window
    """

    def __init__(self, features: np.ndarray, labels: np.ndarray, source_ids: Sequence[str] = None) -> None:
        features = np.asarray(features, dtype=np.float32)
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        if features.ndim != 3 or features.shape[0] != labels.size:
            raise ShapeError(f"features {features.shape} do not match {labels.size} labels")
        self.features = features
        self.labels = labels
        self.source_ids = list(source_ids) if source_ids is not None else [""] * labels.size

    @classmethod
    def from_samples(cls, samples: Sequence[WindowSample]) -> "WindowDataset":
        if not samples:
            return cls(np.zeros((0, 0, 0), dtype=np.float32), np.zeros(0, dtype=np.int64), [])
        return cls(np.stack([s.features for s in samples]), np.array([s.label for s in samples]),
                   [s.source_id for s in samples])

    def __len__(self) -> int:
        return int(self.labels.size)

    @property
    def num_positives(self) -> int:
        return int(np.sum(self.labels == 1))

    @property
    def num_negatives(self) -> int:
        return len(self) - self.num_positives


def select_hard_negatives(neg_losses, k: int) -> np.ndarray:
    """ Indices of the k largest losses

    Ties go to the lower index.

    Args:
        neg_losses (list or np.ndarray): Per-negative losses
        k (int): Number kept, all when k >= len

    Returns:
        np.ndarray: Selected indices, largest loss first
    """
    if k < 0:
        raise ConfigError(f"k must be >= 0, got {k}")
    losses = np.asarray(neg_losses, dtype=np.float64).reshape(-1)
    order = np.argsort(-losses, kind="stable")
    return order[:k]


def hard_negative_loss(logits: np.ndarray, labels: np.ndarray, top_k: int,
                       gamma: float = FOCAL_GAMMA, alpha: float = FOCAL_ALPHA):
    """ Mean focal loss over all positives and the top-K negatives

    Args:
        logits (np.ndarray): (B,) logits
        labels (np.ndarray): (B,) 0/1 labels
        top_k (int): Negatives kept
        gamma (float, optional): Focal focusing parameter
        alpha (float, optional): Focal positive weight

    Returns:
        tuple: (loss, grad_logits, selected) with ``selected`` the boolean mask
        of samples in the loss; grad_logits is exactly 0 elsewhere
    """
    labels = np.asarray(labels).reshape(-1)
    losses, grads = focal_loss_per_sample(logits, labels, gamma, alpha)
    negatives = np.flatnonzero(labels == 0)
    selected = labels == 1
    selected[negatives[select_hard_negatives(losses[negatives], top_k)]] = True
    count = int(selected.sum())
    grad_logits = np.zeros(labels.size, dtype=np.float64)
    if count == 0:
        return 0.0, grad_logits, selected
    loss = float(np.sum(losses[selected]) / count)
    grad_logits[selected] = grads[selected] / count
    return loss, grad_logits, selected


def last_frame_logits(model: ModelGraph, features: np.ndarray) -> np.ndarray:
    """ Logit of the last output frame of every window, (B,) """
    return model.forward(features)[:, 0, -1]


def batch_loss(model: ModelGraph, batch: Tuple[np.ndarray, np.ndarray], cfg: TrainConfig):
    """ Hard-negative focal loss of one batch and the parameter gradients

    Positives and negatives share one train-mode forward pass, so batch norm
    statistics cover the whole batch.

    Args:
        model (ModelGraph): Training graph
        batch (tuple): (features (B, C, W), labels (B,))
        cfg (TrainConfig): Loss settings

    Returns:
        tuple: (loss, grads) with grads keyed by parameter name
    """
    features, labels = batch
    model.train()
    output = model.forward(features)
    loss, grad_logits, _ = hard_negative_loss(output[:, 0, -1], labels, cfg.top_k, cfg.gamma, cfg.alpha)
    grad_out = np.zeros_like(output)
    grad_out[:, 0, -1] = grad_logits.astype(output.dtype)
    model.backward(grad_out)
    grads = {name: param.grad for name, param in model.parameters().items()}
    return loss, grads


def validation_loss(model: ModelGraph, data: WindowDataset, cfg: TrainConfig) -> float:
    """ Mean focal loss over every window, eval mode """
    if len(data) == 0:
        return math.nan
    was_training = model.training
    model.eval()
    try:
        logits = np.concatenate([
            last_frame_logits(model, data.features[i:i + VAL_CHUNK]) for i in range(0, len(data), VAL_CHUNK)
        ])
    finally:
        model.train(was_training)
    losses, _ = focal_loss_per_sample(logits, data.labels, cfg.gamma, cfg.alpha)
    return float(np.mean(losses))


@dataclass
class LossCurve:
    """ Per-epoch (train_loss, val_loss) pairs of every seed

    ``val_loss`` is NaN for epochs without validation.
    """
    curves: Dict[int, List[Tuple[float, float]]] = field(default_factory=dict)

    def append(self, seed: int, train_loss: float, val_loss: float) -> None:
        self.curves.setdefault(int(seed), []).append((float(train_loss), float(val_loss)))

    def merge(self, other: "LossCurve") -> "LossCurve":
        for seed, points in other.curves.items():
            if seed in self.curves:
                raise ConfigError(f"seed {seed} present in both loss curves")
            self.curves[seed] = list(points)
        return self

    @property
    def seeds(self) -> List[int]:
        return sorted(self.curves)

    def epochs(self, seed: int) -> int:
        return len(self.curves.get(seed, []))

    def rows(self) -> List[Tuple[int, int, float, float]]:
        """ (seed, epoch, train_loss, val_loss) sorted by seed then epoch, epochs from 1 """
        return [(seed, epoch, t, v) for seed in self.seeds
                for epoch, (t, v) in enumerate(self.curves[seed], start=1)]

    def mean(self) -> List[Tuple[float, float]]:
        """ Seed-averaged curve over the epochs every seed completed """
        if not self.curves:
            return []
        length = min(len(points) for points in self.curves.values())
        stacked = np.array([self.curves[seed][:length] for seed in self.seeds], dtype=np.float64)
        return [tuple(float(x) for x in row) for row in stacked.mean(axis=0)]

    def final_val_loss(self) -> float:
        """ Mean over seeds of the last validated loss """
        finals = []
        for seed in self.seeds:
            validated = [v for _, v in self.curves[seed] if not math.isnan(v)]
            if validated:
                finals.append(validated[-1])
        return float(np.mean(finals)) if finals else math.nan


def export_loss_curves(curves: LossCurve, path: str) -> None:
    """ Write a loss curve CSV with columns seed, epoch, train_loss, val_loss

    Floats are written in their shortest round-trip form.
    """
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CURVE_FIELDS)
        for seed, epoch, train_loss, val_loss in curves.rows():
            writer.writerow([seed, epoch, format_float(train_loss), format_float(val_loss)])


def read_loss_curves(path: str) -> LossCurve:
    """ Parse a CSV written by :func:`export_loss_curves` """
    curve = LossCurve()
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != CURVE_FIELDS:
            raise ConfigError(f"{path}: header {reader.fieldnames}, expected {list(CURVE_FIELDS)}")
        rows = sorted((int(r["seed"]), int(r["epoch"]), float(r["train_loss"]), float(r["val_loss"])) for r in reader)
    for seed, _, train_loss, val_loss in rows:
        curve.append(seed, train_loss, val_loss)
    return curve


def _load_clips(paths: Sequence[str], root: str) -> List[np.ndarray]:
    return [read_wav(p if os.path.isabs(p) else os.path.join(root, p)).samples for p in paths]


def _harvest_record(manifest: Manifest, record, seed: int, window: int, cfg: TrainConfig,
                    mfcc_cfg: MfccConfig, augment: bool, noises, impulses,
                    epoch: Optional[int] = None) -> List[WindowSample]:
    key = record.id if epoch is None else f"epoch-{epoch}:{record.id}"
    rng = make_rng(derive_seed(seed, key))
    utt = manifest.load_utterance(record)
    if augment and cfg.augment is not None:
        utt.samples = random_augment(utt.samples, rng, cfg.augment, noises, impulses)
    feats = mfcc(utt.samples, mfcc_cfg)
    samples = []
    try:
        if utt.keyword_span is not None:
            samples.append(harvest_positive(utt, window, features=feats))
    except ShapeError as e:
        log.warning(f"skipping {record.path}: {e}")
        return []
    try:
        samples.extend(harvest_negatives(utt, cfg.negatives_per_utterance, rng, window, features=feats))
    except ShapeError as e:
        log.warning(f"no negatives from {record.path}: {e}")
    return samples


def build_window_dataset(manifest: Manifest, split: str, seed: int, cfg: TrainConfig = None,
                         window: int = WINDOW_FRAMES, mfcc_cfg: MfccConfig = None,
                         augment: bool = False, threads: int = 1, epoch: Optional[int] = None) -> WindowDataset:
    """ Featurize a manifest split and harvest 1 positive + 20 negatives per utterance

    Every utterance owns a generator seeded by (seed, utterance id), or by
    (seed, epoch, utterance id) when ``epoch`` is given, and results are
    gathered in manifest order, so the dataset does not depend on ``threads``.

    Args:
        manifest (Manifest): Dataset manifest
        split (str): Split tag, e.g. ``train``
        seed (int): Global seed
        cfg (TrainConfig, optional): Harvest and augmentation settings
        window (int, optional): Window frames, default is WINDOW_FRAMES
        mfcc_cfg (MfccConfig, optional): Feature settings
        augment (bool, optional): Apply ``cfg.augment`` to the audio, default is False
        threads (int, optional): Worker threads, default is 1
        epoch (int, optional): Epoch whose augmentation and negative offsets to draw

    Returns:
        WindowDataset: Harvested windows
    """
    cfg = (cfg or TrainConfig()).validate()
    mfcc_cfg = mfcc_cfg or MfccConfig()
    records = manifest.split(split)
    noises = _load_clips(cfg.noise_paths, manifest.root) if augment else []
    impulses = _load_clips(cfg.rir_paths, manifest.root) if augment else []

    def work(record):
        return _harvest_record(manifest, record, seed, window, cfg, mfcc_cfg, augment, noises, impulses, epoch)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(tqdm(pool.map(work, records), total=len(records), desc=split, leave=False))
    else:
        results = [work(record) for record in tqdm(records, desc=split, leave=False)]
    dataset = WindowDataset.from_samples([s for samples in results for s in samples])
    tag = split if epoch is None else f"{split} epoch {epoch}"
    log.info(f"{tag}: {len(records)} utterances -> {dataset.num_positives} positive, "
             f"{dataset.num_negatives} negative windows")
    return dataset


class EpochWindows:
    """ Re-harvests a training split once per epoch

    Calling the object with an epoch number returns that epoch's windows.
    Augmentation and negative offsets change from epoch to epoch, and the
    same (seed, epoch) always gives the same windows.

    Args:
        manifest (Manifest): Dataset manifest
        split (str): Split tag, e.g. ``train``
        seed (int): Global seed
        cfg (TrainConfig, optional): Harvest and augmentation settings
        window (int, optional): Window frames, default is WINDOW_FRAMES
        mfcc_cfg (MfccConfig, optional): Feature settings
        augment (bool, optional): Apply ``cfg.augment`` to the audio, default is False
        threads (int, optional): Worker threads, default is 1
        cache (bool, optional): Keep every epoch's windows for later calls, default is False
    """

    def __init__(self, manifest: Manifest, split: str, seed: int, cfg: TrainConfig = None,
                 window: int = WINDOW_FRAMES, mfcc_cfg: MfccConfig = None,
                 augment: bool = False, threads: int = 1, cache: bool = False) -> None:
        self.manifest = manifest
        self.split = split
        self.seed = seed
        self.cfg = cfg
        self.window = window
        self.mfcc_cfg = mfcc_cfg
        self.augment = augment
        self.threads = threads
        self._cache: Optional[Dict[int, WindowDataset]] = {} if cache else None

    def __call__(self, epoch: int) -> WindowDataset:
        if self._cache is not None and epoch in self._cache:
            return self._cache[epoch]
        data = build_window_dataset(self.manifest, self.split, self.seed, self.cfg, self.window,
                                    self.mfcc_cfg, self.augment, self.threads, epoch=epoch)
        if self._cache is not None:
            self._cache[epoch] = data
        return data


TrainingWindows = Union[WindowDataset, Callable[[int], WindowDataset]]
""" A fixed window set, or a callable giving the windows of an epoch """


def iterate_batches(data: WindowDataset, cfg: TrainConfig, rng: np.random.Generator):
    """ Shuffled batches of positives_per_batch positives and negatives_per_batch negatives

    One epoch covers every positive once; negatives are drawn from a
    shuffled cycle. Without positives, one epoch covers every negative once.

    Yields:
        tuple: (features, labels)
    """
    positives = np.flatnonzero(data.labels == 1)
    negatives = np.flatnonzero(data.labels == 0)
    positives = positives[rng.permutation(positives.size)]
    negatives = negatives[rng.permutation(negatives.size)]
    per_neg = min(cfg.negatives_per_batch, negatives.size)
    if positives.size:
        num_batches = int(math.ceil(positives.size / cfg.positives_per_batch))
    else:
        num_batches = int(math.ceil(negatives.size / max(per_neg, 1)))
    cursor = 0
    for b in range(num_batches):
        pos = positives[b * cfg.positives_per_batch:(b + 1) * cfg.positives_per_batch]
        if per_neg:
            take = np.arange(cursor, cursor + per_neg) % negatives.size
            neg = negatives[take]
            cursor = (cursor + per_neg) % negatives.size
        else:
            neg = negatives[:0]
        index = np.concatenate([pos, neg])
        yield data.features[index], data.labels[index]


class Trainer(_Base):
    """ Runs the fixed-budget training of one model for one seed

    Args:
        cfg (TrainConfig, optional): Hyperparameters, default is TrainConfig()
        progress (bool, optional): Show a tqdm bar over batches, default is True
        *args: Passed to :class:`_Base`
        **kwargs: Passed to :class:`_Base`
    """

    def __init__(self, cfg: TrainConfig = None, *args, progress: bool = True, **kwargs) -> None:
        super().__init__(*args, **kwargs)
        self.cfg = (cfg or TrainConfig()).validate()
        self.progress = progress

    def fit(self, model: ModelGraph, data: TrainingWindows, val_data: WindowDataset = None,
            seed: int = 0) -> Tuple[ModelGraph, LossCurve]:
        """ Train ``model`` in place

        Args:
            model (ModelGraph): Training graph
            data (WindowDataset or callable): Training windows, or a callable such as
                :class:`EpochWindows` returning the windows of each epoch
            val_data (WindowDataset, optional): Validation windows
            seed (int, optional): Seed of the batch order, default is 0

        Returns:
            tuple: (model, LossCurve with one seed)

        Raises:
            ConfigError: Empty dataset or fused graph
            DivergenceError: Non-finite loss or parameter
        """
        cfg = self.cfg
        if model.mode != TRAIN:
            raise ConfigError(f"cannot train a {model.mode} graph")
        if not callable(data) and len(data) == 0:
            raise ConfigError("training set is empty")
        optimizer = build_optimizer(cfg.optimizer, lr=cfg.lr, **({"momentum": cfg.momentum} if cfg.optimizer == "sgd" else {}))
        params = model.parameters()
        curve = LossCurve()
        for epoch in range(1, cfg.epochs + 1):
            epoch_data = data(epoch) if callable(data) else data
            if len(epoch_data) == 0:
                raise ConfigError(f"training set is empty at epoch {epoch}")
            rng = make_rng(derive_seed(seed, f"epoch-{epoch}"))
            losses = []
            batches = iterate_batches(epoch_data, cfg, rng)
            bar = tqdm(batches, desc=f"seed {seed} epoch {epoch}", leave=False, disable=not self.progress)
            for b, batch in enumerate(bar):
                try:
                    loss, grads = batch_loss(model, batch, cfg)
                except NonFiniteError as e:
                    raise DivergenceError(f"seed {seed} epoch {epoch} batch {b}: {e}") from e
                if not math.isfinite(loss):
                    raise DivergenceError(f"seed {seed} epoch {epoch} batch {b}: loss is {loss}")
                optimizer_step(params, grads, optimizer)
                for name, param in params.items():
                    try:
                        check_finite(param.data, f"parameter {name}")
                    except NonFiniteError as e:
                        raise DivergenceError(f"seed {seed} epoch {epoch} batch {b}: {e}") from e
                losses.append(loss)
                self.log.debug(f"seed {seed} epoch {epoch} batch {b}: loss {loss:.6f}")
            train_loss = float(np.mean(losses))
            val_loss = math.nan
            if val_data is not None and epoch % cfg.val_every == 0:
                val_loss = validation_loss(model, val_data, cfg)
            curve.append(seed, train_loss, val_loss)
            self.log.info(f"seed {seed} epoch {epoch}/{cfg.epochs}: train_loss {train_loss:.6f} val_loss {val_loss:.6f}")
        model.eval()
        return model, curve


def train(model: ModelGraph, data: TrainingWindows, cfg: TrainConfig = None, val_data: WindowDataset = None,
          seed: int = 0, progress: bool = True) -> Tuple[ModelGraph, LossCurve]:
    """ Train a model for one seed, see :meth:`Trainer.fit` """
    return Trainer(cfg, progress=progress).fit(model, data, val_data, seed)
