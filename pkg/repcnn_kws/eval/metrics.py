""" Detection metrics: event grouping, FRR and FA/hr, DET curve, operating point and AUC.

Scores are streamed logits, one per emitted output frame (20 ms with the
stride-2 stem). A keyword span [start, end) in feature frames maps to the
emit frames [start // 2, (end - 1) // 2 + tolerance]; a positive file is
accepted when any event overlaps that range. Every event on a negative
file is a false activation.
"""

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.signal import find_peaks

from .._errors import ConfigError
from .._utils import format_float
from ..data.wav import Utterance
from ..features import MfccConfig, mfcc
from ..graph import ModelGraph
from ..stream import StreamEngine

log = logging.getLogger(__name__)

REFRACTORY_FRAMES = 100
""" Emit frames after an event during which no new event starts (2 s) """

TOLERANCE_FRAMES = 25
""" Emit frames after the keyword end still counted as a hit (0.5 s) """

FA_TARGET = 3.0
""" Operating point in false activations per hour """

MAX_THRESHOLDS = 2000
""" Cap on the default threshold sweep """

EMIT_STRIDE = 2
""" Input frames per emitted score """

DET_FIELDS = ("threshold", "fa_per_hr", "frr_pct")
""" DET curve CSV columns """


@dataclass
class EvalConfig:
    """ Event and operating point settings

    Attributes:
        refractory_frames (int): Refractory period in emit frames
        tolerance_frames (int): Emit frames after the keyword end that still count
        fa_target (float): FA/hr operating point
        max_thresholds (int): Cap on the default threshold sweep
    """
    refractory_frames: int = REFRACTORY_FRAMES
    tolerance_frames: int = TOLERANCE_FRAMES
    fa_target: float = FA_TARGET
    max_thresholds: int = MAX_THRESHOLDS

    def validate(self) -> "EvalConfig":
        if self.refractory_frames < 0 or self.tolerance_frames < 0:
            raise ConfigError("refractory_frames and tolerance_frames must be >= 0")
        if not self.fa_target > 0:
            raise ConfigError(f"fa_target must be positive, got {self.fa_target}")
        if self.max_thresholds < 1:
            raise ConfigError(f"max_thresholds must be >= 1, got {self.max_thresholds}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "EvalConfig":
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown eval config keys: {sorted(unknown)}")
        return cls(**data).validate()


@dataclass(frozen=True)
class DetectionEvent:
    """ Run of supra-threshold emit frames

    Attributes:
        start (int): First emit frame
        end (int): Last emit frame, inclusive
        peak (float): Largest score in the run
    """
    start: int
    end: int
    peak: float

    def overlaps(self, first: int, last: int) -> bool:
        return self.start <= last and first <= self.end


@dataclass
class ScoredFile:
    """ Streamed scores of one test file

    Attributes:
        id (str): Utterance id
        scores (np.ndarray): One logit per emit frame
        keyword_span (tuple or None): Keyword feature frames
        seconds (float): Audio duration
    """
    id: str
    scores: np.ndarray
    keyword_span: Optional[Tuple[int, int]]
    seconds: float

    def target_range(self, tolerance: int = TOLERANCE_FRAMES) -> Optional[Tuple[int, int]]:
        """ Emit frames that count as a hit, inclusive """
        if self.keyword_span is None:
            return None
        start, end = self.keyword_span
        return start // EMIT_STRIDE, (end - 1) // EMIT_STRIDE + tolerance


@dataclass(frozen=True)
class DetPoint:
    threshold: float
    fa_per_hour: float
    frr_percent: float


@dataclass
class DetCurve:
    """ DET points sorted by threshold ascending

    FA/hr is non-increasing and FRR non-decreasing along the list.
    """
    points: List[DetPoint]

    def __len__(self) -> int:
        return len(self.points)

    @property
    def thresholds(self) -> np.ndarray:
        return np.array([p.threshold for p in self.points])

    @property
    def fa_per_hour(self) -> np.ndarray:
        return np.array([p.fa_per_hour for p in self.points])

    @property
    def frr_percent(self) -> np.ndarray:
        return np.array([p.frr_percent for p in self.points])


@dataclass(frozen=True)
class OperatingPoint:
    """ FRR interpolated at a target FA/hr

    Attributes:
        frr_percent (float): FRR at the target
        fa_per_hour (float): The target
        clamped (bool): Target outside the curve's FA range, FRR taken from the nearest end
    """
    frr_percent: float
    fa_per_hour: float
    clamped: bool


@dataclass
class EvalSummary:
    """ Metric summary of one model on one test set """
    frr_at_target: float
    fa_target: float
    clamped: bool
    auc: float
    num_positive: int
    num_negative: int
    negative_hours: float
    num_thresholds: int

    def to_dict(self) -> dict:
        return asdict(self)


def detect_events(scores: Sequence[float], threshold: float,
                  refractory_frames: int = REFRACTORY_FRAMES) -> List[DetectionEvent]:
    """ Group supra-threshold emit frames into events

    Consecutive frames with score >= threshold form one event. Frames within
    ``refractory_frames`` after an event's last frame cannot open a new
    event and are dropped.

    Args:
        scores (list or np.ndarray): Score per emit frame
        threshold (float): Detection threshold
        refractory_frames (int, optional): Refractory period, default is REFRACTORY_FRAMES

    Returns:
        list: DetectionEvent objects in time order
    """
    if refractory_frames < 0:
        raise ConfigError(f"refractory_frames must be >= 0, got {refractory_frames}")
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    above = np.flatnonzero(scores >= threshold)
    if above.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(above) > 1)
    run_starts = above[np.concatenate([[0], breaks + 1])]
    run_ends = above[np.concatenate([breaks, [above.size - 1]])]
    events = []
    last_end = None
    for start, end in zip(run_starts, run_ends):
        start, end = int(start), int(end)
        if last_end is not None and start <= last_end + refractory_frames:
            if end <= last_end + refractory_frames:
                continue
            start = last_end + refractory_frames + 1
        peak = float(np.max(scores[start:end + 1]))
        events.append(DetectionEvent(start, end, peak))
        last_end = end
    return events


def score_file(graph: ModelGraph, utt: Utterance, mfcc_cfg: MfccConfig = None) -> ScoredFile:
    """ Stream one utterance through a fresh engine """
    features = mfcc(utt.samples, mfcc_cfg)
    engine = StreamEngine(graph)
    scores = np.asarray(engine.push_many(features), dtype=np.float64)
    return ScoredFile(utt.id, scores, utt.keyword_span, utt.duration)


def score_test_sets(model_or_stream, positives: Sequence[Utterance], negatives: Sequence[Utterance],
                    mfcc_cfg: MfccConfig = None, threads: int = 1) -> Tuple[List[ScoredFile], List[ScoredFile]]:
    """ Streamed score sequences of every test file

    Each file gets its own stream state, so files may be scored in parallel;
    results are sorted by utterance id.

    Args:
        model_or_stream (ModelGraph or StreamEngine): Graph to stream
        positives (list): Keyword utterances
        negatives (list): Keyword-free utterances
        mfcc_cfg (MfccConfig, optional): Feature settings
        threads (int, optional): Worker threads, default is 1

    Returns:
        tuple: (scored positives, scored negatives)
    """
    graph = model_or_stream.graph if isinstance(model_or_stream, StreamEngine) else model_or_stream
    graph.eval()

    def run(utterances):
        if threads > 1 and len(utterances) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                scored = list(pool.map(lambda u: score_file(graph, u, mfcc_cfg), utterances))
        else:
            scored = [score_file(graph, u, mfcc_cfg) for u in utterances]
        return sorted(scored, key=lambda s: s.id)

    return run(list(positives)), run(list(negatives))


def negative_hours_of(negatives: Sequence[ScoredFile]) -> float:
    return sum(f.seconds for f in negatives) / 3600.0


def compute_frr_fa(positives: Sequence[ScoredFile], negatives: Sequence[ScoredFile], threshold: float,
                   negative_hours: float = None, refractory_frames: int = REFRACTORY_FRAMES,
                   tolerance_frames: int = TOLERANCE_FRAMES) -> Tuple[float, float]:
    """ FRR and FA/hr at one threshold

    Args:
        positives (list): Scored keyword files
        negatives (list): Scored keyword-free files
        threshold (float): Detection threshold
        negative_hours (float, optional): Hours of negative audio, default is their total duration
        refractory_frames (int, optional): Event refractory period
        tolerance_frames (int, optional): Hit tolerance after the keyword end

    Returns:
        tuple: (frr_percent, fa_per_hour)

    Raises:
        ConfigError: No positive files or no negative audio
    """
    if not positives:
        raise ConfigError("no positive test files")
    if negative_hours is None:
        negative_hours = negative_hours_of(negatives)
    if not negative_hours > 0:
        raise ConfigError(f"negative audio must be longer than 0 hours, got {negative_hours}")
    misses = 0
    for scored in positives:
        first, last = scored.target_range(tolerance_frames)
        events = detect_events(scored.scores, threshold, refractory_frames)
        if not any(event.overlaps(first, last) for event in events):
            misses += 1
    false_alarms = sum(len(detect_events(s.scores, threshold, refractory_frames)) for s in negatives)
    return 100.0 * misses / len(positives), false_alarms / negative_hours


def _local_maxima(scores: np.ndarray) -> np.ndarray:
    if scores.size == 0:
        return scores
    padded = np.concatenate([[-np.inf], scores, [-np.inf]])
    keep = (padded[1:-1] >= padded[:-2]) & (padded[1:-1] >= padded[2:])
    return scores[keep]


def default_thresholds(scored: Sequence[ScoredFile], max_thresholds: int = MAX_THRESHOLDS) -> np.ndarray:
    """ Distinct local-maximum scores, evenly subsampled down to ``max_thresholds`` """
    peaks = [_local_maxima(np.asarray(s.scores, dtype=np.float64)) for s in scored]
    values = np.unique(np.concatenate(peaks)) if peaks else np.zeros(0)
    if values.size > max_thresholds:
        values = values[np.unique(np.linspace(0, values.size - 1, max_thresholds).round().astype(int))]
    return values


def det_curve(positives: Sequence[ScoredFile], negatives: Sequence[ScoredFile], thresholds=None,
              negative_hours: float = None, cfg: EvalConfig = None) -> DetCurve:
    """ Sweep thresholds into a monotone DET curve

    Refractory grouping can make raw counts non-monotone in the threshold;
    the curve reports the pessimistic envelope, the largest FA/hr at this or
    any higher threshold and the largest FRR at this or any lower threshold.

    Args:
        positives (list): Scored keyword files
        negatives (list): Scored keyword-free files
        thresholds (list, optional): Thresholds, default is every distinct local-maximum score
        negative_hours (float, optional): Hours of negative audio
        cfg (EvalConfig, optional): Event settings

    Returns:
        DetCurve: Points sorted by threshold
    """
    cfg = (cfg or EvalConfig()).validate()
    if thresholds is None:
        thresholds = default_thresholds(list(positives) + list(negatives), cfg.max_thresholds)
    thresholds = np.unique(np.asarray(thresholds, dtype=np.float64))
    if thresholds.size == 0:
        raise ConfigError("DET curve needs at least one threshold")
    raw = np.array([
        compute_frr_fa(positives, negatives, t, negative_hours, cfg.refractory_frames, cfg.tolerance_frames)
        for t in thresholds
    ])
    frr = np.maximum.accumulate(raw[:, 0])
    fa = np.maximum.accumulate(raw[::-1, 1])[::-1]
    return DetCurve([DetPoint(float(t), float(a), float(r)) for t, a, r in zip(thresholds, fa, frr)])


def frr_at_fa(curve: DetCurve, target_fa_per_hour: float = FA_TARGET) -> OperatingPoint:
    """ FRR at a target FA/hr, linearly interpolated in FA

    Among points with the same FA/hr the lowest FRR is used. A target
    outside the curve's FA range takes the FRR of the nearest end and sets
    ``clamped``.

    Args:
        curve (DetCurve): DET curve
        target_fa_per_hour (float, optional): Target, default is FA_TARGET

    Returns:
        OperatingPoint: Interpolated FRR
    """
    if len(curve) == 0:
        raise ConfigError("empty DET curve")
    fa = curve.fa_per_hour
    frr = curve.frr_percent
    unique_fa = np.unique(fa)
    best_frr = np.array([frr[fa == a].min() for a in unique_fa])
    clamped = bool(target_fa_per_hour < unique_fa[0] or target_fa_per_hour > unique_fa[-1])
    value = float(np.interp(target_fa_per_hour, unique_fa, best_frr))
    if clamped:
        log.warning(f"{target_fa_per_hour} FA/hr is outside the curve range "
                    f"[{unique_fa[0]:.3f}, {unique_fa[-1]:.3f}], FRR clamped to {value:.3f}%")
    return OperatingPoint(value, float(target_fa_per_hour), clamped)


def roc_auc(positive_scores, negative_scores) -> float:
    """ Probability that a positive outscores a negative, ties counting one half

    Args:
        positive_scores (list): One score per positive
        negative_scores (list): One score per negative

    Returns:
        float: AUC in [0, 1]
    """
    pos = np.asarray(positive_scores, dtype=np.float64).reshape(-1)
    neg = np.sort(np.asarray(negative_scores, dtype=np.float64).reshape(-1))
    if pos.size == 0 or neg.size == 0:
        raise ConfigError("roc_auc needs at least one positive and one negative score")
    below = np.searchsorted(neg, pos, side="left")
    ties = np.searchsorted(neg, pos, side="right") - below
    return (int(below.sum()) + 0.5 * int(ties.sum())) / (pos.size * neg.size)


def event_peaks(scores: Sequence[float], refractory_frames: int = REFRACTORY_FRAMES) -> np.ndarray:
    """ Peak score of every event a score track holds, without a threshold

    Peaks are local maxima, plateaus included, with the track edges counted
    as lower neighbours. Starting from the highest, a peak suppresses every
    lower peak within ``refractory_frames`` of it.

    Args:
        scores (list or np.ndarray): Score per emit frame
        refractory_frames (int, optional): Refractory period, default is REFRACTORY_FRAMES

    Returns:
        np.ndarray: Event peak scores in time order
    """
    if refractory_frames < 0:
        raise ConfigError(f"refractory_frames must be >= 0, got {refractory_frames}")
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if scores.size == 0:
        return scores
    padded = np.concatenate([[-np.inf], scores, [-np.inf]])
    index, _ = find_peaks(padded, distance=refractory_frames + 1)
    return padded[index]


def auc_scores(positives: Sequence[ScoredFile], negatives: Sequence[ScoredFile],
               refractory_frames: int = REFRACTORY_FRAMES) -> Tuple[np.ndarray, np.ndarray]:
    """ Peak score per positive file and per event of negative audio, see :func:`event_peaks` """
    pos = np.array([np.max(s.scores) for s in positives if s.scores.size])
    peaks = [event_peaks(s.scores, refractory_frames) for s in negatives]
    neg = np.concatenate(peaks) if peaks else np.zeros(0)
    return pos, neg


def evaluate(positives: Sequence[ScoredFile], negatives: Sequence[ScoredFile],
             cfg: EvalConfig = None) -> Tuple[EvalSummary, DetCurve]:
    """ DET curve, FRR at the target FA/hr and AUC of scored test sets """
    cfg = (cfg or EvalConfig()).validate()
    hours = negative_hours_of(negatives)
    curve = det_curve(positives, negatives, negative_hours=hours, cfg=cfg)
    point = frr_at_fa(curve, cfg.fa_target)
    pos_peaks, neg_peaks = auc_scores(positives, negatives, cfg.refractory_frames)
    auc = roc_auc(pos_peaks, neg_peaks) if pos_peaks.size and neg_peaks.size else math.nan
    summary = EvalSummary(point.frr_percent, cfg.fa_target, point.clamped, auc,
                          len(positives), len(negatives), hours, len(curve))
    log.info(f"FRR {summary.frr_at_target:.2f}% @ {cfg.fa_target} FA/hr, AUC {auc:.4f}, "
             f"{len(positives)} positive / {len(negatives)} negative files ({hours:.3f} h)")
    return summary, curve


def write_det_csv(curve: DetCurve, path: str) -> None:
    """ DET curve CSV: threshold, fa_per_hr, frr_pct """
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(DET_FIELDS)
        for p in curve.points:
            writer.writerow([format_float(p.threshold), format_float(p.fa_per_hour), format_float(p.frr_percent)])


def read_det_csv(path: str) -> DetCurve:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != DET_FIELDS:
            raise ConfigError(f"{path}: header {reader.fieldnames}, expected {list(DET_FIELDS)}")
        return DetCurve([DetPoint(float(r["threshold"]), float(r["fa_per_hr"]), float(r["frr_pct"])) for r in reader])


def write_summary_csv(summary: EvalSummary, path: str) -> None:
    """ One header row with the summary field names and one value row """
    data = summary.to_dict()
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(list(data))
        writer.writerow([format_float(v) if isinstance(v, float) else v for v in data.values()])
