""" Positive and negative training windows cut from featurized utterances. """

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .._errors import ConfigError, ShapeError
from .._utils import make_rng
from ..features import MfccConfig, mfcc
from .wav import Utterance

WINDOW_FRAMES = 149
""" Window length, the receptive field of the default model """

NEGATIVES_PER_UTTERANCE = 20
""" Negative windows drawn from every utterance """

POSITIVE = 1
NEGATIVE = 0


@dataclass
class WindowSample:
    """ One training window

    Attributes:
        features (np.ndarray): (n_mfcc, W) float32
        label (int): 1 positive, 0 negative
        source_id (str): Utterance id
        offset (int): First frame of the window in the utterance
    """
    features: np.ndarray
    label: int
    source_id: str
    offset: int

    @property
    def positive(self) -> bool:
        return self.label == POSITIVE


def _features(utt: Utterance, features: Optional[np.ndarray], cfg: Optional[MfccConfig]) -> np.ndarray:
    if features is None:
        return mfcc(utt.samples, cfg)
    return np.asarray(features, dtype=np.float32)


def _check_window(window: int, num_frames: int, utt: Utterance) -> None:
    if window < 1:
        raise ConfigError(f"window must be >= 1 frame, got {window}")
    if num_frames < window:
        raise ShapeError(f"utterance {utt.id!r} has {num_frames} frames, shorter than the {window}-frame window")


def harvest_positive(utt: Utterance, window: int = WINDOW_FRAMES, features: np.ndarray = None,
                     cfg: MfccConfig = None) -> WindowSample:
    """ The window that ends exactly at the keyword's end frame

    Args:
        utt (Utterance): Utterance with a keyword span
        window (int, optional): Window frames W, default is WINDOW_FRAMES
        features (np.ndarray, optional): Precomputed MFCC of ``utt``
        cfg (MfccConfig, optional): Feature settings when ``features`` is None

    Returns:
        WindowSample: Positive window covering frames [end - W, end)

    Raises:
        ShapeError: No span, keyword longer than W, or end frame before W
    """
    if utt.keyword_span is None:
        raise ShapeError(f"utterance {utt.id!r} has no keyword span")
    start, end = utt.keyword_span
    if end - start > window:
        raise ShapeError(f"utterance {utt.id!r}: keyword of {end - start} frames is longer than the {window}-frame window")
    if end < window:
        raise ShapeError(f"utterance {utt.id!r}: keyword ends at frame {end}, before the first full window ({window})")
    feats = _features(utt, features, cfg)
    _check_window(window, feats.shape[1], utt)
    if end > feats.shape[1]:
        raise ShapeError(f"utterance {utt.id!r}: keyword ends at frame {end}, features have {feats.shape[1]}")
    offset = end - window
    return WindowSample(np.ascontiguousarray(feats[:, offset:end]), POSITIVE, utt.id, offset)


def negative_offsets(num_frames: int, window: int, keyword_span=None) -> np.ndarray:
    """ Window offsets whose window does not contain the whole keyword

    Partial overlap with the keyword is allowed.
    """
    offsets = np.arange(num_frames - window + 1)
    if keyword_span is None:
        return offsets
    start, end = keyword_span
    contains = (offsets <= start) & (offsets + window >= end)
    return offsets[~contains]


def harvest_negatives(utt: Utterance, count: int = NEGATIVES_PER_UTTERANCE, rng=None,
                      window: int = WINDOW_FRAMES, features: np.ndarray = None,
                      cfg: MfccConfig = None) -> List[WindowSample]:
    """ Random windows that do not contain the full keyword

    Offsets are drawn without replacement while enough distinct windows exist,
    with replacement otherwise.

    Args:
        utt (Utterance): Utterance, with or without a keyword span
        count (int, optional): Number of windows, default is NEGATIVES_PER_UTTERANCE
        rng (np.random.Generator or int, optional): Random source
        window (int, optional): Window frames W, default is WINDOW_FRAMES
        features (np.ndarray, optional): Precomputed MFCC of ``utt``
        cfg (MfccConfig, optional): Feature settings when ``features`` is None

    Returns:
        list: ``count`` negative WindowSample objects

    Raises:
        ShapeError: Utterance shorter than W, or every window contains the keyword
    """
    if count < 0:
        raise ConfigError(f"count must be >= 0, got {count}")
    if count == 0:
        return []
    rng = make_rng(rng)
    feats = _features(utt, features, cfg)
    _check_window(window, feats.shape[1], utt)
    valid = negative_offsets(feats.shape[1], window, utt.keyword_span)
    if valid.size == 0:
        raise ShapeError(f"utterance {utt.id!r}: every {window}-frame window contains the keyword")
    chosen = rng.choice(valid, size=count, replace=bool(valid.size < count))
    return [WindowSample(np.ascontiguousarray(feats[:, o:o + window]), NEGATIVE, utt.id, int(o)) for o in chosen]
