""" Synthetic keyword dataset for desk-scale experiments.

The keyword is a fixed pattern of three linear chirps (0.5 s). Positive
clips embed it in speech-like background, pink noise with a syllabic
envelope, 10 to 20 dB below the keyword. Negative clips carry distractors
built from the same chirp segments in a different order.
"""

import logging
import os
from dataclasses import asdict, dataclass, fields
from typing import List, Tuple

import numpy as np
from scipy.fft import irfft, rfft
from tqdm import tqdm

from .._errors import ConfigError
from .._utils import derive_seed, make_rng
from ..features import HOP_SAMPLES, SAMPLE_RATE, MfccConfig
from .augment import db_to_amplitude, rms
from .harvest import WINDOW_FRAMES
from .manifest import TEST_NEGATIVE, TEST_POSITIVE, TRAIN, VAL, Manifest, ManifestRecord
from .wav import write_wav

log = logging.getLogger(__name__)

CHIRP_SEGMENTS_HZ = ((400.0, 1200.0), (1800.0, 900.0), (700.0, 2400.0))
""" (start, end) frequency of each keyword segment """

KEYWORD_FRAMES = 50
""" Keyword length in feature frames (0.5 s) """

KEYWORD_AMPLITUDE = 0.5
""" Keyword peak amplitude """

MANIFEST_NAME = "manifest.csv"


@dataclass
class SynthSpec:
    """ Synthetic dataset size and signal levels

    Attributes:
        num_train (int): Training clips
        num_val (int): Validation clips
        num_test_positive (int): Positive test clips
        num_test_negative (int): Negative test clips
        positive_fraction (float): Share of train/val clips holding the keyword
        utterance_seconds (float): Length of train, val and positive test clips
        negative_seconds (float): Length of negative test clips
        snr_db_range (tuple): Keyword-to-background ratio range in dB
        seed (int): Global seed
    """
    num_train: int = 100
    num_val: int = 20
    num_test_positive: int = 20
    num_test_negative: int = 20
    positive_fraction: float = 0.5
    utterance_seconds: float = 3.0
    negative_seconds: float = 10.0
    snr_db_range: Tuple[float, float] = (10.0, 20.0)
    seed: int = 0

    def validate(self) -> "SynthSpec":
        for name in ("num_train", "num_val", "num_test_positive", "num_test_negative"):
            if int(getattr(self, name)) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not 0 <= self.positive_fraction <= 1:
            raise ConfigError(f"positive_fraction must be in [0, 1], got {self.positive_fraction}")
        min_frames = WINDOW_FRAMES + 1
        for name in ("utterance_seconds", "negative_seconds"):
            frames = MfccConfig().num_frames(int(round(getattr(self, name) * SAMPLE_RATE)))
            if frames < min_frames:
                raise ConfigError(f"{name}={getattr(self, name)} gives {frames} frames, need >= {min_frames}")
        low, high = self.snr_db_range
        if low > high:
            raise ConfigError(f"snr_db_range must be ordered, got {self.snr_db_range}")
        self.snr_db_range = (float(low), float(high))
        return self

    @property
    def total(self) -> int:
        return self.num_train + self.num_val + self.num_test_positive + self.num_test_negative

    def to_dict(self) -> dict:
        data = asdict(self)
        data["snr_db_range"] = list(self.snr_db_range)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "SynthSpec":
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown synth keys: {sorted(unknown)}")
        spec = cls(**data)
        spec.snr_db_range = tuple(spec.snr_db_range)
        return spec.validate()


def chirp_segments(sample_rate: int = SAMPLE_RATE) -> List[np.ndarray]:
    """ The three Hann-tapered linear chirps that make up the keyword """
    length = KEYWORD_FRAMES * HOP_SAMPLES
    bounds = np.linspace(0, length, len(CHIRP_SEGMENTS_HZ) + 1).astype(int)
    segments = []
    for (f0, f1), a, b in zip(CHIRP_SEGMENTS_HZ, bounds[:-1], bounds[1:]):
        n = b - a
        t = np.arange(n) / sample_rate
        duration = n / sample_rate
        phase = 2 * np.pi * (f0 * t + 0.5 * (f1 - f0) / duration * t ** 2)
        segments.append(np.sin(phase) * np.hanning(n))
    return segments


def keyword_template(sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """ The keyword waveform, peak KEYWORD_AMPLITUDE, KEYWORD_FRAMES * hop samples long """
    template = np.concatenate(chirp_segments(sample_rate))
    return KEYWORD_AMPLITUDE * template / np.max(np.abs(template))


def distractor(rng: np.random.Generator, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """ Keyword segments in a shuffled order other than the keyword's """
    segments = chirp_segments(sample_rate)
    identity = list(range(len(segments)))
    order = identity
    while order == identity:
        order = [int(i) for i in rng.permutation(len(segments))]
    pattern = np.concatenate([segments[i] for i in order])
    return KEYWORD_AMPLITUDE * pattern / np.max(np.abs(pattern))


def speech_like_background(num_samples: int, rng: np.random.Generator,
                           sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """ Pink noise shaped by a 3 to 6 Hz syllabic envelope, unit RMS """
    white = rng.standard_normal(num_samples)
    spectrum = rfft(white)
    freqs = np.arange(spectrum.size, dtype=np.float64)
    freqs[0] = 1.0
    pink = irfft(spectrum / np.sqrt(freqs), n=num_samples)
    rate = rng.uniform(3.0, 6.0)
    phase = rng.uniform(0.0, 2 * np.pi)
    t = np.arange(num_samples) / sample_rate
    envelope = 0.3 + 0.7 * np.abs(np.sin(np.pi * rate * t + phase))
    background = pink * envelope
    return background / max(rms(background), 1e-12)


def _background_at(background: np.ndarray, start: int, length: int, level: float) -> np.ndarray:
    """ Background scaled so its RMS over [start, start + length) equals ``level`` """
    local = rms(background[start:start + length])
    return background * (level / max(local, 1e-12))


def synth_positive(num_samples: int, rng: np.random.Generator, snr_db_range) -> Tuple[np.ndarray, Tuple[int, int]]:
    """ One clip with the keyword at a random frame-aligned offset

    The keyword ends after frame WINDOW_FRAMES, so the positive window fits
    and the window at offset 0 stays a valid negative.

    Returns:
        tuple: (samples, (start_frame, end_frame))
    """
    num_frames = MfccConfig().num_frames(num_samples)
    template = keyword_template()
    low = WINDOW_FRAMES - KEYWORD_FRAMES + 1
    high = num_frames - KEYWORD_FRAMES
    start_frame = int(rng.integers(low, high + 1))
    snr_db = rng.uniform(*snr_db_range)
    start = start_frame * HOP_SAMPLES
    level = rms(template) / db_to_amplitude(snr_db)
    clip = _background_at(speech_like_background(num_samples, rng), start, template.size, level)
    clip[start:start + template.size] += template
    return np.clip(clip, -1.0, 1.0), (start_frame, start_frame + KEYWORD_FRAMES)


def synth_negative(num_samples: int, rng: np.random.Generator, snr_db_range) -> np.ndarray:
    """ One clip of background with one or two distractors and no keyword """
    template_rms = rms(keyword_template())
    snr_db = rng.uniform(*snr_db_range)
    clip = speech_like_background(num_samples, rng) * (template_rms / db_to_amplitude(snr_db))
    for _ in range(int(rng.integers(1, 3))):
        pattern = distractor(rng)
        start = int(rng.integers(0, num_samples - pattern.size + 1))
        clip[start:start + pattern.size] += pattern
    return np.clip(clip, -1.0, 1.0)


def _plan(spec: SynthSpec) -> List[Tuple[str, bool, float]]:
    plan = []
    for split, count in ((TRAIN, spec.num_train), (VAL, spec.num_val)):
        positives = int(round(count * spec.positive_fraction))
        plan += [(split, i < positives, spec.utterance_seconds) for i in range(count)]
    plan += [(TEST_POSITIVE, True, spec.utterance_seconds)] * spec.num_test_positive
    plan += [(TEST_NEGATIVE, False, spec.negative_seconds)] * spec.num_test_negative
    return plan


def generate_synthetic_dataset(spec: SynthSpec, out_dir: str, seed: int = None) -> Manifest:
    """ Write WAV files and a manifest for a synthetic keyword task

    Every clip draws from its own generator seeded by (seed, clip id), so
    the output does not depend on generation order.

    Args:
        spec (SynthSpec): Dataset size and levels
        out_dir (str): Output directory, created if missing
        seed (int, optional): Global seed, default is ``spec.seed``

    Returns:
        Manifest: Manifest of the written files, also saved as ``out_dir/manifest.csv``
    """
    spec = spec.validate()
    seed = spec.seed if seed is None else seed
    records = []
    counters = {}
    for split, positive, seconds in tqdm(_plan(spec), desc="synth", unit="clip", leave=False):
        index = counters.get(split, 0)
        counters[split] = index + 1
        name = f"{'pos' if positive else 'neg'}_{index:05d}.wav"
        rel_path = f"{split}/{name}"
        record_id = os.path.splitext(rel_path)[0]
        rng = make_rng(derive_seed(seed, record_id))
        num_samples = int(round(seconds * SAMPLE_RATE))
        if positive:
            samples, span = synth_positive(num_samples, rng, spec.snr_db_range)
        else:
            samples, span = synth_negative(num_samples, rng, spec.snr_db_range), None
        os.makedirs(os.path.join(out_dir, split), exist_ok=True)
        write_wav(os.path.join(out_dir, rel_path), samples)
        records.append(ManifestRecord(rel_path, span, split))
    manifest = Manifest(records, root=os.path.abspath(out_dir))
    manifest.save(os.path.join(out_dir, MANIFEST_NAME))
    log.info(f"wrote {len(records)} synthetic clips to {out_dir}: {manifest.counts()}")
    return manifest
