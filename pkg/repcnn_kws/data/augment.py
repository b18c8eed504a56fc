""" Waveform augmentations: gain, additive noise at a target SNR and room impulse responses.

Every augmentation keeps the sample count and returns float32 in [-1, 1].
"""

import math
from dataclasses import asdict, dataclass, fields
from typing import Optional, Sequence

import numpy as np
from scipy.signal import fftconvolve

from .._errors import ConfigError, ShapeError
from .._utils import make_rng

GAIN_DB_RANGE = (-40.0, 10.0)
""" Gain augmentation range in dB """

SNR_DB_RANGE = (0.0, 20.0)
""" Noise mixing range in dB """


def _as_samples(samples) -> np.ndarray:
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 1:
        raise ShapeError(f"expected 1-D samples, got shape {samples.shape}")
    return samples


def db_to_amplitude(db: float) -> float:
    return 10.0 ** (db / 20.0)


def rms(samples: np.ndarray) -> float:
    samples = np.asarray(samples, dtype=np.float64)
    return float(np.sqrt(np.mean(samples ** 2))) if samples.size else 0.0


def gain_augment(samples: np.ndarray, db: float = None, rng=None) -> np.ndarray:
    """ Scale by ``10 ** (db / 20)`` and clip to [-1, 1]

    Args:
        samples (np.ndarray): 1-D samples
        db (float, optional): Gain in [-40, 10] dB, default is None, drawn uniformly with ``rng``
        rng (np.random.Generator or int, optional): Random source when ``db`` is None

    Returns:
        np.ndarray: Scaled samples
    """
    low, high = GAIN_DB_RANGE
    if db is None:
        db = float(make_rng(rng).uniform(low, high))
    if not low <= db <= high:
        raise ConfigError(f"gain must be in [{low}, {high}] dB, got {db}")
    samples = _as_samples(samples)
    if db == 0:
        return samples.astype(np.float32)
    return np.clip(samples * db_to_amplitude(db), -1.0, 1.0).astype(np.float32)


def _fit_length(noise: np.ndarray, length: int) -> np.ndarray:
    if noise.size >= length:
        return noise[:length]
    repeats = int(math.ceil(length / noise.size))
    return np.tile(noise, repeats)[:length]


def noise_scale(samples: np.ndarray, noise: np.ndarray, snr_db: float) -> float:
    """ Factor that brings ``noise`` to ``snr_db`` below ``samples`` in RMS

    Raises:
        ConfigError: Silent signal or silent noise (SNR undefined)
    """
    samples = _as_samples(samples)
    noise = _as_samples(noise)
    signal_rms = rms(samples)
    noise_rms = rms(_fit_length(noise, samples.size)) if noise.size else 0.0
    if signal_rms == 0:
        raise ConfigError("cannot mix noise at an SNR into a silent signal")
    if noise_rms == 0:
        raise ConfigError("cannot scale silent noise to an SNR")
    return signal_rms / (noise_rms * db_to_amplitude(snr_db))


def mix_noise(samples: np.ndarray, noise: np.ndarray, snr_db: float) -> np.ndarray:
    """ Add noise scaled to an RMS signal-to-noise ratio, then clip

    Noise shorter than the signal is looped, longer noise is truncated.

    Args:
        samples (np.ndarray): 1-D signal
        noise (np.ndarray): 1-D noise
        snr_db (float): Target SNR in dB, +inf leaves the signal unchanged

    Returns:
        np.ndarray: Mixed samples
    """
    samples = _as_samples(samples)
    if snr_db == math.inf:
        return samples.astype(np.float32)
    noise = _as_samples(noise)
    if noise.size == 0:
        raise ShapeError("noise is empty")
    scale = noise_scale(samples, noise, snr_db)
    mixed = samples + scale * _fit_length(noise, samples.size)
    return np.clip(mixed, -1.0, 1.0).astype(np.float32)


def rir_convolve(samples: np.ndarray, impulse: np.ndarray) -> np.ndarray:
    """ Convolve with a room impulse response

    Full causal convolution truncated to the input length; the result is
    divided by its peak when the peak exceeds 1.

    Args:
        samples (np.ndarray): 1-D signal
        impulse (np.ndarray): 1-D impulse response

    Returns:
        np.ndarray: Reverberant samples
    """
    samples = _as_samples(samples)
    impulse = _as_samples(impulse)
    if impulse.size == 0:
        raise ShapeError("impulse response is empty")
    if samples.size == 0:
        return samples.astype(np.float32)
    out = fftconvolve(samples, impulse, mode="full")[:samples.size]
    peak = float(np.max(np.abs(out)))
    if peak > 1.0:
        out = out / peak
    return out.astype(np.float32)


@dataclass
class AugmentConfig:
    """ Random augmentation applied to training audio

    Attributes:
        gain_prob (float): Probability of a random gain
        noise_prob (float): Probability of mixing a noise clip
        rir_prob (float): Probability of convolving an impulse response
        snr_db_range (list): SNR range for noise mixing
    """
    gain_prob: float = 0.5
    noise_prob: float = 0.5
    rir_prob: float = 0.3
    snr_db_range: tuple = SNR_DB_RANGE

    def validate(self) -> "AugmentConfig":
        for name in ("gain_prob", "noise_prob", "rir_prob"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigError(f"{name} must be in [0, 1], got {getattr(self, name)}")
        low, high = self.snr_db_range
        if low > high:
            raise ConfigError(f"snr_db_range must be ordered, got {self.snr_db_range}")
        self.snr_db_range = (float(low), float(high))
        return self

    def to_dict(self) -> dict:
        data = asdict(self)
        data["snr_db_range"] = list(self.snr_db_range)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "AugmentConfig":
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown augmentation keys: {sorted(unknown)}")
        cfg = cls(**data)
        cfg.snr_db_range = tuple(cfg.snr_db_range)
        return cfg.validate()


def random_augment(samples: np.ndarray, rng, cfg: AugmentConfig = None,
                   noises: Optional[Sequence[np.ndarray]] = None,
                   impulses: Optional[Sequence[np.ndarray]] = None) -> np.ndarray:
    """ Apply RIR, noise and gain in that order, each with its own probability

    The random draws happen in a fixed order whatever is applied, so the
    same generator state always gives the same result.

    Args:
        samples (np.ndarray): 1-D signal
        rng (np.random.Generator): Random source owned by the caller
        cfg (AugmentConfig, optional): Probabilities, default is AugmentConfig()
        noises (list, optional): Noise clips to draw from
        impulses (list, optional): Impulse responses to draw from

    Returns:
        np.ndarray: Augmented samples
    """
    cfg = (cfg or AugmentConfig()).validate()
    draws = rng.random(3)
    rir_index = int(rng.integers(len(impulses))) if impulses else 0
    noise_index = int(rng.integers(len(noises))) if noises else 0
    snr_db = float(rng.uniform(*cfg.snr_db_range))
    gain_db = float(rng.uniform(*GAIN_DB_RANGE))

    out = _as_samples(samples).astype(np.float32)
    if impulses and draws[0] < cfg.rir_prob:
        out = rir_convolve(out, impulses[rir_index])
    if noises and draws[1] < cfg.noise_prob and rms(out) > 0 and rms(noises[noise_index]) > 0:
        out = mix_noise(out, noises[noise_index], snr_db)
    if draws[2] < cfg.gain_prob:
        out = gain_augment(out, gain_db)
    return out
