""" MFCC front end: 16 kHz PCM samples to 16 cepstral coefficients every 10 ms.

Hann window of 25 ms, 512-point power spectrum, 26 HTK mel filters,
log with a floor, orthonormal DCT-II.

Example:

    >>> import numpy as np
    >>> from repcnn_kws.features import MfccConfig, mfcc
    >>> feats = mfcc(np.zeros(16000, dtype=np.float32), MfccConfig())
    >>> feats.shape
    (16, 98)
"""

from dataclasses import asdict, dataclass, fields
from functools import lru_cache

import numpy as np
from scipy.fft import dct, rfft
from scipy.signal import get_window

from ._errors import ConfigError, ShapeError
from ._utils import check_finite

SAMPLE_RATE = 16000
""" Input sample rate in Hz """

WINDOW_SAMPLES = 400
""" 25 ms analysis window """

HOP_SAMPLES = 160
""" 10 ms hop, one feature frame """

FFT_SIZE = 512
""" Zero-padded FFT length """

N_MELS = 26
""" Mel filters """

N_MFCC = 16
""" Cepstral coefficients kept """

LOG_FLOOR = 1e-10
""" Added to the mel energies before the log """


@dataclass
class MfccConfig:
    """ MFCC settings

    Attributes:
        sample_rate (int): Sample rate in Hz
        window (int): Window length in samples
        hop (int): Hop in samples
        fft_size (int): FFT length
        n_mels (int): Mel filters
        n_mfcc (int): Coefficients kept
        log_floor (float): Added before the log
    """
    sample_rate: int = SAMPLE_RATE
    window: int = WINDOW_SAMPLES
    hop: int = HOP_SAMPLES
    fft_size: int = FFT_SIZE
    n_mels: int = N_MELS
    n_mfcc: int = N_MFCC
    log_floor: float = LOG_FLOOR

    def validate(self) -> "MfccConfig":
        for name in ("sample_rate", "window", "hop", "fft_size", "n_mels", "n_mfcc"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.n_mfcc > self.n_mels:
            raise ConfigError(f"n_mfcc ({self.n_mfcc}) must not exceed n_mels ({self.n_mels})")
        if self.fft_size < self.window:
            raise ConfigError(f"fft_size ({self.fft_size}) must be >= window ({self.window})")
        if not self.log_floor > 0:
            raise ConfigError(f"log_floor must be positive, got {self.log_floor}")
        return self

    @property
    def num_bins(self) -> int:
        return self.fft_size // 2 + 1

    def num_frames(self, num_samples: int) -> int:
        """ Full frames in ``num_samples`` samples, partial tail dropped """
        if num_samples < self.window:
            return 0
        return 1 + (num_samples - self.window) // self.hop

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "MfccConfig":
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown feature config keys: {sorted(unknown)}")
        return cls(**data).validate()


def hz_to_mel(hz):
    """ HTK mel scale, 2595 * log10(1 + f / 700) """
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


@dataclass(frozen=True)
class MelFilterbank:
    """ Triangular mel filters over FFT bins

    Attributes:
        weights (np.ndarray): (n_mels, fft_size // 2 + 1), non-negative
        edges_hz (np.ndarray): n_mels + 2 filter edge frequencies; filter i
            rises from edges_hz[i] to a peak of 1 at edges_hz[i + 1] and falls
            to 0 at edges_hz[i + 2]
    """
    weights: np.ndarray
    edges_hz: np.ndarray

    @property
    def n_mels(self) -> int:
        return int(self.weights.shape[0])

    def apply(self, power: np.ndarray) -> np.ndarray:
        """ Mel energies of one power spectrum """
        return self.weights @ power


@lru_cache(maxsize=8)
def _filterbank(sample_rate: int, fft_size: int, n_mels: int) -> MelFilterbank:
    nyquist = sample_rate / 2.0
    edges = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(nyquist), n_mels + 2))
    freqs = np.arange(fft_size // 2 + 1) * sample_rate / fft_size
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lower) / (center - lower)
    falling = (upper - freqs[None, :]) / (upper - center)
    weights = np.maximum(0.0, np.minimum(rising, falling))
    weights.setflags(write=False)
    edges.setflags(write=False)
    return MelFilterbank(weights, edges)


def mel_filterbank(cfg: MfccConfig = None) -> MelFilterbank:
    """ Mel filterbank for a config, spaced evenly in mel from 0 Hz to Nyquist

    Args:
        cfg (MfccConfig, optional): Settings, default is MfccConfig()

    Returns:
        MelFilterbank: Cached, read-only filterbank
    """
    cfg = (cfg or MfccConfig()).validate()
    return _filterbank(int(cfg.sample_rate), int(cfg.fft_size), int(cfg.n_mels))


def hann_window(length: int) -> np.ndarray:
    """ Periodic Hann window, 0.5 - 0.5 * cos(2 * pi * n / length) """
    return get_window("hann", length, fftbins=True)


def frame_and_window(samples: np.ndarray, cfg: MfccConfig = None) -> np.ndarray:
    """ Slice audio into Hann-weighted frames

    Args:
        samples (np.ndarray): 1-D PCM floats
        cfg (MfccConfig, optional): Settings, default is MfccConfig()

    Returns:
        np.ndarray: (num_frames, window) float64; partial tail frames are dropped

    Raises:
        ShapeError: Input is not 1-D or shorter than one window
    """
    cfg = (cfg or MfccConfig()).validate()
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 1:
        raise ShapeError(f"expected 1-D samples, got shape {samples.shape}")
    n = cfg.num_frames(samples.size)
    if n == 0:
        raise ShapeError(f"audio of {samples.size} samples is shorter than one window ({cfg.window})")
    starts = np.arange(n) * cfg.hop
    frames = samples[starts[:, None] + np.arange(cfg.window)[None, :]]
    return frames * hann_window(cfg.window)[None, :]


def power_spectrum(frame: np.ndarray, fft_size: int = FFT_SIZE) -> np.ndarray:
    """ |DFT|^2 of one zero-padded frame, bins 0 .. fft_size / 2 """
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 1 or frame.size > fft_size:
        raise ShapeError(f"expected a 1-D frame of at most {fft_size} samples, got shape {frame.shape}")
    spectrum = rfft(frame, n=fft_size)
    return spectrum.real ** 2 + spectrum.imag ** 2


def mfcc_frame(frame: np.ndarray, cfg: MfccConfig, filterbank: MelFilterbank) -> np.ndarray:
    """ Coefficients of one windowed frame """
    energies = filterbank.apply(power_spectrum(frame, cfg.fft_size))
    return dct(np.log(energies + cfg.log_floor), type=2, norm="ortho")[:cfg.n_mfcc]


def mfcc(samples: np.ndarray, cfg: MfccConfig = None) -> np.ndarray:
    """ MFCC matrix of an utterance

    Every frame goes through the same per-frame computation, so a delay of
    exactly one hop shifts the output by one column bit for bit.

    Args:
        samples (np.ndarray): 1-D PCM floats in [-1, 1]
        cfg (MfccConfig, optional): Settings, default is MfccConfig()

    Returns:
        np.ndarray: (n_mfcc, num_frames) float32

    Raises:
        ShapeError: Audio shorter than one window
    """
    cfg = (cfg or MfccConfig()).validate()
    frames = frame_and_window(samples, cfg)
    filterbank = mel_filterbank(cfg)
    out = np.empty((cfg.n_mfcc, frames.shape[0]), dtype=np.float64)
    for t, frame in enumerate(frames):
        out[:, t] = mfcc_frame(frame, cfg, filterbank)
    return check_finite(out, "mfcc").astype(np.float32)
