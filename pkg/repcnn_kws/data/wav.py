""" RIFF PCM 16-bit mono 16 kHz WAV files and the in-memory utterance. """

import os
import wave
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .._errors import ShapeError, WavFormatError
from ..features import SAMPLE_RATE, MfccConfig

SAMPLE_WIDTH = 2
""" Bytes per sample, 16-bit PCM """

CHANNELS = 1

FULL_SCALE = 32768.0
""" int16 -> float scale """


@dataclass
class Utterance:
    """ One audio clip, optionally with the frames of its keyword

    Attributes:
        samples (np.ndarray): 1-D float32 PCM in [-1, 1]
        sample_rate (int): Always 16000
        keyword_span (tuple or None): (start_frame, end_frame) in 10 ms feature frames, end exclusive
        id (str): Utterance id, used for seed derivation
    """
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE
    keyword_span: Optional[Tuple[int, int]] = None
    id: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 1:
            raise ShapeError(f"utterance samples must be 1-D, got shape {self.samples.shape}")
        if self.keyword_span is not None:
            self.keyword_span = (int(self.keyword_span[0]), int(self.keyword_span[1]))
            start, end = self.keyword_span
            if not 0 <= start < end <= self.num_frames:
                raise ShapeError(f"utterance {self.id!r}: keyword span {self.keyword_span} "
                                 f"outside [0, {self.num_frames}] or empty")

    @property
    def duration(self) -> float:
        """ Length in seconds """
        return self.samples.size / float(self.sample_rate)

    @property
    def num_frames(self) -> int:
        """ Number of feature frames """
        return MfccConfig(sample_rate=self.sample_rate).num_frames(self.samples.size)


def read_wav(path: str, keyword_span: Optional[Tuple[int, int]] = None, id: str = None) -> Utterance:
    """ Read a WAV file

    Args:
        path (str): File path
        keyword_span (tuple, optional): Keyword frames to attach, default is None
        id (str, optional): Utterance id, default is the file stem

    Returns:
        Utterance: Samples scaled by 1 / 32768

    Raises:
        WavFormatError: Not RIFF/WAVE, not PCM 16-bit, not mono or not 16 kHz
    """
    try:
        with wave.open(os.fspath(path), "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            comptype = wf.getcomptype()
            data = wf.readframes(wf.getnframes())
    except (wave.Error, EOFError) as e:
        raise WavFormatError(f"{path}: not a RIFF/WAVE PCM file ({e})") from e
    if comptype != "NONE":
        raise WavFormatError(f"{path}: compressed WAV ({comptype}) is not supported, expected PCM")
    if width != SAMPLE_WIDTH:
        raise WavFormatError(f"{path}: sample width {8 * width} bit, expected 16 bit")
    if channels != CHANNELS:
        raise WavFormatError(f"{path}: {channels} channels, expected mono")
    if rate != SAMPLE_RATE:
        raise WavFormatError(f"{path}: sample rate {rate} Hz, expected {SAMPLE_RATE} Hz")
    pcm = np.frombuffer(data, dtype="<i2")
    samples = (pcm.astype(np.float64) / FULL_SCALE).astype(np.float32)
    if id is None:
        id = os.path.splitext(os.path.basename(os.fspath(path)))[0]
    return Utterance(samples, SAMPLE_RATE, keyword_span, id)


def to_pcm16(samples: np.ndarray) -> np.ndarray:
    """ Float samples to int16, rounded and clipped to the int16 range """
    scaled = np.round(np.asarray(samples, dtype=np.float64) * FULL_SCALE)
    return np.clip(scaled, -FULL_SCALE, FULL_SCALE - 1).astype("<i2")


def write_wav(path: str, samples, sample_rate: int = SAMPLE_RATE) -> None:
    """ Write samples (or an :class:`Utterance`) as a 16-bit mono WAV

    Args:
        path (str): File path
        samples (np.ndarray or Utterance): Float samples in [-1, 1]
        sample_rate (int, optional): Must be 16000

    Raises:
        WavFormatError: Other sample rates
    """
    if isinstance(samples, Utterance):
        sample_rate = samples.sample_rate
        samples = samples.samples
    if sample_rate != SAMPLE_RATE:
        raise WavFormatError(f"cannot write {sample_rate} Hz, expected {SAMPLE_RATE} Hz")
    samples = np.asarray(samples)
    if samples.ndim != 1:
        raise ShapeError(f"expected 1-D samples, got shape {samples.shape}")
    with wave.open(os.fspath(path), "wb") as wf:
        wf.setnchannels(CHANNELS)
        wf.setsampwidth(SAMPLE_WIDTH)
        wf.setframerate(sample_rate)
        wf.writeframes(to_pcm16(samples).tobytes())
