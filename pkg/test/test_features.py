import math

import numpy as np
import pytest

from repcnn_kws import ConfigError, ShapeError
from repcnn_kws.features import (
    MfccConfig, frame_and_window, hann_window, hz_to_mel, mel_filterbank, mel_to_hz, mfcc, power_spectrum,
)


def reference_mfcc(samples, sample_rate=16000, window=400, hop=160, nfft=512, n_mels=26, n_mfcc=16):
    """ Straight-line MFCC written from the formulas """
    samples = np.asarray(samples, dtype=np.float64)
    hann = np.array([0.5 - 0.5 * math.cos(2 * math.pi * n / window) for n in range(window)])

    def mel(f):
        return 2595.0 * math.log10(1.0 + f / 700.0)

    def inv_mel(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    top = mel(sample_rate / 2)
    edges = [inv_mel(top * i / (n_mels + 1)) for i in range(n_mels + 2)]
    bins = nfft // 2 + 1
    filters = np.zeros((n_mels, bins))
    for m in range(n_mels):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        for b in range(bins):
            f = b * sample_rate / nfft
            if lo < f <= mid:
                filters[m, b] = (f - lo) / (mid - lo)
            elif mid < f < hi:
                filters[m, b] = (hi - f) / (hi - mid)

    dct = np.zeros((n_mfcc, n_mels))
    for k in range(n_mfcc):
        scale = math.sqrt(1.0 / n_mels) if k == 0 else math.sqrt(2.0 / n_mels)
        for n in range(n_mels):
            dct[k, n] = scale * math.cos(math.pi * k * (2 * n + 1) / (2 * n_mels))

    num_frames = 1 + (samples.size - window) // hop
    out = np.zeros((n_mfcc, num_frames))
    for t in range(num_frames):
        frame = samples[t * hop:t * hop + window] * hann
        spectrum = np.fft.rfft(frame, nfft)
        power = np.abs(spectrum) ** 2
        out[:, t] = dct @ np.log(filters @ power + 1e-10)
    return out


def test_shape_and_dtype():
    feats = mfcc(np.zeros(16000, dtype=np.float32))
    assert feats.shape == (16, 98)
    assert feats.dtype == np.float32


@pytest.mark.parametrize("num_samples,frames", [(400, 1), (559, 1), (560, 2), (48000, 298)])
def test_frame_count(num_samples, frames):
    assert MfccConfig().num_frames(num_samples) == frames
    assert mfcc(np.zeros(num_samples)).shape == (16, frames)


def test_too_short_input():
    with pytest.raises(ShapeError):
        mfcc(np.zeros(399))
    with pytest.raises(ShapeError):
        mfcc(np.zeros((2, 800)))


@pytest.mark.parametrize("seed", range(20))
def test_matches_reference(seed):
    rng = np.random.default_rng(seed)
    samples = rng.uniform(-1, 1, int(rng.integers(400, 8000))) * rng.uniform(0.01, 1.0)
    np.testing.assert_allclose(mfcc(samples), reference_mfcc(samples), rtol=1e-4, atol=1e-4)


def test_shift_by_one_hop_is_bitwise(rng):
    samples = rng.uniform(-0.5, 0.5, 4000).astype(np.float32)
    shifted = np.concatenate([rng.uniform(-0.5, 0.5, 160).astype(np.float32), samples])
    np.testing.assert_array_equal(mfcc(shifted)[:, 1:], mfcc(samples))


def test_silence_hits_log_floor():
    feats = mfcc(np.zeros(400))
    assert feats[0, 0] == pytest.approx(math.sqrt(26) * math.log(1e-10), rel=1e-6)
    np.testing.assert_allclose(feats[1:, 0], 0.0, atol=1e-3)


def test_periodic_hann():
    window = hann_window(400)
    assert window[0] == 0.0
    assert window[200] == pytest.approx(1.0)
    assert window[399] == pytest.approx(window[1])


def test_filterbank_layout():
    bank = mel_filterbank()
    assert bank.weights.shape == (26, 257)
    assert np.all(bank.weights >= 0)
    assert bank.edges_hz[0] == 0.0
    assert bank.edges_hz[-1] == pytest.approx(8000.0)
    # every filter peaks near 1 and touches a bin
    assert np.all(bank.weights.max(axis=1) > 0.3)
    assert mel_filterbank() is bank


def test_mel_scale_round_trip():
    hz = np.array([0.0, 300.0, 1000.0, 8000.0])
    np.testing.assert_allclose(mel_to_hz(hz_to_mel(hz)), hz, atol=1e-9)
    assert float(hz_to_mel(700.0)) == pytest.approx(2595.0 * math.log10(2.0))


def test_power_spectrum_of_dc():
    power = power_spectrum(np.ones(4), fft_size=8)
    assert power[0] == pytest.approx(16.0)
    assert power.shape == (5,)


def test_frames_are_windowed(rng):
    samples = rng.standard_normal(1000)
    frames = frame_and_window(samples)
    assert frames.shape == (4, 400)
    np.testing.assert_allclose(frames[2], samples[320:720] * hann_window(400))


def test_invalid_config():
    with pytest.raises(ConfigError):
        MfccConfig(n_mfcc=30).validate()
    with pytest.raises(ConfigError):
        MfccConfig(fft_size=256).validate()
    with pytest.raises(ConfigError):
        MfccConfig.from_dict({"n_fft": 512})
