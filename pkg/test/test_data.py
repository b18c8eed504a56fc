import math
import os
import wave

import numpy as np
import pytest

from repcnn_kws import ConfigError, ManifestError, ShapeError, WavFormatError
from repcnn_kws.data import (
    TEST_NEGATIVE, TEST_POSITIVE, TRAIN, VAL, AugmentConfig, SynthSpec, Utterance, gain_augment, generate_synthetic_dataset,
    harvest_negatives, harvest_positive, keyword_template, load_manifest, mix_noise, negative_offsets,
    random_augment, read_wav, rir_convolve, write_wav,
)
from repcnn_kws.data.augment import rms
from repcnn_kws.data.synth import KEYWORD_FRAMES, distractor

HEADER = "path,span_start_frame,span_end_frame,split\n"


def frames_to_samples(frames):
    return 400 + (frames - 1) * 160


def indexed_features(frames):
    """ Features whose value at (c, t) is 1000 * c + t """
    return (1000 * np.arange(16)[:, None] + np.arange(frames)[None, :]).astype(np.float32)


def write_manifest(tmp_path, rows):
    path = tmp_path / "manifest.csv"
    path.write_text(HEADER + "".join(row + "\n" for row in rows))
    return str(path)


# WAV

def test_wav_round_trip(tmp_path, rng):
    samples = (rng.integers(-32768, 32768, 1000) / 32768.0).astype(np.float32)
    path = tmp_path / "clip.wav"
    write_wav(path, samples)
    utt = read_wav(path)
    np.testing.assert_array_equal(utt.samples, samples)
    assert utt.id == "clip"
    assert utt.sample_rate == 16000


def test_wav_write_clips_full_scale(tmp_path):
    path = tmp_path / "loud.wav"
    write_wav(path, np.array([1.5, -1.5, 1.0], dtype=np.float32))
    np.testing.assert_array_equal(read_wav(path).samples, [32767 / 32768, -1.0, 32767 / 32768])


def _write_raw_wav(path, channels, width, rate):
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(channels)
        wf.setsampwidth(width)
        wf.setframerate(rate)
        wf.writeframes(b"\x00" * (channels * width * 100))


@pytest.mark.parametrize("channels,width,rate", [(2, 2, 16000), (1, 1, 16000), (1, 2, 8000)])
def test_wav_rejects_other_formats(tmp_path, channels, width, rate):
    path = tmp_path / "other.wav"
    _write_raw_wav(path, channels, width, rate)
    with pytest.raises(WavFormatError):
        read_wav(path)


def test_wav_rejects_non_riff(tmp_path):
    path = tmp_path / "text.wav"
    path.write_bytes(b"this is not audio at all")
    with pytest.raises(WavFormatError):
        read_wav(path)


def test_wav_write_other_rate(tmp_path):
    with pytest.raises(WavFormatError):
        write_wav(tmp_path / "x.wav", np.zeros(10), sample_rate=8000)


def test_utterance_span_checked():
    with pytest.raises(ShapeError):
        Utterance(np.zeros(frames_to_samples(100)), keyword_span=(90, 101))
    with pytest.raises(ShapeError):
        Utterance(np.zeros(frames_to_samples(100)), keyword_span=(50, 50))
    assert Utterance(np.zeros(16000)).duration == 1.0


# manifest

def test_manifest_parsing(tmp_path):
    path = write_manifest(tmp_path, [
        "train/a.wav,10,60,train",
        "val/b.wav,-1,-1,val",
        "test/c.wav,100,150,test-positive",
        "test/d.wav,-1,-1,test-negative",
    ])
    manifest = load_manifest(path, check_paths=False)
    assert len(manifest) == 4
    assert manifest.split(TRAIN)[0].keyword_span == (10, 60)
    assert manifest.split(VAL)[0].keyword_span is None
    assert manifest.counts() == {TRAIN: 1, VAL: 1, TEST_POSITIVE: 1, TEST_NEGATIVE: 1}
    assert manifest.resolve(manifest.records[0]) == os.path.join(str(tmp_path), "train", "a.wav")
    assert manifest.records[0].id == "train/a"


@pytest.mark.parametrize("row", [
    "a.wav,10,60,holdout",
    "a.wav,60,10,train",
    "a.wav,-1,5,train",
    "a.wav,x,5,train",
    ",1,5,train",
    "a.wav,-1,-1,test-positive",
    "a.wav,1,5,test-negative",
])
def test_manifest_bad_rows(tmp_path, row):
    with pytest.raises(ManifestError):
        load_manifest(write_manifest(tmp_path, [row]), check_paths=False)


def test_manifest_bad_header(tmp_path):
    path = tmp_path / "manifest.csv"
    path.write_text("file,start,end,split\na.wav,-1,-1,train\n")
    with pytest.raises(ManifestError):
        load_manifest(str(path), check_paths=False)


def test_manifest_duplicate_path(tmp_path):
    with pytest.raises(ManifestError):
        load_manifest(write_manifest(tmp_path, ["a.wav,-1,-1,train", "a.wav,-1,-1,val"]), check_paths=False)


def test_manifest_missing_files(tmp_path):
    with pytest.raises(ManifestError):
        load_manifest(str(tmp_path / "nope.csv"))
    with pytest.raises(ManifestError):
        load_manifest(write_manifest(tmp_path, ["a.wav,-1,-1,train"]))


def test_manifest_save_matches_file(synth_dir, tmp_path):
    manifest = load_manifest(str(synth_dir / "manifest.csv"))
    copy = tmp_path / "copy.csv"
    manifest.save(str(copy))
    assert copy.read_text() == (synth_dir / "manifest.csv").read_text()


# harvesting

def test_positive_window_ends_at_keyword_end():
    utt = Utterance(np.zeros(frames_to_samples(198)), keyword_span=(120, 170), id="u")
    window = harvest_positive(utt, features=indexed_features(198))
    assert window.features.shape == (16, 149)
    assert window.offset == 21 and window.positive and window.source_id == "u"
    np.testing.assert_array_equal(window.features, indexed_features(198)[:, 21:170])


@pytest.mark.parametrize("span", [None, (10, 60), (0, 170)])
def test_positive_window_errors(span):
    utt = Utterance(np.zeros(frames_to_samples(198)), keyword_span=span)
    with pytest.raises(ShapeError):
        harvest_positive(utt, features=indexed_features(198))


def test_negative_offsets_exclude_full_keyword():
    offsets = negative_offsets(198, 149, (120, 170))
    assert offsets.tolist() == list(range(21))
    assert negative_offsets(160, 149).tolist() == list(range(12))
    # partial overlap is fine
    assert 0 in negative_offsets(160, 149, (100, 155)).tolist()


def test_negatives_without_replacement():
    utt = Utterance(np.zeros(frames_to_samples(198)), keyword_span=(120, 170), id="u")
    feats = indexed_features(198)
    windows = harvest_negatives(utt, count=20, rng=0, features=feats)
    offsets = [w.offset for w in windows]
    assert len(set(offsets)) == 20
    assert all(0 <= o <= 20 for o in offsets)
    for w in windows:
        assert not w.positive
        np.testing.assert_array_equal(w.features, feats[:, w.offset:w.offset + 149])


def test_negatives_with_replacement_when_short():
    utt = Utterance(np.zeros(frames_to_samples(160)))
    windows = harvest_negatives(utt, count=30, rng=1, features=indexed_features(160))
    assert len(windows) == 30
    assert len({w.offset for w in windows}) <= 12


def test_negatives_are_reproducible():
    utt = Utterance(np.zeros(frames_to_samples(198)))
    feats = indexed_features(198)
    first = [w.offset for w in harvest_negatives(utt, rng=5, features=feats)]
    second = [w.offset for w in harvest_negatives(utt, rng=5, features=feats)]
    assert first == second


def test_negatives_impossible():
    utt = Utterance(np.zeros(frames_to_samples(149)), keyword_span=(0, 149))
    with pytest.raises(ShapeError):
        harvest_negatives(utt, count=1, rng=0, features=indexed_features(149))
    short = Utterance(np.zeros(frames_to_samples(100)))
    with pytest.raises(ShapeError):
        harvest_negatives(short, count=1, rng=0, features=indexed_features(100))
    assert harvest_negatives(short, count=0) == []


# augmentation

def test_gain_zero_db_is_identity(rng):
    x = rng.uniform(-0.5, 0.5, 500).astype(np.float32)
    np.testing.assert_array_equal(gain_augment(x, 0.0), x)


def test_gain_scales_and_clips(rng):
    x = rng.uniform(-0.5, 0.5, 500).astype(np.float32)
    np.testing.assert_allclose(gain_augment(x, -20.0), x * 0.1, rtol=1e-6)
    assert np.max(np.abs(gain_augment(x, 10.0))) <= 1.0
    with pytest.raises(ConfigError):
        gain_augment(x, 20.0)
    assert -40.0 <= 20 * math.log10(rms(gain_augment(x, rng=3)) / rms(x)) <= 10.0


@pytest.mark.parametrize("snr_db", [0.0, 10.0, 20.0])
def test_mix_noise_hits_snr(rng, snr_db):
    t = np.arange(16000) / 16000
    signal = (0.1 * np.sin(2 * np.pi * 440 * t)).astype(np.float32)
    noise = rng.standard_normal(700)
    mixed = mix_noise(signal, noise, snr_db)
    added = mixed.astype(np.float64) - signal.astype(np.float64)
    assert 20 * math.log10(rms(signal) / rms(added)) == pytest.approx(snr_db, abs=0.01)
    assert mixed.shape == signal.shape


def test_mix_noise_edge_cases(rng):
    signal = rng.uniform(-0.1, 0.1, 100).astype(np.float32)
    np.testing.assert_array_equal(mix_noise(signal, np.zeros(0), math.inf), signal)
    with pytest.raises(ConfigError):
        mix_noise(np.zeros(100), rng.standard_normal(100), 10.0)
    with pytest.raises(ConfigError):
        mix_noise(signal, np.zeros(100), 10.0)


def test_rir_identity_and_delay(rng):
    x = rng.uniform(-0.5, 0.5, 300).astype(np.float32)
    np.testing.assert_allclose(rir_convolve(x, np.array([1.0])), x, atol=1e-6)
    delayed = rir_convolve(x, np.array([0.0, 1.0]))
    assert delayed.shape == x.shape
    np.testing.assert_allclose(delayed[1:], x[:-1], atol=1e-6)
    assert abs(delayed[0]) < 1e-6


def test_rir_normalizes_peak(rng):
    x = rng.uniform(-0.8, 0.8, 300)
    out = rir_convolve(x, np.array([2.0]))
    assert float(np.max(np.abs(out))) == pytest.approx(1.0, abs=1e-6)


def test_random_augment_is_reproducible(rng):
    x = rng.uniform(-0.3, 0.3, 4000)
    noises = [rng.standard_normal(1000)]
    impulses = [np.array([1.0, 0.0, 0.3])]
    a = random_augment(x, np.random.default_rng(9), noises=noises, impulses=impulses)
    b = random_augment(x, np.random.default_rng(9), noises=noises, impulses=impulses)
    np.testing.assert_array_equal(a, b)
    off = AugmentConfig(gain_prob=0.0, noise_prob=0.0, rir_prob=0.0)
    np.testing.assert_array_equal(random_augment(x, np.random.default_rng(9), off, noises, impulses),
                                  x.astype(np.float32))


def test_augment_config_validation():
    with pytest.raises(ConfigError):
        AugmentConfig(gain_prob=1.5).validate()
    with pytest.raises(ConfigError):
        AugmentConfig.from_dict({"reverb": 1.0})
    cfg = AugmentConfig(snr_db_range=(5, 15))
    assert AugmentConfig.from_dict(cfg.to_dict()) == cfg.validate()


# synthetic data

def test_keyword_template():
    template = keyword_template()
    assert template.size == KEYWORD_FRAMES * 160
    assert float(np.max(np.abs(template))) == pytest.approx(0.5)
    pattern = distractor(np.random.default_rng(0))
    assert pattern.size == template.size
    assert not np.allclose(pattern, template)


def test_synthetic_dataset_layout(synth_dir):
    manifest = load_manifest(str(synth_dir / "manifest.csv"))
    assert manifest.counts() == {TRAIN: 8, VAL: 4, TEST_POSITIVE: 3, TEST_NEGATIVE: 2}
    assert sum(r.keyword_span is not None for r in manifest.split(TRAIN)) == 4
    for record in manifest:
        utt = manifest.load_utterance(record)
        assert np.max(np.abs(utt.samples)) <= 1.0
        if record.split == TEST_NEGATIVE:
            assert utt.duration == 4.0
            continue
        assert utt.duration == 2.0
        if record.keyword_span is not None:
            start, end = record.keyword_span
            assert end - start == KEYWORD_FRAMES
            assert 149 <= end <= utt.num_frames
            assert harvest_positive(utt).features.shape == (16, 149)


def test_synthetic_dataset_is_deterministic(synth_dir, tmp_path):
    spec = SynthSpec(num_train=8, num_val=4, num_test_positive=3, num_test_negative=2,
                     utterance_seconds=2.0, negative_seconds=4.0, seed=3)
    generate_synthetic_dataset(spec, str(tmp_path))
    for record in load_manifest(str(synth_dir / "manifest.csv")):
        assert (tmp_path / record.path).read_bytes() == (synth_dir / record.path).read_bytes()


def test_synth_spec_validation():
    with pytest.raises(ConfigError):
        SynthSpec(utterance_seconds=1.0).validate()
    with pytest.raises(ConfigError):
        SynthSpec(positive_fraction=2.0).validate()
    with pytest.raises(ConfigError):
        SynthSpec.from_dict({"speakers": 3})
