""" Audio ingestion, window harvesting, augmentation and synthetic data

Example:

    Generate a small synthetic dataset and read it back

    >>> from repcnn_kws.data import SynthSpec, generate_synthetic_dataset, load_manifest
    >>> manifest = generate_synthetic_dataset(SynthSpec(num_train=4, num_val=2,
    ...     num_test_positive=1, num_test_negative=1), "/tmp/kws")
    >>> manifest = load_manifest("/tmp/kws/manifest.csv")
    >>> utt = manifest.load_utterance(manifest.split("train")[0])
    >>> utt.duration
    3.0

    Harvest the positive window and 20 negatives

    >>> from repcnn_kws.data import harvest_positive, harvest_negatives
    >>> harvest_positive(utt).features.shape
    (16, 149)
    >>> len(harvest_negatives(utt, count=20, rng=0))
    20

    Augment

    >>> from repcnn_kws.data import gain_augment
    >>> quieter = gain_augment(utt.samples, db=-20.0)
"""

from .wav import Utterance, read_wav, write_wav
from .manifest import (
    FIELDS, SPLITS, TRAIN, VAL, TEST_POSITIVE, TEST_NEGATIVE, Manifest, ManifestRecord, load_manifest,
)
from .harvest import (
    WINDOW_FRAMES, NEGATIVES_PER_UTTERANCE, WindowSample, harvest_positive, harvest_negatives, negative_offsets,
)
from .augment import AugmentConfig, gain_augment, mix_noise, noise_scale, rir_convolve, random_augment
from .synth import SynthSpec, generate_synthetic_dataset, keyword_template

__all__ = [
    "Utterance", "read_wav", "write_wav",
    "FIELDS", "SPLITS", "TRAIN", "VAL", "TEST_POSITIVE", "TEST_NEGATIVE", "Manifest", "ManifestRecord",
    "load_manifest",
    "WINDOW_FRAMES", "NEGATIVES_PER_UTTERANCE", "WindowSample", "harvest_positive", "harvest_negatives",
    "negative_offsets",
    "AugmentConfig", "gain_augment", "mix_noise", "noise_scale", "rir_convolve", "random_augment",
    "SynthSpec", "generate_synthetic_dataset", "keyword_template",
]
