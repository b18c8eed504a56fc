""" Detection metrics and the latency/memory benchmark

Example:

    Events, FRR and FA/hr on hand-made score sequences

    >>> import numpy as np
    >>> from repcnn_kws.eval import ScoredFile, detect_events, compute_frr_fa
    >>> detect_events([0.1, 0.9, 0.8, 0.1], threshold=0.5)
    [DetectionEvent(start=1, end=2, peak=0.9)]
    >>> pos = [ScoredFile("p", np.array([0.0, 0.9, 0.0]), (0, 4), 1.0)]
    >>> neg = [ScoredFile("n", np.array([0.0, 0.7, 0.0]), None, 3600.0)]
    >>> compute_frr_fa(pos, neg, threshold=0.5)
    (0.0, 1.0)

    DET curve and the 3 FA/hr operating point

    >>> from repcnn_kws.eval import det_curve, frr_at_fa, roc_auc
    >>> curve = det_curve(pos, neg)
    >>> frr_at_fa(curve, 3.0).clamped
    True
    >>> roc_auc([0.9, 0.8], [0.1, 0.8])
    0.875
"""

from .metrics import (
    REFRACTORY_FRAMES, TOLERANCE_FRAMES, FA_TARGET, EvalConfig, DetectionEvent, ScoredFile, DetPoint, DetCurve,
    OperatingPoint, EvalSummary, detect_events, score_file, score_test_sets, compute_frr_fa, det_curve,
    default_thresholds, frr_at_fa, roc_auc, event_peaks, auc_scores, evaluate, write_det_csv, read_det_csv,
    write_summary_csv,
)
from .bench import (
    BenchRow, BenchReport, activation_schedule, peak_activation_bytes, measured_peak_bytes, stream_latency,
    bench, write_bench_csv,
)

__all__ = [
    "REFRACTORY_FRAMES", "TOLERANCE_FRAMES", "FA_TARGET", "EvalConfig", "DetectionEvent", "ScoredFile", "DetPoint",
    "DetCurve", "OperatingPoint", "EvalSummary", "detect_events", "score_file", "score_test_sets",
    "compute_frr_fa", "det_curve", "default_thresholds", "frr_at_fa", "roc_auc", "event_peaks", "auc_scores",
    "evaluate", "write_det_csv", "read_det_csv", "write_summary_csv",
    "BenchRow", "BenchReport", "activation_schedule", "peak_activation_bytes", "measured_peak_bytes",
    "stream_latency", "bench", "write_bench_csv",
]
