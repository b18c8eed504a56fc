""" Latency and peak-memory micro-benchmark of a training graph against its fused graph.

Latency is the streaming wall time per emitted output. Peak memory is the
largest total size of simultaneously live activation buffers over the
execution schedule of a batch forward pass, counted analytically, with the
tracemalloc high-water mark of the same pass reported next to it.
"""

import csv
import logging
import time
import tracemalloc
from dataclasses import asdict, dataclass
from typing import List, Tuple

import numpy as np

from .._errors import ConfigError
from .._utils import format_float, make_rng
from ..graph import ModelGraph
from ..nn.layers import BatchNorm1d, Clip, Conv1d, ReLU
from ..stream import StreamEngine

log = logging.getLogger(__name__)

ITERATIONS = 1000
""" Timed outputs per graph """

WARMUP = 100
""" Untimed outputs before timing """

FRAMES_PER_SECOND = 100
""" Feature frames per second of audio """

BENCH_FIELDS = ("graph", "mode", "mean_latency_ms", "median_latency_ms", "peak_activation_bytes",
                "measured_peak_bytes", "param_bytes", "state_bytes", "iterations")
""" Bench CSV columns """


@dataclass
class BenchRow:
    """ Benchmark of one graph

    Attributes:
        graph (str): Row label
        mode (str): ``train`` or ``fused``
        mean_latency_ms (float): Mean wall time per emitted output
        median_latency_ms (float): Median wall time per emitted output
        peak_activation_bytes (int): Analytic live-buffer maximum of a batch forward
        measured_peak_bytes (int): tracemalloc high-water mark of the same forward
        param_bytes (int): Parameters and buffers
        state_bytes (int): Streaming state
        iterations (int): Timed outputs
    """
    graph: str
    mode: str
    mean_latency_ms: float
    median_latency_ms: float
    peak_activation_bytes: int
    measured_peak_bytes: int
    param_bytes: int
    state_bytes: int
    iterations: int


@dataclass
class BenchReport:
    rows: List[BenchRow]
    input_seconds: float

    def row(self, mode: str) -> BenchRow:
        for row in self.rows:
            if row.mode == mode:
                return row
        raise KeyError(mode)


def _nbytes(channels: int, frames: int, itemsize: int) -> int:
    return int(channels) * int(frames) * itemsize


def activation_schedule(graph: ModelGraph, frames: int, itemsize: int = 4) -> List[Tuple[str, int]]:
    """ Live activation bytes at every step of a batch-of-one forward pass

    A plain layer holds its input and its output. A RepConvBlock runs as
    conv then batch norm on every path followed by an add into a running sum,
    with the block input alive until the last path; its ReLU then holds the
    sum and its output.

    Args:
        graph (ModelGraph): Graph
        frames (int): Input frames
        itemsize (int, optional): Bytes per value, default is 4

    Returns:
        list: (step label, live bytes) pairs
    """
    if frames < 1:
        raise ConfigError(f"frames must be >= 1, got {frames}")
    schedule = []
    channels = graph.in_channels
    length = frames
    for i, layer in enumerate(graph.layers):
        x = _nbytes(channels, length, itemsize)
        if isinstance(layer, Conv1d):
            out_len = layer.output_length(length)
            schedule.append((f"{i}:conv", x + _nbytes(layer.out_channels, out_len, itemsize)))
            channels, length = layer.out_channels, out_len
        elif isinstance(layer, (BatchNorm1d, ReLU, Clip)):
            schedule.append((f"{i}:{layer.kind}", 2 * x))
        elif layer.kind == "repconvblock":
            paths = len(layer.branches) + 1
            for p in range(paths):
                acc = x if p > 0 else 0
                schedule.append((f"{i}.{p}:conv", x + acc + x))
                schedule.append((f"{i}.{p}:bn", x + acc + 2 * x))
                if p > 0:
                    schedule.append((f"{i}.{p}:add", x + acc + x))
            schedule.append((f"{i}:relu", 2 * x))
        else:
            raise ConfigError(f"cannot schedule layer {layer!r}")
    return schedule


def peak_activation_bytes(graph: ModelGraph, frames: int, itemsize: int = 4) -> int:
    """ Maximum of :func:`activation_schedule` """
    return max(live for _, live in activation_schedule(graph, frames, itemsize))


def measured_peak_bytes(graph: ModelGraph, frames: int, seed: int = 0) -> int:
    """ tracemalloc high-water mark of one eval forward pass """
    x = make_rng(seed).standard_normal((1, graph.in_channels, frames)).astype(np.float32)
    graph.eval()
    tracemalloc.start()
    try:
        tracemalloc.reset_peak()
        graph.forward(x)
        _, peak = tracemalloc.get_traced_memory()
    finally:
        tracemalloc.stop()
    return int(peak)


def param_bytes(graph: ModelGraph) -> int:
    params = sum(p.data.nbytes for p in graph.parameters().values())
    return int(params + sum(b.nbytes for b in graph.buffers().values()))


def stream_latency(graph: ModelGraph, iterations: int = ITERATIONS, warmup: int = WARMUP,
                   seed: int = 0) -> np.ndarray:
    """ Wall time in seconds of each of ``iterations`` emitted outputs

    Args:
        graph (ModelGraph): Graph to stream
        iterations (int, optional): Timed outputs, default is ITERATIONS
        warmup (int, optional): Untimed outputs first, default is WARMUP
        seed (int, optional): Seed of the random input frames

    Returns:
        np.ndarray: Seconds per output
    """
    if iterations < 1:
        raise ConfigError(f"iterations must be >= 1, got {iterations}")
    engine = StreamEngine(graph)
    frames = make_rng(seed).standard_normal((256, graph.in_channels)).astype(np.float32)
    cursor = 0
    times = np.empty(iterations, dtype=np.float64)
    for i in range(warmup + iterations):
        start = time.perf_counter()
        score = None
        while score is None:
            score = engine.push(frames[cursor])
            cursor = (cursor + 1) % frames.shape[0]
        elapsed = time.perf_counter() - start
        if i >= warmup:
            times[i - warmup] = elapsed
    return times


def bench_graph(graph: ModelGraph, label: str, input_seconds: float = 1.0, iterations: int = ITERATIONS,
                warmup: int = WARMUP) -> BenchRow:
    """ Benchmark row of one graph """
    frames = max(1, int(round(input_seconds * FRAMES_PER_SECOND)))
    times = stream_latency(graph, iterations, warmup)
    state = StreamEngine(graph).nbytes
    row = BenchRow(
        graph=label,
        mode=graph.mode,
        mean_latency_ms=float(np.mean(times) * 1e3),
        median_latency_ms=float(np.median(times) * 1e3),
        peak_activation_bytes=peak_activation_bytes(graph, frames),
        measured_peak_bytes=measured_peak_bytes(graph, frames),
        param_bytes=param_bytes(graph),
        state_bytes=state,
        iterations=iterations,
    )
    log.info(f"{label}: median {row.median_latency_ms:.4f} ms/output, peak activations "
             f"{row.peak_activation_bytes} B (measured {row.measured_peak_bytes} B), params {row.param_bytes} B")
    return row


def bench(graph_train: ModelGraph, graph_fused: ModelGraph, input_seconds: float = 1.0,
          iterations: int = ITERATIONS, warmup: int = WARMUP) -> BenchReport:
    """ Benchmark a training graph and its fused graph

    Args:
        graph_train (ModelGraph): Multi-branch training graph, streamed in eval semantics
        graph_fused (ModelGraph): Fused graph
        input_seconds (float, optional): Audio length of the peak-memory forward pass, default is 1 s
        iterations (int, optional): Timed outputs per graph, at least 1000 for reported numbers
        warmup (int, optional): Untimed outputs per graph

    Returns:
        BenchReport: One row per graph, training graph first
    """
    if input_seconds <= 0:
        raise ConfigError(f"input_seconds must be positive, got {input_seconds}")
    rows = [
        bench_graph(graph_train, "train", input_seconds, iterations, warmup),
        bench_graph(graph_fused, "fused", input_seconds, iterations, warmup),
    ]
    return BenchReport(rows, float(input_seconds))


def write_bench_csv(report: BenchReport, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(BENCH_FIELDS)
        for row in report.rows:
            values = asdict(row)
            writer.writerow([format_float(values[k]) if isinstance(values[k], float) else values[k]
                             for k in BENCH_FIELDS])
