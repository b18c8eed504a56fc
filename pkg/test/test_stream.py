import numpy as np
import pytest

from conftest import randomize_bn
from repcnn_kws import ShapeError
from repcnn_kws.model import RepCNNConfig, build_repcnn
from repcnn_kws.reparam import fuse_model
from repcnn_kws.stream import StreamEngine, stream_init, stream_push, stream_reset


@pytest.fixture(scope="module")
def trained_pair():
    rng = np.random.default_rng(11)
    graph = randomize_bn(build_repcnn(rng=rng), rng)
    graph.eval()
    return graph, fuse_model(graph)


def stream_in_chunks(engine, frames, chunks):
    scores = []
    start = 0
    for size in chunks:
        scores.extend(engine.push_many(frames[:, start:start + size]))
        start += size
    return np.array(scores)


def random_chunks(rng, length):
    chunks = []
    while sum(chunks) < length:
        chunks.append(int(rng.integers(1, 40)))
    return chunks


STREAM_CASES = list(range(50))


@pytest.mark.parametrize("case", STREAM_CASES)
def test_streaming_matches_batch(trained_pair, case):
    fused = fuse_model(trained_pair[0]).astype(np.float64)
    rng = np.random.default_rng(case)
    length = int(rng.integers(1, 400))
    frames = rng.standard_normal((16, length))
    expected = fused.forward(frames[None])[0, 0]
    scores = stream_in_chunks(StreamEngine(fused), frames, random_chunks(rng, length))
    assert scores.shape == expected.shape == ((length + 1) // 2,)
    np.testing.assert_allclose(scores, expected, rtol=1e-9, atol=1e-9)


def test_streaming_float32_close_to_batch(trained_pair, rng):
    fused = trained_pair[1]
    frames = rng.standard_normal((16, 300)).astype(np.float32)
    expected = fused.forward(frames[None])[0, 0]
    scores = np.array(StreamEngine(fused).push_many(frames))
    scale = max(1.0, float(np.max(np.abs(expected))))
    assert float(np.max(np.abs(scores - expected))) / scale < 1e-4


def test_training_graph_streams_in_eval_semantics(trained_pair, rng):
    graph, fused = trained_pair
    frames = rng.standard_normal((16, 120)).astype(np.float32)
    engine = StreamEngine(graph)
    assert len(engine.state.rings) == 1 + 8 * 2
    scores = np.array(engine.push_many(frames))
    np.testing.assert_allclose(scores, graph.forward(frames[None])[0, 0], rtol=1e-4, atol=1e-4)
    np.testing.assert_allclose(scores, np.array(StreamEngine(fused).push_many(frames)), rtol=1e-4, atol=1e-4)


def test_emits_on_every_other_frame(trained_pair):
    state = stream_init(trained_pair[1])
    out = [stream_push(state, np.zeros(16, dtype=np.float32)) for _ in range(5)]
    assert [o is not None for o in out] == [True, False, True, False, True]
    assert isinstance(out[0], float)
    assert state.frames_consumed == 5 and state.frames_emitted == 3


def test_reset_restores_fresh_state(trained_pair, rng):
    engine = StreamEngine(trained_pair[1])
    frames = rng.standard_normal((16, 60)).astype(np.float32)
    first = engine.push_many(frames)
    engine.push_many(rng.standard_normal((16, 7)).astype(np.float32))
    engine.reset()
    assert engine.state.frames_consumed == 0
    assert all(not ring.buffer.any() and ring.cursor == 0 for ring in engine.state.rings)
    assert engine.push_many(frames) == first


def test_independent_streams(trained_pair, rng):
    fused = trained_pair[1]
    frames = rng.standard_normal((16, 40)).astype(np.float32)
    a, b = stream_init(fused), stream_init(fused)
    for t in range(40):
        stream_push(a, frames[:, t])
    out_b = [stream_push(b, frames[:, t]) for t in range(40)]
    assert stream_reset(a).frames_emitted == 0
    out_a = [stream_push(a, frames[:, t]) for t in range(40)]
    assert out_a == out_b


def test_state_size_of_default_model(trained_pair):
    state = stream_init(trained_pair[1])
    assert len(state.rings) == 9
    ring_bytes = 16 * 4 * 4 + 44 * 4 * 2 * (6 + 8 + 10 + 12)
    assert state.nbytes == ring_bytes + 8 * (2 + 9 + 1)


def test_state_is_smaller_after_fusion(trained_pair):
    graph, fused = trained_pair
    assert stream_init(fused).nbytes < stream_init(graph).nbytes


def test_small_model_streams(small_cfg, rng):
    fused = fuse_model(build_repcnn(small_cfg, rng=0)).astype(np.float64)
    frames = rng.standard_normal((16, 33))
    np.testing.assert_allclose(StreamEngine(fused).push_many(frames), fused.forward(frames[None])[0, 0],
                               rtol=1e-9, atol=1e-9)


def test_stride_one_model_emits_every_frame(rng):
    cfg = RepCNNConfig(width=4, stem_stride=1, stage_kernels=[3], blocks_per_stage=1)
    engine = StreamEngine(fuse_model(build_repcnn(cfg, rng=0)))
    assert len(engine.push_many(rng.standard_normal((16, 10)).astype(np.float32))) == 10


def test_bad_frames(trained_pair):
    engine = StreamEngine(trained_pair[1])
    with pytest.raises(ShapeError):
        engine.push(np.zeros(15, dtype=np.float32))
    with pytest.raises(ShapeError):
        engine.push(np.zeros((16, 1), dtype=np.float32))
    with pytest.raises(ShapeError):
        engine.push_many(np.zeros(16, dtype=np.float32))
