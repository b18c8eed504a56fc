import math

import numpy as np
import pytest

from conftest import randomize_bn
from repcnn_kws import FusionError, ShapeError
from repcnn_kws.graph import FUSED
from repcnn_kws.model import RepCNNConfig, build_repcnn, build_single_branch_baseline
from repcnn_kws.nn import BatchNorm1d, Clip, Conv1d
from repcnn_kws.reparam import (
    SYMMETRIC, FusedKernel, calibrate_clip_bounds, clip_bounds_of, embed_1x1, equivalence_report, fold_conv_bn,
    fuse_model, merge_parallel, with_clip_bounds,
)


def test_fold_conv_bn_matches_eval(rng):
    conv = Conv1d(3, 4, 5, bias=True, rng=rng)
    bn = randomize_bn(BatchNorm1d(4), rng)
    bn.eval()
    x = rng.standard_normal((2, 3, 20)).astype(np.float32)
    fused = fold_conv_bn(conv, bn).to_conv()
    np.testing.assert_allclose(fused(x), bn(conv(x)), rtol=1e-5, atol=1e-5)


def test_fold_identity_statistics_is_noop(rng):
    conv = Conv1d(2, 2, 3, bias=False, rng=rng)
    bn = BatchNorm1d(2, eps=0.0)
    kernel = fold_conv_bn(conv, bn)
    np.testing.assert_array_equal(kernel.weight, conv.weight.data)
    np.testing.assert_array_equal(kernel.bias, np.zeros(2, dtype=np.float32))


def test_fold_rejects_bad_statistics(rng):
    conv = Conv1d(2, 2, 3, rng=rng)
    bn = BatchNorm1d(2)
    bn.running_var = np.array([1.0, np.nan], dtype=np.float32)
    with pytest.raises(FusionError):
        fold_conv_bn(conv, bn)
    bn.running_var = np.array([1.0, -1.0], dtype=np.float32)
    with pytest.raises(FusionError):
        fold_conv_bn(conv, bn)


def test_fold_channel_mismatch(rng):
    with pytest.raises(ShapeError):
        fold_conv_bn(Conv1d(2, 3, 1, rng=rng), BatchNorm1d(2))


def test_embed_1x1_causal_uses_last_tap():
    kernel = FusedKernel(np.array([[[2.0]], [[3.0]]]), np.array([0.5, -1.0]))
    embedded = embed_1x1(kernel, 5)
    expected = np.zeros((2, 1, 5))
    expected[:, 0, 4] = [2.0, 3.0]
    np.testing.assert_array_equal(embedded.weight, expected)
    np.testing.assert_array_equal(embedded.bias, kernel.bias)


def test_embed_1x1_symmetric_uses_center_tap():
    kernel = FusedKernel(np.ones((1, 1, 1)), np.zeros(1))
    assert embed_1x1(kernel, 5, SYMMETRIC).weight[0, 0].tolist() == [0, 0, 1, 0, 0]
    with pytest.raises(FusionError):
        embed_1x1(kernel, 4, SYMMETRIC)


def test_embed_1x1_matches_1x1_conv(rng):
    one = Conv1d(4, 4, 1, groups=4, rng=rng)
    kernel = embed_1x1(FusedKernel(one.weight.data, one.bias.data), 7)
    x = rng.standard_normal((1, 4, 15)).astype(np.float32)
    np.testing.assert_allclose(kernel.to_conv(groups=4)(x), one(x), rtol=1e-6, atol=1e-6)


def test_embed_1x1_rejects_wide_kernel():
    with pytest.raises(FusionError):
        embed_1x1(FusedKernel(np.ones((1, 1, 3)), np.zeros(1)), 5)


def test_merge_parallel_sums():
    a = FusedKernel(np.ones((1, 1, 3)), np.array([1.0]))
    b = FusedKernel(2 * np.ones((1, 1, 3)), np.array([0.5]))
    merged = merge_parallel([a, b])
    np.testing.assert_array_equal(merged.weight, 3 * np.ones((1, 1, 3)))
    np.testing.assert_array_equal(merged.bias, [1.5])
    with pytest.raises(FusionError):
        merge_parallel([])
    with pytest.raises(ShapeError):
        merge_parallel([a, FusedKernel(np.ones((1, 1, 5)), np.zeros(1))])


def test_fused_graph_structure(small_graph):
    fused = fuse_model(small_graph)
    assert fused.mode == FUSED
    assert fused.count("batchnorm1d") == 0 and fused.count("relu") == 0 and fused.count("repconvblock") == 0
    assert all(isinstance(layer, (Conv1d, Clip)) for layer in fused.layers)
    assert all(math.isinf(b) for b in clip_bounds_of(fused))


def test_fusing_twice_fails(small_graph):
    with pytest.raises(FusionError):
        fuse_model(fuse_model(small_graph))


def test_clip_bound_count_checked(small_graph):
    with pytest.raises(FusionError):
        fuse_model(small_graph, clip_bounds=[1.0])


EQUIVALENCE_MATRIX = [
    (channels, k, n)
    for channels in (1, 4, 8, 44)
    for k in (3, 7, 13)
    for n in (1, 2, 3, 4, 5)
]


@pytest.mark.parametrize("channels,k,n", EQUIVALENCE_MATRIX)
def test_single_block_graph_equivalence(channels, k, n):
    rng = np.random.default_rng(channels * 100 + k * 10 + n)
    cfg = RepCNNConfig(in_channels=channels, width=channels, stem_kernel=1, stem_stride=1, stage_kernels=[k],
                       blocks_per_stage=1, num_branches=n)
    graph = randomize_bn(build_repcnn(cfg, rng=rng), rng)
    fused = fuse_model(graph)
    x = rng.standard_normal((100, channels, 2 * k)).astype(np.float32)
    expected = graph.forward(x)
    scale = max(float(np.max(np.abs(expected))), 1e-6)
    assert float(np.max(np.abs(fused.forward(x) - expected))) / scale < 1e-4


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5])
def test_full_model_equivalence(n):
    rng = np.random.default_rng(n)
    graph = randomize_bn(build_repcnn(RepCNNConfig(num_branches=n), rng=rng), rng)
    report = equivalence_report(graph, fuse_model(graph), num_inputs=100, frames=160, seed=n)
    assert report["max_rel"] < 1e-4
    assert report["num_inputs"] == 100


def test_default_model_report(default_graph):
    report = equivalence_report(default_graph, fuse_model(default_graph))
    assert report["num_inputs"] == 20
    assert report["max_rel"] < 1e-4


def test_baseline_fuses(rng):
    graph = randomize_bn(build_single_branch_baseline(RepCNNConfig(width=8, stage_kernels=[3]), rng=rng), rng)
    fused = fuse_model(graph)
    assert equivalence_report(graph, fused, num_inputs=5, frames=50)["max_rel"] < 1e-4


def test_calibrated_bounds(small_graph, rng):
    x = rng.standard_normal((6, 16, 60)).astype(np.float32)
    bounds = calibrate_clip_bounds(small_graph, x)
    _, activations = small_graph.forward(x, collect=True)
    assert len(bounds) == len(activations)
    for bound, activation in zip(bounds, activations):
        if np.max(activation) > 0:
            assert bound == pytest.approx(1.05 * float(np.max(activation)))
    fused = fuse_model(small_graph, bounds)
    assert clip_bounds_of(fused) == pytest.approx(bounds)
    # on the calibration data nothing is clipped
    np.testing.assert_allclose(fused.forward(x), small_graph.forward(x), rtol=1e-4, atol=1e-4)


def test_with_clip_bounds_shares_convs(small_graph):
    fused = fuse_model(small_graph, [2.0] * 5)
    lifted = with_clip_bounds(fused)
    assert all(math.isinf(b) for b in clip_bounds_of(lifted))
    convs = [layer for layer in fused.layers if isinstance(layer, Conv1d)]
    lifted_convs = [layer for layer in lifted.layers if isinstance(layer, Conv1d)]
    assert all(a is b for a, b in zip(convs, lifted_convs))


def test_fusion_keeps_hyperparameters(small_graph):
    small_graph.hyperparameters = {"seed": 4}
    assert fuse_model(small_graph).hyperparameters == {"seed": 4}
