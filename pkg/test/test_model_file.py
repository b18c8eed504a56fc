import json
import math
import struct

import numpy as np
import pytest

from repcnn_kws import ModelFileError
from repcnn_kws.graph import FUSED, TRAIN
from repcnn_kws.model import RepCNNConfig, build_repcnn, build_single_branch_baseline
from repcnn_kws.model_file import FORMAT_VERSION, MAGIC, decode_model, encode_model, load_model, read_model_file, save_model
from repcnn_kws.reparam import clip_bounds_of, fuse_model


def save_load_save(graph, tmp_path, expect_mode=None):
    first = tmp_path / "first.rpcn"
    second = tmp_path / "second.rpcn"
    save_model(graph, str(first))
    loaded = load_model(str(first), expect_mode)
    save_model(loaded, str(second))
    return first.read_bytes(), second.read_bytes(), loaded


def test_train_graph_round_trip(small_graph, tmp_path, rng):
    small_graph.hyperparameters = {"seed": 3, "train": {"lr": 0.001}}
    first, second, loaded = save_load_save(small_graph, tmp_path, TRAIN)
    assert first == second
    assert loaded.mode == TRAIN and not loaded.training
    assert loaded.hyperparameters == small_graph.hyperparameters
    small_graph.eval()
    x = rng.standard_normal((2, 16, 40)).astype(np.float32)
    np.testing.assert_array_equal(loaded.forward(x), small_graph.forward(x))


def test_fused_graph_round_trip(small_graph, tmp_path, rng):
    fused = fuse_model(small_graph, [2.0, 3.0, math.inf, 4.0, 5.0])
    first, second, loaded = save_load_save(fused, tmp_path, FUSED)
    assert first == second
    assert loaded.mode == FUSED
    assert clip_bounds_of(loaded) == [2.0, 3.0, math.inf, 4.0, 5.0]
    x = rng.standard_normal((1, 16, 30)).astype(np.float32)
    np.testing.assert_array_equal(loaded.forward(x), fused.forward(x))


def test_baseline_round_trip(tmp_path):
    graph = build_single_branch_baseline(RepCNNConfig(width=8, stage_kernels=[3]), rng=0)
    first, second, loaded = save_load_save(graph, tmp_path)
    assert first == second
    assert loaded.architecture == graph.architecture


def test_file_layout(small_graph):
    data = encode_model(small_graph)
    assert data[:4] == MAGIC
    assert struct.unpack("<I", data[4:8])[0] == FORMAT_VERSION
    length = struct.unpack("<I", data[8:12])[0]
    header = json.loads(data[12:12 + length])
    assert list(header) == sorted(header)
    assert header["mode"] == TRAIN and header["clip_bounds"] is None
    assert header["model"] == small_graph.config.to_dict()
    model_file = decode_model(data)
    assert model_file.mode == TRAIN
    assert set(model_file.tensors) == set(small_graph.parameters()) | set(small_graph.buffers())


def test_fused_file_is_smaller(default_graph, tmp_path):
    train_size = save_model(default_graph, str(tmp_path / "train.rpcn"))
    fused_size = save_model(fuse_model(default_graph), str(tmp_path / "fused.rpcn"))
    assert fused_size < train_size
    assert (tmp_path / "fused.rpcn").stat().st_size == fused_size


@pytest.mark.parametrize("cut", [3, 10, 40, -5, -1])
def test_truncated_file(small_graph, cut):
    data = encode_model(small_graph)
    with pytest.raises(ModelFileError, match="truncated"):
        decode_model(data[:cut])


def test_version_mismatch_names_both_versions(small_graph):
    data = bytearray(encode_model(small_graph))
    data[4:8] = struct.pack("<I", 7)
    with pytest.raises(ModelFileError, match=r"version 7.*version 1"):
        decode_model(bytes(data))


def test_bad_magic(small_graph):
    data = b"WAVE" + encode_model(small_graph)[4:]
    with pytest.raises(ModelFileError, match="not a model file"):
        decode_model(data)


def test_corrupt_header(small_graph):
    data = bytearray(encode_model(small_graph))
    data[12] = 0xFF
    with pytest.raises(ModelFileError, match="corrupt header"):
        decode_model(bytes(data))


def test_header_without_mode():
    header = json.dumps({"model": {}}).encode()
    data = MAGIC + struct.pack("<II", FORMAT_VERSION, len(header)) + header
    with pytest.raises(ModelFileError, match="mode"):
        decode_model(data)


def test_fused_file_cannot_be_trained(small_graph, tmp_path):
    path = tmp_path / "fused.rpcn"
    save_model(fuse_model(small_graph), str(path))
    with pytest.raises(ModelFileError, match="cannot be trained"):
        load_model(str(path), expect_mode=TRAIN)
    train_path = tmp_path / "train.rpcn"
    save_model(small_graph, str(train_path))
    with pytest.raises(ModelFileError):
        load_model(str(train_path), expect_mode=FUSED)


def test_topology_mismatch(tmp_path):
    other = build_repcnn(RepCNNConfig(width=6, stage_kernels=[3, 5], blocks_per_stage=1), rng=0)
    data = bytearray(encode_model(other))
    length = struct.unpack("<I", data[8:12])[0]
    header = json.loads(data[12:12 + length])
    header["model"]["width"] = 8
    new_header = json.dumps(header, sort_keys=True).encode()
    path = tmp_path / "mixed.rpcn"
    path.write_bytes(MAGIC + struct.pack("<II", FORMAT_VERSION, len(new_header)) + new_header
                     + bytes(data[12 + length:]))
    with pytest.raises(ModelFileError, match="shape"):
        load_model(str(path))


def test_missing_file(tmp_path):
    with pytest.raises(ModelFileError):
        read_model_file(str(tmp_path / "none.rpcn"))
