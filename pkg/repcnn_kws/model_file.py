""" Binary model file.

Layout, all integers unsigned 32-bit little-endian::

    b"RPCN" | version | header length | header (UTF-8 JSON, sorted keys)
    then per tensor: name length | name (UTF-8) | rank | dims... | float32 LE data

The header holds the mode tag (``train`` or ``fused``), the architecture,
the model config, the clip bounds of a fused graph (null for +inf) and free
form hyperparameters, so a file is enough to rebuild its graph.
"""

import json
import math
import os
import struct
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from ._errors import ConfigError, ModelFileError
from .graph import FUSED, MODES, TRAIN, ModelGraph
from .model import RepCNNConfig, build_model
from .reparam import clip_bounds_of, fuse_model

MAGIC = b"RPCN"

FORMAT_VERSION = 1
""" Bumped on any layout change """

_U32 = struct.Struct("<I")


@dataclass
class ModelFile:
    """ Parsed contents of a model file

    Attributes:
        version (int): Format version
        header (dict): Decoded JSON header
        tensors (dict): float32 arrays by name, in file order
    """
    version: int
    header: dict
    tensors: Dict[str, np.ndarray]

    @property
    def mode(self) -> str:
        return self.header["mode"]


def _bounds_to_json(bounds: List[float]) -> List[Optional[float]]:
    return [None if math.isinf(b) else float(b) for b in bounds]


def _bounds_from_json(bounds) -> List[float]:
    return [math.inf if b is None else float(b) for b in bounds]


def graph_tensors(graph: ModelGraph) -> Dict[str, np.ndarray]:
    """ Parameters then buffers, by dotted name """
    tensors = {name: param.data for name, param in graph.parameters().items()}
    tensors.update(graph.buffers())
    return tensors


def encode_model(graph: ModelGraph, hyperparameters: dict = None) -> bytes:
    """ Serialize a graph to bytes """
    if graph.config is None:
        raise ModelFileError("graph has no model config to store")
    header = {
        "architecture": graph.architecture,
        "clip_bounds": _bounds_to_json(clip_bounds_of(graph)) if graph.mode == FUSED else None,
        "hyperparameters": hyperparameters if hyperparameters is not None else graph.hyperparameters,
        "mode": graph.mode,
        "model": graph.config.to_dict(),
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, _U32.pack(FORMAT_VERSION), _U32.pack(len(header_bytes)), header_bytes]
    for name, array in graph_tensors(graph).items():
        name_bytes = name.encode("utf-8")
        data = np.ascontiguousarray(array, dtype="<f4")
        parts.append(_U32.pack(len(name_bytes)))
        parts.append(name_bytes)
        parts.append(_U32.pack(data.ndim))
        parts.extend(_U32.pack(d) for d in data.shape)
        parts.append(data.tobytes())
    return b"".join(parts)


def save_model(graph: ModelGraph, path: str, hyperparameters: dict = None) -> int:
    """ Write a graph to a model file

    Args:
        graph (ModelGraph): Train or fused graph built from a RepCNNConfig
        path (str): Output path
        hyperparameters (dict, optional): Settings to store, default is ``graph.hyperparameters``

    Returns:
        int: Bytes written
    """
    data = encode_model(graph, hyperparameters)
    with open(path, "wb") as f:
        f.write(data)
    return len(data)


class _Reader:
    def __init__(self, data: bytes, source: str) -> None:
        self.data = data
        self.pos = 0
        self.source = source

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise ModelFileError(f"{self.source}: truncated while reading {what} "
                                 f"(need {n} bytes at offset {self.pos}, file has {len(self.data)})")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return _U32.unpack(self.take(4, what))[0]

    @property
    def done(self) -> bool:
        return self.pos == len(self.data)


def decode_model(data: bytes, source: str = "<bytes>") -> ModelFile:
    """ Parse model file bytes

    Raises:
        ModelFileError: Bad magic, version mismatch, truncation or corrupt header
    """
    reader = _Reader(data, source)
    magic = reader.take(len(MAGIC), "magic")
    if magic != MAGIC:
        raise ModelFileError(f"{source}: not a model file (magic {magic!r}, expected {MAGIC!r})")
    version = reader.u32("version")
    if version != FORMAT_VERSION:
        raise ModelFileError(f"{source}: format version {version}, this build reads version {FORMAT_VERSION}")
    header_bytes = reader.take(reader.u32("header length"), "header")
    try:
        header = json.loads(header_bytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ModelFileError(f"{source}: corrupt header ({e})") from e
    if not isinstance(header, dict) or header.get("mode") not in MODES:
        raise ModelFileError(f"{source}: header has no valid mode tag")
    tensors = {}
    while not reader.done:
        name = reader.take(reader.u32("tensor name length"), "tensor name").decode("utf-8", errors="replace")
        rank = reader.u32(f"rank of {name}")
        shape = tuple(reader.u32(f"dims of {name}") for _ in range(rank))
        count = int(np.prod(shape, dtype=np.int64))
        raw = reader.take(4 * count, f"data of {name}")
        if name in tensors:
            raise ModelFileError(f"{source}: tensor {name} stored twice")
        tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
    return ModelFile(version, header, tensors)


def read_model_file(path: str) -> ModelFile:
    if not os.path.isfile(path):
        raise ModelFileError(f"model file not found: {path}")
    with open(path, "rb") as f:
        return decode_model(f.read(), source=path)


def _assign(graph: ModelGraph, tensors: Dict[str, np.ndarray], source: str) -> None:
    expected = graph_tensors(graph)
    missing = sorted(set(expected) - set(tensors))
    extra = sorted(set(tensors) - set(expected))
    if missing or extra:
        raise ModelFileError(f"{source}: tensors do not match the graph (missing {missing[:3]}, unexpected {extra[:3]})")
    params = graph.parameters()
    for name, array in tensors.items():
        if array.shape != expected[name].shape:
            raise ModelFileError(f"{source}: tensor {name} has shape {array.shape}, expected {expected[name].shape}")
        if name in params:
            params[name].data = array.copy()
        else:
            graph.set_buffer(name, array.copy())


def load_model(path: str, expect_mode: str = None) -> ModelGraph:
    """ Rebuild a graph from a model file

    Args:
        path (str): Model file
        expect_mode (str, optional): Required mode; ``train`` for anything that will be trained

    Returns:
        ModelGraph: Graph in eval mode, with ``hyperparameters`` restored

    Raises:
        ModelFileError: Unreadable file, topology mismatch or unexpected mode
    """
    model_file = read_model_file(path)
    header = model_file.header
    if expect_mode is not None and header["mode"] != expect_mode:
        if expect_mode == TRAIN:
            raise ModelFileError(f"{path} holds a {header['mode']} graph, which cannot be trained")
        raise ModelFileError(f"{path} holds a {header['mode']} graph, expected {expect_mode}")
    try:
        cfg = RepCNNConfig.from_dict(header["model"])
        graph = build_model(cfg, header.get("architecture", "repcnn"), rng=0)
        if header["mode"] == FUSED:
            bounds = header.get("clip_bounds")
            graph = fuse_model(graph, _bounds_from_json(bounds) if bounds is not None else None)
    except (ConfigError, KeyError, TypeError) as e:
        raise ModelFileError(f"{path}: cannot rebuild the graph from the header ({e})") from e
    _assign(graph, model_file.tensors, path)
    graph.hyperparameters = dict(header.get("hyperparameters") or {})
    graph.eval()
    return graph
