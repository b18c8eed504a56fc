import numpy as np
import pytest

from repcnn_kws.data import SynthSpec, generate_synthetic_dataset
from repcnn_kws.model import RepCNNConfig, build_repcnn
from repcnn_kws.nn.layers import BatchNorm1d


def iter_layers(layer):
    """ Every layer in a graph or block, depth first """
    yield layer
    for child in layer.children().values():
        yield from iter_layers(child)


def randomize_bn(layer, rng):
    """ Give every batch norm non-trivial affine parameters and running statistics """
    for bn in iter_layers(layer):
        if isinstance(bn, BatchNorm1d):
            c = bn.num_features
            dtype = bn.weight.data.dtype
            bn.weight.data = rng.uniform(0.5, 1.5, c).astype(dtype)
            bn.bias.data = rng.normal(0.0, 0.2, c).astype(dtype)
            bn.running_mean = rng.normal(0.0, 0.2, c).astype(dtype)
            bn.running_var = rng.uniform(0.5, 2.0, c).astype(dtype)
    return layer


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_cfg():
    """ Receptive field 17, four activations, fast enough for exhaustive checks """
    return RepCNNConfig(width=8, stage_kernels=[3, 5], blocks_per_stage=1)


@pytest.fixture
def small_graph(small_cfg):
    return randomize_bn(build_repcnn(small_cfg, rng=7), np.random.default_rng(7))


@pytest.fixture(scope="session")
def default_graph():
    return randomize_bn(build_repcnn(rng=0), np.random.default_rng(0))


@pytest.fixture(scope="session")
def synth_dir(tmp_path_factory):
    """ A small synthetic dataset shared by the data, train, eval and CLI tests """
    out = tmp_path_factory.mktemp("synth")
    spec = SynthSpec(num_train=8, num_val=4, num_test_positive=3, num_test_negative=2,
                     utterance_seconds=2.0, negative_seconds=4.0, seed=3)
    generate_synthetic_dataset(spec, str(out))
    return out
