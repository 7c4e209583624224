import numpy as np
import pytest

from splitlab.datakit import ClientSplit, Dataset, PartitionPlan, generate_for_plan, partition
from splitlab.nn import DENSE, RELU, SIGMOID, Layer, LayerSpec, SequentialModel


def dense_layer(in_dim, out_dim, rng):
    bound = np.sqrt(6.0 / (in_dim + out_dim))
    w = rng.uniform(-bound, bound, size=(in_dim, out_dim))
    b = rng.uniform(-bound, bound, size=(out_dim,))
    return Layer(LayerSpec(DENSE, in_dim, out_dim), w, b)


def build_model(dims, seed=0, final_sigmoid=True):
    """dense/relu chain over `dims`, e.g. (5, 4, 1) -> dense,relu,dense[,sigmoid]."""
    rng = np.random.default_rng(seed)
    layers = []
    for i in range(len(dims) - 1):
        layers.append(dense_layer(dims[i], dims[i + 1], rng))
        if i < len(dims) - 2:
            layers.append(Layer(LayerSpec(RELU)))
    if final_sigmoid:
        layers.append(Layer(LayerSpec(SIGMOID)))
    return SequentialModel(layers)


def random_batch(rng, n, f):
    x = rng.standard_normal((n, f))
    y = rng.integers(0, 2, size=(n, 1)).astype(float)
    return x, y


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_partitions(n_clients=2, train_size=24, val_size=10, test_size=10, seed=7, n_features=6):
    """Small non-IID partitions for protocol tests."""
    plan = PartitionPlan(
        train_sizes=(train_size,) * n_clients,
        val_sizes=(val_size,) * n_clients,
        test_sizes=(test_size,) * n_clients,
    )
    data = generate_for_plan(seed, plan, n_features=n_features, class_separation=2.0, per_source_shift=1.0)
    return partition(data, plan)


def identical_partitions(n_clients, train_size=20, val_size=10, test_size=10, seed=3, n_features=6):
    """Every client holds byte-identical data (source ids rewritten per client)."""
    plan = PartitionPlan(
        train_sizes=(train_size,),
        val_sizes=(val_size,),
        test_sizes=(test_size,),
    )
    base = generate_for_plan(seed, plan, n_features=n_features, class_separation=2.0, per_source_shift=0.0)
    split = partition(base, plan)[0]
    out = {}
    for cid in range(n_clients):
        out[cid] = ClientSplit(
            *(
                Dataset(ds.features.copy(), ds.labels.copy(), np.full(len(ds), cid, dtype=np.int64))
                for ds in (split.train, split.val, split.test)
            )
        )
    return out


def pooled_split(partitions):
    ordered = [partitions[cid] for cid in sorted(partitions)]
    return ClientSplit(
        Dataset.concat([p.train for p in ordered]),
        Dataset.concat([p.val for p in ordered]),
        Dataset.concat([p.test for p in ordered]),
    )
