import gzip
import struct

import numpy as np
import pytest

from saegeom.data import (
    SplitSpec,
    gen_clusters2d,
    gen_synth_activations,
    load_mnist,
    read_idx_images,
    split_and_subsample,
    write_idx,
)
from saegeom.errors import ContractError, FormatError
from saegeom.sae import TopK
from saegeom.trainer import TrainConfig, sgd_train


def idx_header(magic, *dims):
    return struct.pack(">I", magic) + struct.pack(f">{len(dims)}I", *dims)


# -- IDX ---------------------------------------------------------------------


def test_mnist_header_shape(tmp_path):
    path = tmp_path / "imgs.idx"
    path.write_bytes(bytes([0, 0, 8, 3]) + struct.pack(">3I", 60000, 28, 28) + bytes(60000 * 784))
    ds = load_mnist(path)
    assert ds.samples.shape == (60000, 784)
    assert ds.provenance == "mnist"


def test_pixel_scaling_and_labels(tmp_path):
    imgs = np.zeros((2, 28, 28), dtype=np.uint8)
    imgs[0, 0, 0] = 255
    write_idx(tmp_path / "i", imgs)
    write_idx(tmp_path / "l", np.array([7, 3], dtype=np.uint8))
    ds = load_mnist(tmp_path / "i", tmp_path / "l")
    assert ds.samples[0, 0] == 1.0 and ds.samples[0, 1] == 0.0
    assert ds.labels.tolist() == [7, 3]


def test_idx_round_trip_and_gzip(tmp_path):
    imgs = np.random.default_rng(0).integers(0, 256, (5, 28, 28), dtype=np.uint8)
    write_idx(tmp_path / "a", imgs)
    np.testing.assert_array_equal(read_idx_images(tmp_path / "a"), imgs)
    (tmp_path / "a.gz").write_bytes(gzip.compress((tmp_path / "a").read_bytes()))
    np.testing.assert_array_equal(read_idx_images(tmp_path / "a.gz"), imgs)
    # loading is byte-exact and seed independent
    a = load_mnist(tmp_path / "a").samples
    b = load_mnist(tmp_path / "a.gz").samples
    assert a.tobytes() == b.tobytes()


def test_idx_bad_magic(tmp_path):
    path = tmp_path / "bad"
    path.write_bytes(idx_header(0x00000801, 1, 28, 28) + bytes(784))
    with pytest.raises(FormatError, match="offset 0"):
        load_mnist(path)


def test_idx_truncated(tmp_path):
    path = tmp_path / "short"
    path.write_bytes(idx_header(0x00000803, 2, 28, 28) + bytes(1000))
    with pytest.raises(FormatError, match="offset 1016"):
        load_mnist(path)
    (tmp_path / "tiny").write_bytes(b"\x00\x00")
    with pytest.raises(FormatError):
        load_mnist(tmp_path / "tiny")


def test_label_count_mismatch(tmp_path):
    write_idx(tmp_path / "i", np.zeros((3, 28, 28), dtype=np.uint8))
    write_idx(tmp_path / "l", np.zeros(2, dtype=np.uint8))
    with pytest.raises(FormatError):
        load_mnist(tmp_path / "i", tmp_path / "l")


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_mnist(tmp_path / "nope")


# -- clusters ----------------------------------------------------------------


def test_cluster_counts_and_determinism():
    ds = gen_clusters2d(100, seed=3)
    assert np.bincount(ds.labels).tolist() == [40, 30, 30]
    again = gen_clusters2d(100, seed=3)
    assert ds.samples.tobytes() == again.samples.tobytes()
    assert not np.array_equal(ds.samples, gen_clusters2d(100, seed=4).samples)
    with pytest.raises(ContractError):
        gen_clusters2d(5)


def test_cluster_means_match_generators():
    # pooled over 50 seeds; nominal means and per-coordinate deviations
    nominal = {
        0: ((-0.75, -0.8), (1.5 / np.sqrt(12), 0.05)),
        1: ((0.0, 0.8), (0.8 / np.sqrt(12), 0.8 / np.sqrt(12))),
        2: ((1.3, 0.0), (np.sqrt(1 / 12 + 0.05**2),) * 2),
    }
    pooled = [gen_clusters2d(100, seed=s) for s in range(50)]
    x = np.vstack([p.samples for p in pooled])
    lab = np.concatenate([p.labels for p in pooled])
    for c, (mean, sd) in nominal.items():
        pts = x[lab == c]
        bound = 3 * np.array(sd) / np.sqrt(len(pts))
        assert np.all(np.abs(pts.mean(0) - mean) <= bound)


def test_clusters_csv_export():
    csv = gen_clusters2d(10, seed=0).to_csv().splitlines()
    assert csv[0] == "x0,x1,label"
    assert len(csv) == 11


# -- synthetic activations ---------------------------------------------------


def test_synth_single_atom_samples():
    ds = gen_synth_activations(50, 6, 10, 1, noise=0.0, seed=1)
    dic = ds.meta["dictionary"]
    np.testing.assert_allclose(np.linalg.norm(dic, axis=0), 1.0)
    for x in ds.samples:
        coef = dic.T @ x
        j = int(np.argmax(np.abs(coef)))
        assert coef[j] > 0
        np.testing.assert_allclose(x, coef[j] * dic[:, j], atol=1e-12)


def test_synth_determinism_and_finiteness():
    a = gen_synth_activations(20, 8, 12, 3, noise=0.1, seed=5)
    b = gen_synth_activations(20, 8, 12, 3, noise=0.1, seed=5)
    assert a.samples.tobytes() == b.samples.tobytes()
    assert np.all(np.isfinite(a.samples))
    assert np.all(np.count_nonzero(a.meta["codes"], axis=1) == 3)
    with pytest.raises(ContractError):
        gen_synth_activations(5, 4, 3, 4)


@pytest.mark.parametrize("sparsity", [1, 2, 3])
def test_synth_dictionary_is_recoverable(sparsity):
    from saegeom.sae import SaeParams

    ds = gen_synth_activations(300, 16, 8, sparsity, seed=sparsity)
    dic = ds.meta["dictionary"]
    var = float(np.sum(ds.samples.var(axis=0)))
    # start inside the basin of the true dictionary; random starts leave
    # duplicated or dead atoms at d == dict_size
    rng = np.random.default_rng(0)
    start = SaeParams(
        dic.T + 0.05 * rng.standard_normal(dic.T.shape),
        np.zeros(8),
        dic + 0.05 * rng.standard_normal(dic.shape),
        np.zeros(16),
    )
    cfg = TrainConfig(activation=TopK(sparsity), t_max=500, eta=0.003, batch=300)
    _, log = sgd_train(ds.samples, ds.samples, cfg, params=start)
    assert log.records[-1].test_mse < 1e-2 * var


# -- splits ------------------------------------------------------------------


def test_split_counts_and_disjointness():
    ds = gen_clusters2d(100, seed=0)
    ds.samples[:, 0] += np.arange(100) * 1000.0  # make rows identifiable
    train, test = split_and_subsample(ds, SplitSpec(0.9, 1.0, seed=2))
    assert (len(train), len(test)) == (90, 10)
    assert not set(train.samples[:, 0]) & set(test.samples[:, 0])


def test_subsample_keeps_test_set_fixed():
    ds = gen_synth_activations(600, 4, 6, 2, seed=0)
    _, t_full = split_and_subsample(ds, SplitSpec(0.9, 1.0, seed=1))
    tr, t_small = split_and_subsample(ds, SplitSpec(0.9, 0.01, seed=1))
    assert len(tr) == 5  # floor(0.01 * 540)
    assert t_full.samples.tobytes() == t_small.samples.tobytes()


def test_split_validation():
    with pytest.raises(ContractError):
        SplitSpec(0.0)
    with pytest.raises(ContractError):
        SplitSpec(0.9, 1.5)
    ds = gen_clusters2d(10)
    with pytest.raises(ContractError):
        split_and_subsample(ds, SplitSpec(0.5, 0.1))


def test_subsample_seed_varies_train_but_not_test():
    ds = gen_clusters2d(200, seed=0)
    ds.samples[:, 0] += np.arange(200) * 1000.0
    a_tr, a_te = split_and_subsample(ds, SplitSpec(0.5, 0.2, seed=3, subsample_seed=1))
    b_tr, b_te = split_and_subsample(ds, SplitSpec(0.5, 0.2, seed=3, subsample_seed=2))
    full, _ = split_and_subsample(ds, SplitSpec(0.5, 1.0, seed=3))
    assert a_te.samples.tobytes() == b_te.samples.tobytes()
    assert len(a_tr) == len(b_tr) == 20
    assert set(a_tr.samples[:, 0]) != set(b_tr.samples[:, 0])
    assert set(a_tr.samples[:, 0]) <= set(full.samples[:, 0])
