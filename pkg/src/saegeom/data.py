"""Datasets: MNIST IDX files, 2-D toy clusters and synthetic activations."""

from __future__ import annotations

import gzip
import io
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, FormatError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CLUSTER_NOISE = 0.05


@dataclass
class Dataset:
    samples: np.ndarray
    provenance: str
    labels: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2:
            raise ContractError("samples must be an (N, n) array")
        if not np.all(np.isfinite(self.samples)):
            raise ContractError("samples must be finite")
        if self.labels is not None and len(self.labels) != len(self.samples):
            raise ContractError("need one label per sample")

    def __len__(self):
        return self.samples.shape[0]

    @property
    def dim(self):
        return self.samples.shape[1]

    def subset(self, idx):
        idx = np.asarray(idx, dtype=int)
        labels = None if self.labels is None else self.labels[idx]
        return Dataset(self.samples[idx], self.provenance, labels, dict(self.meta))

    def to_csv(self):
        buf = io.StringIO()
        cols = [f"x{j}" for j in range(self.dim)]
        if self.labels is not None:
            cols.append("label")
        buf.write(",".join(cols) + "\n")
        for r, row in enumerate(self.samples):
            vals = [repr(float(v)) for v in row]
            if self.labels is not None:
                vals.append(str(int(self.labels[r])))
            buf.write(",".join(vals) + "\n")
        return buf.getvalue()


# -- MNIST -------------------------------------------------------------------


def _read_bytes(path):
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw, magic, ndim):
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"IDX header needs {header} bytes, file has {len(raw)}", offset=len(raw))
    (got,) = struct.unpack(">I", raw[:4])
    if got != magic:
        raise FormatError(f"bad IDX magic 0x{got:08x}, expected 0x{magic:08x}", offset=0)
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = math.prod(dims)
    if len(raw) < header + size:
        raise FormatError(
            f"IDX body truncated: need {size} bytes after header, have {len(raw) - header}",
            offset=len(raw),
        )
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def read_idx_images(path):
    return _parse_idx(_read_bytes(path), IDX_IMAGES_MAGIC, 3)


def read_idx_labels(path):
    return _parse_idx(_read_bytes(path), IDX_LABELS_MAGIC, 1)


def write_idx(path, array):
    """Write a uint8 array as an (uncompressed) IDX file."""
    a = np.asarray(array, dtype=np.uint8)
    magic = {1: IDX_LABELS_MAGIC, 3: IDX_IMAGES_MAGIC}.get(a.ndim)
    if magic is None:
        raise ContractError("IDX writer supports 1-D labels or 3-D images")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(f">{a.ndim}I", *a.shape))
        fh.write(a.tobytes())


def load_mnist(images_path, labels_path=None):
    """MNIST images flattened to 784 values scaled into [0, 1]."""
    images = read_idx_images(images_path)
    labels = None
    if labels_path is not None:
        labels = read_idx_labels(labels_path).astype(np.int64)
        if labels.shape[0] != images.shape[0]:
            raise FormatError(
                f"{images.shape[0]} images but {labels.shape[0]} labels", offset=4
            )
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(x, "mnist", labels, {"images": str(images_path)})


# -- synthetic data ----------------------------------------------------------


def gen_clusters2d(n=100, seed=0, noise=CLUSTER_NOISE):
    """Three 2-D clusters: a horizontal line, a square and a diagonal.

    40% of points lie near ``y = -0.8`` for ``x`` in [-1.5, 0], 30% are
    uniform in [-0.4, 0.4] x [0.4, 1.2], and 30% follow
    ``(0.8 + t, t - 0.5)`` for ``t`` in [0, 1]. Labels give the cluster.
    """
    if n < 10:
        raise ContractError("gen_clusters2d needs n >= 10")
    rng = np.random.default_rng(seed)
    n_line = int(0.4 * n)
    n_square = int(0.3 * n)
    n_diag = n - n_line - n_square
    line = np.column_stack(
        [rng.uniform(-1.5, 0.0, n_line), -0.8 + noise * rng.standard_normal(n_line)]
    )
    square = np.column_stack([rng.uniform(-0.4, 0.4, n_square), rng.uniform(0.4, 1.2, n_square)])
    t = rng.uniform(0.0, 1.0, n_diag)
    diag = np.column_stack([0.8 + t, t - 0.5]) + noise * rng.standard_normal((n_diag, 2))
    x = np.vstack([line, square, diag])
    labels = np.repeat([0, 1, 2], [n_line, n_square, n_diag])
    return Dataset(x, "clusters2d", labels, {"n": n, "seed": seed, "noise": noise})


def gen_synth_activations(n, dim, dict_size, true_sparsity, noise=0.0, seed=0):
    """Sparse non-negative combinations of a random unit-norm dictionary.

    ``x = D a + eps`` where ``D`` is ``(dim, dict_size)`` with unit
    columns, ``a`` has ``true_sparsity`` nonzeros drawn from U(0.5, 1.5)
    and ``eps`` is Gaussian with standard deviation ``noise``. The
    dictionary is stored in ``meta["dictionary"]``.
    """
    if not 1 <= true_sparsity <= dict_size:
        raise ContractError("need 1 <= true_sparsity <= dict_size")
    rng = np.random.default_rng(seed)
    dictionary = rng.standard_normal((dim, dict_size))
    dictionary /= np.linalg.norm(dictionary, axis=0)
    codes = np.zeros((n, dict_size))
    for r in range(n):
        idx = rng.choice(dict_size, size=true_sparsity, replace=False)
        codes[r, idx] = rng.uniform(0.5, 1.5, true_sparsity)
    x = codes @ dictionary.T
    if noise > 0:
        x = x + noise * rng.standard_normal(x.shape)
    meta = {"dictionary": dictionary, "codes": codes, "seed": seed, "noise": noise}
    return Dataset(x, "synth_acts", None, meta)


# -- splits ------------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.9
    subsample: float = 1.0
    seed: int = 0
    subsample_seed: int | None = None

    def __post_init__(self):
        for name in ("train_fraction", "subsample"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ContractError(f"{name} must lie in (0, 1], got {v}")


def split_and_subsample(ds, spec):
    """Seeded train/test split, then subsample the train part only.

    The test set is fixed before subsampling, so every training-size
    setting under the same seed shares one test set. By default the kept
    training samples are a prefix of the split permutation; with
    ``subsample_seed`` they are a separately seeded random subset, which
    varies the training data while the test set stays put.
    """
    n = len(ds)
    perm = np.random.default_rng(spec.seed).permutation(n)
    n_train = math.floor(spec.train_fraction * n)
    train_idx, test_idx = perm[:n_train], perm[n_train:]
    keep = math.floor(spec.subsample * n_train)
    if keep == 0:
        raise ContractError(
            f"subsample {spec.subsample} of {n_train} training samples leaves none"
        )
    if spec.subsample_seed is not None:
        train_idx = train_idx[np.random.default_rng(spec.subsample_seed).permutation(n_train)]
    return ds.subset(train_idx[:keep]), ds.subset(test_idx)


def mnist_from_splits(train_images, train_labels, test_images, test_labels, subsample=1.0, seed=0):
    """Standard MNIST train/test files with the train part subsampled."""
    train = load_mnist(train_images, train_labels)
    test = load_mnist(test_images, test_labels)
    keep = math.floor(subsample * len(train))
    if keep == 0:
        raise ContractError("subsample leaves no training data")
    idx = np.random.default_rng(seed).permutation(len(train))[:keep]
    return train.subset(idx), test
