"""Piecewise-constant and piecewise-affine reference autoencoders.

``kmeans_fit`` / ``kmeans_autoencode`` give the k-means autoencoder that
maps each input to its cluster centroid. ``local_pca_fit`` builds the
optimal piecewise-affine autoencoder on a *fixed* partition: per region,
the mean plus a projection onto the top covariance eigenvectors, with
rank either fixed or chosen by an eigenvalue threshold.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .numerics import as_matrix, sym_eig

EIG_CLAMP = 1e-10


@dataclass
class KMeansModel:
    centroids: np.ndarray
    assignment: np.ndarray
    objective: float
    history: list = field(default_factory=list)
    n_iter: int = 0

    def to_dict(self):
        return {
            "centroids": self.centroids.tolist(),
            "assignment": self.assignment.tolist(),
            "objective": self.objective,
        }


def squared_distances(x, centroids):
    diff = x[:, None, :] - centroids[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def nearest(x, centroids):
    # argmin returns the first minimiser, i.e. the lowest index on ties
    return np.argmin(squared_distances(x, centroids), axis=1)


def kmeans_objective(x, centroids, assignment):
    resid = x - centroids[assignment]
    return float(np.sum(resid * resid))


def kmeans_pp_init(x, k, rng):
    n = x.shape[0]
    centroids = np.empty((k, x.shape[1]))
    centroids[0] = x[rng.integers(n)]
    d2 = np.sum((x - centroids[0]) ** 2, axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total > 0:
            j = rng.choice(n, p=d2 / total)
        else:
            j = rng.integers(n)
        centroids[i] = x[j]
        d2 = np.minimum(d2, np.sum((x - centroids[i]) ** 2, axis=1))
    return centroids


def kmeans_fit(data, k, seed=0, max_iter=300, init=None, n_init=1):
    """Lloyd's algorithm from a seeded k-means++ start.

    Empty clusters are re-seeded at the sample farthest from its current
    centroid. Iteration stops when assignments no longer change. With
    ``n_init > 1`` the fit is restarted from independently seeded starts
    and the lowest objective wins (earliest restart on ties).
    """
    x = as_matrix(data, "data")
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ContractError(f"k must lie in [1, {n}], got {k}")
    if max_iter < 1:
        raise ContractError("max_iter must be >= 1")
    if n_init < 1:
        raise ContractError("n_init must be >= 1")
    if n_init > 1:
        if init is not None:
            raise ContractError("explicit init and n_init > 1 are exclusive")
        seeds = np.random.SeedSequence(seed).spawn(n_init)
        fits = [kmeans_fit(x, k, s, max_iter) for s in seeds]
        return min(fits, key=lambda m: m.objective)
    rng = np.random.default_rng(seed)
    centroids = kmeans_pp_init(x, k, rng) if init is None else as_matrix(init).copy()
    labels = nearest(x, centroids)
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        assign = labels.copy()
        for i in range(k):
            members = assign == i
            if members.any():
                centroids[i] = x[members].mean(axis=0)
            else:
                far = np.sum((x - centroids[assign]) ** 2, axis=1)
                j = int(np.argmax(far))
                centroids[i] = x[j]
                assign[j] = i
        history.append(kmeans_objective(x, centroids, assign))
        new_labels = nearest(x, centroids)
        # compare nearest-centroid labels, not the re-seeded assignment,
        # so coincident points cannot make the loop oscillate
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
    return KMeansModel(
        centroids=centroids,
        assignment=labels,
        objective=kmeans_objective(x, centroids, labels),
        history=history,
        n_iter=it,
    )


def kmeans_autoencode(x, model):
    """Map each input to its nearest centroid."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    out = model.centroids[nearest(np.atleast_2d(x), model.centroids)]
    return out[0] if single else out


def covariance(region_data):
    """Region mean and population (1/N) covariance."""
    x = as_matrix(region_data, "region data")
    if x.shape[0] == 0:
        raise ContractError("covariance of an empty region")
    mean = x.mean(axis=0)
    c = x - mean
    return mean, c.T @ c / x.shape[0]


def optimal_rank(eigenvalues, lam):
    """Largest K with ``eigenvalues[K-1] > lam`` (0 if none).

    Eigenvalues must be descending; entries down to -1e-10 are clamped
    to zero.
    """
    ev = np.asarray(eigenvalues, dtype=np.float64)
    if np.any(np.diff(ev) > 0):
        raise ContractError("eigenvalues must be sorted in descending order")
    if ev.size and ev[-1] < -EIG_CLAMP:
        raise ContractError(f"eigenvalue {ev[-1]} is below the clamp tolerance")
    ev = np.maximum(ev, 0.0)
    return int(np.count_nonzero(ev > lam))


@dataclass(frozen=True)
class Fixed:
    rank: int


@dataclass(frozen=True)
class Adaptive:
    lam: float


@dataclass
class PiecewiseAffineAE:
    """Per-region mean, orthonormal basis, offset, rank and spectrum."""

    means: list
    bases: list
    offsets: list
    ranks: list
    eigenvalues: list

    @property
    def n_regions(self):
        return len(self.means)

    def to_dict(self):
        return {
            "means": [m.tolist() for m in self.means],
            "bases": [u.tolist() for u in self.bases],
            "ranks": list(self.ranks),
            "eigenvalues": [e.tolist() for e in self.eigenvalues],
        }

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc):
        n = len(doc["means"][0])
        means = [np.asarray(m, dtype=np.float64) for m in doc["means"]]
        bases = [np.asarray(u, dtype=np.float64).reshape(n, -1) for u in doc["bases"]]
        offsets = [m - u @ (u.T @ m) for m, u in zip(means, bases)]
        return cls(
            means=means,
            bases=bases,
            offsets=offsets,
            ranks=[int(r) for r in doc["ranks"]],
            eigenvalues=[np.asarray(e, dtype=np.float64) for e in doc["eigenvalues"]],
        )


def local_pca_fit(data, regions, rank_rule):
    """Optimal piecewise-affine autoencoder on a fixed partition.

    Parameters
    ----------
    data : array_like, shape (N, n)
    regions : array_like of int, shape (N,)
        Region index of each sample, covering ``0 .. k-1``.
    rank_rule : Fixed or Adaptive
    """
    x = as_matrix(data, "data")
    regions = np.asarray(regions, dtype=int)
    n = x.shape[1]
    k = int(regions.max()) + 1 if regions.size else 0
    model = PiecewiseAffineAE([], [], [], [], [])
    for i in range(k):
        members = x[regions == i]
        if members.shape[0] == 0:
            raise ContractError(f"region {i} is empty")
        mean, cov = covariance(members)
        eig = sym_eig(cov)
        if isinstance(rank_rule, Fixed):
            if not 0 <= rank_rule.rank <= n:
                raise ContractError(f"rank must lie in [0, {n}]")
            r = rank_rule.rank
        elif members.shape[0] == 1:
            r = 0
        else:
            r = optimal_rank(np.maximum(eig.eigenvalues, -EIG_CLAMP), rank_rule.lam)
        u = eig.eigenvectors[:, :r]
        model.means.append(mean)
        model.bases.append(u)
        model.offsets.append(mean - u @ (u.T @ mean))
        model.ranks.append(r)
        model.eigenvalues.append(eig.eigenvalues)
    return model


def pa_autoencode(x, region, model):
    """``x_bar + U U^T (x - x_bar)`` on the given region.

    ``x`` may be a batch, in which case ``region`` is an array of indices.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        u, m = model.bases[region], model.means[region]
        return m + u @ (u.T @ (x - m))
    out = np.empty_like(x)
    region = np.asarray(region)
    for i in np.unique(region):
        sel = region == i
        u, m = model.bases[i], model.means[i]
        out[sel] = m + (x[sel] - m) @ u @ u.T
    return out


def pa_loss(data, regions, model, lam=0.0):
    """Squared reconstruction error plus ``lam * sum_i N_i K_i``."""
    x = as_matrix(data, "data")
    regions = np.asarray(regions, dtype=int)
    resid = pa_autoencode(x, regions, model) - x
    counts = np.bincount(regions, minlength=model.n_regions)
    return float(np.sum(resid * resid)) + lam * float(np.dot(counts, model.ranks))


def pa_loss_closed_form(data, regions, model, lam=0.0):
    """The same loss via per-region eigenvalues, valid at the optimum."""
    x = as_matrix(data, "data")
    regions = np.asarray(regions, dtype=int)
    total = 0.0
    for i in range(model.n_regions):
        members = x[regions == i]
        n_i = members.shape[0]
        k_i = model.ranks[i]
        spread = float(np.sum((members - model.means[i]) ** 2))
        total += spread + n_i * k_i * lam - n_i * float(np.sum(model.eigenvalues[i][:k_i]))
    return total
