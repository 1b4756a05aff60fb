"""Dense linear-algebra helpers shared by the rest of the package.

Everything here works on float64 numpy arrays and is a pure function.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, NumericalError


def as_matrix(a, name="matrix"):
    """Return `a` as a finite 2-D float64 array."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ContractError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ContractError(f"{name} contains non-finite entries")
    return a


def as_vector(v, name="vector"):
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ContractError(f"{name} must be 1-D, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ContractError(f"{name} contains non-finite entries")
    return v


@dataclass(frozen=True)
class EigenResult:
    """Eigen-pairs of a symmetric matrix, eigenvalues descending.

    ``eigenvectors[:, i]`` belongs to ``eigenvalues[i]``.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def pinv(a, rel_tol=1e-12):
    """Moore-Penrose pseudoinverse via SVD.

    Singular values below ``rel_tol * sigma_max`` are treated as zero.

    Parameters
    ----------
    a : array_like, shape (m, n)
    rel_tol : float
        Relative cutoff in (0, 1).

    Returns
    -------
    ndarray, shape (n, m)
    """
    a = as_matrix(a)
    if not 0.0 < rel_tol < 1.0:
        raise ContractError(f"rel_tol must lie in (0, 1), got {rel_tol}")
    m, n = a.shape
    if a.size == 0:
        return np.zeros((n, m))
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD did not converge for {m}x{n} matrix") from exc
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((n, m))
    keep = s >= rel_tol * s[0]
    s_inv = np.zeros_like(s)
    s_inv[keep] = 1.0 / s[keep]
    return (vt.T * s_inv) @ u.T


def sym_eig(x):
    """Eigendecomposition of a symmetric matrix.

    The input is symmetrised as ``(x + x.T) / 2`` first. Each eigenvector
    is signed so that its first entry with magnitude above 1e-12 is
    positive, which keeps downstream PCA bases reproducible.
    """
    x = as_matrix(x)
    if x.shape[0] != x.shape[1]:
        raise ContractError(f"sym_eig needs a square matrix, got {x.shape}")
    xs = 0.5 * (x + x.T)
    try:
        w, v = np.linalg.eigh(xs)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"eigendecomposition did not converge for {x.shape[0]}x{x.shape[1]} matrix"
        ) from exc
    order = np.argsort(-w, kind="stable")
    w = w[order]
    v = v[:, order]
    for j in range(v.shape[1]):
        nz = np.flatnonzero(np.abs(v[:, j]) > 1e-12)
        if nz.size and v[nz[0], j] < 0:
            v[:, j] = -v[:, j]
    return EigenResult(eigenvalues=w, eigenvectors=v)


def lstsq(a, b, rel_tol=1e-12):
    """Minimum-Frobenius-norm solution of ``min ||a @ x - b||_F``."""
    a = as_matrix(a, "a")
    b = np.asarray(b, dtype=np.float64)
    squeeze = b.ndim == 1
    if squeeze:
        b = b[:, None]
    b = as_matrix(b, "b")
    if a.shape[0] != b.shape[0]:
        raise ContractError(
            f"row mismatch: a has {a.shape[0]} rows, b has {b.shape[0]}"
        )
    x = pinv(a, rel_tol) @ b
    return x[:, 0] if squeeze else x
