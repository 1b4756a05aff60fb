"""Sparse autoencoder parameters, activations, forward passes and losses.

Inputs are either single vectors of shape ``(n,)`` or batches of shape
``(N, n)`` with one sample per row. Codes follow the same convention
with ``d`` columns.
"""

from __future__ import annotations

import functools
import itertools
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .numerics import as_matrix, as_vector

SOFT_TOPK_MAX_SUBSETS = 10**6
L0_EPS = 1e-12


# -- activations -------------------------------------------------------------


@dataclass(frozen=True)
class ReLU:
    def __call__(self, v):
        v = np.asarray(v, dtype=np.float64)
        return np.where(v > 0, v, 0.0)

    def mask(self, v):
        return np.asarray(v) > 0

    def validate(self, d):
        pass


@dataclass(frozen=True)
class JumpReLU:
    """Pass entries strictly above ``tau``; ``v_i == tau`` maps to 0."""

    tau: float = 0.0

    def __call__(self, v):
        v = np.asarray(v, dtype=np.float64)
        return np.where(v > self.tau, v, 0.0)

    def mask(self, v):
        return np.asarray(v) > self.tau

    def validate(self, d):
        if not math.isfinite(self.tau):
            raise ContractError("JumpReLU threshold must be finite")


@dataclass(frozen=True)
class TopK:
    """Keep the ``k`` largest entries; ties go to the lowest index."""

    k: int

    def mask(self, v):
        v = np.asarray(v, dtype=np.float64)
        self.validate(v.shape[-1])
        # stable sort of -v keeps lower indices first among equal values
        idx = np.argsort(-v, axis=-1, kind="stable")[..., : self.k]
        m = np.zeros(v.shape, dtype=bool)
        np.put_along_axis(m, idx, True, axis=-1)
        return m

    def __call__(self, v):
        v = np.asarray(v, dtype=np.float64)
        return np.where(self.mask(v), v, 0.0)

    def validate(self, d):
        if not 1 <= self.k <= d:
            raise ContractError(f"TopK needs 1 <= k <= d, got k={self.k}, d={d}")


@functools.lru_cache(maxsize=16)
def _incidence(d, k):
    subsets = list(itertools.combinations(range(d), k))
    inc = np.zeros((len(subsets), d), dtype=bool)
    for row, s in enumerate(subsets):
        inc[row, list(s)] = True
    inc.setflags(write=False)
    return inc


@dataclass(frozen=True)
class SoftTopK:
    """Softmax mixture over all k-subsets, a smooth stand-in for TopK.

    Enumerates every subset, so it is only meant for small ``d``.
    """

    k: int
    temperature: float

    def validate(self, d):
        if not 1 <= self.k <= d:
            raise ContractError(f"SoftTopK needs 1 <= k <= d, got k={self.k}, d={d}")
        if not self.temperature > 0:
            raise ContractError("SoftTopK temperature must be positive")
        if math.comb(d, self.k) > SOFT_TOPK_MAX_SUBSETS:
            raise ContractError(
                f"SoftTopK would enumerate C({d},{self.k}) > {SOFT_TOPK_MAX_SUBSETS} subsets"
            )

    def incidence(self, d):
        """Boolean matrix, one row per k-subset in lexicographic order."""
        self.validate(d)
        return _incidence(d, self.k)

    def subset_weights(self, v):
        v = np.asarray(v, dtype=np.float64)
        d = v.shape[-1]
        self.validate(d)
        inc = self.incidence(d).astype(np.float64)
        scores = v @ inc.T / self.temperature
        scores -= scores.max(axis=-1, keepdims=True)
        w = np.exp(scores)
        return w / w.sum(axis=-1, keepdims=True)

    def __call__(self, v):
        v = np.asarray(v, dtype=np.float64)
        self.validate(v.shape[-1])
        inc = self.incidence(v.shape[-1]).astype(np.float64)
        # sum_S w_S P_S v = v * P(i in S)
        return v * (self.subset_weights(v) @ inc)

    def mask(self, v):
        raise ContractError("SoftTopK has no hard active set; it is not trainable here")


def apply_activation(v, act):
    return act(v)


def support(z):
    """Indices of the strictly nonzero entries of a single code vector."""
    z = np.asarray(z)
    return tuple(int(i) for i in np.flatnonzero(z != 0))


# -- sparsity penalties ------------------------------------------------------


@dataclass(frozen=True)
class NoPenalty:
    lam: float = 0.0

    def value(self, z):
        return 0.0

    def grad(self, z):
        return np.zeros_like(z)


@dataclass(frozen=True)
class L1:
    lam: float

    def __post_init__(self):
        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise ContractError(f"penalty weight must be finite and >= 0, got {self.lam}")

    def value(self, z):
        return self.lam * float(np.abs(z).sum())

    def grad(self, z):
        return self.lam * np.sign(z)


@dataclass(frozen=True)
class L0:
    lam: float

    def __post_init__(self):
        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise ContractError(f"penalty weight must be finite and >= 0, got {self.lam}")

    def value(self, z):
        return self.lam * float(np.count_nonzero(np.abs(z) > L0_EPS))

    def grad(self, z):
        return np.zeros_like(z)


# -- parameters --------------------------------------------------------------


class SaeParams:
    """Encoder/decoder weights of an SAE.

    ``w_enc`` is ``(d, n)`` and ``w_dec`` is ``(n, d)``. In tied mode only
    the encoder matrix is stored and ``w_dec`` is its transpose.
    """

    def __init__(self, w_enc, b_enc, w_dec, b_dec, tied=False):
        self.w_enc = as_matrix(w_enc, "w_enc")
        self.b_enc = as_vector(b_enc, "b_enc")
        self.b_dec = as_vector(b_dec, "b_dec")
        self.tied = bool(tied)
        d, n = self.w_enc.shape
        if tied:
            if w_dec is not None and not np.array_equal(np.asarray(w_dec), self.w_enc.T):
                raise ContractError("tied params need w_dec equal to w_enc.T")
            self._w_dec = None
        else:
            self._w_dec = as_matrix(w_dec, "w_dec")
            if self._w_dec.shape != (n, d):
                raise ContractError(
                    f"w_dec must be {(n, d)} to match w_enc {(d, n)}, got {self._w_dec.shape}"
                )
        if self.b_enc.shape != (d,):
            raise ContractError(f"b_enc must have length {d}, got {self.b_enc.shape[0]}")
        if self.b_dec.shape != (n,):
            raise ContractError(f"b_dec must have length {n}, got {self.b_dec.shape[0]}")

    @property
    def w_dec(self):
        return self.w_enc.T if self.tied else self._w_dec

    @property
    def n(self):
        return self.w_enc.shape[1]

    @property
    def d(self):
        return self.w_enc.shape[0]

    def copy(self):
        return SaeParams(
            self.w_enc.copy(),
            self.b_enc.copy(),
            None if self.tied else self._w_dec.copy(),
            self.b_dec.copy(),
            tied=self.tied,
        )

    def replace(self, **kw):
        fields = dict(
            w_enc=self.w_enc,
            b_enc=self.b_enc,
            w_dec=None if self.tied else self._w_dec,
            b_dec=self.b_dec,
            tied=self.tied,
        )
        fields.update(kw)
        if fields["tied"]:
            fields["w_dec"] = None
        return SaeParams(**fields)

    def __eq__(self, other):
        if not isinstance(other, SaeParams):
            return NotImplemented
        return (
            self.tied == other.tied
            and np.array_equal(self.w_enc, other.w_enc)
            and np.array_equal(self.b_enc, other.b_enc)
            and np.array_equal(self.w_dec, other.w_dec)
            and np.array_equal(self.b_dec, other.b_dec)
        )

    def __repr__(self):
        return f"SaeParams(n={self.n}, d={self.d}, tied={self.tied})"

    def to_dict(self):
        return {
            "n": self.n,
            "d": self.d,
            "tied": self.tied,
            "w_enc": self.w_enc.ravel().tolist(),
            "b_enc": self.b_enc.tolist(),
            "w_dec": self.w_dec.ravel().tolist(),
            "b_dec": self.b_dec.tolist(),
        }

    @classmethod
    def from_dict(cls, doc):
        n, d = int(doc["n"]), int(doc["d"])
        w_enc = np.asarray(doc["w_enc"], dtype=np.float64).reshape(d, n)
        w_dec = np.asarray(doc["w_dec"], dtype=np.float64).reshape(n, d)
        tied = bool(doc.get("tied", False))
        return cls(w_enc, doc["b_enc"], w_dec, doc["b_dec"], tied=tied)

    def to_json(self):
        # repr of a float round-trips exactly through json
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


# -- forward passes ----------------------------------------------------------


def pre_activation(x, params):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.n:
        raise ContractError(f"input has dim {x.shape[-1]}, params expect {params.n}")
    return x @ params.w_enc.T + params.b_enc


def encode(x, params, act):
    """Code ``act(W_enc x + b_enc)`` for one sample or a batch."""
    return act(pre_activation(x, params))


def decode(z, params):
    """Reconstruction ``W_dec z + b_dec``."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != params.d:
        raise ContractError(f"code has dim {z.shape[-1]}, params expect {params.d}")
    return z @ params.w_dec.T + params.b_dec


def reconstruct(x, params, act):
    return decode(encode(x, params, act), params)


@dataclass(frozen=True)
class LossReport:
    reconstruction: float
    sparsity: float
    aux: float

    @property
    def total(self):
        return self.reconstruction + self.sparsity + self.aux


def batch_loss(data, params, act, pen=None, weight_decay=(0.0, 0.0)):
    """Summed squared reconstruction error plus sparsity and weight decay.

    Parameters
    ----------
    data : array_like, shape (N, n)
    params : SaeParams
    act : activation
    pen : NoPenalty, L1 or L0, optional
    weight_decay : (float, float)
        Coefficients on ``||W_enc||_F^2`` and ``||W_dec||_F^2``.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ContractError("batch_loss needs a nonempty (N, n) batch")
    pen = pen or NoPenalty()
    z = encode(data, params, act)
    resid = decode(z, params) - data
    recon = float(np.sum(resid * resid))
    a_enc, a_dec = weight_decay
    aux = a_enc * float(np.sum(params.w_enc**2)) + a_dec * float(np.sum(params.w_dec**2))
    return LossReport(reconstruction=recon, sparsity=pen.value(z), aux=aux)


# -- config helpers ----------------------------------------------------------


def activation_from_spec(name, k=None, tau=0.0, temperature=1.0):
    name = name.lower()
    if name == "relu":
        return ReLU()
    if name == "jumprelu":
        return JumpReLU(float(tau))
    if name == "topk":
        return TopK(int(k))
    if name == "softtopk":
        return SoftTopK(int(k), float(temperature))
    raise ContractError(f"unknown activation {name!r}")


def penalty_from_spec(name, lam=0.0):
    name = (name or "none").lower()
    if name == "none":
        return NoPenalty()
    if name == "l1":
        return L1(float(lam))
    if name == "l0":
        return L0(float(lam))
    raise ContractError(f"unknown sparsity penalty {name!r}")
