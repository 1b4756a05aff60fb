"""Training: PAM-SGD with an exact decoder solve, and a plain Adam baseline.

PAM-SGD alternates two proximal block updates. The encoder block is
approximately minimised by a few Adam steps on minibatches; the decoder
block is a ridge-type least-squares problem and is solved exactly.

Losses are sums over samples (not means). Minibatch objectives are
rescaled by ``N / B`` so that they estimate the full-data objective,
which keeps the weight of the proximal and decay terms independent of
the batch size.
"""

from __future__ import annotations

import io
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .numerics import pinv
from .sae import (
    LossReport,
    NoPenalty,
    ReLU,
    SaeParams,
    batch_loss,
    decode,
    encode,
    pre_activation,
)

RUNLOG_COLUMNS = (
    "iter",
    "train_recon",
    "train_sparsity",
    "train_aux",
    "train_total",
    "test_mse",
    "active_frac",
    "seconds",
)


@dataclass
class TrainConfig:
    """Hyperparameters shared by ``pam_sgd_train`` and ``sgd_train``.

    The four cost-to-move coefficients accept a constant or a sequence
    with one value per outer iteration. ``alpha``/``beta`` are decoder
    weight decay on ``W_dec``/``b_dec``; ``enc_decay`` is weight decay on
    ``W_enc`` (the encoder regulariser, zero by default).
    """

    activation: object = field(default_factory=ReLU)
    penalty: object = field(default_factory=NoPenalty)
    t_max: int = 10
    eta: float = 0.003
    batch: int = 1024
    sgd_steps: int = 1
    mu_enc: object = 0.0
    nu_enc: object = 0.0
    mu_dec: object = 0.0
    nu_dec: object = 0.0
    alpha: float = 0.0
    beta: float = 0.0
    enc_decay: float = 0.0
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    seed: int = 0
    init: str = "uniform"
    unit_norm_dec: bool = False
    sgd_prox: bool = False

    def __post_init__(self):
        if self.batch < 1 or self.sgd_steps < 1:
            raise ContractError("batch and sgd_steps must be >= 1")
        if self.t_max < 0:
            raise ContractError("t_max must be >= 0")
        for name in ("eta", "alpha", "beta", "enc_decay", "adam_eps"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ContractError(f"{name} must be finite and >= 0, got {v}")
        for name in ("mu_enc", "nu_enc", "mu_dec", "nu_dec"):
            sched = getattr(self, name)
            vals = np.atleast_1d(np.asarray(sched, dtype=np.float64))
            if not np.all(np.isfinite(vals)) or np.any(vals < 0):
                raise ContractError(f"{name} must be finite and >= 0")
            if vals.size > 1 and vals.size != self.t_max:
                raise ContractError(f"{name} schedule needs {self.t_max} entries, got {vals.size}")

    def cost(self, name, t):
        sched = getattr(self, name)
        if np.ndim(sched) == 0:
            return float(sched)
        return float(sched[t])

    def costs(self, t):
        return tuple(self.cost(k, t) for k in ("mu_enc", "nu_enc", "mu_dec", "nu_dec"))


@dataclass
class IterRecord:
    iter: int
    train: LossReport
    test_mse: float
    active_frac: float
    seconds: float


@dataclass
class RunLog:
    records: list = field(default_factory=list)
    params: SaeParams | None = None
    meta: dict = field(default_factory=dict)

    def to_csv(self, timing=True):
        """CSV with a header row; ``timing=False`` drops the wall-clock column."""
        cols = RUNLOG_COLUMNS if timing else RUNLOG_COLUMNS[:-1]
        buf = io.StringIO()
        buf.write(",".join(cols) + "\n")
        for rec in self.records:
            row = [
                str(rec.iter),
                repr(rec.train.reconstruction),
                repr(rec.train.sparsity),
                repr(rec.train.aux),
                repr(rec.train.total),
                repr(rec.test_mse),
                repr(rec.active_frac),
            ]
            if timing:
                row.append(f"{rec.seconds:.6f}")
            buf.write(",".join(row) + "\n")
        return buf.getvalue()

    def timing_csv(self):
        lines = ["iter,seconds"] + [f"{r.iter},{r.seconds:.6f}" for r in self.records]
        return "\n".join(lines) + "\n"


class Adam:
    """Adam on a dict of arrays, updated in place."""

    def __init__(self, lr, betas=(0.9, 0.999), eps=1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        bc1 = 1.0 - self.b1**self.t
        bc2 = 1.0 - self.b2**self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * (g * g)
            params[k] -= self.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)


# -- initialisation ----------------------------------------------------------


def init_params(n, d, seed=0, init="uniform", data=None, tied=False, unit_norm_dec=False):
    """Initial SAE parameters with zero biases.

    ``init="uniform"`` draws weights from U(-1/sqrt(n), 1/sqrt(n)).
    ``init="data"`` places encoder rows and decoder columns at randomly
    chosen training samples plus small noise.
    """
    rng = np.random.default_rng(seed)
    scale = 1.0 / math.sqrt(n)
    if init == "uniform":
        w_enc = rng.uniform(-scale, scale, (d, n))
        w_dec = rng.uniform(-scale, scale, (n, d))
    elif init == "data":
        if data is None:
            raise ContractError('init="data" needs training data')
        data = np.asarray(data, dtype=np.float64)
        idx = rng.integers(0, data.shape[0], d)
        spread = data.std(axis=0).mean() if data.shape[0] > 1 else 1.0
        atoms = data[idx] + 0.01 * spread * rng.standard_normal((d, n))
        w_enc = atoms.copy()
        w_dec = atoms.T.copy()
    else:
        raise ContractError(f"unknown init {init!r}")
    if unit_norm_dec and not tied:
        w_dec /= np.maximum(np.linalg.norm(w_dec, axis=0), 1e-12)
    return SaeParams(w_enc, np.zeros(d), None if tied else w_dec, np.zeros(n), tied=tied)


# -- objectives and gradients ------------------------------------------------


def sae_grads(x, params, act, pen, scale=1.0):
    """Scaled data loss of a batch and its gradients.

    Returns ``(loss, grads)`` where ``loss = scale * (sum of squared
    errors + sparsity penalty)``. Gradients flow only through the active
    entries of the code (the active set is treated as locally constant).
    For tied params the ``w_enc`` gradient includes the decoder path and
    no ``w_dec`` key is returned.
    """
    pre = pre_activation(x, params)
    mask = act.mask(pre)
    z = np.where(mask, pre, 0.0)
    resid = z @ params.w_dec.T + params.b_dec - x
    loss = scale * (float(np.sum(resid * resid)) + pen.value(z))
    g_out = 2.0 * scale * resid
    g_z = g_out @ params.w_dec + scale * pen.grad(z)
    g_pre = np.where(mask, g_z, 0.0)
    grads = {
        "w_enc": g_pre.T @ x,
        "b_enc": g_pre.sum(axis=0),
        "b_dec": g_out.sum(axis=0),
    }
    g_wdec = g_out.T @ z
    if params.tied:
        grads["w_enc"] = grads["w_enc"] + g_wdec.T
    else:
        grads["w_dec"] = g_wdec
    return loss, grads


def encoder_objective(data, params, prev, cfg, t=0, idx=None):
    """Encoder-block proximal objective and its (w_enc, b_enc) gradient.

    With ``idx`` the data term is evaluated on that minibatch and rescaled
    by ``N / len(idx)``.
    """
    data = np.asarray(data, dtype=np.float64)
    n_all = data.shape[0]
    x = data if idx is None else data[idx]
    loss, g = sae_grads(x, params, cfg.activation, cfg.penalty, scale=n_all / x.shape[0])
    mu, nu = cfg.cost("mu_enc", t), cfg.cost("nu_enc", t)
    dw = params.w_enc - prev.w_enc
    db = params.b_enc - prev.b_enc
    loss += cfg.enc_decay * float(np.sum(params.w_enc**2))
    loss += mu * float(np.sum(dw * dw)) + nu * float(np.sum(db * db))
    gw = g["w_enc"] + 2.0 * cfg.enc_decay * params.w_enc + 2.0 * mu * dw
    gb = g["b_enc"] + 2.0 * nu * db
    return loss, {"w_enc": gw, "b_enc": gb}


class BatchStream:
    """Minibatch indices drawn without replacement, reshuffled each pass."""

    def __init__(self, n, batch, rng):
        self.n = n
        self.batch = min(batch, n)
        self.rng = rng
        self.perm = np.arange(n)
        self.pos = n

    def next(self):
        if self.batch >= self.n:
            return np.arange(self.n)
        if self.pos + self.batch > self.n:
            self.perm = self.rng.permutation(self.n)
            self.pos = 0
        idx = self.perm[self.pos : self.pos + self.batch]
        self.pos += self.batch
        return idx


def encoder_sgd_step(data, params, cfg, t=0, prev=None, rng=None, stream=None):
    """``cfg.sgd_steps`` Adam steps on the encoder with the decoder fixed.

    A fresh Adam state is used for every call. Returns ``(w_enc, b_enc)``.
    """
    if params.tied:
        raise ContractError("PAM-SGD needs untied encoder and decoder")
    data = np.asarray(data, dtype=np.float64)
    prev = params if prev is None else prev
    if stream is None:
        rng = np.random.default_rng(cfg.seed) if rng is None else rng
        stream = BatchStream(data.shape[0], cfg.batch, rng)
    work = {"w_enc": params.w_enc.copy(), "b_enc": params.b_enc.copy()}
    opt = Adam(cfg.eta, cfg.adam_betas, cfg.adam_eps)
    for _ in range(cfg.sgd_steps):
        current = params.replace(w_enc=work["w_enc"], b_enc=work["b_enc"])
        _, grads = encoder_objective(data, current, prev, cfg, t, stream.next())
        opt.step(work, grads)
    return work["w_enc"], work["b_enc"]


def _decoder_blocks(codes, data, prev_b_dec, nu, beta):
    n_samples = codes.shape[0]
    zbar = codes.mean(axis=0)
    xbar = data.mean(axis=0)
    denom = n_samples + beta + nu
    psi = codes - (n_samples / denom) * zbar
    phi = data - (nu / denom) * prev_b_dec - (n_samples / denom) * xbar
    psi_nu = math.sqrt(nu) / denom * n_samples * zbar
    phi_nu = math.sqrt(nu) / denom * (n_samples * xbar - (n_samples + beta) * prev_b_dec)
    psi_beta = math.sqrt(beta) / denom * n_samples * zbar
    phi_beta = math.sqrt(beta) / denom * (n_samples * xbar + nu * prev_b_dec)
    big_psi = np.column_stack([psi.T, psi_nu, psi_beta])
    big_phi = np.column_stack([phi.T, phi_nu, phi_beta])
    return big_psi, big_phi, zbar, xbar, denom


def decoder_closed_form(
    codes, data, prev_w_dec, prev_b_dec, mu=0.0, nu=0.0, alpha=0.0, beta=0.0, method="auto"
):
    """Exact minimiser of the decoder-block proximal objective.

    Minimises over ``(W, b)``::

        sum_r |W z_r + b - x_r|^2 + alpha |W|_F^2 + beta |b|^2
            + mu |W - W_prev|_F^2 + nu |b - b_prev|^2

    ``method="normal"`` solves ``(Phi Psi^T + mu W_prev)(Psi Psi^T +
    (alpha + mu) I)^-1``; ``method="pinv"`` uses the padded
    pseudoinverse form, which also covers ``alpha + mu == 0``. ``"auto"``
    picks the normal equations whenever ``alpha + mu > 0``.

    Returns
    -------
    (w_dec, b_dec)
    """
    z = np.asarray(codes, dtype=np.float64)
    x = np.asarray(data, dtype=np.float64)
    if z.ndim != 2 or x.ndim != 2 or z.shape[0] != x.shape[0] or z.shape[0] == 0:
        raise ContractError("codes and data must be nonempty (N, d) and (N, n) arrays")
    w_prev = np.asarray(prev_w_dec, dtype=np.float64)
    b_prev = np.asarray(prev_b_dec, dtype=np.float64)
    d, n = z.shape[1], x.shape[1]
    if w_prev.shape != (n, d) or b_prev.shape != (n,):
        raise ContractError(f"previous decoder must be {(n, d)} and {(n,)}")
    for name, v in (("mu", mu), ("nu", nu), ("alpha", alpha), ("beta", beta)):
        if not (math.isfinite(v) and v >= 0):
            raise ContractError(f"{name} must be finite and >= 0, got {v}")
    big_psi, big_phi, zbar, xbar, denom = _decoder_blocks(z, x, b_prev, nu, beta)
    if method == "auto":
        method = "normal" if alpha + mu > 0 else "pinv"
    if method == "normal":
        if alpha + mu <= 0:
            raise ContractError("normal-equation form needs alpha + mu > 0")
        lhs = big_psi @ big_psi.T + (alpha + mu) * np.eye(d)
        rhs = big_phi @ big_psi.T + mu * w_prev
        w = np.linalg.solve(lhs, rhs.T).T
    elif method == "pinv":
        left = np.hstack([big_phi, math.sqrt(mu) * w_prev, np.zeros((n, d))])
        right = np.hstack([big_psi, math.sqrt(mu) * np.eye(d), math.sqrt(alpha) * np.eye(d)])
        w = left @ pinv(right)
    else:
        raise ContractError(f"unknown method {method!r}")
    n_samples = z.shape[0]
    b = (nu / denom) * b_prev + (n_samples / denom) * (xbar - w @ zbar)
    return w, b


def decoder_objective(w, b, codes, data, prev_w_dec, prev_b_dec, mu, nu, alpha, beta):
    resid = codes @ w.T + b - data
    return (
        float(np.sum(resid * resid))
        + alpha * float(np.sum(w * w))
        + beta * float(np.sum(b * b))
        + mu * float(np.sum((w - prev_w_dec) ** 2))
        + nu * float(np.sum((b - prev_b_dec) ** 2))
    )


def full_prox_loss(params, prev, data, cfg, t=0):
    """Full-data loss plus all four proximal cost-to-move terms.

    The loss part is reconstruction + sparsity penalty +
    ``enc_decay |W_enc|^2 + alpha |W_dec|^2 + beta |b_dec|^2``.
    """
    rep = batch_loss(data, params, cfg.activation, cfg.penalty, (cfg.enc_decay, cfg.alpha))
    total = rep.total + cfg.beta * float(np.sum(params.b_dec**2))
    mu_e, nu_e, mu_d, nu_d = cfg.costs(t)
    total += mu_e * float(np.sum((params.w_enc - prev.w_enc) ** 2))
    total += nu_e * float(np.sum((params.b_enc - prev.b_enc) ** 2))
    total += mu_d * float(np.sum((params.w_dec - prev.w_dec) ** 2))
    total += nu_d * float(np.sum((params.b_dec - prev.b_dec) ** 2))
    return total


def evaluate(params, act, data):
    """Mean per-sample squared error and mean fraction of nonzero codes."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ContractError("evaluate needs a nonempty (N, n) batch")
    z = encode(data, params, act)
    resid = decode(z, params) - data
    mse = float(np.sum(resid * resid)) / data.shape[0]
    return mse, float(np.count_nonzero(z)) / z.size


def _record(it, params, cfg, train, test, start):
    rep = batch_loss(train, params, cfg.activation, cfg.penalty, (cfg.enc_decay, cfg.alpha))
    _, active = evaluate(params, cfg.activation, train)
    test_mse = evaluate(params, cfg.activation, test)[0] if len(test) else float("nan")
    return IterRecord(it, rep, test_mse, active, time.perf_counter() - start)


def _as_array(data):
    if hasattr(data, "samples"):
        data = data.samples
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise ContractError("data must be an (N, n) array")
    return data


def pam_sgd_train(train, test, cfg, d=None, params=None, freeze_encoder=False):
    """PAM-SGD: Adam encoder steps alternating with exact decoder solves.

    Parameters
    ----------
    train, test : (N, n) arrays or Datasets
    cfg : TrainConfig
        ``t_max`` counts outer (encoder + decoder) iterations.
    d : int, optional
        Code dimension when ``params`` is not given.
    params : SaeParams, optional
        Initial parameters; otherwise built by ``init_params``.
    freeze_encoder : bool
        Skip the encoder update (decoder-only alternation).
    """
    x = _as_array(train)
    x_test = _as_array(test) if test is not None else np.zeros((0, x.shape[1]))
    if x.shape[0] == 0:
        raise ContractError("training data is empty")
    if params is None:
        if d is None:
            raise ContractError("need either params or the code dimension d")
        params = init_params(
            x.shape[1], d, cfg.seed, cfg.init, x, tied=False, unit_norm_dec=cfg.unit_norm_dec
        )
    if params.tied:
        raise ContractError("PAM-SGD trains untied decoders")
    cfg.activation.validate(params.d)
    rng = np.random.default_rng(cfg.seed + 1)
    stream = BatchStream(x.shape[0], cfg.batch, rng)
    log = RunLog(meta={"method": "pam", "minibatch_sampling": "fresh batch per inner step"})
    start = time.perf_counter()
    for t in range(cfg.t_max):
        if not freeze_encoder:
            w_enc, b_enc = encoder_sgd_step(x, params, cfg, t, stream=stream)
            params = params.replace(w_enc=w_enc, b_enc=b_enc)
        codes = encode(x, params, cfg.activation)
        _, _, mu_d, nu_d = cfg.costs(t)
        w_dec, b_dec = decoder_closed_form(
            codes, x, params.w_dec, params.b_dec, mu_d, nu_d, cfg.alpha, cfg.beta
        )
        params = params.replace(w_dec=w_dec, b_dec=b_dec)
        log.records.append(_record(t + 1, params, cfg, x, x_test, start))
    log.params = params
    return params, log


def sgd_train(train, test, cfg, d=None, tied=False, params=None):
    """Plain Adam on all four parameter blocks jointly.

    ``t_max`` counts epochs; each epoch walks a fresh permutation of the
    training data in minibatches of ``cfg.batch``. With ``cfg.sgd_prox``
    the cost-to-move terms anchor each epoch to its starting parameters.
    """
    x = _as_array(train)
    x_test = _as_array(test) if test is not None else np.zeros((0, x.shape[1]))
    if x.shape[0] == 0:
        raise ContractError("training data is empty")
    if params is None:
        if d is None:
            raise ContractError("need either params or the code dimension d")
        params = init_params(
            x.shape[1], d, cfg.seed, cfg.init, x, tied=tied, unit_norm_dec=cfg.unit_norm_dec
        )
    cfg.activation.validate(params.d)
    tied = params.tied
    rng = np.random.default_rng(cfg.seed + 1)
    n_all = x.shape[0]
    work = {"w_enc": params.w_enc.copy(), "b_enc": params.b_enc.copy(), "b_dec": params.b_dec.copy()}
    if not tied:
        work["w_dec"] = params.w_dec.copy()
    opt = Adam(cfg.eta, cfg.adam_betas, cfg.adam_eps)
    log = RunLog(meta={"method": "sgd", "tied": tied})
    start = time.perf_counter()

    def current():
        return SaeParams(work["w_enc"], work["b_enc"], work.get("w_dec"), work["b_dec"], tied=tied)

    for epoch in range(cfg.t_max):
        anchor = {k: v.copy() for k, v in work.items()}
        mu_e, nu_e, mu_d, nu_d = cfg.costs(epoch)
        perm = rng.permutation(n_all)
        bsz = min(cfg.batch, n_all)
        for lo in range(0, n_all, bsz):
            idx = perm[lo : lo + bsz]
            _, g = sae_grads(x[idx], current(), cfg.activation, cfg.penalty, n_all / idx.size)
            g["w_enc"] = g["w_enc"] + 2.0 * cfg.enc_decay * work["w_enc"]
            if tied:
                g["w_enc"] = g["w_enc"] + 2.0 * cfg.alpha * work["w_enc"]
            else:
                g["w_dec"] = g["w_dec"] + 2.0 * cfg.alpha * work["w_dec"]
            g["b_dec"] = g["b_dec"] + 2.0 * cfg.beta * work["b_dec"]
            if cfg.sgd_prox:
                g["w_enc"] = g["w_enc"] + 2.0 * mu_e * (work["w_enc"] - anchor["w_enc"])
                g["b_enc"] = g["b_enc"] + 2.0 * nu_e * (work["b_enc"] - anchor["b_enc"])
                g["b_dec"] = g["b_dec"] + 2.0 * nu_d * (work["b_dec"] - anchor["b_dec"])
                if not tied:
                    g["w_dec"] = g["w_dec"] + 2.0 * mu_d * (work["w_dec"] - anchor["w_dec"])
            opt.step(work, g)
        log.records.append(_record(epoch + 1, current(), cfg, x, x_test, start))
    params = current().copy()
    log.params = params
    return params, log
