"""Densely activated LSTM baseline with the same masking and counting hooks.

Everything is smooth, so the backward pass is exact (no surrogate).  The
cell mirrors the event cell's API: per-sequence reference ops plus a batched
training engine, both over `MaskedMatrix` weights so pruning code stays
cell-agnostic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ShapeError, UsageError
from .tensor import MaskedMatrix, matvec_masked, sigmoid

MATRIX_NAMES = ("w_ix", "w_fx", "w_gx", "w_ox", "w_ih", "w_fh", "w_gh", "w_oh")
VECTOR_NAMES = ("b_i", "b_f", "b_g", "b_o")
RECURRENT_MATRIX_NAMES = ("w_ih", "w_fh", "w_gh", "w_oh")


@dataclass
class LstmParams:
    w_ix: MaskedMatrix
    w_fx: MaskedMatrix
    w_gx: MaskedMatrix
    w_ox: MaskedMatrix
    w_ih: MaskedMatrix
    w_fh: MaskedMatrix
    w_gh: MaskedMatrix
    w_oh: MaskedMatrix
    b_i: np.ndarray
    b_f: np.ndarray
    b_g: np.ndarray
    b_o: np.ndarray

    MATRIX_NAMES = MATRIX_NAMES
    VECTOR_NAMES = VECTOR_NAMES
    RECURRENT_MATRIX_NAMES = RECURRENT_MATRIX_NAMES

    @property
    def hidden_dim(self):
        return self.w_ih.rows

    @property
    def input_dim(self):
        return self.w_ix.cols

    @classmethod
    def init(cls, input_dim, hidden_dim, rng, dtype=np.float32, forget_bias=1.0):
        k = 1.0 / np.sqrt(hidden_dim)

        def mat(rows, cols):
            return MaskedMatrix(rng.uniform(-k, k, (rows, cols)).astype(dtype))

        b_f = np.full(hidden_dim, forget_bias, dtype=dtype)
        return cls(
            w_ix=mat(hidden_dim, input_dim), w_fx=mat(hidden_dim, input_dim),
            w_gx=mat(hidden_dim, input_dim), w_ox=mat(hidden_dim, input_dim),
            w_ih=mat(hidden_dim, hidden_dim), w_fh=mat(hidden_dim, hidden_dim),
            w_gh=mat(hidden_dim, hidden_dim), w_oh=mat(hidden_dim, hidden_dim),
            b_i=np.zeros(hidden_dim, dtype=dtype), b_f=b_f,
            b_g=np.zeros(hidden_dim, dtype=dtype), b_o=np.zeros(hidden_dim, dtype=dtype),
        )

    def named_matrices(self):
        return {name: getattr(self, name) for name in MATRIX_NAMES}

    def named_vectors(self):
        return {name: getattr(self, name) for name in VECTOR_NAMES}


@dataclass
class LstmState:
    h: np.ndarray
    cell: np.ndarray

    @classmethod
    def zeros(cls, hidden_dim, dtype=np.float64):
        return cls(np.zeros(hidden_dim, dtype=dtype), np.zeros(hidden_dim, dtype=dtype))


@dataclass
class LstmStepCache:
    x: np.ndarray
    h_prev: np.ndarray
    cell_prev: np.ndarray
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    cell: np.ndarray
    tanh_cell: np.ndarray


@dataclass
class LstmGrads:
    w_ix: np.ndarray
    w_fx: np.ndarray
    w_gx: np.ndarray
    w_ox: np.ndarray
    w_ih: np.ndarray
    w_fh: np.ndarray
    w_gh: np.ndarray
    w_oh: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_g: np.ndarray
    b_o: np.ndarray

    @classmethod
    def zeros_like(cls, p: LstmParams):
        return cls(*(np.zeros(getattr(p, n).values.shape, getattr(p, n).values.dtype)
                     for n in MATRIX_NAMES),
                   *(np.zeros_like(getattr(p, n)) for n in VECTOR_NAMES))

    def named(self):
        return {n: getattr(self, n) for n in MATRIX_NAMES + VECTOR_NAMES}


def lstm_forward_step(p: LstmParams, x, state: LstmState, counter=None, probe=None):
    """One dense step; returns (new_state, cache).  All matvecs are masked.

    `counter` routes the kernels through their instrumented gather variants;
    `probe(name, matrix, input)` is called before each product."""
    x = np.asarray(x)
    if x.shape != (p.input_dim,):
        raise ShapeError(f"input shape {x.shape} != ({p.input_dim},)")
    if state.h.shape != (p.hidden_dim,):
        raise ShapeError("state dim mismatch")

    if probe is not None:
        for name in ("w_ix", "w_fx", "w_gx", "w_ox"):
            probe(name, getattr(p, name), x)
        for name in ("w_ih", "w_fh", "w_gh", "w_oh"):
            probe(name, getattr(p, name), state.h)
    i = sigmoid(matvec_masked(p.w_ix, x, counter) + matvec_masked(p.w_ih, state.h, counter) + p.b_i)
    f = sigmoid(matvec_masked(p.w_fx, x, counter) + matvec_masked(p.w_fh, state.h, counter) + p.b_f)
    g = np.tanh(matvec_masked(p.w_gx, x, counter) + matvec_masked(p.w_gh, state.h, counter) + p.b_g)
    o = sigmoid(matvec_masked(p.w_ox, x, counter) + matvec_masked(p.w_oh, state.h, counter) + p.b_o)

    cell = f * state.cell + i * g
    if not np.all(np.isfinite(cell)):
        raise NumericError("non-finite cell state")
    tc = np.tanh(cell)
    h = o * tc
    cache = LstmStepCache(x=x, h_prev=state.h, cell_prev=state.cell,
                          i=i, f=f, g=g, o=o, cell=cell, tanh_cell=tc)
    return LstmState(h, cell), cache


def lstm_forward_seq(p: LstmParams, inputs, state: LstmState, counter=None):
    outputs, caches = [], []
    for x in inputs:
        state, cache = lstm_forward_step(p, x, state, counter)
        outputs.append(state.h)
        caches.append(cache)
    return outputs, caches, state


def lstm_backward_seq(p: LstmParams, caches, grad_h):
    """Exact reverse-mode gradients; returns (LstmGrads, grad_x list)."""
    if len(caches) != len(grad_h):
        raise UsageError(f"{len(caches)} caches but {len(grad_h)} output gradients")
    n = p.hidden_dim
    dtype = p.b_i.dtype
    grads = LstmGrads.zeros_like(p)
    gh_rec = np.zeros(n, dtype=dtype)
    gcell_rec = np.zeros(n, dtype=dtype)
    grad_x = [None] * len(caches)

    for t in range(len(caches) - 1, -1, -1):
        cc = caches[t]
        gh = np.asarray(grad_h[t], dtype=dtype) + gh_rec
        go = gh * cc.tanh_cell
        gcell = gcell_rec + gh * cc.o * (1.0 - cc.tanh_cell ** 2)
        gi = gcell * cc.g
        gf = gcell * cc.cell_prev
        gg = gcell * cc.i
        gcell_rec = gcell * cc.f

        g_ai = gi * cc.i * (1.0 - cc.i)
        g_af = gf * cc.f * (1.0 - cc.f)
        g_ag = gg * (1.0 - cc.g ** 2)
        g_ao = go * cc.o * (1.0 - cc.o)

        grads.w_ix += np.outer(g_ai, cc.x)
        grads.w_fx += np.outer(g_af, cc.x)
        grads.w_gx += np.outer(g_ag, cc.x)
        grads.w_ox += np.outer(g_ao, cc.x)
        grads.w_ih += np.outer(g_ai, cc.h_prev)
        grads.w_fh += np.outer(g_af, cc.h_prev)
        grads.w_gh += np.outer(g_ag, cc.h_prev)
        grads.w_oh += np.outer(g_ao, cc.h_prev)
        grads.b_i += g_ai
        grads.b_f += g_af
        grads.b_g += g_ag
        grads.b_o += g_ao

        gh_rec = (p.w_ih.values.T @ g_ai + p.w_fh.values.T @ g_af
                  + p.w_gh.values.T @ g_ag + p.w_oh.values.T @ g_ao)
        grad_x[t] = (p.w_ix.values.T @ g_ai + p.w_fx.values.T @ g_af
                     + p.w_gx.values.T @ g_ag + p.w_ox.values.T @ g_ao)

    return grads, grad_x


# ---------------------------------------------------------------------------
# Batched engine (training path)
# ---------------------------------------------------------------------------

@dataclass
class LstmBatchCache:
    xs: np.ndarray
    h0: np.ndarray
    cell0: np.ndarray
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    cell: np.ndarray
    tanh_cell: np.ndarray
    h: np.ndarray
    rec_drop: dict | None


def _effective(p, rec_drop, name):
    w = getattr(p, name).values
    if rec_drop is not None and name in rec_drop:
        return w * rec_drop[name]
    return w


def lstm_forward_batch(p: LstmParams, xs, h0, cell0, rec_drop=None):
    xs = np.asarray(xs)
    T, B, d = xs.shape
    if d != p.input_dim:
        raise ShapeError(f"input dim {d} != cell input dim {p.input_dim}")
    n = p.hidden_dim
    dtype = xs.dtype

    wih = _effective(p, rec_drop, "w_ih")
    wfh = _effective(p, rec_drop, "w_fh")
    wgh = _effective(p, rec_drop, "w_gh")
    woh = _effective(p, rec_drop, "w_oh")

    flat = xs.reshape(T * B, d)
    ai_x = (flat @ p.w_ix.values.T).reshape(T, B, n)
    af_x = (flat @ p.w_fx.values.T).reshape(T, B, n)
    ag_x = (flat @ p.w_gx.values.T).reshape(T, B, n)
    ao_x = (flat @ p.w_ox.values.T).reshape(T, B, n)

    I = np.empty((T, B, n), dtype=dtype)
    F = np.empty_like(I)
    G = np.empty_like(I)
    O = np.empty_like(I)
    CELL = np.empty_like(I)
    TC = np.empty_like(I)
    H = np.empty_like(I)

    h = np.asarray(h0, dtype=dtype)
    cell = np.asarray(cell0, dtype=dtype)
    for t in range(T):
        i = sigmoid(ai_x[t] + h @ wih.T + p.b_i)
        f = sigmoid(af_x[t] + h @ wfh.T + p.b_f)
        g = np.tanh(ag_x[t] + h @ wgh.T + p.b_g)
        o = sigmoid(ao_x[t] + h @ woh.T + p.b_o)
        cell = f * cell + i * g
        tc = np.tanh(cell)
        h = o * tc
        I[t], F[t], G[t], O[t], CELL[t], TC[t], H[t] = i, f, g, o, cell, tc, h

    if not np.all(np.isfinite(CELL)):
        raise NumericError("non-finite cell state in batched forward")
    cache = LstmBatchCache(xs=xs, h0=np.asarray(h0, dtype=dtype), cell0=np.asarray(cell0, dtype=dtype),
                           i=I, f=F, g=G, o=O, cell=CELL, tanh_cell=TC, h=H, rec_drop=rec_drop)
    return H, (h, cell), cache


def lstm_backward_batch(p: LstmParams, cache: LstmBatchCache, grad_h):
    T, B, n = cache.i.shape
    dtype = cache.i.dtype
    grad_h = np.asarray(grad_h, dtype=dtype)
    if grad_h.shape != (T, B, n):
        raise UsageError(f"grad_h shape {grad_h.shape} != {(T, B, n)}")

    wih = _effective(p, cache.rec_drop, "w_ih")
    wfh = _effective(p, cache.rec_drop, "w_fh")
    wgh = _effective(p, cache.rec_drop, "w_gh")
    woh = _effective(p, cache.rec_drop, "w_oh")

    GAI = np.empty((T, B, n), dtype=dtype)
    GAF = np.empty_like(GAI)
    GAG = np.empty_like(GAI)
    GAO = np.empty_like(GAI)

    gh_rec = np.zeros((B, n), dtype=dtype)
    gcell_rec = np.zeros((B, n), dtype=dtype)
    for t in range(T - 1, -1, -1):
        i, f, g, o = cache.i[t], cache.f[t], cache.g[t], cache.o[t]
        tc = cache.tanh_cell[t]
        cell_prev = cache.cell0 if t == 0 else cache.cell[t - 1]

        gh = grad_h[t] + gh_rec
        go = gh * tc
        gcell = gcell_rec + gh * o * (1.0 - tc * tc)
        gi = gcell * g
        gf = gcell * cell_prev
        gg = gcell * i
        gcell_rec = gcell * f

        g_ai = gi * i * (1.0 - i)
        g_af = gf * f * (1.0 - f)
        g_ag = gg * (1.0 - g * g)
        g_ao = go * o * (1.0 - o)

        gh_rec = g_ai @ wih + g_af @ wfh + g_ag @ wgh + g_ao @ woh
        GAI[t], GAF[t], GAG[t], GAO[t] = g_ai, g_af, g_ag, g_ao

    h_prev_all = np.concatenate([cache.h0[None], cache.h[:-1]], axis=0).reshape(T * B, n)
    x_all = cache.xs.reshape(T * B, -1)
    gai = GAI.reshape(T * B, n)
    gaf = GAF.reshape(T * B, n)
    gag = GAG.reshape(T * B, n)
    gao = GAO.reshape(T * B, n)

    grads = LstmGrads(
        w_ix=gai.T @ x_all, w_fx=gaf.T @ x_all, w_gx=gag.T @ x_all, w_ox=gao.T @ x_all,
        w_ih=gai.T @ h_prev_all, w_fh=gaf.T @ h_prev_all,
        w_gh=gag.T @ h_prev_all, w_oh=gao.T @ h_prev_all,
        b_i=gai.sum(axis=0), b_f=gaf.sum(axis=0), b_g=gag.sum(axis=0), b_o=gao.sum(axis=0),
    )
    if cache.rec_drop is not None:
        for name in RECURRENT_MATRIX_NAMES:
            if name in cache.rec_drop:
                g = getattr(grads, name)
                g *= cache.rec_drop[name]
    grad_x = (gai @ p.w_ix.values + gaf @ p.w_fx.values
              + gag @ p.w_gx.values + gao @ p.w_ox.values).reshape(cache.xs.shape)
    return grads, grad_x
