"""Event-driven GRU cell: thresholded forward dynamics and hand-written BPTT.

The cell keeps a local state ``c`` and communicates a sparse state ``y``:
a unit transmits its value only while its pre-reset state crosses a learned
per-unit threshold, and the crossing subtracts the threshold from the local
state (spike-and-reset).  The step function is non-differentiable at the
crossing, so the backward pass substitutes a triangular surrogate derivative
for the step's; everywhere else the gradients are exact.

Two execution engines share the same math:

* per-sequence ops (`egru_forward_step` / `egru_forward_seq` /
  `egru_backward_seq`) move `EventVector` traffic through the event kernels
  and are the reference the tests pin down;
* batched ops (`egru_forward_batch` / `egru_backward_batch`) run (T, B, n)
  arrays through matrix products for training throughput and are tested for
  equivalence against the per-sequence ops.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ParameterError, ShapeError, UsageError
from .tensor import (
    EventVector,
    MaskedMatrix,
    densify,
    matvec_event,
    matvec_masked,
    sigmoid,
    to_event,
)

MATRIX_NAMES = ("w_ux", "w_uy", "w_rx", "w_ry", "w_zx", "w_zy")
VECTOR_NAMES = ("b_u", "b_r", "b_z", "thresholds")
RECURRENT_MATRIX_NAMES = ("w_uy", "w_ry", "w_zy")


def heaviside(x):
    """Unit step, elementwise; the boundary x == 0 maps to 1."""
    x = np.asarray(x)
    dt = x.dtype if np.issubdtype(x.dtype, np.floating) else np.float64
    return (x >= 0).astype(dt)


def surrogate_heaviside_grad(u, scale=1.0, width=1.0):
    """Triangular stand-in derivative for the step function.

    Peaks at `scale` for u = 0 and falls to zero at |u| = width.
    """
    if width <= 0:
        raise ParameterError("surrogate width must be positive")
    u = np.asarray(u)
    return scale * np.maximum(0.0, 1.0 - np.abs(u) / width)


@dataclass
class EgruParams:
    """All trainable tensors of one cell plus the surrogate settings."""

    w_ux: MaskedMatrix
    w_uy: MaskedMatrix
    w_rx: MaskedMatrix
    w_ry: MaskedMatrix
    w_zx: MaskedMatrix
    w_zy: MaskedMatrix
    b_u: np.ndarray
    b_r: np.ndarray
    b_z: np.ndarray
    thresholds: np.ndarray
    surrogate_scale: float = 1.0
    surrogate_width: float = 1.0

    MATRIX_NAMES = MATRIX_NAMES
    VECTOR_NAMES = VECTOR_NAMES
    RECURRENT_MATRIX_NAMES = RECURRENT_MATRIX_NAMES

    @property
    def hidden_dim(self):
        return self.w_uy.rows

    @property
    def input_dim(self):
        return self.w_ux.cols

    @classmethod
    def init(cls, input_dim, hidden_dim, rng, dtype=np.float32,
             surrogate_scale=1.0, surrogate_width=1.0):
        """Uniform(-1/sqrt(n), 1/sqrt(n)) weights, zero biases, thresholds in [0, 1)."""
        k = 1.0 / np.sqrt(hidden_dim)

        def mat(rows, cols):
            return MaskedMatrix(rng.uniform(-k, k, (rows, cols)).astype(dtype))

        return cls(
            w_ux=mat(hidden_dim, input_dim),
            w_uy=mat(hidden_dim, hidden_dim),
            w_rx=mat(hidden_dim, input_dim),
            w_ry=mat(hidden_dim, hidden_dim),
            w_zx=mat(hidden_dim, input_dim),
            w_zy=mat(hidden_dim, hidden_dim),
            b_u=np.zeros(hidden_dim, dtype=dtype),
            b_r=np.zeros(hidden_dim, dtype=dtype),
            b_z=np.zeros(hidden_dim, dtype=dtype),
            thresholds=rng.uniform(0.0, 1.0, hidden_dim).astype(dtype),
            surrogate_scale=surrogate_scale,
            surrogate_width=surrogate_width,
        )

    def named_matrices(self):
        return {name: getattr(self, name) for name in MATRIX_NAMES}

    def named_vectors(self):
        return {name: getattr(self, name) for name in VECTOR_NAMES}


@dataclass
class EgruState:
    """Dual recurrent state: local `c` plus the communicated events `y`."""

    c: np.ndarray
    y: EventVector

    @classmethod
    def zeros(cls, hidden_dim, dtype=np.float64):
        return cls(np.zeros(hidden_dim, dtype=dtype), EventVector.empty(hidden_dim, dtype))


@dataclass
class StepCache:
    """Everything the backward pass needs without re-running matvecs."""

    x: EventVector | np.ndarray
    y_prev: np.ndarray
    c_prev: np.ndarray
    u: np.ndarray
    r: np.ndarray
    z: np.ndarray
    c_tilde: np.ndarray
    spikes: np.ndarray


@dataclass
class EgruGrads:
    w_ux: np.ndarray
    w_uy: np.ndarray
    w_rx: np.ndarray
    w_ry: np.ndarray
    w_zx: np.ndarray
    w_zy: np.ndarray
    b_u: np.ndarray
    b_r: np.ndarray
    b_z: np.ndarray
    thresholds: np.ndarray

    @classmethod
    def zeros_like(cls, p: EgruParams, dtype=None):
        def z(a):
            return np.zeros(a.shape, dtype=dtype or a.dtype)

        return cls(*(z(getattr(p, n).values) for n in MATRIX_NAMES),
                   *(z(getattr(p, n)) for n in VECTOR_NAMES))

    def named(self):
        return {n: getattr(self, n) for n in MATRIX_NAMES + VECTOR_NAMES}


def _input_product(w, x, counter=None):
    # Layer inputs are EventVectors between event-driven layers but plain
    # dense vectors at the bottom of the stack (embeddings).
    if isinstance(x, EventVector):
        return matvec_event(w, x, counter)
    return matvec_masked(w, x, counter)


def egru_forward_step(p: EgruParams, x, state: EgruState, counter=None, probe=None):
    """One event-driven step; returns (new_state, cache).

    `x` may be an EventVector or a dense vector.  All products with the
    communicated state use the event kernel.  `counter` routes the kernels
    through their instrumented gather variants; `probe(name, matrix, input)`
    is called before each product for external accounting.
    """
    n = p.hidden_dim
    x_dim = x.dim if isinstance(x, EventVector) else np.asarray(x).shape[0]
    if x_dim != p.input_dim:
        raise ShapeError(f"input dim {x_dim} != cell input dim {p.input_dim}")
    if state.y.dim != n:
        raise ShapeError(f"state dim {state.y.dim} != hidden dim {n}")

    if probe is not None:
        probe("w_ux", p.w_ux, x)
        probe("w_uy", p.w_uy, state.y)
        probe("w_rx", p.w_rx, x)
        probe("w_ry", p.w_ry, state.y)
    a_u = _input_product(p.w_ux, x, counter) + matvec_event(p.w_uy, state.y, counter) + p.b_u
    a_r = _input_product(p.w_rx, x, counter) + matvec_event(p.w_ry, state.y, counter) + p.b_r
    u = sigmoid(a_u)
    r = sigmoid(a_r)

    # r gates the communicated state entrywise, so gating preserves the
    # event pattern (up to exact-zero products).
    ry_vals = r[state.y.indices] * state.y.values
    keep = ry_vals != 0
    ry = EventVector(n, state.y.indices[keep], ry_vals[keep])

    if probe is not None:
        probe("w_zx", p.w_zx, x)
        probe("w_zy", p.w_zy, ry)
    a_z = _input_product(p.w_zx, x, counter) + matvec_event(p.w_zy, ry, counter) + p.b_z
    z = np.tanh(a_z)

    c_tilde = u * z + (1.0 - u) * state.c
    if not np.all(np.isfinite(c_tilde)):
        raise NumericError("non-finite cell state")
    spikes = heaviside(c_tilde - p.thresholds)
    y = to_event(c_tilde * spikes)
    c = c_tilde - p.thresholds * spikes

    cache = StepCache(x=x, y_prev=densify(state.y), c_prev=state.c,
                      u=u, r=r, z=z, c_tilde=c_tilde, spikes=spikes)
    return EgruState(c, y), cache


def egru_forward_seq(p: EgruParams, inputs, state: EgruState, counter=None):
    """Fold the step left-to-right; returns (outputs, caches, final_state)."""
    outputs, caches = [], []
    for x in inputs:
        state, cache = egru_forward_step(p, x, state, counter)
        outputs.append(state.y)
        caches.append(cache)
    return outputs, caches, state


def egru_backward_seq(p: EgruParams, caches, grad_y):
    """Reverse-mode gradients through a cached forward pass.

    `grad_y[t]` is the dense loss gradient w.r.t. the emitted state y_t.
    Gradients flow through both the spike gate (surrogate) and the reset
    pathway; within the sequence nothing is truncated.

    Returns (EgruGrads, grad_x list).
    """
    if len(caches) != len(grad_y):
        raise UsageError(f"{len(caches)} caches but {len(grad_y)} output gradients")
    n = p.hidden_dim
    dtype = p.thresholds.dtype
    grads = EgruGrads.zeros_like(p)
    gy_rec = np.zeros(n, dtype=dtype)
    gc_rec = np.zeros(n, dtype=dtype)
    grad_x = [None] * len(caches)

    w_uy = p.w_uy.values
    w_ry = p.w_ry.values
    w_zy = p.w_zy.values

    for t in range(len(caches) - 1, -1, -1):
        cc = caches[t]
        gy = np.asarray(grad_y[t], dtype=dtype) + gy_rec
        gc = gc_rec

        hsg = surrogate_heaviside_grad(cc.c_tilde - p.thresholds,
                                       p.surrogate_scale, p.surrogate_width)
        # y = c~ * H(c~ - th)        -> dy/dc~ = H + c~ * H'
        # c = c~ - th * H(c~ - th)   -> dc/dc~ = 1 - th * H'
        g_ct = gy * (cc.spikes + cc.c_tilde * hsg) + gc * (1.0 - p.thresholds * hsg)
        grads.thresholds += gy * (-cc.c_tilde * hsg) + gc * (-cc.spikes + p.thresholds * hsg)

        g_u = g_ct * (cc.z - cc.c_prev)
        g_z = g_ct * cc.u
        gc_rec = g_ct * (1.0 - cc.u)

        g_az = g_z * (1.0 - cc.z * cc.z)
        g_ry = w_zy.T @ g_az                 # grad w.r.t. (r * y_prev)
        g_r = g_ry * cc.y_prev
        g_au = g_u * cc.u * (1.0 - cc.u)
        g_ar = g_r * cc.r * (1.0 - cc.r)

        x_dense = densify(cc.x) if isinstance(cc.x, EventVector) else np.asarray(cc.x)
        grads.w_ux += np.outer(g_au, x_dense)
        grads.w_uy += np.outer(g_au, cc.y_prev)
        grads.b_u += g_au
        grads.w_rx += np.outer(g_ar, x_dense)
        grads.w_ry += np.outer(g_ar, cc.y_prev)
        grads.b_r += g_ar
        grads.w_zx += np.outer(g_az, x_dense)
        grads.w_zy += np.outer(g_az, cc.r * cc.y_prev)
        grads.b_z += g_az

        gy_rec = w_uy.T @ g_au + w_ry.T @ g_ar + g_ry * cc.r
        grad_x[t] = p.w_ux.values.T @ g_au + p.w_rx.values.T @ g_ar + p.w_zx.values.T @ g_az

    return grads, grad_x


# ---------------------------------------------------------------------------
# Batched engine (training path)
# ---------------------------------------------------------------------------

@dataclass
class EgruBatchCache:
    xs: np.ndarray        # (T, B, d_in)
    c0: np.ndarray        # (B, n)
    y0: np.ndarray        # (B, n)
    u: np.ndarray         # (T, B, n)
    r: np.ndarray
    z: np.ndarray
    c_tilde: np.ndarray
    spikes: np.ndarray
    y: np.ndarray
    c: np.ndarray
    rec_drop: dict | None  # scaled DropConnect masks actually applied


def _effective(p, rec_drop, name):
    w = getattr(p, name).values
    if rec_drop is not None and name in rec_drop:
        return w * rec_drop[name]
    return w


def egru_forward_batch(p: EgruParams, xs, c0, y0, rec_drop=None):
    """Run a (T, B, d_in) segment; returns (y_seq, (c, y) final, cache).

    `rec_drop` optionally maps recurrent matrix names to already-scaled
    DropConnect masks applied for the whole segment.
    """
    xs = np.asarray(xs)
    T, B, d = xs.shape
    if d != p.input_dim:
        raise ShapeError(f"input dim {d} != cell input dim {p.input_dim}")
    n = p.hidden_dim
    dtype = xs.dtype

    wuy = _effective(p, rec_drop, "w_uy")
    wry = _effective(p, rec_drop, "w_ry")
    wzy = _effective(p, rec_drop, "w_zy")

    flat = xs.reshape(T * B, d)
    au_x = (flat @ p.w_ux.values.T).reshape(T, B, n)
    ar_x = (flat @ p.w_rx.values.T).reshape(T, B, n)
    az_x = (flat @ p.w_zx.values.T).reshape(T, B, n)

    U = np.empty((T, B, n), dtype=dtype)
    R = np.empty_like(U)
    Z = np.empty_like(U)
    CT = np.empty_like(U)
    S = np.empty_like(U)
    Y = np.empty_like(U)
    C = np.empty_like(U)

    c = np.asarray(c0, dtype=dtype)
    y = np.asarray(y0, dtype=dtype)
    th = p.thresholds
    for t in range(T):
        u = sigmoid(au_x[t] + y @ wuy.T + p.b_u)
        r = sigmoid(ar_x[t] + y @ wry.T + p.b_r)
        z = np.tanh(az_x[t] + (r * y) @ wzy.T + p.b_z)
        ct = u * z + (1.0 - u) * c
        s = (ct >= th).astype(dtype)
        y = ct * s
        c = ct - th * s
        U[t], R[t], Z[t], CT[t], S[t], Y[t], C[t] = u, r, z, ct, s, y, c

    if not np.all(np.isfinite(CT)):
        raise NumericError("non-finite cell state in batched forward")
    cache = EgruBatchCache(xs=xs, c0=np.asarray(c0, dtype=dtype), y0=np.asarray(y0, dtype=dtype),
                           u=U, r=R, z=Z, c_tilde=CT, spikes=S, y=Y, c=C, rec_drop=rec_drop)
    return Y, (c, y), cache


def egru_backward_batch(p: EgruParams, cache: EgruBatchCache, grad_y):
    """Batched BPTT; mirrors `egru_backward_seq` over (T, B, n) arrays.

    Returns (EgruGrads, grad_x of shape (T, B, d_in)).
    """
    T, B, n = cache.u.shape
    dtype = cache.u.dtype
    grad_y = np.asarray(grad_y, dtype=dtype)
    if grad_y.shape != (T, B, n):
        raise UsageError(f"grad_y shape {grad_y.shape} != {(T, B, n)}")

    wuy = _effective(p, cache.rec_drop, "w_uy")
    wry = _effective(p, cache.rec_drop, "w_ry")
    wzy = _effective(p, cache.rec_drop, "w_zy")
    th = p.thresholds

    GAU = np.empty((T, B, n), dtype=dtype)
    GAR = np.empty_like(GAU)
    GAZ = np.empty_like(GAU)
    gth = np.zeros(n, dtype=dtype)

    gy_rec = np.zeros((B, n), dtype=dtype)
    gc_rec = np.zeros((B, n), dtype=dtype)
    for t in range(T - 1, -1, -1):
        u, r, z = cache.u[t], cache.r[t], cache.z[t]
        ct, s = cache.c_tilde[t], cache.spikes[t]
        y_prev = cache.y0 if t == 0 else cache.y[t - 1]
        c_prev = cache.c0 if t == 0 else cache.c[t - 1]

        gy = grad_y[t] + gy_rec
        gc = gc_rec
        hsg = surrogate_heaviside_grad(ct - th, p.surrogate_scale, p.surrogate_width)
        g_ct = gy * (s + ct * hsg) + gc * (1.0 - th * hsg)
        gth += (gy * (-ct * hsg) + gc * (-s + th * hsg)).sum(axis=0)

        g_u = g_ct * (z - c_prev)
        g_z = g_ct * u
        gc_rec = g_ct * (1.0 - u)

        g_az = g_z * (1.0 - z * z)
        g_ry = g_az @ wzy
        g_r = g_ry * y_prev
        g_au = g_u * u * (1.0 - u)
        g_ar = g_r * r * (1.0 - r)

        gy_rec = g_au @ wuy + g_ar @ wry + g_ry * r
        GAU[t], GAR[t], GAZ[t] = g_au, g_ar, g_az

    y_prev_all = np.concatenate([cache.y0[None], cache.y[:-1]], axis=0).reshape(T * B, n)
    ry_all = (cache.r * np.concatenate([cache.y0[None], cache.y[:-1]], axis=0)).reshape(T * B, n)
    x_all = cache.xs.reshape(T * B, -1)
    gau = GAU.reshape(T * B, n)
    gar = GAR.reshape(T * B, n)
    gaz = GAZ.reshape(T * B, n)

    grads = EgruGrads(
        w_ux=gau.T @ x_all,
        w_uy=gau.T @ y_prev_all,
        w_rx=gar.T @ x_all,
        w_ry=gar.T @ y_prev_all,
        w_zx=gaz.T @ x_all,
        w_zy=gaz.T @ ry_all,
        b_u=gau.sum(axis=0),
        b_r=gar.sum(axis=0),
        b_z=gaz.sum(axis=0),
        thresholds=gth,
    )
    if cache.rec_drop is not None:
        for name in RECURRENT_MATRIX_NAMES:
            if name in cache.rec_drop:
                g = getattr(grads, name)
                g *= cache.rec_drop[name]
    grad_x = (gau @ p.w_ux.values + gar @ p.w_rx.values + gaz @ p.w_zx.values).reshape(cache.xs.shape)
    return grads, grad_x
