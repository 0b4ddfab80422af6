"""Word-level language model: embedding, three stacked recurrent layers,
tied linear decoder, dropout and DropConnect regularization.

Layer dims run E -> H -> H -> E so the decoder can reuse the embedding
matrix transposed.  With event cells, all layer-to-layer and step-to-step
hidden traffic is activity-sparse; the bottom layer consumes dense
embedding vectors.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import egru, lstm
from .errors import ConfigError, DataError
from .optim import BIASES, WEIGHTS, ParamSlot

CELL_KINDS = ("egru", "lstm")


@dataclass
class LmConfig:
    vocab_size: int
    embed_dim: int = 64
    hidden_dim: int = 128
    num_layers: int = 3
    cell_kind: str = "egru"
    dropconnect_p: float = 0.0
    dropout_in_p: float = 0.0
    dropout_out_p: float = 0.0
    tie_weights: bool = True
    surrogate_scale: float = 1.0
    surrogate_width: float = 1.0

    def __post_init__(self):
        if self.cell_kind not in CELL_KINDS:
            raise ConfigError(f"cell_kind must be one of {CELL_KINDS}")
        if self.num_layers != 3:
            raise ConfigError("the stack is fixed at three layers")
        if min(self.vocab_size, self.embed_dim, self.hidden_dim) <= 0:
            raise ConfigError("dimensions must be positive")
        if not 0.0 <= self.dropconnect_p < 1.0:
            raise ConfigError("dropconnect_p must lie in [0, 1)")
        for name in ("dropout_in_p", "dropout_out_p"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")

    def layer_dims(self):
        E, H = self.embed_dim, self.hidden_dim
        return [(E, H), (H, H), (H, E)]

    def to_dict(self):
        return asdict(self)


class LmModel:
    """Parameters plus stateless forward/backward helpers.

    Recurrent state lives outside the model (carried by the caller across
    segments), so a model instance can serve concurrent evaluations.
    """

    def __init__(self, config: LmConfig, rng=None, dtype=np.float32):
        if rng is None:
            rng = np.random.default_rng(0)
        self.config = config
        self.dtype = np.dtype(dtype)
        V, E = config.vocab_size, config.embed_dim
        self.embedding = rng.uniform(-0.1, 0.1, (V, E)).astype(dtype)
        self.decoder_bias = np.zeros(V, dtype=dtype)
        self.decoder_weight = None if config.tie_weights else \
            rng.uniform(-0.1, 0.1, (V, E)).astype(dtype)
        self.cells = []
        for d_in, d_out in config.layer_dims():
            if config.cell_kind == "egru":
                cell = egru.EgruParams.init(
                    d_in, d_out, rng, dtype=dtype,
                    surrogate_scale=config.surrogate_scale,
                    surrogate_width=config.surrogate_width)
            else:
                cell = lstm.LstmParams.init(d_in, d_out, rng, dtype=dtype)
            self.cells.append(cell)

    @property
    def cell_module(self):
        return egru if self.config.cell_kind == "egru" else lstm

    def decoder_matrix(self):
        return self.embedding if self.config.tie_weights else self.decoder_weight

    def zero_state(self, batch_size):
        """Per-layer recurrent state: (c, y) for event cells, (h, cell) for
        the LSTM; both are pairs of (B, n) arrays."""
        state = []
        for cell in self.cells:
            n = cell.hidden_dim
            state.append((np.zeros((batch_size, n), dtype=self.dtype),
                          np.zeros((batch_size, n), dtype=self.dtype)))
        return state

    def param_slots(self):
        slots = [ParamSlot("embedding", self.embedding, WEIGHTS)]
        if self.decoder_weight is not None:
            slots.append(ParamSlot("decoder_weight", self.decoder_weight, WEIGHTS))
        slots.append(ParamSlot("decoder_bias", self.decoder_bias, BIASES))
        for i, cell in enumerate(self.cells):
            for name, m in cell.named_matrices().items():
                slots.append(ParamSlot(f"layer{i}.{name}", m.values, WEIGHTS, m.mask))
            for name, vec in cell.named_vectors().items():
                slots.append(ParamSlot(f"layer{i}.{name}", vec, BIASES))
        return slots

    def masked_tensors(self):
        """Prunable tensors only: cell matrices, never embeddings or vectors."""
        out = []
        for i, cell in enumerate(self.cells):
            for name, m in cell.named_matrices().items():
                out.append((f"layer{i}.{name}", m))
        return out

    def weight_sparsity(self):
        tensors = self.masked_tensors()
        total = sum(m.size for _, m in tensors)
        nnz = sum(m.nnz for _, m in tensors)
        return 1.0 - nnz / total


def sample_dropconnect(cell, p, rng):
    """Bernoulli(1-p) keep masks for the recurrent matrices of one cell.

    Sampled once per segment and reused across its timesteps; composes
    multiplicatively with prune masks because pruned weights are already
    exact zeros.
    """
    if not 0.0 <= p < 1.0:
        raise ConfigError("dropconnect_p must lie in [0, 1)")
    masks = {}
    for name in cell.RECURRENT_MATRIX_NAMES:
        shape = getattr(cell, name).shape
        masks[name] = (rng.random(shape) >= p)
    return masks


@dataclass
class LmForward:
    logits: np.ndarray        # (B, L, V)
    loss: float | None
    state: list
    layer_caches: list
    flat_out: np.ndarray      # (L*B, E) decoder input after output dropout
    probs: np.ndarray | None  # (L*B, V) softmax, kept for the backward pass
    inputs: np.ndarray        # (B, L)
    targets: np.ndarray | None
    drop_in: np.ndarray | None
    drop_out: np.ndarray | None
    layer_activity: list      # fraction of nonzero outputs per layer


def lm_forward(model: LmModel, inputs, targets=None, state=None,
               train=False, rng=None):
    """Run a (B, L) token batch; returns logits, mean cross-entropy, state.

    Targets are the inputs shifted by one position (the data pipeline
    provides both).  In eval mode the pass is deterministic.
    """
    cfg = model.config
    inputs = np.asarray(inputs)
    B, L = inputs.shape
    if inputs.min() < 0 or inputs.max() >= cfg.vocab_size:
        raise DataError("token id out of vocabulary range")
    if state is None:
        state = model.zero_state(B)
    if train and rng is None:
        raise ConfigError("training mode needs an rng for regularization")

    x = model.embedding[inputs.T].astype(model.dtype, copy=True)  # (L, B, E)
    drop_in = None
    if train and cfg.dropout_in_p > 0:
        drop_in = (rng.random(x.shape) >= cfg.dropout_in_p).astype(model.dtype)
        drop_in /= (1.0 - cfg.dropout_in_p) if cfg.dropout_in_p < 1 else 1.0
        x = x * drop_in

    layer_caches = []
    new_state = []
    layer_activity = []
    for i, cell in enumerate(model.cells):
        rec_drop = None
        if train and cfg.dropconnect_p > 0:
            keep = sample_dropconnect(cell, cfg.dropconnect_p, rng)
            scale = model.dtype.type(1.0 / (1.0 - cfg.dropconnect_p))
            rec_drop = {k: v.astype(model.dtype) * scale for k, v in keep.items()}
        s0, s1 = state[i]
        if cfg.cell_kind == "egru":
            y_seq, (c, y), cache = egru.egru_forward_batch(cell, x, s0, s1, rec_drop)
            new_state.append((c, y))
        else:
            y_seq, (h, c), cache = lstm.lstm_forward_batch(cell, x, s0, s1, rec_drop)
            new_state.append((h, c))
        layer_caches.append(cache)
        layer_activity.append(float(np.count_nonzero(y_seq)) / y_seq.size)
        x = y_seq

    drop_out = None
    if train and cfg.dropout_out_p > 0:
        drop_out = (rng.random(x.shape) >= cfg.dropout_out_p).astype(model.dtype)
        drop_out /= (1.0 - cfg.dropout_out_p) if cfg.dropout_out_p < 1 else 1.0
        x = x * drop_out

    E = cfg.embed_dim
    flat = x.reshape(L * B, E)
    logits = flat @ model.decoder_matrix().T + model.decoder_bias  # (L*B, V)

    loss = None
    probs = None
    targets_arr = None
    if targets is not None:
        targets_arr = np.asarray(targets)
        if targets_arr.shape != (B, L):
            raise DataError("targets shape must match inputs")
        tflat = targets_arr.T.reshape(-1)
        m = logits.max(axis=1, keepdims=True)
        shifted = logits - m
        exp = np.exp(shifted)
        denom = exp.sum(axis=1, keepdims=True)
        logprobs = shifted - np.log(denom)
        loss = float(-logprobs[np.arange(tflat.size), tflat].mean())
        probs = exp / denom

    logits_blv = logits.reshape(L, B, -1).transpose(1, 0, 2)
    return LmForward(logits=logits_blv, loss=loss, state=new_state,
                     layer_caches=layer_caches, flat_out=flat, probs=probs,
                     inputs=inputs, targets=targets_arr,
                     drop_in=drop_in, drop_out=drop_out,
                     layer_activity=layer_activity)


def lm_backward(model: LmModel, fwd: LmForward):
    """Gradients of the mean cross-entropy; returns a dict matching
    `param_slots` names.  Tied weights accumulate decoder and lookup terms
    into the one embedding gradient."""
    cfg = model.config
    B, L = fwd.inputs.shape
    NT = B * L
    tflat = fwd.targets.T.reshape(-1)

    dlogits = fwd.probs.copy()
    dlogits[np.arange(NT), tflat] -= 1.0
    dlogits /= NT
    dlogits = dlogits.astype(model.dtype)

    grads = {"decoder_bias": dlogits.sum(axis=0)}
    dec_grad = dlogits.T @ fwd.flat_out  # (V, E)
    g_flat = dlogits @ model.decoder_matrix()  # (L*B, E)
    g_x = g_flat.reshape(L, B, cfg.embed_dim)
    if fwd.drop_out is not None:
        g_x = g_x * fwd.drop_out

    backward = (egru.egru_backward_batch if cfg.cell_kind == "egru"
                else lstm.lstm_backward_batch)
    for i in range(len(model.cells) - 1, -1, -1):
        cell_grads, g_x = backward(model.cells[i], fwd.layer_caches[i], g_x)
        for name, g in cell_grads.named().items():
            grads[f"layer{i}.{name}"] = g

    if fwd.drop_in is not None:
        g_x = g_x * fwd.drop_in
    emb_grad = np.zeros_like(model.embedding)
    np.add.at(emb_grad, fwd.inputs.T.reshape(-1), g_x.reshape(NT, cfg.embed_dim))
    if cfg.tie_weights:
        emb_grad += dec_grad
        grads["embedding"] = emb_grad
    else:
        grads["embedding"] = emb_grad
        grads["decoder_weight"] = dec_grad
    return grads
