"""Exact multiply-accumulate accounting, activity-sparsity measurement,
perplexity, and the multiplicative reduction model.

Conventions: one MAC per scalar multiply inside a matrix-vector product;
elementwise gate arithmetic and nonlinearities are excluded.  A transform
fed by events costs the kept entries of its active columns only; a
transform fed by a dense vector costs all kept entries.  Reports exclude
the embedding lookup and decoder by default (recurrent network only); a
flag adds the decoder for end-to-end accounting (lookups cost no
multiplies).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import egru, lstm
from .tensor import EventVector, MacCounter, MaskedMatrix


def count_macs_event(w: MaskedMatrix, e: EventVector) -> int:
    """Multiplies performed by the event kernel: kept entries of active
    columns."""
    return int(w.nnz_per_column[e.indices].sum())


def count_macs_masked(w: MaskedMatrix) -> int:
    """Multiplies performed by the dense-activation kernel: all kept
    entries."""
    return w.nnz


def theoretical_fraction(lambda_a: float, lambda_w: float) -> float:
    """Fraction of dense-product operations that remain when only a
    `lambda_a` fraction of inputs is active over a matrix with `lambda_w`
    of its weights kept."""
    return lambda_a * lambda_w


def activity_sparsity(y_sequences) -> float:
    """1 - active/total over sequences of EventVectors."""
    active = 0
    total = 0
    for seq in y_sequences:
        for y in seq:
            active += y.n_active
            total += y.dim
    if total == 0:
        raise ValueError("no activity to measure")
    return 1.0 - active / total


def perplexity(mean_ce: float) -> float:
    return float(math.exp(mean_ce))


@dataclass
class MacEntry:
    layer: str
    matrix: str
    macs: int
    lambda_w: float


@dataclass
class MacLedger:
    """Per-transform exact MAC totals over a probe run."""

    entries: list = field(default_factory=list)
    steps_counted: int = 0
    lambda_a_per_layer: dict = field(default_factory=dict)

    @property
    def total_macs(self):
        return sum(e.macs for e in self.entries)

    @property
    def macs_per_step(self):
        return self.total_macs / self.steps_counted if self.steps_counted else 0.0

    def add(self, layer, matrix, macs, lambda_w):
        for e in self.entries:
            if e.layer == layer and e.matrix == matrix:
                e.macs += macs
                return
        self.entries.append(MacEntry(layer, matrix, macs, lambda_w))

    def rows(self):
        return [(e.layer, e.matrix, e.macs, e.macs / max(self.steps_counted, 1),
                 e.lambda_w) for e in self.entries]


class _LedgerProbe:
    """Analytic per-transform counter passed into the cell step functions."""

    def __init__(self, ledger, layer):
        self.ledger = ledger
        self.layer = layer

    def __call__(self, name, w, inp):
        if isinstance(inp, EventVector):
            macs = count_macs_event(w, inp)
        else:
            macs = count_macs_masked(w)
        self.ledger.add(self.layer, name, macs, w.keep_fraction)


def model_step_macs(model, batch, include_readout=False, counter: MacCounter | None = None):
    """Exact MAC ledger for an event-mode (per-sequence) forward over a
    (B, L) token batch in eval mode, averaged per timestep.

    With `counter`, the kernels run their instrumented gather variants and
    tally actual multiplies into it, independently of the analytic ledger.
    """
    batch = np.asarray(batch)
    if batch.ndim == 1:
        batch = batch[None, :]
    B, L = batch.shape
    ledger = MacLedger()
    is_egru = model.config.cell_kind == "egru"
    V = model.config.vocab_size

    active = np.zeros(len(model.cells), dtype=np.int64)
    total = np.zeros(len(model.cells), dtype=np.int64)
    readout_macs = 0

    for b in range(B):
        states = []
        for cell in model.cells:
            if is_egru:
                states.append(egru.EgruState.zeros(cell.hidden_dim, dtype=np.float64))
            else:
                states.append(lstm.LstmState.zeros(cell.hidden_dim, dtype=np.float64))
        for t in range(L):
            x = model.embedding[batch[b, t]].astype(np.float64)
            for i, cell in enumerate(model.cells):
                probe = _LedgerProbe(ledger, f"layer{i}")
                if is_egru:
                    states[i], _ = egru.egru_forward_step(
                        cell, x, states[i], counter=counter, probe=probe)
                    x = states[i].y
                    active[i] += states[i].y.n_active
                else:
                    states[i], _ = lstm.lstm_forward_step(
                        cell, x, states[i], counter=counter, probe=probe)
                    x = states[i].h
                    active[i] += states[i].h.size
                total[i] += cell.hidden_dim
            if include_readout:
                n_in = x.n_active if isinstance(x, EventVector) else x.size
                readout_macs += n_in * V

    ledger.steps_counted = B * L
    for i in range(len(model.cells)):
        ledger.lambda_a_per_layer[f"layer{i}"] = float(active[i] / total[i])
    if include_readout:
        ledger.add("readout", "decoder", readout_macs, 1.0)
    return ledger


@dataclass
class SweepRecord:
    """One row of a weight-decay sweep."""

    decay_w: float
    decay_b: float
    test_ppl: float
    activity_sparsity: float
    weight_mean: float
    weight_std: float
    bias_mean: float
    bias_std: float
    weight_quantiles: dict = field(default_factory=dict)
    bias_quantiles: dict = field(default_factory=dict)


def parameter_distribution_stats(model):
    """Mean/std/quantiles over kept cell weights and over vector
    parameters (biases and thresholds)."""
    weights = np.concatenate([m.values[m.mask] for _, m in model.masked_tensors()])
    vectors = []
    for cell in model.cells:
        for _, v in cell.named_vectors().items():
            vectors.append(np.asarray(v))
    biases = np.concatenate([v.ravel() for v in vectors])
    qs = (0.05, 0.25, 0.5, 0.75, 0.95)
    return {
        "weight_mean": float(weights.mean()),
        "weight_std": float(weights.std()),
        "bias_mean": float(biases.mean()),
        "bias_std": float(biases.std()),
        "weight_quantiles": {f"q{int(q * 100):02d}": float(np.quantile(weights, q)) for q in qs},
        "bias_quantiles": {f"q{int(q * 100):02d}": float(np.quantile(biases, q)) for q in qs},
    }
