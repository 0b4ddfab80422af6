"""Global unstructured magnitude pruning with an iterative schedule.

Weights are ranked by |w| across every tensor in scope at once, so layers
that matter keep proportionally more of their weights than a per-tensor
scheme would allow.  Masks only ever grow (no regrowth), embeddings and all
vector parameters stay out of scope, and `enforce_masks` re-zeros masked
entries after every optimizer step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, UsageError


@dataclass
class PruneScope:
    """Named prunable tensors; embeddings and biases are never added."""

    tensors: list  # of (name, MaskedMatrix)

    @classmethod
    def from_model(cls, model):
        return cls(tensors=model.masked_tensors())

    @property
    def total_weights(self):
        return sum(m.size for _, m in self.tensors)

    @property
    def masked_weights(self):
        return sum(m.size - m.nnz for _, m in self.tensors)

    @property
    def global_sparsity(self):
        return self.masked_weights / self.total_weights


@dataclass(frozen=True)
class PruneStep:
    target_sparsity: float
    finetune_epochs: int


@dataclass
class PruneSchedule:
    steps: list

    def __post_init__(self):
        targets = [s.target_sparsity for s in self.steps]
        if any(not (0 <= t < 1) for t in targets):
            raise ParameterError("target sparsities must lie in [0, 1)")
        if any(b <= a for a, b in zip(targets, targets[1:])):
            raise ParameterError("target sparsities must be strictly increasing")

    @classmethod
    def to_target(cls, target, increment=0.10, start=0.20, finetune_epochs=2):
        """Default ramp: `start`, then +`increment` per step, ending exactly
        at `target`."""
        targets = []
        t = start
        while t < target - 1e-12:
            targets.append(round(t, 10))
            t += increment
        targets.append(target)
        return cls([PruneStep(t, finetune_epochs) for t in targets])


def global_magnitude_prune(scope: PruneScope, target_sparsity: float) -> int:
    """Mask the globally smallest-magnitude kept weights until exactly
    ceil(target * N) of the N scoped weights are masked.

    Ties are broken by (tensor position in scope, row-major flat index),
    ascending.  Already-masked weights stay masked.  Returns the number of
    newly masked weights.
    """
    total = scope.total_weights
    already = scope.masked_weights
    want = math.ceil(target_sparsity * total)
    if want < already:
        raise UsageError(
            f"target sparsity {target_sparsity} is below current "
            f"{already / total:.4f}")
    k = want - already
    if k == 0:
        return 0

    mags, tensor_pos, flat_idx = [], [], []
    for pos, (_, m) in enumerate(scope.tensors):
        kept = np.flatnonzero(np.ascontiguousarray(m.mask).reshape(-1))
        vals = np.ascontiguousarray(m.values).reshape(-1)[kept]
        mags.append(np.abs(vals))
        tensor_pos.append(np.full(kept.size, pos, dtype=np.int64))
        flat_idx.append(kept)
    mags = np.concatenate(mags)
    tensor_pos = np.concatenate(tensor_pos)
    flat_idx = np.concatenate(flat_idx)

    order = np.lexsort((flat_idx, tensor_pos, mags))
    chosen = order[:k]
    for pos, (_, m) in enumerate(scope.tensors):
        sel = flat_idx[chosen[tensor_pos[chosen] == pos]]
        if sel.size:
            m.mask_out_flat(sel)
    return k


def enforce_masks(model):
    """Re-zero every masked weight; call after each optimizer step."""
    for _, m in model.masked_tensors():
        m.apply_mask()
    return model


def run_prune_schedule(model, schedule: PruneSchedule, finetune_fn, measure_fn):
    """Prune iteratively: for each step, prune to its target, fine-tune, and
    measure.

    finetune_fn(model, epochs) trains in place; measure_fn(model) returns a
    dict merged into each step's record.  Returns one record per step.
    """
    scope = PruneScope.from_model(model)
    records = []
    for step in schedule.steps:
        global_magnitude_prune(scope, step.target_sparsity)
        if step.finetune_epochs > 0:
            finetune_fn(model, step.finetune_epochs)
        record = {
            "target_sparsity": step.target_sparsity,
            "achieved_sparsity": scope.global_sparsity,
            "finetune_epochs": step.finetune_epochs,
        }
        record.update(measure_fn(model))
        records.append(record)
    return records
