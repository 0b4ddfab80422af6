"""AdamW with decoupled weight decay, per-group decay rates, global gradient
clipping, and prune-mask awareness.

Matrices sit in the "weights" group and every vector parameter (gate biases,
thresholds, decoder bias) in the "biases" group, each with its own decay
rate.  Masked entries have their gradients zeroed before the moment update
so dead weights accumulate no momentum, and are re-zeroed after each step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ParameterError

WEIGHTS = "weights"
BIASES = "biases"


@dataclass
class ParamSlot:
    """One trainable tensor: its storage, optional prune mask, decay group."""

    name: str
    array: np.ndarray
    group: str
    mask: np.ndarray | None = None


@dataclass
class ParamGroups:
    """Shared Adam settings plus per-group decoupled decay rates."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay_w: float = 0.0
    decay_b: float = 0.0

    def decay_for(self, group):
        if group == WEIGHTS:
            return self.decay_w
        if group == BIASES:
            return self.decay_b
        raise ParameterError(f"unknown parameter group {group!r}")


@dataclass
class _Moments:
    m: np.ndarray
    v: np.ndarray


@dataclass
class AdamW:
    slots: list
    groups: ParamGroups
    step_count: int = 0
    _state: dict = field(default_factory=dict)

    def __post_init__(self):
        for slot in self.slots:
            self._state[slot.name] = _Moments(
                np.zeros_like(slot.array), np.zeros_like(slot.array))

    def step(self, grads):
        """One update from a dict name -> gradient array."""
        self.step_count += 1
        t = self.step_count
        gr = self.groups
        bc1 = 1.0 - gr.beta1 ** t
        bc2 = 1.0 - gr.beta2 ** t
        for slot in self.slots:
            g = grads[slot.name]
            if slot.mask is not None:
                g = g * slot.mask
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for {slot.name}")
            st = self._state[slot.name]
            st.m *= gr.beta1
            st.m += (1.0 - gr.beta1) * g
            st.v *= gr.beta2
            st.v += (1.0 - gr.beta2) * (g * g)
            m_hat = st.m / bc1
            v_hat = st.v / bc2
            decay = gr.decay_for(slot.group)
            slot.array -= gr.lr * (m_hat / (np.sqrt(v_hat) + gr.eps) + decay * slot.array)
            if slot.mask is not None:
                slot.array[~slot.mask] = 0


def clip_grad_norm(grads, max_norm):
    """Scale all gradients in place so their global L2 norm is <= max_norm.

    Returns the pre-clip norm.
    """
    if max_norm <= 0:
        raise ParameterError("max_norm must be positive")
    total = 0.0
    for g in grads.values():
        total += float(np.sum(np.square(g, dtype=np.float64)))
    norm = float(np.sqrt(total))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm
