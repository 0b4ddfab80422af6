"""Event-driven recurrent language modeling with joint activity and weight
sparsity, plus exact multiply-accumulate accounting."""

__version__ = "0.1.0"
