"""Word-level corpus handling: vocabulary, encoding, continuous batching.

Text is whitespace-tokenized; every newline becomes an end-of-sentence
token.  The vocabulary is built from the training split only; anything
unseen maps to the unknown token at evaluation time.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

UNK = "<unk>"
EOS = "<eos>"


@dataclass
class Vocab:
    id_to_token: list
    token_to_id: dict = field(init=False)

    def __post_init__(self):
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        for special in (UNK, EOS):
            if special not in self.token_to_id:
                raise DataError(f"vocabulary is missing {special}")

    def __len__(self):
        return len(self.id_to_token)

    @property
    def unk_id(self):
        return self.token_to_id[UNK]

    @property
    def eos_id(self):
        return self.token_to_id[EOS]

    def lookup(self, token):
        return self.token_to_id.get(token, self.unk_id)

    def save(self, path):
        """One token per line; the line number is the id."""
        with open(path, "w", encoding="utf-8") as fh:
            for token in self.id_to_token:
                fh.write(token + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
        return cls(tokens)


def build_vocab(train_text: str) -> Vocab:
    """Vocabulary from the training split: specials first, then tokens by
    descending count with lexicographic tie-break."""
    counts = Counter()
    for line in train_text.splitlines():
        counts.update(line.split())
    if not counts:
        raise DataError("empty corpus")
    counts.pop(UNK, None)
    counts.pop(EOS, None)
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocab([UNK, EOS] + [t for t, _ in ordered])


def encode(text: str, vocab: Vocab) -> np.ndarray:
    """Token ids with <eos> appended at the end of every line."""
    ids = []
    for line in text.splitlines():
        ids.extend(vocab.lookup(tok) for tok in line.split())
        ids.append(vocab.eos_id)
    return np.asarray(ids, dtype=np.int32)


def decode(ids, vocab: Vocab) -> str:
    """Inverse of `encode` up to <unk> substitution and whitespace
    normalization."""
    lines, current = [], []
    for i in ids:
        token = vocab.id_to_token[int(i)]
        if token == EOS:
            lines.append(" ".join(current))
            current = []
        else:
            current.append(token)
    if current:
        lines.append(" ".join(current))
    return "\n".join(lines) + ("\n" if lines else "")


def load_tokens(path, vocab: Vocab) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        return encode(fh.read(), vocab)


@dataclass
class BatchCursor:
    """Token stream reshaped into `batch_size` parallel streams, iterated in
    segments of `seq_len`.

    Targets are inputs shifted by one inside each stream.  Recurrent state
    is meant to be carried across consecutive segments of one epoch; tail
    tokens that do not fill a full segment are dropped.
    """

    ids: np.ndarray
    batch_size: int
    seq_len: int

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.int32)
        if ids.size < self.batch_size * (self.seq_len + 1):
            raise DataError(
                f"corpus of {ids.size} tokens is too small for "
                f"batch_size={self.batch_size}, seq_len={self.seq_len}")
        stream_len = ids.size // self.batch_size
        self.streams = ids[:self.batch_size * stream_len].reshape(
            self.batch_size, stream_len)
        self.num_batches = (stream_len - 1) // self.seq_len

    def __iter__(self):
        for k in range(self.num_batches):
            i = k * self.seq_len
            yield (self.streams[:, i:i + self.seq_len],
                   self.streams[:, i + 1:i + 1 + self.seq_len])

    @property
    def tokens_per_epoch(self):
        return self.batch_size * self.seq_len * self.num_batches


def continuous_batches(ids, batch_size, seq_len):
    """Iterator of (inputs, targets) pairs, each of shape (B, L)."""
    return BatchCursor(ids, batch_size, seq_len)
