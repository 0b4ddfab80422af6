"""Deterministic synthetic word-level corpus.

The repository cannot bundle the usual language-modeling datasets, so for
desk-scale experiments we generate a corpus with the statistical features
that matter to a word-level recurrent model: a Zipfian vocabulary of around
900 types, topical paragraphs (long-range state), templated syntax
(local structure), and verb-conditioned object choice (pairwise structure
that costs model capacity).  Everything is a pure function of the seed.
"""

from __future__ import annotations

import numpy as np

DETERMINERS = ["the", "a", "this", "that", "each", "some"]
PREPOSITIONS = ["in", "on", "under", "near", "through", "with", "from", "beyond"]
PRONOUNS = ["it", "they", "we", "one"]
AUXILIARIES = ["was", "were", "is", "are", "had", "could"]
FUNCTION_WORDS = set(DETERMINERS + PREPOSITIONS + PRONOUNS + AUXILIARIES + [".", ","])

_ONSETS = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
           "br", "dr", "gr", "kl", "pl", "st", "tr", "sk"]
_NUCLEI = ["a", "e", "i", "o", "u", "ai", "ea", "ou"]
_CODAS = ["", "n", "r", "s", "t", "l", "nd", "rk", "sh", "m"]

N_TOPICS = 6
_ZIPF_S = 1.05


def _pseudo_words(count):
    words = []
    for coda in _CODAS:
        for nucleus in _NUCLEI:
            for onset in _ONSETS:
                w = onset + nucleus + coda
                if w not in FUNCTION_WORDS:
                    words.append(w)
                if len(words) == count:
                    return words
    raise ValueError("syllable inventory exhausted")


_ALL = _pseudo_words(870)
NOUNS = _ALL[:430]
VERBS = _ALL[430:660]
ADJECTIVES = _ALL[660:800]
ADVERBS = _ALL[800:870]


def _zipf(n, s=_ZIPF_S):
    p = 1.0 / np.arange(1, n + 1) ** s
    return p / p.sum()


class _TopicSampler:
    """Per-topic permutations over shared word inventories, Zipf-ranked."""

    def __init__(self, seed):
        root = np.random.SeedSequence(seed)
        self.rng = np.random.default_rng(root.spawn(1)[0])
        perm_rng = np.random.default_rng(root.spawn(2)[1])
        self.noun_perm = [perm_rng.permutation(len(NOUNS)) for _ in range(N_TOPICS)]
        self.verb_perm = [perm_rng.permutation(len(VERBS)) for _ in range(N_TOPICS)]
        self.adj_perm = [perm_rng.permutation(len(ADJECTIVES)) for _ in range(N_TOPICS)]
        self.noun_p = _zipf(len(NOUNS))
        self.verb_p = _zipf(len(VERBS))
        self.adj_p = _zipf(len(ADJECTIVES))
        self.adv_p = _zipf(len(ADVERBS))

    def noun(self, topic):
        return NOUNS[self.noun_perm[topic][self.rng.choice(len(NOUNS), p=self.noun_p)]]

    def object_noun(self, topic, verb_index):
        # The verb shifts the object distribution, so predicting the object
        # well requires modeling verb/noun interactions, not just the topic.
        rank = self.rng.choice(len(NOUNS), p=self.noun_p)
        return NOUNS[self.noun_perm[topic][(rank + 37 * verb_index) % len(NOUNS)]]

    def verb(self, topic):
        idx = self.verb_perm[topic][self.rng.choice(len(VERBS), p=self.verb_p)]
        return VERBS[idx], int(idx)

    def adjective(self, topic):
        return ADJECTIVES[self.adj_perm[topic][self.rng.choice(len(ADJECTIVES), p=self.adj_p)]]

    def adverb(self):
        return ADVERBS[self.rng.choice(len(ADVERBS), p=self.adv_p)]

    def choice(self, seq):
        return seq[self.rng.integers(len(seq))]

    def random(self):
        return self.rng.random()

    def integers(self, low, high):
        return int(self.rng.integers(low, high))


def _sentence(s: _TopicSampler, topic):
    det = s.choice(DETERMINERS)
    det2 = s.choice(DETERMINERS)
    template = s.integers(0, 5)
    if template == 0:
        verb, vi = s.verb(topic)
        words = [det, s.noun(topic), verb, det2, s.object_noun(topic, vi)]
    elif template == 1:
        verb, vi = s.verb(topic)
        words = [det, s.adjective(topic), s.noun(topic), verb, det2,
                 s.object_noun(topic, vi)]
    elif template == 2:
        verb, vi = s.verb(topic)
        words = [det, s.noun(topic), verb, s.choice(PREPOSITIONS), det2,
                 s.object_noun(topic, vi)]
    elif template == 3:
        verb, _ = s.verb(topic)
        words = [s.choice(PRONOUNS), s.choice(AUXILIARIES), s.adverb(), verb]
    else:
        verb, vi = s.verb(topic)
        words = [det, s.noun(topic), s.choice(AUXILIARIES), verb,
                 s.choice(PREPOSITIONS), det2, s.adjective(topic),
                 s.object_noun(topic, vi)]
    if s.random() < 0.15:
        words.extend([",", s.adverb()])
    words.append(".")
    return words


def generate_text(n_tokens, seed):
    """At least `n_tokens` whitespace-separated tokens, one sentence per line."""
    s = _TopicSampler(seed)
    topic = s.integers(0, N_TOPICS)
    lines = []
    count = 0
    while count < n_tokens:
        if s.random() > 0.75:
            topic = s.integers(0, N_TOPICS)
        for _ in range(s.integers(3, 8)):
            words = _sentence(s, topic)
            lines.append(" ".join(words))
            count += len(words) + 1  # sentence end adds one token downstream
    return "\n".join(lines) + "\n"


def write_splits(directory, train_tokens=200_000, valid_tokens=20_000,
                 test_tokens=20_000, seed=20240501):
    """Write train/valid/test files; each split is an independent stream of
    the same process."""
    import os

    os.makedirs(directory, exist_ok=True)
    paths = {}
    for name, n, offset in (("train", train_tokens, 0),
                            ("valid", valid_tokens, 1),
                            ("test", test_tokens, 2)):
        path = os.path.join(directory, f"{name}.txt")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(generate_text(n, seed + offset))
        paths[name] = path
    return paths
