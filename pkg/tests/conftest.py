"""Shared fixtures and reference implementations used as test oracles.

BLAS threading is pinned to one thread before anything numerical runs so
that every assertion in the suite is reproducible bit for bit.
"""

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

_BLAS_LIMIT = threadpool_limits(limits=1, user_api="blas")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_masked(rng, rows, cols, keep=0.5, dtype=np.float64, scale=1.0):
    """Random MaskedMatrix with Bernoulli(keep) mask."""
    from eventlm.tensor import MaskedMatrix

    values = rng.uniform(-scale, scale, (rows, cols)).astype(dtype)
    mask = rng.random((rows, cols)) < keep
    return MaskedMatrix(values, mask)


def random_event(rng, dim, active_frac=0.5, dtype=np.float64, scale=1.0):
    """Random EventVector with roughly `active_frac` active units."""
    from eventlm.tensor import EventVector

    on = rng.random(dim) < active_frac
    idx = np.flatnonzero(on)
    vals = rng.uniform(-scale, scale, idx.size).astype(dtype)
    vals[vals == 0] = 0.5
    return EventVector(dim, idx.astype(np.int64), vals)
