"""Kernel-level contracts: masked/event products, event round trips,
nonlinearities, and the bit-identical accumulation-order guarantee."""

import numpy as np
import pytest

from eventlm.errors import ShapeError
from eventlm.tensor import (
    EventVector,
    MacCounter,
    MaskedMatrix,
    densify,
    matvec_event,
    matvec_masked,
    sigmoid,
    to_event,
)

from conftest import random_event, random_masked


class TestEventVector:
    def test_to_event_of_zeros_is_empty(self):
        e = to_event(np.zeros(3))
        assert e.dim == 3
        assert e.n_active == 0

    def test_to_event_keeps_nonzeros_in_order(self):
        e = to_event(np.array([1.5, 0.0, -2.0]))
        assert e.active == [(0, 1.5), (2, -2.0)]

    def test_round_trip_random(self, rng):
        for _ in range(50):
            v = rng.standard_normal(17)
            v[rng.random(17) < 0.4] = 0.0
            assert np.array_equal(densify(to_event(v)), v)

    def test_rejects_unsorted_indices(self):
        with pytest.raises(ShapeError):
            EventVector(4, np.array([2, 1]), np.array([1.0, 1.0]))

    def test_rejects_stored_zero(self):
        with pytest.raises(ShapeError):
            EventVector(4, np.array([1]), np.array([0.0]))

    def test_rejects_out_of_range(self):
        with pytest.raises(ShapeError):
            EventVector(4, np.array([4]), np.array([1.0]))


class TestMaskedMatrix:
    def test_constructor_applies_mask(self):
        m = MaskedMatrix(np.ones((2, 2)), np.array([[True, False], [False, True]]))
        assert m.values[0, 1] == 0 and m.values[1, 0] == 0
        assert np.array_equal(m.nnz_per_column, [1, 1])

    def test_mask_idempotent(self, rng):
        m = random_masked(rng, 6, 5, keep=0.5)
        before = m.values.copy()
        m.apply_mask()
        assert np.array_equal(m.values, before)

    def test_nnz_per_column_matches_mask(self, rng):
        m = random_masked(rng, 9, 7, keep=0.3)
        assert np.array_equal(m.nnz_per_column, m.mask.sum(axis=0))

    def test_column_major_storage(self, rng):
        m = random_masked(rng, 8, 8)
        assert m.values.flags.f_contiguous

    def test_mask_out_flat_uses_row_major_indexing(self):
        m = MaskedMatrix(np.arange(6, dtype=float).reshape(2, 3))
        m.mask_out_flat([1])  # row 0, col 1
        assert not m.mask[0, 1]
        assert m.values[0, 1] == 0
        assert m.nnz == 5


class TestMatvecMasked:
    def test_identity(self):
        w = MaskedMatrix(np.eye(2))
        assert np.array_equal(matvec_masked(w, np.array([3.0, 4.0])), [3.0, 4.0])

    def test_all_masked_annihilates(self, rng):
        w = MaskedMatrix(rng.standard_normal((4, 4)), np.zeros((4, 4), dtype=bool))
        assert np.array_equal(matvec_masked(w, rng.standard_normal(4)), np.zeros(4))

    def test_matches_double_loop_exactly(self, rng):
        """Brute-force oracle: per output element, ascending-j accumulation."""
        for _ in range(20):
            w = random_masked(rng, 8, 8, keep=0.5)
            a = rng.standard_normal(8)
            expect = np.zeros(8)
            for i in range(8):
                s = 0.0
                for j in range(8):
                    s += w.values[i, j] * a[j]
                expect[i] = s
            got = matvec_masked(w, a)
            assert got.tobytes() == expect.tobytes()

    def test_shape_error(self, rng):
        w = random_masked(rng, 4, 3)
        with pytest.raises(ShapeError):
            matvec_masked(w, np.zeros(4))


class TestMatvecEvent:
    def test_empty_events_give_zero(self, rng):
        w = random_masked(rng, 5, 5)
        out = matvec_event(w, EventVector.empty(5))
        assert np.array_equal(out, np.zeros(5))

    def test_single_basis_event_selects_column(self, rng):
        w = random_masked(rng, 5, 5)
        e = EventVector(5, np.array([2]), np.array([1.0]))
        assert np.array_equal(matvec_event(w, e), w.values[:, 2])

    def test_matches_dense_path_bitwise(self, rng):
        for _ in range(50):
            rows, cols = rng.integers(1, 20, size=2)
            w = random_masked(rng, rows, cols, keep=rng.uniform(0.1, 1.0))
            e = random_event(rng, cols, active_frac=rng.uniform(0.0, 1.0))
            sparse = matvec_event(w, e)
            dense = matvec_masked(w, densify(e))
            assert sparse.tobytes() == dense.tobytes()

    def test_instrumented_kernels_match_plain(self, rng):
        """Counting variants gather only kept entries yet produce identical
        bits, and tally exactly the per-column kept counts."""
        for _ in range(20):
            w = random_masked(rng, 10, 9, keep=0.4)
            e = random_event(rng, 9, active_frac=0.6)
            c1, c2 = MacCounter(), MacCounter()
            assert matvec_event(w, e, c1).tobytes() == matvec_event(w, e).tobytes()
            assert matvec_masked(w, densify(e), c2).tobytes() == matvec_masked(w, densify(e)).tobytes()
            assert c1.n == int(w.nnz_per_column[e.indices].sum())
            assert c2.n == w.nnz

    def test_shape_error(self, rng):
        w = random_masked(rng, 4, 3)
        with pytest.raises(ShapeError):
            matvec_event(w, EventVector.empty(4))


class TestNonlinearities:
    def test_sigmoid_at_zero(self):
        assert sigmoid(0.0) == 0.5

    def test_tanh_at_zero(self):
        assert np.tanh(0.0) == 0.0

    def test_sigmoid_symmetry(self, rng):
        x = rng.uniform(-50, 50, 1000)
        np.testing.assert_allclose(sigmoid(x) + sigmoid(-x), 1.0, atol=1e-12)

    def test_sigmoid_range(self, rng):
        x = rng.uniform(-30, 30, 1000)
        s = sigmoid(x)
        assert np.all(s > 0) and np.all(s < 1)
