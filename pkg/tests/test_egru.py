"""Event cell contracts: spike/reset semantics, event/dense bitwise
equivalence, surrogate shape, and three independent gradient oracles
(symbolic differentiation, finite differences, batched-vs-sequential)."""

import numpy as np
import pytest
import sympy as sp

from eventlm.egru import (
    EgruParams,
    EgruState,
    egru_backward_batch,
    egru_backward_seq,
    egru_forward_batch,
    egru_forward_seq,
    egru_forward_step,
    heaviside,
    surrogate_heaviside_grad,
)
from eventlm.errors import ParameterError, UsageError
from eventlm.tensor import EventVector, MaskedMatrix, densify, to_event

from conftest import random_event
from reference_impls import dense_egru_forward, finite_difference_grads, max_rel_err


def make_params(rng, d_in, n, keep=1.0, weight_scale=None, thresholds=None,
                dtype=np.float64):
    p = EgruParams.init(d_in, n, rng, dtype=dtype)
    if weight_scale is not None:
        for name in EgruParams.MATRIX_NAMES:
            m = getattr(p, name)
            m.values[:] = rng.uniform(-weight_scale, weight_scale, m.shape)
        for name in ("b_u", "b_r", "b_z"):
            getattr(p, name)[:] = rng.uniform(-0.1, 0.1, n)
    if keep < 1.0:
        for name in EgruParams.MATRIX_NAMES:
            m = getattr(p, name)
            new_mask = rng.random(m.shape) < keep
            m.mask[:] = new_mask
            m._col_rows = None
            m.apply_mask()
    if thresholds is not None:
        p.thresholds[:] = thresholds
    return p


class TestHeaviside:
    def test_boundary_is_one(self):
        assert heaviside(0.0) == 1.0

    def test_small_negative_is_zero(self):
        assert heaviside(-1e-12) == 0.0

    def test_positive_is_one(self):
        assert heaviside(5.0) == 1.0


class TestSurrogate:
    def test_peak(self):
        assert surrogate_heaviside_grad(0.0, 1.0, 1.0) == 1.0

    def test_support_boundary(self):
        assert surrogate_heaviside_grad(1.0, 1.0, 1.0) == 0.0
        assert surrogate_heaviside_grad(-1.0, 1.0, 1.0) == 0.0

    def test_hand_value(self):
        # 0.3 * max(0, 1 - 0.5/1) = 0.15
        assert surrogate_heaviside_grad(0.5, 0.3, 1.0) == pytest.approx(0.15, abs=1e-15)

    def test_invalid_width(self):
        with pytest.raises(ParameterError):
            surrogate_heaviside_grad(0.0, 1.0, 0.0)


class TestForwardStep:
    def test_huge_threshold_silences_output(self, rng):
        p = make_params(rng, 3, 4, thresholds=1e9)
        state = EgruState.zeros(4)
        for _ in range(5):
            state, _ = egru_forward_step(p, random_event(rng, 3), state)
            assert state.y.n_active == 0

    def test_all_zero_params_fixed_point(self, rng):
        p = make_params(rng, 3, 4, thresholds=0.5)
        for name in EgruParams.MATRIX_NAMES:
            getattr(p, name).values[:] = 0.0
        for name in ("b_u", "b_r", "b_z"):
            getattr(p, name)[:] = 0.0
        state, cache = egru_forward_step(p, random_event(rng, 3), EgruState.zeros(4))
        assert np.array_equal(cache.u, np.full(4, 0.5))
        assert np.array_equal(cache.z, np.zeros(4))
        assert np.array_equal(cache.c_tilde, np.zeros(4))
        assert state.y.n_active == 0

    def test_spike_and_reset_semantics(self, rng):
        """Emitted values equal the pre-reset state where it crosses the
        threshold, and the threshold is subtracted exactly there."""
        for _ in range(20):
            p = make_params(rng, 3, 6, keep=0.7, thresholds=rng.uniform(-0.5, 0.5, 6))
            state = EgruState.zeros(6)
            for _ in range(4):
                state, cache = egru_forward_step(p, random_event(rng, 3), state)
                y = densify(state.y)
                crossed = cache.c_tilde >= p.thresholds
                assert np.array_equal(y[crossed], cache.c_tilde[crossed])
                assert np.all(y[~crossed] == 0)
                assert np.array_equal(
                    state.c, cache.c_tilde - np.where(crossed, p.thresholds, 0.0))

    def test_matches_dense_reference_bitwise(self, rng):
        """Event-driven execution is bit-identical to a dense-only reference."""
        for _ in range(30):
            d_in, n = int(rng.integers(1, 8)), int(rng.integers(1, 8))
            T = int(rng.integers(1, 6))
            p = make_params(rng, d_in, n, keep=rng.uniform(0.2, 1.0),
                            thresholds=rng.uniform(-0.5, 1.0, n))
            xs = [rng.standard_normal(d_in) for _ in range(T)]
            for x in xs:
                x[rng.random(d_in) < 0.3] = 0.0
            outputs, _, final = egru_forward_seq(p, [to_event(x) for x in xs],
                                                 EgruState.zeros(n))
            cs_ref, ys_ref = dense_egru_forward(p, xs, np.zeros(n), np.zeros(n))
            for t in range(T):
                assert densify(outputs[t]).tobytes() == ys_ref[t].tobytes()
            assert final.c.tobytes() == cs_ref[-1].tobytes()


class TestForwardSeq:
    def test_empty_sequence(self, rng):
        p = make_params(rng, 3, 4)
        s0 = EgruState.zeros(4)
        outputs, caches, final = egru_forward_seq(p, [], s0)
        assert outputs == [] and caches == []
        assert final is s0

    def test_length_one_equals_single_step(self, rng):
        p = make_params(rng, 3, 4)
        x = random_event(rng, 3)
        out_seq, _, final_seq = egru_forward_seq(p, [x], EgruState.zeros(4))
        state, _ = egru_forward_step(p, x, EgruState.zeros(4))
        assert densify(out_seq[0]).tobytes() == densify(state.y).tobytes()
        assert final_seq.c.tobytes() == state.c.tobytes()

    def test_matches_manual_fold(self, rng):
        p = make_params(rng, 3, 5, keep=0.6)
        xs = [random_event(rng, 3) for _ in range(7)]
        outputs, _, _ = egru_forward_seq(p, xs, EgruState.zeros(5))
        state = EgruState.zeros(5)
        for t, x in enumerate(xs):
            state, _ = egru_forward_step(p, x, state)
            assert densify(outputs[t]).tobytes() == densify(state.y).tobytes()


def _sympy_step(symbols, x, y0, c0):
    """One symbolic step; H carries the surrogate as its formal derivative
    and collapses to 0/1 once its argument becomes numeric."""
    lam, eps = symbols["lam"], symbols["eps"]

    class Hs(sp.Function):
        @classmethod
        def eval(cls, u):
            if u.is_number:
                return sp.Integer(1) if u >= 0 else sp.Integer(0)

        def fdiff(self, argindex=1):
            u = self.args[0]
            return lam * sp.Max(0, 1 - sp.Abs(u) / eps)

    s = symbols
    u = 1 / (1 + sp.exp(-(s["wux"] * x + s["wuy"] * y0 + s["bu"])))
    r = 1 / (1 + sp.exp(-(s["wrx"] * x + s["wry"] * y0 + s["br"])))
    z = sp.tanh(s["wzx"] * x + s["wzy"] * (r * y0) + s["bz"])
    ct = u * z + (1 - u) * c0
    y1 = ct * Hs(ct - s["th"])
    c1 = ct - s["th"] * Hs(ct - s["th"])
    return y1, c1, Hs


class TestBackwardSymbolicOracle:
    """Scalar cell (n = d = 1) differentiated symbolically.

    sympy only shares the forward definition with the implementation; the
    whole reverse-mode chain is derived independently, including the
    surrogate pathways through the spike gate and the reset.
    """

    PARAM_NAMES = ["wux", "wuy", "wrx", "wry", "wzx", "wzy", "bu", "br", "bz", "th"]

    def _build(self, T):
        names = self.PARAM_NAMES + ["lam", "eps"]
        symbols = {n: sp.Symbol(n, real=True) for n in names}
        xs = [sp.Symbol(f"x{t}", real=True) for t in range(T)]
        gys = [sp.Symbol(f"gy{t}", real=True) for t in range(T)]
        y, c = sp.Float(0), sp.Float(0)
        loss = sp.Float(0)
        for t in range(T):
            y, c, Hs = _sympy_step(symbols, xs[t], y, c)
            loss = loss + gys[t] * y
        return symbols, xs, gys, loss, Hs

    def _numeric(self, expr, values, Hs):
        return float(sp.N(expr.subs(values), 30))

    @pytest.mark.parametrize("T", [1, 2])
    def test_scalar_cell_matches_symbolic(self, T, rng):
        symbols, xs, gys, loss, Hs = self._build(T)
        dloss = {n: loss.diff(symbols[n]) for n in self.PARAM_NAMES}
        dloss_x = [loss.diff(x) for x in xs]
        for trial in range(3):
            vals = {symbols[n]: float(v) for n, v in zip(
                self.PARAM_NAMES,
                rng.uniform(-1.2, 1.2, len(self.PARAM_NAMES)))}
            vals[symbols["lam"]] = 0.7
            vals[symbols["eps"]] = 1.3
            x_vals = rng.uniform(-1, 1, T)
            gy_vals = rng.uniform(-1, 1, T)
            vals.update({xs[t]: float(x_vals[t]) for t in range(T)})
            vals.update({gys[t]: float(gy_vals[t]) for t in range(T)})

            p = EgruParams(
                *(MaskedMatrix(np.array([[vals[symbols[n]]]]))
                  for n in ("wux", "wuy", "wrx", "wry", "wzx", "wzy")),
                b_u=np.array([vals[symbols["bu"]]]),
                b_r=np.array([vals[symbols["br"]]]),
                b_z=np.array([vals[symbols["bz"]]]),
                thresholds=np.array([vals[symbols["th"]]]),
                surrogate_scale=0.7, surrogate_width=1.3,
            )
            inputs = [to_event(np.array([x_vals[t]])) for t in range(T)]
            _, caches, _ = egru_forward_seq(p, inputs, EgruState.zeros(1))
            grads, grad_x = egru_backward_seq(
                p, caches, [np.array([gy_vals[t]]) for t in range(T)])

            got = grads.named()
            sym_of = dict(zip(self.PARAM_NAMES,
                              ["w_ux", "w_uy", "w_rx", "w_ry", "w_zx", "w_zy",
                               "b_u", "b_r", "b_z", "thresholds"]))
            for sname, gname in sym_of.items():
                expect = self._numeric(dloss[sname], vals, Hs)
                assert float(np.ravel(got[gname])[0]) == pytest.approx(expect, abs=1e-12), \
                    f"{gname} (T={T}, trial={trial})"
            for t in range(T):
                expect = self._numeric(dloss_x[t], vals, Hs)
                assert float(grad_x[t][0]) == pytest.approx(expect, abs=1e-12), \
                    f"grad_x[{t}]"


class TestBackwardFiniteDifferences:
    def test_zero_upstream_grads_give_zero(self, rng):
        p = make_params(rng, 3, 5)
        xs = [random_event(rng, 3) for _ in range(4)]
        _, caches, _ = egru_forward_seq(p, xs, EgruState.zeros(5))
        grads, grad_x = egru_backward_seq(p, caches, [np.zeros(5)] * 4)
        for g in grads.named().values():
            assert np.all(g == 0)
        for g in grad_x:
            assert np.all(g == 0)

    def test_length_mismatch_rejected(self, rng):
        p = make_params(rng, 3, 5)
        _, caches, _ = egru_forward_seq(p, [random_event(rng, 3)], EgruState.zeros(5))
        with pytest.raises(UsageError):
            egru_backward_seq(p, caches, [np.zeros(5), np.zeros(5)])

    def test_matches_central_differences_away_from_surrogate(self, rng):
        """Mixed always-spiking / never-spiking units with |c~ - th| > eps
        everywhere: the function is locally smooth there and the analytic
        path must match finite differences."""
        d_in, n, T = 3, 5, 4
        p = make_params(rng, d_in, n, keep=0.8, weight_scale=0.2)
        # units 0..2 spike every step, 3..4 never do; margins stay > eps=1
        p.thresholds[:] = np.array([-3.0, -3.5, -4.0, 5.0, 6.0])
        xs_dense = [rng.uniform(-1, 1, d_in) for _ in range(T)]
        weights = [rng.uniform(-1, 1, n) for _ in range(T)]

        def run():
            outputs, caches, _ = egru_forward_seq(
                p, [to_event(x) for x in xs_dense], EgruState.zeros(n))
            for cache in caches:
                assert np.all(np.abs(cache.c_tilde - p.thresholds) > p.surrogate_width)
            return outputs, caches

        def loss():
            outputs, _ = run()
            return float(sum(w @ densify(y) for w, y in zip(weights, outputs)))

        _, caches = run()
        grads, _ = egru_backward_seq(p, caches, weights)

        arrays = [getattr(p, name).values for name in EgruParams.MATRIX_NAMES]
        arrays += [getattr(p, name) for name in EgruParams.VECTOR_NAMES]
        fd = finite_difference_grads(loss, arrays, h=1e-5)
        analytic = ([grads.named()[name] for name in EgruParams.MATRIX_NAMES]
                    + [grads.named()[name] for name in EgruParams.VECTOR_NAMES])
        for name, a, b in zip(EgruParams.MATRIX_NAMES + EgruParams.VECTOR_NAMES,
                              analytic, fd):
            err = max_rel_err(a, b, floor=1e-6)
            assert err < 1e-4, f"{name}: rel err {err}"


class TestBatchedEngine:
    def test_forward_matches_per_sequence(self, rng):
        for _ in range(10):
            d_in, n = int(rng.integers(2, 7)), int(rng.integers(2, 9))
            T, B = int(rng.integers(1, 6)), int(rng.integers(1, 5))
            p = make_params(rng, d_in, n, keep=0.7,
                            thresholds=rng.uniform(-0.5, 1.0, n))
            xs = rng.standard_normal((T, B, d_in))
            c0 = rng.standard_normal((B, n)) * 0.1
            y0 = rng.standard_normal((B, n)) * 0.1
            Y, (c, y), _ = egru_forward_batch(p, xs, c0, y0)
            for b in range(B):
                state = EgruState(c0[b].copy(), to_event(y0[b]))
                for t in range(T):
                    state, _ = egru_forward_step(p, to_event(xs[t, b]), state)
                    np.testing.assert_allclose(densify(state.y), Y[t, b],
                                               rtol=1e-10, atol=1e-12)
                np.testing.assert_allclose(state.c, c[b], rtol=1e-10, atol=1e-12)

    def test_backward_matches_per_sequence(self, rng):
        for _ in range(6):
            d_in, n = int(rng.integers(2, 6)), int(rng.integers(2, 7))
            T, B = int(rng.integers(1, 5)), int(rng.integers(1, 4))
            p = make_params(rng, d_in, n, keep=0.8,
                            thresholds=rng.uniform(-0.5, 0.8, n))
            xs = rng.standard_normal((T, B, d_in))
            gy = rng.standard_normal((T, B, n))
            c0 = np.zeros((B, n))
            y0 = np.zeros((B, n))

            _, _, cache = egru_forward_batch(p, xs, c0, y0)
            grads_b, gx_b = egru_backward_batch(p, cache, gy)

            acc = {k: np.zeros_like(v) for k, v in grads_b.named().items()}
            gx_s = np.zeros_like(gx_b)
            for b in range(B):
                _, caches, _ = egru_forward_seq(
                    p, [to_event(xs[t, b]) for t in range(T)], EgruState.zeros(n))
                g, gx = egru_backward_seq(p, caches, [gy[t, b] for t in range(T)])
                for k, v in g.named().items():
                    acc[k] += v
                for t in range(T):
                    gx_s[t, b] = gx[t]
            for k in acc:
                np.testing.assert_allclose(grads_b.named()[k], acc[k],
                                           rtol=1e-9, atol=1e-11, err_msg=k)
            np.testing.assert_allclose(gx_b, gx_s, rtol=1e-9, atol=1e-11)


class TestActivityMeasure:
    def test_activity_fraction_in_unit_interval(self, rng):
        p = make_params(rng, 3, 8, thresholds=rng.uniform(0.0, 1.0, 8))
        outputs, _, _ = egru_forward_seq(
            p, [random_event(rng, 3) for _ in range(20)], EgruState.zeros(8))
        active = sum(y.n_active for y in outputs)
        frac = active / (20 * 8)
        assert 0.0 <= frac <= 1.0
