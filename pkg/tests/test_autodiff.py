import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lfnet.autodiff import (
    Adam, NonFiniteError, ShapeError, Tape, Tensor, backward, finite_difference_check,
    gradcheck, load_arrays, ops, parameter, relative_error, save_arrays,
)
from lfnet.autodiff.serialize import FormatError, dumps, loads


def _scalar(loss_builder, *params):
    return lambda: ops.sum(loss_builder(*params))


def _weights(rng, shape):
    return Tensor(rng.normal(size=shape))


# Each entry builds a scalar from a list of parameters; the random weights make
# every output coordinate contribute to the scalar with a distinct coefficient.
PRIMITIVES = {
    "add": ([(3, 4), (4,)], lambda a, b: ops.add(a, b)),
    "sub": ([(3, 4), (3, 1)], lambda a, b: ops.sub(a, b)),
    "mul": ([(2, 3, 4), (3, 4)], lambda a, b: ops.mul(a, b)),
    "matmul": ([(3, 4), (4, 5)], lambda a, b: ops.matmul(a, b)),
    "batched_matmul": ([(2, 3, 4), (4, 2)], lambda a, b: ops.matmul(a, b)),
    "square": ([(5,)], lambda a: ops.square(a)),
    "sigmoid": ([(4, 3)], lambda a: ops.sigmoid(a)),
    "tanh": ([(4, 3)], lambda a: ops.tanh(a)),
    "exp": ([(4, 3)], lambda a: ops.exp(a)),
    "log": ([(4, 3)], lambda a: ops.log(ops.exp(a))),
    "leaky_relu": ([(6, 3)], lambda a: ops.leaky_relu(a)),
    "softmax": ([(3, 5)], lambda a: ops.softmax(a, axis=-1)),
    "masked_softmax": ([(4, 4)], lambda a: ops.softmax(a, axis=-1, mask=np.tril(np.ones((4, 4), bool)))),
    "log_softmax": ([(3, 5)], lambda a: ops.log_softmax(a, axis=0)),
    "mean": ([(3, 4, 2)], lambda a: ops.mean(a, axis=1)),
    "causal_mean": ([(2, 6, 3)], lambda a: ops.causal_mean(a, axis=1)),
    "concat": ([(2, 3), (2, 2)], lambda a, b: ops.concat([a, b], axis=1)),
    "stack": ([(2, 3), (2, 3)], lambda a, b: ops.stack([a, b], axis=1)),
    "take": ([(5, 3)], lambda a: ops.take(a, [0, 2, 2, 4], axis=0)),
    "index": ([(4, 5)], lambda a: a[1:3, ::2]),
    "segment_sum": ([(6, 2)], lambda a: ops.segment_sum(a, [0, 1, 1, 2, 0, 2], 3)),
    "segment_softmax": ([(6, 2)], lambda a: ops.segment_softmax(a, [0, 1, 1, 2, 0, 2], 3)),
    "conv1d": ([(2, 9, 3), (4, 3, 3), (4,)], lambda x, w, b: ops.conv1d(x, w, b, dilation=2)),
    "dropout": ([(3, 4)], lambda a: ops.dropout(a, (np.arange(12).reshape(3, 4) % 3 > 0), 0.5)),
    "reshape_transpose": ([(2, 6)], lambda a: ops.transpose(ops.reshape(a, (3, 4)))),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradient_matches_finite_differences(name):
    shapes, fn = PRIMITIVES[name]
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    params = {f"p{i}": parameter(rng.normal(size=s)) for i, s in enumerate(shapes)}
    if name == "leaky_relu":
        # keep probes away from the kink
        v = params["p0"].value
        v[np.abs(v) < 0.1] += 0.5
    plist = list(params.values())
    out_shape = fn(*[Tensor(p.value) for p in plist]).shape
    w = _weights(rng, out_shape)
    report = gradcheck(lambda: ops.sum(ops.mul(fn(*plist), w)), params, step=1e-5)
    assert not report.skipped and not report.failed
    assert report.worst_rel_error < 1e-4, report.worst


def test_random_probe_sweep_over_all_primitives():
    # >= 100 random probes per primitive, away from non-smooth points
    rng = np.random.default_rng(7)
    for name, (shapes, fn) in PRIMITIVES.items():
        worst = 0.0
        for _ in range(max(1, 100 // sum(int(np.prod(s)) for s in shapes)) + 1):
            params = {f"p{i}": parameter(rng.normal(size=s)) for i, s in enumerate(shapes)}
            plist = list(params.values())
            out_shape = fn(*[Tensor(p.value) for p in plist]).shape
            w = _weights(rng, out_shape)
            report = gradcheck(lambda: ops.sum(ops.mul(fn(*plist), w)), params)
            worst = max(worst, report.worst_rel_error)
        assert worst < 1e-4, name


class TestPrimitiveExamples:
    @given(st.floats(-1e3, 1e3, allow_nan=False), st.integers(1, 8))
    def test_softmax_of_constant_is_uniform(self, c, n):
        out = ops.softmax(Tensor(np.full(n, c))).value
        np.testing.assert_allclose(out, 1.0 / n, atol=1e-15)

    def test_softmax_three_constants(self):
        np.testing.assert_allclose(ops.softmax(Tensor([2.5, 2.5, 2.5])).value, [1 / 3] * 3)

    @settings(max_examples=50)
    @given(st.lists(st.floats(-50, 50, allow_nan=False), min_size=1, max_size=12))
    def test_softmax_rows_normalized(self, xs):
        out = ops.softmax(Tensor(xs)).value
        assert np.all(out >= 0)
        assert abs(out.sum() - 1.0) < 1e-9

    def test_single_tap_identity_convolution(self):
        x = np.random.default_rng(0).normal(size=(2, 11, 1))
        w = np.ones((1, 1, 1))
        out = ops.conv1d(Tensor(x), Tensor(w), dilation=5).value
        np.testing.assert_array_equal(out, x)

    def test_convolution_is_causal(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(1, 12, 2))
        w = Tensor(rng.normal(size=(3, 2, 3)))
        base = ops.conv1d(Tensor(x), w, dilation=3).value
        x2 = x.copy()
        x2[:, 7:, :] += 10.0
        moved = ops.conv1d(Tensor(x2), w, dilation=3).value
        np.testing.assert_array_equal(base[:, :7], moved[:, :7])
        assert not np.allclose(base[:, 7:], moved[:, 7:])

    def test_convolution_receptive_field(self):
        # L = 3, dilation 5: output at t sees t, t-5, t-10 -> span 11
        x = np.zeros((1, 30, 1))
        x[0, 12, 0] = 1.0
        out = ops.conv1d(Tensor(x), Tensor(np.ones((1, 1, 3))), dilation=5).value[0, :, 0]
        hit = np.nonzero(out)[0]
        assert list(hit) == [12, 17, 22]
        assert hit.max() - hit.min() + 1 == 11

    def test_leaky_relu_gradient_at_minus_one(self):
        p = parameter([-1.0])
        with Tape() as tape:
            y = ops.sum(ops.leaky_relu(p))
        g = backward(tape, y, [p])[p][0]
        assert g == pytest.approx(0.2)
        res = finite_difference_check(lambda: ops.sum(ops.leaky_relu(p)), p, (0,), 1e-5)
        assert abs(res.numeric - 0.2) < 1e-6

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
            ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))
        with pytest.raises(ShapeError, match=r"\(3,\).*\(4,\)"):
            ops.add(Tensor(np.ones(3)), Tensor(np.ones(4)))

    def test_non_finite_input_is_rejected(self):
        with pytest.raises(NonFiniteError):
            Tensor([1.0, np.nan])
        with pytest.raises(NonFiniteError):
            ops.exp(Tensor([1000.0]))

    def test_dropout_probability_range(self):
        with pytest.raises(ValueError):
            ops.dropout(Tensor([1.0]), np.ones(1), 1.0)

    def test_dilation_must_be_positive(self):
        with pytest.raises(ValueError):
            ops.conv1d(Tensor(np.ones((1, 3, 1))), Tensor(np.ones((1, 1, 1))), dilation=0)


class TestBackward:
    def test_sum_of_parameter_gives_ones(self):
        p = parameter(np.arange(6.0).reshape(2, 3))
        with Tape() as tape:
            y = ops.sum(p)
        np.testing.assert_array_equal(backward(tape, y, [p])[p], np.ones((2, 3)))

    def test_unreachable_parameter_gets_zero(self):
        p, q = parameter(np.ones(3)), parameter(np.ones((2, 2)))
        with Tape() as tape:
            y = ops.sum(ops.square(p))
        g = backward(tape, y, [p, q])
        np.testing.assert_array_equal(g[q], np.zeros((2, 2)))

    def test_non_scalar_root_rejected(self):
        p = parameter(np.ones(3))
        with Tape() as tape:
            y = ops.square(p)
        with pytest.raises(ShapeError):
            backward(tape, y)

    def test_fan_out_accumulates(self):
        p = parameter([3.0])
        with Tape() as tape:
            y = ops.sum(p * p + p)
        assert backward(tape, y, [p])[p][0] == pytest.approx(7.0)

    def test_each_entry_visited_once_and_replay_is_bitwise_identical(self):
        rng = np.random.default_rng(3)
        a, b = parameter(rng.normal(size=(4, 3))), parameter(rng.normal(size=(3, 2)))

        def run():
            with Tape() as tape:
                y = ops.sum(ops.tanh(a @ b) * ops.sigmoid(a @ b))
            return backward(tape, y, [a, b])

        g1, g2 = run(), run()
        assert np.array_equal(g1[a], g2[a]) and np.array_equal(g1[b], g2[b])

    def test_no_tape_records_nothing(self):
        p = parameter([1.0])
        y = ops.square(p)
        assert y.requires_grad
        with Tape() as tape:
            ops.square(Tensor([1.0]))
        assert len(tape) == 0


class TestAdam:
    def test_zero_gradient_is_identity(self):
        p = parameter(np.array([1.0, -2.0]))
        opt = Adam({"p": p})
        for _ in range(5):
            opt.step({"p": np.zeros(2)})
        np.testing.assert_array_equal(p.value, [1.0, -2.0])
        np.testing.assert_array_equal(opt.state.m["p"], 0.0)
        np.testing.assert_array_equal(opt.state.v["p"], 0.0)
        assert opt.state.step == 5

    def test_first_step_closed_form(self):
        p = parameter([0.5])
        opt = Adam({"p": p}, lr=0.001)
        opt.step({"p": np.array([1.0])})
        expected = 0.5 - 0.001 * 1.0 / (np.sqrt(1.0) + 1e-8)
        assert p.value[0] == pytest.approx(expected, abs=1e-15)
        assert 0.5 - p.value[0] == pytest.approx(0.001, rel=1e-6)

    @staticmethod
    def _scalar_adam_oracle(lr, steps):
        # the Adam recurrence written out directly on Python floats
        x, m, v = 1.0, 0.0, 0.0
        for k in range(1, steps + 1):
            g = 2 * x
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            x -= lr * (m / (1 - 0.9 ** k)) / (np.sqrt(v / (1 - 0.999 ** k)) + 1e-8)
        return x

    @pytest.mark.parametrize("lr", [0.001, 0.01])
    def test_quadratic_descent(self, lr):
        p = parameter([1.0])
        opt = Adam({"p": p}, lr=lr)
        for _ in range(100):
            with Tape() as tape:
                loss = ops.sum(ops.square(p))
            opt.step({"p": backward(tape, loss, [p])[p]})
        assert p.value[0] == pytest.approx(self._scalar_adam_oracle(lr, 100), abs=1e-12)
        # at lr = 0.001 each step moves ~lr, so 100 steps end near 0.9017
        bound = 0.9 if lr == 0.01 else 0.902
        assert abs(p.value[0]) < bound

    def test_shape_mismatch(self):
        opt = Adam({"p": parameter(np.ones(3))})
        with pytest.raises(ShapeError):
            opt.step({"p": np.ones(2)})


class TestFiniteDifferenceCheck:
    def test_linear_loss_is_exact(self):
        w = parameter([0.7, -1.3])
        x = Tensor([2.0, 5.0])
        res = finite_difference_check(lambda: ops.sum(w * x), w, (1,), 1e-5)
        assert res.status == "ok" and res.rel_error < 1e-10

    def test_softmax_cross_entropy_composition(self):
        rng = np.random.default_rng(11)
        logits = parameter(rng.normal(size=(4, 5)))
        target = np.eye(5)[rng.integers(0, 5, size=4)]
        report = gradcheck(lambda: -ops.sum(ops.log_softmax(logits) * target), {"l": logits})
        assert report.worst_rel_error < 1e-6

    def test_kink_probe_is_flagged(self):
        p = parameter([0.0, 1.0])
        res = finite_difference_check(lambda: ops.sum(ops.leaky_relu(p)), p, (0,), 1e-5)
        assert res.status == "kink"
        report = gradcheck(lambda: ops.sum(ops.leaky_relu(p)), {"p": p})
        assert len(report.skipped) == 1 and len(report.checked) == 1

    def test_non_finite_perturbation_reported(self):
        p = parameter([709.7])
        res = finite_difference_check(lambda: ops.sum(ops.exp(p * 1.0)), p, (0,), 1.0)
        assert res.status == "nonfinite"

    def test_relative_error_formula(self):
        assert relative_error(1.0, 1.1) == pytest.approx(0.1 / 1.1)
        assert relative_error(0.0, 0.0) == 0.0


class TestSerialization:
    def test_round_trip(self, tmp_path):
        arrays = {"w": np.arange(6.0).reshape(2, 3), "b": np.array([1.5]), "s": np.array(2.0)}
        save_arrays(tmp_path / "p.bin", arrays)
        raw = (tmp_path / "p.bin").read_bytes()
        assert raw.startswith(b"LFNET1")
        back = load_arrays(tmp_path / "p.bin")
        assert back.keys() == arrays.keys()
        for k in arrays:
            assert back[k].shape == arrays[k].shape
            np.testing.assert_array_equal(back[k], arrays[k])

    def test_bad_magic(self):
        with pytest.raises(FormatError):
            loads(b"NOTLFN" + dumps({})[6:])
