from __future__ import annotations

import math

import numpy as np
import pytest

from src.autograd import Tape, Tensor, backward, default_tape, no_grad, ops
from src.autograd.checkpoint import decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from src.autograd.gradcheck import check_gradients
from src.autograd.nn import Conv2d, Linear
from src.autograd.optim import AdamW, AdamWState, adamw_step
from src.errors import ContractError, DimensionError, DomainError, FormatError, TrainingError


def _rand(rng: np.random.Generator, *shape: int) -> Tensor:
    return Tensor(rng.standard_normal(shape), requires_grad=True)


class TestMatmul:
    def test_identity(self):
        eye = Tensor(np.eye(2))
        assert np.array_equal((eye @ eye).data, np.eye(2))

    def test_small_product(self):
        out = Tensor([[1.0, 2.0], [3.0, 4.0]]) @ Tensor([[0.0], [1.0]])
        assert np.array_equal(out.data, [[2.0], [4.0]])

    def test_gradients(self, rng):
        a, b = _rand(rng, 3, 4), _rand(rng, 4, 2)
        assert check_gradients(lambda: ops.reduce_sum(ops.square(a @ b)), [a, b]) < 1e-6

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))


class TestConv:
    def test_unit_kernel_is_identity(self, rng):
        x = Tensor(rng.standard_normal((1, 3, 3)))
        out = ops.conv2d(x, Tensor(np.ones((1, 1, 1, 1))))
        assert np.array_equal(out.data, x.data)

    def test_border_sums(self):
        out = ops.conv2d(Tensor(np.ones((1, 4, 4))), Tensor(np.ones((1, 1, 3, 3))), padding=1)
        expected = np.array([[4, 6, 6, 4], [6, 9, 9, 6], [6, 9, 9, 6], [4, 6, 6, 4]], dtype=float)
        assert np.array_equal(out.data[0], expected)

    def test_output_extent(self, rng):
        out = ops.conv2d(Tensor(rng.standard_normal((2, 7, 9))), Tensor(rng.standard_normal((3, 2, 3, 2))), stride=2)
        assert out.shape == (3, 3, 4)

    def test_kernel_larger_than_input(self):
        with pytest.raises(DimensionError):
            ops.conv2d(Tensor(np.ones((1, 2, 2))), Tensor(np.ones((1, 1, 3, 3))))

    def test_conv_gradients(self, rng):
        x, w, b = _rand(rng, 2, 2, 5, 5), _rand(rng, 3, 2, 3, 3), _rand(rng, 3)
        err = check_gradients(lambda: ops.reduce_sum(ops.square(ops.conv2d(x, w, b, stride=2, padding=1))), [x, w, b])
        assert err < 1e-5

    def test_transpose_unit_kernel_is_identity(self, rng):
        x = Tensor(rng.standard_normal((1, 4, 4)))
        out = ops.conv2d_transpose(x, Tensor(np.ones((1, 1, 1, 1))))
        assert np.array_equal(out.data, x.data)

    def test_transpose_upsamples(self):
        out = ops.conv2d_transpose(Tensor(np.ones((3, 4, 4))), Tensor(np.ones((3, 2, 4, 4))), stride=2, padding=1)
        assert out.shape == (2, 8, 8)

    def test_transpose_is_adjoint(self, rng):
        # <conv(x), y> == <x, conv_t(y)> for matching extents
        x = rng.standard_normal((2, 3, 8, 8))
        w = rng.standard_normal((5, 3, 4, 4))
        y = rng.standard_normal((2, 5, 4, 4))
        conv = ops.conv2d(Tensor(x), Tensor(w), stride=2, padding=1).data
        conv_t = ops.conv2d_transpose(Tensor(y), Tensor(w), stride=2, padding=1).data
        assert math.isclose(float(np.sum(conv * y)), float(np.sum(x * conv_t)), rel_tol=1e-10)

    def test_transpose_gradients(self, rng):
        x, w, b = _rand(rng, 1, 2, 3, 3), _rand(rng, 2, 3, 4, 4), _rand(rng, 3)
        err = check_gradients(
            lambda: ops.reduce_sum(ops.square(ops.conv2d_transpose(x, w, b, stride=2, padding=1))), [x, w, b]
        )
        assert err < 1e-5

    def test_avg_pool(self, rng):
        x = _rand(rng, 1, 2, 4, 4)
        pooled = ops.avg_pool2d(x, 2)
        assert pooled.shape == (1, 2, 2, 2)
        assert np.isclose(pooled.data[0, 0, 0, 0], x.data[0, 0, :2, :2].mean())
        assert check_gradients(lambda: ops.reduce_sum(ops.square(ops.avg_pool2d(x, 2))), [x]) < 1e-6


class TestElementwise:
    def test_sigmoid_and_relu(self):
        assert ops.elementwise("sigmoid", Tensor(0.0)).item() == 0.5
        assert ops.elementwise("relu", Tensor(-3.0)).item() == 0.0

    def test_sigmoid_open_interval(self):
        out = ops.sigmoid(Tensor([-800.0, 800.0])).data
        assert np.all(out > 0.0) and np.all(out < 1.0)

    def test_gelu_gradient(self):
        x = Tensor([-2.0, -0.5, 0.0, 0.5, 2.0], requires_grad=True)
        assert check_gradients(lambda: ops.reduce_sum(ops.gelu(x)), [x]) < 1e-5

    @pytest.mark.parametrize("name", ["sigmoid", "exp", "square", "tanh"])
    def test_unary_gradients(self, rng, name):
        x = _rand(rng, 3, 4)
        assert check_gradients(lambda: ops.reduce_sum(ops.elementwise(name, x)), [x]) < 1e-6

    def test_log_gradient(self, rng):
        x = Tensor(rng.uniform(0.5, 2.0, size=(6,)), requires_grad=True)
        assert check_gradients(lambda: ops.reduce_sum(ops.log(x)), [x]) < 1e-6

    def test_log_domain(self):
        with pytest.raises(DomainError):
            ops.log(Tensor([1.0, 0.0]))

    def test_scalar_broadcast(self, rng):
        x = _rand(rng, 2, 3)
        s = Tensor(2.0, requires_grad=True)
        assert check_gradients(lambda: ops.reduce_sum(ops.mul(ops.add(x, s), s)), [x, s]) < 1e-6

    def test_general_broadcast_rejected(self):
        with pytest.raises(DimensionError):
            ops.add(Tensor(np.ones((2, 3))), Tensor(np.ones(3)))

    def test_expand_and_slice_gradients(self, rng):
        b = _rand(rng, 1, 3)
        x = _rand(rng, 4, 3)
        err = check_gradients(
            lambda: ops.reduce_sum(ops.square(ops.slice_axis(ops.add(x, ops.expand(b, (4, 3))), 0, 1, 3))), [x, b]
        )
        assert err < 1e-6


class TestNormalisation:
    def test_softmax_symmetry_and_stability(self):
        assert np.array_equal(ops.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])
        out = ops.softmax(Tensor([1000.0, 0.0])).data
        assert np.all(np.isfinite(out))
        assert out[0] == pytest.approx(1.0) and out[1] == pytest.approx(0.0)

    def test_softmax_rows_sum_to_one(self, rng):
        out = ops.softmax(Tensor(rng.standard_normal((7, 11)) * 30), axis=-1).data
        assert np.max(np.abs(out.sum(axis=-1) - 1.0)) <= 1e-12

    def test_softmax_gradient(self, rng):
        x = _rand(rng, 2, 5)
        w = Tensor(rng.standard_normal((2, 5)))
        assert check_gradients(lambda: ops.reduce_sum(ops.mul(ops.softmax(x), w)), [x]) < 1e-6

    def test_layer_norm_constant_row(self):
        out = ops.layer_norm(Tensor(np.full((1, 4), 3.7)), Tensor(np.ones(4)), Tensor(np.zeros(4)), 1e-5)
        assert np.allclose(out.data, 0.0, atol=1e-6)

    def test_layer_norm_statistics(self):
        out = ops.layer_norm(Tensor([[1.0, 2.0, 3.0]]), Tensor(np.ones(3)), Tensor(np.zeros(3)), 1e-12).data
        assert abs(out.mean()) < 1e-9
        assert out.var() == pytest.approx(1.0, abs=1e-9)

    def test_layer_norm_gradient(self, rng):
        x, g, b = _rand(rng, 3, 6), _rand(rng, 6), _rand(rng, 6)
        w = Tensor(rng.standard_normal((3, 6)))
        assert check_gradients(lambda: ops.reduce_sum(ops.mul(ops.layer_norm(x, g, b), w)), [x, g, b]) < 1e-5


class TestBackward:
    def test_sum_gives_ones(self):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        backward(x.sum())
        assert np.array_equal(x.grad, np.ones(3))

    def test_square_sum(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        backward(ops.reduce_sum(ops.square(x)))
        assert np.array_equal(x.grad, [2.0, 4.0])

    def test_repeated_calls_accumulate(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        loss = ops.reduce_sum(ops.square(x))
        backward(loss)
        backward(loss)
        assert np.array_equal(x.grad, [4.0, 8.0])

    def test_non_scalar_loss(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ContractError):
            backward(x * 2.0)

    def test_empty_tape(self):
        with pytest.raises(ContractError):
            backward(Tensor(1.0))

    def test_no_grad_records_nothing(self):
        x = Tensor([1.0], requires_grad=True)
        with Tape() as tape, no_grad():
            y = x * 3.0
        assert len(tape) == 0 and not y.requires_grad

    def test_default_tape_forgets_dropped_graphs(self, rng):
        layer = Linear(4, 3, rng)
        x = Tensor(rng.standard_normal((5, 4)))
        for _ in range(50):
            loss = ops.reduce_sum(ops.square(layer(x)))
            backward(loss)
        assert len(default_tape()) == 3
        del loss
        assert len(default_tape()) == 0
        assert layer.weight.grad is not None

    def test_live_loss_survives_later_steps(self, rng):
        x = _rand(rng, 3)
        kept = ops.reduce_sum(ops.square(x))
        for _ in range(5):
            ops.reduce_sum(ops.exp(x))
        assert len(default_tape()) == 2
        backward(kept)
        assert np.allclose(x.grad, 2.0 * x.data)

    def test_linearity(self, rng):
        x = _rand(rng, 4)
        backward(ops.reduce_sum(ops.square(x)))
        gf = x.grad.copy()
        x.grad = None
        backward(ops.reduce_sum(ops.exp(x)))
        gg = x.grad.copy()
        x.grad = None
        backward(ops.add(ops.mul(ops.reduce_sum(ops.square(x)), 2.0), ops.mul(ops.reduce_sum(ops.exp(x)), 3.0)))
        assert np.allclose(x.grad, 2.0 * gf + 3.0 * gg, rtol=1e-12, atol=1e-12)

    def test_forward_is_deterministic(self, rng):
        x = rng.standard_normal((2, 3, 6, 6))
        w = rng.standard_normal((4, 3, 3, 3))
        a = ops.conv2d(Tensor(x), Tensor(w), padding=1).data
        b = ops.conv2d(Tensor(x), Tensor(w), padding=1).data
        assert np.array_equal(a, b)

    def test_modules_gradient(self, rng):
        conv = Conv2d(2, 3, 3, rng, stride=1, padding=1)
        lin = Linear(3 * 4 * 4, 2, rng)
        x = Tensor(rng.standard_normal((1, 2, 4, 4)))

        def loss():
            h = ops.gelu(conv(x))
            return ops.reduce_sum(ops.square(lin(ops.reshape(h, (1, -1)))))

        assert check_gradients(loss, conv.parameters() + lin.parameters()) < 1e-5


class TestAdamW:
    def test_zero_grad_zero_decay_is_noop(self):
        params = {"w": np.array([1.0, -2.0])}
        new, _ = adamw_step(params, {"w": np.zeros(2)}, AdamWState(), lr=0.1, weight_decay=0.0)
        assert np.array_equal(new["w"], params["w"])

    def test_descends_parabola(self):
        new, _ = adamw_step({"x": np.array([1.0])}, {"x": np.array([2.0])}, AdamWState(), lr=0.1)
        assert abs(new["x"][0]) < 1.0

    def test_converges_on_quadratic(self):
        target = np.array([1.0, -2.0])
        params = {"x": np.zeros(2)}
        state = AdamWState()
        for _ in range(200):
            grad = np.array([2.0, 4.0]) * (params["x"] - target)
            params, state = adamw_step(params, {"x": grad}, state, lr=0.1, weight_decay=0.0)
        assert np.max(np.abs(params["x"] - target)) < 1e-3

    def test_non_finite_gradient_names_param(self):
        with pytest.raises(TrainingError, match="param=enc.w"):
            adamw_step({"enc.w": np.ones(2)}, {"enc.w": np.array([np.nan, 0.0])}, AdamWState(), lr=0.1)

    def test_optimizer_updates_module(self, rng):
        lin = Linear(2, 1, rng)
        opt = AdamW(lin.named_parameters(), lr=0.05, weight_decay=0.0)
        x = Tensor(rng.standard_normal((16, 2)))
        y = Tensor(x.data @ np.array([[1.5], [-0.5]]) + 0.25)
        first = last = None
        for _ in range(300):
            opt.zero_grad()
            with Tape() as tape:
                loss = ops.mse(lin(x), y)
            tape.backward(loss)
            opt.step()
            first = loss.item() if first is None else first
            last = loss.item()
        assert last < 0.01 * first


class TestCheckpoint:
    def test_roundtrip(self, rng, tmp_path):
        tensors = {"enc.weight": rng.standard_normal((3, 2, 4, 4)), "scalar": np.array(2.5), "b": np.zeros(0)}
        path = save_checkpoint(tmp_path / "m.ckpt", tensors)
        back = load_checkpoint(path)
        assert list(back) == list(tensors)
        for name, value in tensors.items():
            assert back[name].shape == value.shape
            assert np.array_equal(back[name], value)

    def test_bad_magic(self):
        blob = bytearray(encode_checkpoint({"w": np.ones(2)}))
        blob[0:8] = b"NOTACKPT"
        with pytest.raises(FormatError) as info:
            decode_checkpoint(bytes(blob))
        assert info.value.offset == 0

    def test_truncated(self):
        blob = encode_checkpoint({"w": np.ones(4)})
        with pytest.raises(FormatError, match="truncated") as info:
            decode_checkpoint(blob[:-3])
        assert info.value.offset > 8
