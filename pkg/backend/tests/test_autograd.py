import numpy as np
import pytest

from app.autograd import (
    AdamW,
    AdamWState,
    LrSchedule,
    Tensor,
    adamw_step,
    load_checkpoint,
    no_grad,
    save_checkpoint,
)
from app.autograd.layers import MLP, LayerNorm, Linear, MultiHeadAttention, PatchEmbed, TransformerBlock
from app.autograd.tensor import (
    attention,
    concat,
    div,
    gelu,
    layernorm,
    matmul,
    mean,
    mul,
    patchify,
    power_int,
    reshape,
    softmax,
    sum_,
    transpose,
    unpatchify,
)
from app.exceptions import DomainError, FormatError, NonFiniteError, ShapeError


def numeric_grad(fn, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        plus, minus = x.copy(), x.copy()
        plus[idx] += eps
        minus[idx] -= eps
        grad[idx] = (fn(plus) - fn(minus)) / (2 * eps)
    return grad


SEEDS = range(10)


def check_gradient(build, *shapes, seed: int = 0, rtol: float = 1e-4, atol: float = 1e-7):
    """``build(*tensors)`` returns a Tensor; its weighted sum is differentiated w.r.t. every input."""
    rng = np.random.default_rng(seed)
    arrays = [rng.standard_normal(s) for s in shapes]
    weights = rng.standard_normal(build(*[Tensor(a) for a in arrays]).shape)

    def scalar(*values):
        return sum_(mul(build(*values), weights))

    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    scalar(*leaves).backward()
    for i, a in enumerate(arrays):
        def f(x, i=i):
            inputs = [Tensor(x if j == i else arrays[j]) for j in range(len(arrays))]
            return scalar(*inputs).item()
        np.testing.assert_allclose(leaves[i].grad, numeric_grad(f, a), rtol=rtol, atol=atol)


def check_module_gradient(module, x: np.ndarray, seed: int, rtol: float = 1e-4, atol: float = 1e-7):
    """Compare analytic gradients of every parameter and of the input against central differences."""
    with no_grad():
        shape = module(Tensor(x)).shape
    weights = np.random.default_rng(seed + 1000).standard_normal(shape)

    def loss(inputs):
        return sum_(mul(module(inputs), weights))

    leaf = Tensor(x, requires_grad=True)
    module.zero_grad()
    loss(leaf).backward()

    def f_input(v):
        with no_grad():
            return loss(Tensor(v)).item()
    np.testing.assert_allclose(leaf.grad, numeric_grad(f_input, x), rtol=rtol, atol=atol)

    for name, p in module.named_parameters():
        analytic = p.grad.copy()
        original = p.data.copy()

        def f(v, p=p):
            p.data = v
            with no_grad():
                return loss(Tensor(x)).item()
        numeric = numeric_grad(f, original)
        p.data = original
        np.testing.assert_allclose(analytic, numeric, rtol=rtol, atol=atol, err_msg=name)


LAYER_CASES = {
    "linear": (lambda rng: Linear(3, 4, rng), (2, 3)),
    "layernorm": (lambda rng: LayerNorm(5), (3, 5)),
    "mlp": (lambda rng: MLP(3, 6, rng, out_dim=2), (4, 3)),
    "attention": (lambda rng: MultiHeadAttention(4, 2, rng), (2, 3, 4)),
    "spatial-block": (lambda rng: TransformerBlock(4, 2, 2, rng), (1, 2, 3, 4)),
    "temporal-block": (lambda rng: TransformerBlock(4, 2, 2, rng, axis="temporal"), (1, 3, 2, 4)),
    "patch-embed": (lambda rng: PatchEmbed(2, 2, 3, rng), (1, 2, 4, 4)),
}


def build_layer(kind: str, seed: int):
    factory, shape = LAYER_CASES[kind]
    rng = np.random.default_rng(seed)
    module = factory(rng)
    # move norm gains and zero biases away from their initial values
    for p in module.parameters():
        p.data = p.data + 0.1 * rng.standard_normal(p.shape)
    return module, rng.standard_normal(shape)


@pytest.mark.parametrize("seed", SEEDS)
class TestOps:
    def test_broadcasting_add_and_mul(self, seed):
        check_gradient(lambda a, b: a * b + b, (3, 4), (4,), seed=seed)

    def test_division(self, seed):
        check_gradient(lambda a, b: div(a, mul(b, b) + 1.0), (2, 3), (2, 3), seed=seed)

    def test_integer_power(self, seed):
        check_gradient(lambda a: power_int(a, 3), (5,), seed=seed)

    def test_batched_matmul(self, seed):
        check_gradient(matmul, (2, 3, 4), (4, 5), seed=seed)

    def test_reductions(self, seed):
        check_gradient(lambda a: sum_(a, axis=1, keepdims=True) + mean(a, axis=(0, 1)), (2, 3, 4), seed=seed)

    def test_gelu_and_softmax(self, seed):
        check_gradient(lambda a: softmax(gelu(a), axis=-1), (3, 5), seed=seed)

    def test_layernorm(self, seed):
        check_gradient(lambda x, g, b: layernorm(x, g, b), (4, 6), (6,), (6,), seed=seed)

    def test_shape_plumbing(self, seed):
        check_gradient(lambda a, b: transpose(reshape(concat([a, b], axis=1), (2, 5, 2)), (2, 0, 1))[1:, :, 2],
                       (2, 2, 2), (2, 3, 2), seed=seed)

    def test_fancy_index_accumulates(self, seed):
        check_gradient(lambda a: a[np.array([0, 2, 0])], (3, 2), seed=seed)

    def test_patchify_gradient(self, seed):
        check_gradient(lambda a: patchify(a, 2), (1, 2, 4, 4), seed=seed)

    def test_attention(self, seed):
        check_gradient(attention, (2, 3, 4), (2, 5, 4), (2, 5, 3), seed=seed)


class TestOpErrors:
    def test_patchify_round_trip(self):
        x = np.random.default_rng(0).standard_normal((2, 3, 8, 8))
        tokens = patchify(Tensor(x), 4)
        assert tokens.shape == (2, 4, 48)
        np.testing.assert_array_equal(unpatchify(tokens, 4, 3, (8, 8)).data, x)

    def test_shape_errors(self):
        with pytest.raises(ShapeError):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
        with pytest.raises(ShapeError):
            Tensor(np.ones(3)) + Tensor(np.ones(4))
        with pytest.raises(ShapeError):
            Tensor(np.ones(3), requires_grad=True).backward()

    def test_non_finite_names_the_op(self):
        with pytest.raises(NonFiniteError, match="div"):
            div(Tensor(np.ones(2)), Tensor(np.zeros(2)))

    def test_no_grad_records_nothing(self):
        a = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            out = sum_(a * 2.0)
        assert not out.requires_grad
        assert out._parents == ()

    def test_backward_frees_the_tape(self):
        a = Tensor(np.ones(3), requires_grad=True)
        loss = sum_(a * a)
        loss.backward()
        np.testing.assert_allclose(a.grad, 2 * np.ones(3))
        assert loss._parents == ()


class TestLayers:
    @pytest.mark.parametrize("seed", SEEDS)
    @pytest.mark.parametrize("kind", sorted(LAYER_CASES))
    def test_layer_gradients(self, kind, seed):
        module, x = build_layer(kind, seed)
        check_module_gradient(module, x, seed)

    @pytest.mark.parametrize("seed", SEEDS)
    def test_three_layer_mlp_gradients(self, seed):
        rng = np.random.default_rng(seed)
        first = MLP(3, 6, rng, out_dim=5)
        last = Linear(5, 2, rng)
        x = rng.standard_normal((4, 3))
        params = first.parameters() + last.parameters()

        def loss():
            return mean(power_int(last(gelu(first(x))), 2))

        loss().backward()
        for p in params:
            analytic = p.grad.copy()
            original = p.data.copy()

            def f(v, p=p):
                p.data = v
                with no_grad():
                    return loss().item()
            numeric = numeric_grad(f, original)
            p.data = original
            np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-8)

    @pytest.mark.parametrize("kind", sorted(LAYER_CASES))
    def test_identical_seeds_are_bit_identical(self, kind):
        runs = []
        for _ in range(2):
            module, x = build_layer(kind, 7)
            leaf = Tensor(x, requires_grad=True)
            out = module(leaf)
            sum_(mul(out, out)).backward()
            runs.append((out.data, leaf.grad, [p.grad for p in module.parameters()]))
        (out_a, dx_a, grads_a), (out_b, dx_b, grads_b) = runs
        np.testing.assert_array_equal(out_a, out_b)
        np.testing.assert_array_equal(dx_a, dx_b)
        for ga, gb in zip(grads_a, grads_b):
            np.testing.assert_array_equal(ga, gb)

    def test_attention_block_shapes_and_parameters(self):
        rng = np.random.default_rng(0)
        block = TransformerBlock(8, 2, 2, rng, axis="temporal")
        out = block(Tensor(rng.standard_normal((1, 3, 4, 8))))
        assert out.shape == (1, 3, 4, 8)
        names = [n for n, _ in block.named_parameters()]
        assert names[0] == "norm1.gamma"
        assert block.parameter_count() == sum(p.size for p in block.parameters())
        with pytest.raises(ShapeError):
            MultiHeadAttention(6, 4, rng)

    def test_temporal_block_mixes_only_along_time(self):
        rng = np.random.default_rng(1)
        block = TransformerBlock(4, 1, 2, rng, axis="temporal")
        x = rng.standard_normal((1, 3, 2, 4))
        y = x.copy()
        y[:, :, 1] += 1.0
        with no_grad():
            a, b = block(Tensor(x)).data, block(Tensor(y)).data
        np.testing.assert_allclose(a[:, :, 0], b[:, :, 0])


class TestAdamW:
    def test_first_step_moves_by_lr_times_sign(self):
        p = np.array([1.0, -2.0])
        g = np.array([0.5, -3.0])
        state = AdamWState.zeros_like([p], weight_decay=0.0, eps=1e-12)
        (new,), state = adamw_step([p], [g], state, lr=0.1)
        np.testing.assert_allclose(new, p - 0.1 * np.sign(g), rtol=1e-9)
        assert state.step_count == 1

    def test_decoupled_weight_decay(self):
        p = np.array([2.0])
        state = AdamWState.zeros_like([p], weight_decay=0.1)
        (new,), _ = adamw_step([p], [np.zeros(1)], state, lr=0.5)
        np.testing.assert_allclose(new, p - 0.5 * 0.1 * p)

    def test_validation(self):
        p = np.ones(2)
        state = AdamWState.zeros_like([p])
        with pytest.raises(DomainError):
            adamw_step([p], [p], state, lr=0.0)
        with pytest.raises(ShapeError):
            adamw_step([p], [np.ones(3)], state, lr=0.1)
        with pytest.raises(ShapeError):
            adamw_step([p], [], state, lr=0.1)

    def test_optimizer_minimises_quadratic(self):
        x = Tensor(np.array([3.0, -4.0]), requires_grad=True)
        optim = AdamW([x], lr=0.1, weight_decay=0.0)
        for _ in range(500):
            optim.zero_grad()
            sum_(power_int(x, 2)).backward()
            optim.step()
        np.testing.assert_allclose(x.data, 0.0, atol=0.1)


class TestSchedule:
    def test_endpoints_and_shape(self):
        s = LrSchedule(lr_start=1e-6, lr_peak=1e-3, lr_end=1e-5, warmup_steps=10, total_steps=110)
        assert s(0) == pytest.approx(1e-6)
        assert s(5) == pytest.approx(1e-6 + 0.5 * (1e-3 - 1e-6))
        assert s(10) == pytest.approx(1e-3)
        assert s(60) == pytest.approx(0.5 * (1e-3 + 1e-5))
        assert s(110) == pytest.approx(1e-5)
        assert s(10_000) == pytest.approx(1e-5)
        values = [s(i) for i in range(10, 111)]
        assert all(a >= b for a, b in zip(values, values[1:]))

    def test_total_must_exceed_warmup(self):
        with pytest.raises(ValueError):
            LrSchedule(warmup_steps=10, total_steps=10)


class TestCheckpoint:
    def test_round_trip_is_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        tensors = {"w": rng.standard_normal((3, 4)), "scalar": np.array(2.5), "optim.step": np.array([7.0])}
        path = save_checkpoint(tmp_path / "m.ptnt", tensors)
        loaded = load_checkpoint(path)
        assert list(loaded) == list(tensors)
        for name, value in tensors.items():
            np.testing.assert_array_equal(loaded[name], value)
            assert loaded[name].shape == np.shape(value)

    def test_layout_header(self, tmp_path):
        path = save_checkpoint(tmp_path / "m.ptnt", {"ab": np.zeros(2)})
        raw = path.read_bytes()
        assert raw[:4] == b"PTNT"
        # magic, version, count, name_len, name, rank, dim, payload
        assert len(raw) == 4 + 4 + 4 + 4 + 2 + 4 + 4 + 16

    def test_truncated_and_corrupt_files(self, tmp_path):
        path = save_checkpoint(tmp_path / "m.ptnt", {"w": np.ones((2, 2))})
        raw = path.read_bytes()
        (tmp_path / "short.ptnt").write_bytes(raw[:-3])
        (tmp_path / "magic.ptnt").write_bytes(b"XXXX" + raw[4:])
        (tmp_path / "tail.ptnt").write_bytes(raw + b"\x00")
        for name in ("short", "magic", "tail"):
            with pytest.raises(FormatError):
                load_checkpoint(tmp_path / f"{name}.ptnt")
        with pytest.raises(FormatError):
            load_checkpoint(tmp_path / "missing.ptnt")
