import numpy as np
import pytest

from thermoprop import autodiff as ad


def t64(x, grad=True):
    return ad.Tensor(np.asarray(x, dtype=np.float64), requires_grad=grad)


class TestForward:
    def test_sigmoid_zero(self):
        y = ad.sigmoid(t64([0.0]))
        assert y.data[0] == 0.5

    def test_sigmoid_derivative_at_zero(self):
        x = t64([0.0])
        with ad.Tape() as tape:
            y = ad.sum_all(ad.sigmoid(x))
        ad.backward(tape, y)
        assert abs(x.grad[0] - 0.25) < 1e-12

    def test_softmax_sums_to_one(self):
        rng = np.random.default_rng(0)
        y = ad.softmax(t64(rng.normal(size=(4, 9))))
        assert np.allclose(y.data.sum(axis=-1), 1.0, atol=1e-6)

    def test_segment_sum(self):
        y = ad.segment_sum(t64([[1.0, 2.0], [3.0, 4.0]]), np.array([0, 0]), 1)
        assert np.allclose(y.data, [[4.0, 6.0]])

    def test_shape_mismatch(self):
        with pytest.raises(ad.ShapeMismatch):
            ad.matmul(t64(np.ones((2, 3))), t64(np.ones((2, 3))))
        with pytest.raises(ad.ShapeMismatch):
            ad.add(t64(np.ones((2, 3))), t64(np.ones((4,))))

    def test_nonfinite_detected_in_check_mode(self):
        with ad.Tape(check=True):
            with pytest.raises(ad.NonFiniteDetected), np.errstate(invalid="ignore"):
                ad.log(t64([-1.0]))

    def test_dropout_eval_identity(self):
        rng = np.random.default_rng(1)
        x = t64(np.linspace(-1, 1, 10))
        y = ad.dropout(x, 0.5, rng, train=False)
        assert np.array_equal(y.data, x.data)

    def test_dropout_train_inverted_scaling(self):
        rng = np.random.default_rng(2)
        x = ad.Tensor(np.ones(100_00, dtype=np.float64))
        y = ad.dropout(x, 0.25, rng, train=True)
        kept = y.data[y.data != 0]
        assert np.allclose(kept, 1.0 / 0.75)


class TestBackward:
    def test_square(self):
        x = t64([3.0])
        with ad.Tape() as tape:
            y = ad.sum_all(ad.mul(x, x))
        ad.backward(tape, y)
        assert abs(x.grad[0] - 6.0) < 1e-12

    def test_sigmoid_vector(self):
        x = t64(np.zeros(4))
        with ad.Tape() as tape:
            y = ad.sum_all(ad.sigmoid(x))
        ad.backward(tape, y)
        assert np.allclose(x.grad, 0.25)

    def test_unreached_param_zero(self):
        x = t64([2.0])
        p = t64([5.0])
        with ad.Tape() as tape:
            y = ad.sum_all(ad.mul(x, x))
        gs = ad.grads_of(tape, y, [p])
        assert np.allclose(gs[0], 0.0)

    def test_not_on_tape(self):
        x = t64([1.0])
        with ad.Tape() as tape:
            ad.sum_all(ad.mul(x, x))
        other = t64([1.0])
        with pytest.raises(ad.NotOnTape):
            ad.backward(tape, other)

    def test_diamond_accumulation(self):
        # y = x*x + x*x -> dy/dx = 4x
        x = t64([2.0])
        with ad.Tape() as tape:
            h = ad.mul(x, x)
            y = ad.sum_all(ad.add(h, h))
        ad.backward(tape, y)
        assert abs(x.grad[0] - 8.0) < 1e-12

    def test_linear_exact(self):
        rng = np.random.default_rng(3)
        w = t64(rng.normal(size=(5,)))
        x = rng.normal(size=(5,))
        err = ad.grad_check(lambda: ad.sum_all(ad.mul(w, ad.Tensor(x))), [w])
        assert err < 1e-10


def _seeded_cases(n=20, seed=0):
    rng = np.random.default_rng(seed)
    return [rng for _ in range(n)]  # one generator, n draws


PRIMITIVE_CASES = {}


def _register(name):
    def deco(fn):
        PRIMITIVE_CASES[name] = fn
        return fn

    return deco


@_register("matmul")
def _case_matmul(rng):
    a = t64(rng.normal(size=(3, 4)))
    b = t64(rng.normal(size=(4, 2)))
    return lambda: ad.sum_all(ad.matmul(a, b)), [a, b]


@_register("matmul_batched")
def _case_matmul_b(rng):
    a = t64(rng.normal(size=(2, 3, 4)))
    b = t64(rng.normal(size=(2, 4, 2)))
    return lambda: ad.sum_all(ad.matmul(a, b)), [a, b]


@_register("add")
def _case_add(rng):
    a = t64(rng.normal(size=(3, 4)))
    b = t64(rng.normal(size=(4,)))  # broadcast add
    return lambda: ad.sum_all(ad.mul(ad.add(a, b), ad.add(a, b))), [a, b]


@_register("sub")
def _case_sub(rng):
    a, b = t64(rng.normal(size=(5,))), t64(rng.normal(size=(5,)))
    return lambda: ad.sum_all(ad.mul(ad.sub(a, b), ad.sub(a, b))), [a, b]


@_register("mul")
def _case_mul(rng):
    a, b = t64(rng.normal(size=(3, 2))), t64(rng.normal(size=(3, 2)))
    return lambda: ad.sum_all(ad.mul(a, b)), [a, b]


@_register("div")
def _case_div(rng):
    a = t64(rng.normal(size=(4,)))
    b = t64(rng.uniform(0.5, 2.0, size=(4,)))
    return lambda: ad.sum_all(ad.div(a, b)), [a, b]


@_register("neg")
def _case_neg(rng):
    a = t64(rng.normal(size=(4,)))
    return lambda: ad.sum_all(ad.mul(ad.neg(a), a)), [a]


@_register("exp")
def _case_exp(rng):
    a = t64(rng.normal(size=(4,)))
    return lambda: ad.sum_all(ad.exp(a)), [a]


@_register("log")
def _case_log(rng):
    a = t64(rng.uniform(0.5, 3.0, size=(4,)))
    return lambda: ad.sum_all(ad.log(a)), [a]


@_register("power")
def _case_power(rng):
    a = t64(rng.uniform(0.5, 2.0, size=(4,)))
    return lambda: ad.sum_all(ad.power(a, 2.5)), [a]


@_register("sigmoid")
def _case_sigmoid(rng):
    a = t64(rng.normal(size=(6,)))
    return lambda: ad.sum_all(ad.sigmoid(a)), [a]


@_register("relu")
def _case_relu(rng):
    # keep inputs away from the kink
    vals = rng.normal(size=(6,))
    vals[np.abs(vals) < 1e-2] += 0.1
    a = t64(vals)
    return lambda: ad.sum_all(ad.relu(a)), [a]


@_register("gelu")
def _case_gelu(rng):
    a = t64(rng.normal(size=(6,)))
    return lambda: ad.sum_all(ad.gelu(a)), [a]


@_register("silu")
def _case_silu(rng):
    a = t64(rng.normal(size=(6,)))
    return lambda: ad.sum_all(ad.silu(a)), [a]


@_register("softmax")
def _case_softmax(rng):
    a = t64(rng.normal(size=(2, 5)))
    w = t64(rng.normal(size=(2, 5)))
    return lambda: ad.sum_all(ad.mul(ad.softmax(a), w)), [a]


@_register("layer_norm")
def _case_layer_norm(rng):
    a = t64(rng.normal(size=(3, 6)))
    gamma = t64(rng.uniform(0.5, 1.5, size=(6,)))
    beta = t64(rng.normal(size=(6,)))
    w = ad.Tensor(rng.normal(size=(3, 6)))
    return lambda: ad.sum_all(ad.mul(ad.layer_norm(a, gamma, beta), w)), [a, gamma, beta]


@_register("batch_norm_train")
def _case_batch_norm(rng):
    a = t64(rng.normal(size=(8, 4)))
    gamma = t64(rng.uniform(0.5, 1.5, size=(4,)))
    beta = t64(rng.normal(size=(4,)))
    w = ad.Tensor(rng.normal(size=(8, 4)))

    def fn():
        state = ad.BatchNormState(4, dtype=np.float64)  # fresh state: no cross-eval coupling
        return ad.sum_all(ad.mul(ad.batch_norm(a, gamma, beta, state, train=True), w))

    return fn, [a, gamma, beta]


@_register("batch_norm_eval")
def _case_batch_norm_eval(rng):
    a = t64(rng.normal(size=(8, 4)))
    gamma = t64(rng.uniform(0.5, 1.5, size=(4,)))
    beta = t64(rng.normal(size=(4,)))
    state = ad.BatchNormState(4, dtype=np.float64)
    state.running_mean = rng.normal(size=4)
    state.running_var = rng.uniform(0.5, 2.0, size=4)
    return lambda: ad.sum_all(ad.batch_norm(a, gamma, beta, state, train=False)), [a, gamma, beta]


@_register("graph_norm")
def _case_graph_norm(rng):
    a = t64(rng.normal(size=(7, 4)))
    gamma = t64(rng.uniform(0.5, 1.5, size=(4,)))
    beta = t64(rng.normal(size=(4,)))
    ids = np.array([0, 0, 0, 1, 1, 2, 2])
    w = ad.Tensor(rng.normal(size=(7, 4)))
    return lambda: ad.sum_all(ad.mul(ad.graph_norm(a, gamma, beta, ids, 3), w)), [a, gamma, beta]


@_register("dropout")
def _case_dropout(rng):
    a = t64(rng.normal(size=(10,)))
    seed = int(rng.integers(1 << 31))

    def fn():
        r = np.random.default_rng(seed)  # identical mask on every call
        return ad.sum_all(ad.dropout(a, 0.3, r, train=True))

    return fn, [a]


@_register("embedding")
def _case_embedding(rng):
    w = t64(rng.normal(size=(6, 3)))
    ids = rng.integers(0, 6, size=(4,))
    m = ad.Tensor(rng.normal(size=(4, 3)))
    return lambda: ad.sum_all(ad.mul(ad.embedding(w, ids), m)), [w]


@_register("gather_rows")
def _case_gather(rng):
    a = t64(rng.normal(size=(5, 3)))
    idx = rng.integers(0, 5, size=(7,))
    m = ad.Tensor(rng.normal(size=(7, 3)))
    return lambda: ad.sum_all(ad.mul(ad.gather_rows(a, idx), m)), [a]


@_register("segment_sum")
def _case_segment(rng):
    a = t64(rng.normal(size=(6, 3)))
    ids = np.array([0, 0, 1, 1, 1, 2])
    m = ad.Tensor(rng.normal(size=(3, 3)))
    return lambda: ad.sum_all(ad.mul(ad.segment_sum(a, ids, 3), m)), [a]


@_register("concat")
def _case_concat(rng):
    a = t64(rng.normal(size=(2, 3)))
    b = t64(rng.normal(size=(2, 2)))
    m = ad.Tensor(rng.normal(size=(2, 5)))
    return lambda: ad.sum_all(ad.mul(ad.concat([a, b], axis=1), m)), [a, b]


@_register("narrow")
def _case_narrow(rng):
    a = t64(rng.normal(size=(4, 6)))
    m = ad.Tensor(rng.normal(size=(4, 3)))
    return lambda: ad.sum_all(ad.mul(ad.narrow(a, 1, 2, 3), m)), [a]


@_register("reshape_transpose")
def _case_reshape(rng):
    a = t64(rng.normal(size=(4, 6)))
    m = ad.Tensor(rng.normal(size=(6, 2, 2)))
    return (
        lambda: ad.sum_all(ad.mul(ad.transpose(ad.reshape(a, (2, 2, 6)), (2, 0, 1)), m)),
        [a],
    )


@_register("sum_axis")
def _case_sum_axis(rng):
    a = t64(rng.normal(size=(3, 5)))
    m = ad.Tensor(rng.normal(size=(3,)))
    return lambda: ad.sum_all(ad.mul(ad.sum_axis(a, 1), m)), [a]


@_register("mean_all")
def _case_mean(rng):
    a = t64(rng.normal(size=(3, 5)))
    return lambda: ad.mean_all(ad.mul(a, a)), [a]


@pytest.mark.parametrize("name", sorted(PRIMITIVE_CASES))
def test_gradient_check_primitives(name):
    """Every primitive: max relative error < 1e-3 over 20 seeded configs (64-bit)."""
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        fn, params = PRIMITIVE_CASES[name](rng)
        err = ad.grad_check(fn, params)
        assert err < 1e-3, f"{name} seed {seed}: rel err {err}"


def test_composition_gradient():
    rng = np.random.default_rng(7)
    w1 = t64(rng.normal(size=(5, 4)) * 0.5)
    w2 = t64(rng.normal(size=(4, 1)) * 0.5)
    x = ad.Tensor(rng.normal(size=(3, 5)))

    def fn():
        h = ad.gelu(ad.matmul(x, w1))
        return ad.sum_all(ad.sigmoid(ad.matmul(h, w2)))

    assert ad.grad_check(fn, [w1, w2]) < 1e-4


def test_determinism_same_seed():
    def run():
        rng = np.random.default_rng(42)
        x = ad.Tensor(rng.normal(size=(8, 8)).astype(np.float32))
        with ad.Tape():
            y = ad.sum_all(ad.gelu(ad.matmul(x, x)))
        return y.item()

    assert run() == run()
