import math

import numpy as np
import pytest

from capsnlu.autodiff import (
    ContractError,
    DegenerateRowError,
    DimensionError,
    NumericError,
    Tensor,
    apply_unary,
    concat,
    finite_diff_check,
    frobenius_sq,
    no_grad,
    row_softmax,
    softmax,
    stack,
)


def t64(values, requires_grad=False):
    return Tensor(np.asarray(values, dtype=np.float64), requires_grad=requires_grad)


class TestMatmul:
    def test_identity(self):
        eye = t64(np.eye(2))
        a = t64([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_allclose((eye @ a).values, a.values)

    def test_hand_product(self):
        a = t64([[1.0, 2.0], [3.0, 4.0]])
        b = t64([[5.0], [6.0]])
        np.testing.assert_allclose((a @ b).values, [[17.0], [39.0]])

    def test_inner_mismatch_names_both_shapes(self):
        a = t64(np.zeros((2, 3)))
        b = t64(np.zeros((2, 3)))
        with pytest.raises(DimensionError) as exc:
            a @ b
        assert "(2, 3)" in str(exc.value)

    def test_triple_loop_oracle(self):
        # independent O(n^3) product, no numpy matmul involved
        rng = np.random.default_rng(0)
        a = rng.normal(size=(2, 3))
        b = rng.normal(size=(3, 4))
        want = [[sum(a[i, k] * b[k, j] for k in range(3)) for j in range(4)] for i in range(2)]
        got = (t64(a) @ t64(b)).values
        np.testing.assert_allclose(got, want, rtol=1e-12)

    def test_batched_leading_dims(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=(5, 2, 3))
        b = rng.normal(size=(3, 4))
        got = (t64(a) @ t64(b)).values
        for i in range(5):
            np.testing.assert_allclose(got[i], a[i] @ b)


class TestUnary:
    def test_tanh_origin(self):
        np.testing.assert_array_equal(apply_unary("tanh", t64([0.0, 0.0])).values, [0.0, 0.0])

    def test_sigmoid_half(self):
        np.testing.assert_allclose(apply_unary("sigmoid", t64([0.0])).values, [0.5])

    def test_exp_e(self):
        np.testing.assert_allclose(apply_unary("exp", t64([1.0])).values, [math.e], rtol=1e-12)

    def test_square(self):
        np.testing.assert_allclose(apply_unary("square", t64([-3.0, 2.0])).values, [9.0, 4.0])

    def test_unknown_name(self):
        with pytest.raises(ContractError):
            apply_unary("log", t64([1.0]))


class TestRowSoftmax:
    def test_uniform_inputs(self):
        out = row_softmax(t64([[0.0, 0.0, 0.0]]))
        np.testing.assert_allclose(out.values, [[1 / 3, 1 / 3, 1 / 3]], atol=1e-12)

    def test_hand_softmax(self):
        out = row_softmax(t64([[math.log(2.0), 0.0]]))
        np.testing.assert_allclose(out.values, [[2 / 3, 1 / 3]], rtol=1e-12)

    def test_single_unmasked(self):
        out = row_softmax(t64([[5.0, 5.0]]), mask=[[True, False]])
        np.testing.assert_array_equal(out.values, [[1.0, 0.0]])

    def test_fully_masked_row(self):
        with pytest.raises(DegenerateRowError):
            row_softmax(t64([[1.0, 2.0]]), mask=[[False, False]])

    def test_large_values_stable(self):
        out = row_softmax(t64([[1e4, 1e4]]))
        np.testing.assert_allclose(out.values, [[0.5, 0.5]])

    def test_rows_stochastic_random(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            r, c = rng.integers(1, 6), rng.integers(1, 8)
            x = rng.normal(scale=5.0, size=(r, c))
            mask = rng.random((r, c)) < 0.7
            mask[np.arange(r), rng.integers(0, c, size=r)] = True  # keep rows alive
            y = row_softmax(t64(x), mask=mask).values
            np.testing.assert_allclose(y.sum(axis=-1), np.ones(r), atol=1e-9)
            assert (y >= 0).all() and (y <= 1).all()
            assert (y[~mask] == 0).all()


class TestConcatStack:
    def test_axis0(self):
        out = concat(t64([1.0, 2.0]), t64([3.0]), axis=0)
        np.testing.assert_array_equal(out.values, [1.0, 2.0, 3.0])

    def test_axis1(self):
        out = concat(t64([[1.0], [2.0]]), t64([[3.0], [4.0]]), axis=1)
        np.testing.assert_array_equal(out.values, [[1.0, 3.0], [2.0, 4.0]])

    def test_incompatible(self):
        with pytest.raises(DimensionError):
            concat(t64([[1.0, 2.0]]), t64([[3.0], [4.0]]), axis=0)

    def test_concat_backward_splits(self):
        a = t64([1.0, 2.0], requires_grad=True)
        b = t64([3.0], requires_grad=True)
        out = concat(a * 2.0, b * 3.0, axis=0)
        out.sum().backward()
        np.testing.assert_array_equal(a.grad, [2.0, 2.0])
        np.testing.assert_array_equal(b.grad, [3.0])

    def test_stack_backward(self):
        a = t64([1.0, 2.0], requires_grad=True)
        b = t64([3.0, 4.0], requires_grad=True)
        out = stack([a, b], axis=0)
        (out * t64([[1.0, 2.0], [3.0, 4.0]])).sum().backward()
        np.testing.assert_array_equal(a.grad, [1.0, 2.0])
        np.testing.assert_array_equal(b.grad, [3.0, 4.0])


class TestFrobenius:
    def test_zero(self):
        assert frobenius_sq(t64(np.zeros((3, 3)))).item() == 0.0

    def test_permutation_matrix(self):
        assert frobenius_sq(t64([[0.0, 1.0], [1.0, 0.0]])).item() == 2.0

    def test_three_four(self):
        assert frobenius_sq(t64([[3.0, 4.0]])).item() == 25.0


class TestBackward:
    def test_sum_gives_ones(self):
        x = t64(np.arange(6.0).reshape(2, 3), requires_grad=True)
        x.sum().backward()
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_frobenius_grad(self):
        x = t64([[3.0]], requires_grad=True)
        frobenius_sq(x).backward()
        np.testing.assert_array_equal(x.grad, [[6.0]])

    def test_sigmoid_grad_quarter(self):
        w = t64([0.0], requires_grad=True)
        w.sigmoid().sum().backward()
        np.testing.assert_allclose(w.grad, [0.25], rtol=1e-12)

    def test_non_scalar_rejected(self):
        x = t64([1.0, 2.0], requires_grad=True)
        with pytest.raises(ContractError):
            (x * 2.0).backward()

    def test_accumulation_is_exactly_double(self):
        x = t64(np.random.default_rng(3).normal(size=(4,)), requires_grad=True)
        loss = (x.tanh() * x).sum()
        loss.backward()
        once = x.grad.copy()
        loss.backward()
        np.testing.assert_array_equal(x.grad, 2.0 * once)

    def test_reset_grad(self):
        x = t64([2.0], requires_grad=True)
        x.square().sum().backward()
        x.reset_grad()
        np.testing.assert_array_equal(x.grad, [0.0])

    def test_grad_zero_on_creation(self):
        x = t64([1.0, 2.0], requires_grad=True)
        np.testing.assert_array_equal(x.grad, [0.0, 0.0])

    def test_shared_subexpression(self):
        # x used twice: d/dx (x*x) = 2x
        x = t64([3.0], requires_grad=True)
        (x * x).sum().backward()
        np.testing.assert_array_equal(x.grad, [6.0])

    def test_no_grad_blocks_graph(self):
        x = t64([1.0], requires_grad=True)
        with no_grad():
            y = x * 2.0
        assert not y.requires_grad
        assert y.parents == ()


class TestShapeAlgebra:
    def test_random_valid_triples(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            n, m, p = rng.integers(1, 7, size=3)
            a = t64(rng.normal(size=(n, m)))
            b = t64(rng.normal(size=(m, p)))
            assert (a @ b).shape == (n, p)
            ax = int(rng.integers(0, 2))
            c = t64(rng.normal(size=(n, m)))
            d_shape = [n, m]
            d_shape[ax] = int(rng.integers(1, 5))
            d = t64(rng.normal(size=tuple(d_shape)))
            out = concat(c, d, axis=ax)
            want = list((n, m))
            want[ax] = m + d_shape[ax] if ax == 1 else n + d_shape[ax]
            assert out.shape == tuple(want)

    def test_graph_is_acyclic(self):
        x = t64([1.0], requires_grad=True)
        y = x
        for _ in range(50):
            y = y * 1.5 + x
        y.sum().backward()  # topological sort would hang or fail on a cycle
        assert np.isfinite(x.grad).all()


def _rand_graph_loss(params):
    """Composite graph over the supported op set, for gradient checking."""
    w1, w2, v = params["w1"], params["w2"], params["v"]
    h = (v @ w1).tanh()
    a = row_softmax(h @ w2)
    m = a @ (v @ w1).sigmoid()
    pieces = concat(m, v.exp(), axis=-1)
    s = stack([pieces.sum(axis=0), pieces.square().sum(axis=0)], axis=0)
    norm = (s.square().sum(axis=-1, keepdims=True) + 1.0).sqrt()
    return (s / norm).sum() + frobenius_sq(a @ a.swapaxes(-1, -2) - Tensor(np.eye(a.shape[0], dtype=np.float64)))


class TestFiniteDiffCheck:
    def test_square_at_three(self):
        theta = t64([3.0], requires_grad=True)
        err = finite_diff_check(lambda p: p[0][1].square().sum(), [("theta", theta)], epsilon=1e-4)
        assert err < 1e-8

    def test_nan_loss_raises(self):
        theta = t64([1.0], requires_grad=True)

        def bad(_):
            return Tensor(np.asarray(np.nan, dtype=np.float64), requires_grad=True) * theta.sum()

        with pytest.raises(NumericError):
            finite_diff_check(bad, [("theta", theta)], epsilon=1e-4)

    def test_bad_epsilon(self):
        theta = t64([1.0], requires_grad=True)
        with pytest.raises(ContractError):
            finite_diff_check(lambda p: theta.sum(), [("theta", theta)], epsilon=0.0)

    @pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
    def test_random_composite_graphs(self, seed):
        rng = np.random.default_rng(seed)
        params = {
            "w1": t64(rng.normal(scale=0.4, size=(3, 4)), requires_grad=True),
            "w2": t64(rng.normal(scale=0.4, size=(4, 3)), requires_grad=True),
            "v": t64(rng.normal(scale=0.4, size=(3, 3)), requires_grad=True),
        }
        err = finite_diff_check(_rand_graph_loss, params, epsilon=1e-4)
        assert err < 1e-4


class TestGatherOps:
    def test_take_rows_forward(self):
        table = t64(np.arange(12.0).reshape(4, 3), requires_grad=True)
        out = table.take_rows(np.array([0, 2, 0]))
        np.testing.assert_array_equal(out.values, [[0, 1, 2], [6, 7, 8], [0, 1, 2]])

    def test_take_rows_accumulates_duplicates(self):
        table = t64(np.zeros((4, 3)), requires_grad=True)
        out = table.take_rows(np.array([1, 1, 3]))
        out.sum().backward()
        np.testing.assert_array_equal(table.grad[1], [2.0, 2.0, 2.0])
        np.testing.assert_array_equal(table.grad[3], [1.0, 1.0, 1.0])
        np.testing.assert_array_equal(table.grad[0], [0.0, 0.0, 0.0])

    def test_take_rows_non_integer(self):
        with pytest.raises(ContractError):
            t64(np.zeros((2, 2))).take_rows(np.array([0.5]))

    def test_getitem_backward(self):
        x = t64(np.arange(6.0).reshape(2, 3), requires_grad=True)
        x[:, 1].sum().backward()
        np.testing.assert_array_equal(x.grad, [[0, 1, 0], [0, 1, 0]])


class TestSoftmaxAxis:
    def test_axis_choice_normalizes_that_axis(self):
        rng = np.random.default_rng(5)
        x = t64(rng.normal(size=(2, 3, 4)))
        y = softmax(x, axis=-2)
        np.testing.assert_allclose(y.values.sum(axis=-2), np.ones((2, 4)), atol=1e-9)


class TestConcurrency:
    def test_no_grad_is_thread_local(self):
        # a thread evaluating under no_grad must not suppress another
        # thread's graph recording
        import threading

        results = {}
        barrier = threading.Barrier(2)

        def grad_worker():
            x = t64([2.0], requires_grad=True)
            barrier.wait()
            for _ in range(200):
                x.square().sum().backward()
            results["grad"] = x.grad.copy()

        def eval_worker():
            x = t64([3.0], requires_grad=True)
            barrier.wait()
            y = None
            with no_grad():
                for _ in range(200):
                    y = x.square()
            results["eval_requires_grad"] = y.requires_grad

        threads = [threading.Thread(target=grad_worker), threading.Thread(target=eval_worker)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        np.testing.assert_allclose(results["grad"], [4.0 * 200])
        assert results["eval_requires_grad"] is False

    def test_distinct_graphs_on_distinct_threads(self):
        import threading

        failures = []

        def worker(seed):
            rng = np.random.default_rng(seed)
            x = t64(rng.normal(size=(4,)), requires_grad=True)
            for _ in range(100):
                loss = (x.tanh() * x).sum()
                loss.backward()
                got = x.grad.copy()
                x.reset_grad()
                want = np.tanh(x.values) + x.values * (1 - np.tanh(x.values) ** 2)
                if not np.allclose(got, want, atol=1e-12):
                    failures.append(seed)
                    return

        threads = [threading.Thread(target=worker, args=(s,)) for s in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert failures == []
