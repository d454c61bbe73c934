import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from subnet_ensemble import tensor as T
from subnet_ensemble.errors import DomainError, NonFiniteError, ShapeError
from subnet_ensemble.tensor import Tensor


def triple_loop(a, b):
    n, k = len(a), len(b)
    m = len(b[0])
    out = [[0.0] * m for _ in range(n)]
    for i in range(n):
        for j in range(m):
            s = 0.0
            for t in range(k):
                s += a[i][t] * b[t][j]
            out[i][j] = s
    return out


class TestTensorType:
    def test_shape_and_flat_data(self):
        t = Tensor([[1, 2, 3], [4, 5, 6]])
        assert t.shape == (2, 3)
        assert t.data.tolist() == [1, 2, 3, 4, 5, 6]
        assert math.prod(t.shape) == t.data.size

    def test_immutable(self):
        t = Tensor([1.0, 2.0])
        with pytest.raises(ValueError):
            t.array[0] = 5.0

    def test_input_is_copied(self):
        a = np.array([1.0, 2.0])
        t = Tensor(a)
        a[0] = 9.0
        assert t.data[0] == 1.0

    def test_rejects_non_finite(self):
        with pytest.raises(NonFiniteError):
            Tensor([1.0, float("nan")])

    def test_explicit_shape_mismatch(self):
        with pytest.raises(ShapeError):
            Tensor([1, 2, 3], shape=(2, 2))


class TestMatmul:
    def test_identity(self):
        out = T.matmul(Tensor([[1, 0], [0, 1]]), Tensor([[3, 4], [5, 6]]))
        assert out.tolist() == [[3, 4], [5, 6]]

    def test_row_by_column(self):
        assert T.matmul(Tensor([[1, 2]]), Tensor([[3], [4]])).tolist() == [[11]]

    def test_against_triple_loop(self, rng):
        a = rng.standard_normal((5, 7))
        b = rng.standard_normal((7, 3))
        got = T.matmul(Tensor(a), Tensor(b)).array
        want = np.array(triple_loop(a.tolist(), b.tolist()))
        assert np.abs(got - want).max() < 1e-12

    def test_shape_error_names_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_associativity(self, rng):
        for _ in range(20):
            a, b, c = (Tensor(rng.standard_normal(s)) for s in ((3, 4), (4, 5), (5, 2)))
            left = T.matmul(T.matmul(a, b), c).array
            right = T.matmul(a, T.matmul(b, c)).array
            assert np.abs(left - right).max() <= 1e-9 * np.abs(right).max()


class TestReduce:
    def test_var_unbiased_pair(self):
        assert T.reduce(Tensor([0.0, 2.0]), 0, "var_unbiased").item() == 2.0

    def test_mean(self):
        assert T.reduce(Tensor([1.0, 2.0, 3.0]), 0, "mean").item() == 2.0

    def test_sum_axis0(self):
        assert T.reduce(Tensor.ones(4, 3), 0, "sum").tolist() == [4, 4, 4]

    def test_axis_out_of_range(self):
        with pytest.raises(ShapeError):
            T.reduce(Tensor.ones(2, 2), 2, "sum")

    def test_var_needs_two(self):
        with pytest.raises(ShapeError):
            T.reduce(Tensor.ones(1, 3), 0, "var_unbiased")

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=30))
    def test_var_matches_two_pass(self, xs):
        mean = sum(xs) / len(xs)
        want = sum((x - mean) ** 2 for x in xs) / (len(xs) - 1)
        got = T.reduce(Tensor(xs), 0, "var_unbiased").item()
        assert abs(got - want) <= 1e-12 * max(1.0, abs(want))

    def test_sum_all_axes_equals_fold(self, rng):
        a = rng.standard_normal((3, 4, 5))
        t = Tensor(a)
        while t.rank > 1:
            t = T.reduce(t, 0, "sum")
        t = T.reduce(t, 0, "sum")
        fold = 0.0
        for v in a.reshape(-1):
            fold += v
        assert abs(t.item() - fold) < 1e-12


class TestMap:
    def test_hinge_below(self):
        out = T.map(Tensor([0.10, 0.20]), "hinge_below", 0.15).array
        assert out == pytest.approx([0.05, 0.0], abs=1e-15)

    def test_relu(self):
        assert T.map(Tensor([-1.0, 0.0, 2.0]), "relu").tolist() == [0, 0, 2]

    def test_sqrt(self):
        assert T.map(Tensor([4.0, 9.0]), "sqrt").tolist() == [2, 3]

    def test_sqrt_domain_names_index(self):
        with pytest.raises(DomainError, match=r"\(1,\)"):
            T.map(Tensor([1.0, -1.0]), "sqrt")

    def test_log_domain(self):
        with pytest.raises(DomainError, match=r"\(0, 1\)"):
            T.map(Tensor([[1.0, 0.0]]), "log")

    def test_scalar_ops(self):
        t = Tensor([1.0, -2.0])
        assert T.map(t, "add_scalar", 1.5).tolist() == [2.5, -0.5]
        assert T.map(t, "mul_scalar", -2).tolist() == [-2, 4]
        assert T.map(t, "negate").tolist() == [-1, 2]

    def test_exp_overflow_is_non_finite(self):
        with pytest.raises(NonFiniteError):
            T.map(Tensor([1e4]), "exp")


class TestStructural:
    def test_binary_shape_check(self):
        with pytest.raises(ShapeError):
            T.add(Tensor.ones(2), Tensor.ones(3))

    def test_row_helpers(self):
        x = Tensor([[1.0, 2.0], [3.0, 4.0]])
        assert T.add_row(x, Tensor([10.0, 20.0])).tolist() == [[11, 22], [13, 24]]
        assert T.scale_rows(x, Tensor([2.0, 3.0])).tolist() == [[2, 4], [9, 12]]
        assert T.scale_cols(x, Tensor([2.0, 3.0])).tolist() == [[2, 6], [6, 12]]

    def test_stack_concat(self):
        a, b = Tensor([[1.0, 2.0]]), Tensor([[3.0, 4.0]])
        assert T.stack([a, b], axis=1).shape == (1, 2, 2)
        assert T.concat([a, b], axis=0).tolist() == [[1, 2], [3, 4]]
        with pytest.raises(ShapeError):
            T.concat([a, Tensor([[1.0]])], axis=0)
