import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dtvae import linalg
from dtvae.linalg import ContractError, SingularMatrixError


def well_conditioned(rng, n):
    return rng.standard_normal((n, n)) + n * np.eye(n)


class TestMatmul:
    def test_identity(self):
        m = np.arange(9.0).reshape(3, 3)
        assert np.array_equal(linalg.matmul(np.eye(3), m), m)

    def test_small_analytic(self):
        out = linalg.matmul([[1, 2], [3, 4]], [[0], [1]])
        assert np.array_equal(out, [[2], [4]])

    def test_transpose_oracle(self):
        rng = np.random.default_rng(0)
        a, b = rng.standard_normal((5, 3)), rng.standard_normal((3, 4))
        np.testing.assert_allclose(linalg.matmul(a, b).T, linalg.matmul(b.T, a.T), atol=1e-14)

    def test_mismatch(self):
        with pytest.raises(ContractError):
            linalg.matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_non_finite_rejected(self):
        with pytest.raises(ContractError):
            linalg.matmul([[np.nan]], [[1.0]])


class TestLuLogdet:
    def test_identity(self):
        assert linalg.lu_logdet(np.eye(4)) == (1, 0.0)

    def test_two_by_two(self):
        sign, logabs = linalg.lu_logdet([[1, 2], [3, 4]])
        assert sign == -1
        assert logabs == pytest.approx(math.log(2), abs=1e-14)

    @pytest.mark.parametrize("n", [1, 2, 3, 4, 5, 6])
    def test_matches_cofactor_expansion(self, n):
        rng = np.random.default_rng(n)
        m = rng.standard_normal((n, n))
        ref = linalg.cofactor_det(m)
        sign, logabs = linalg.lu_logdet(m)
        assert sign == np.sign(ref)
        assert logabs == pytest.approx(math.log(abs(ref)), abs=1e-10)

    def test_singular_sentinel(self):
        sign, logabs = linalg.lu_logdet([[1.0, 2.0], [2.0, 4.0]])
        assert sign == 0 and logabs == -math.inf

    def test_batched_matches_single(self):
        rng = np.random.default_rng(3)
        stack = rng.standard_normal((7, 5, 5))
        signs, logs = linalg.lu_logdet(stack)
        for i in range(7):
            s, l = linalg.lu_logdet(stack[i])
            assert signs[i] == s
            assert logs[i] == pytest.approx(l, abs=1e-13)

    def test_non_square(self):
        with pytest.raises(ContractError):
            linalg.lu_logdet(np.ones((2, 3)))

    def test_product_rule(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            a, b = well_conditioned(rng, 6), well_conditioned(rng, 6)
            sa, la = linalg.lu_logdet(a)
            sb, lb = linalg.lu_logdet(b)
            sab, lab = linalg.lu_logdet(a @ b)
            assert sab == sa * sb
            assert abs(lab - (la + lb)) <= 1e-8


class TestDenseInverse:
    def test_identity(self):
        np.testing.assert_array_equal(linalg.dense_inverse(np.eye(5)), np.eye(5))

    def test_diagonal(self):
        np.testing.assert_allclose(linalg.dense_inverse(np.diag([2.0, 4.0])), np.diag([0.5, 0.25]),
                                   atol=1e-15)

    def test_multiply_back(self):
        rng = np.random.default_rng(5)
        m = well_conditioned(rng, 8)
        assert np.max(np.abs(m @ linalg.dense_inverse(m) - np.eye(8))) <= 1e-9

    def test_involution(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            m = well_conditioned(rng, 7)
            assert np.linalg.cond(m) < 1e6
            back = linalg.dense_inverse(linalg.dense_inverse(m))
            assert np.max(np.abs(back - m)) <= 1e-8 * np.max(np.abs(m))

    def test_singular_names_pivot(self):
        with pytest.raises(SingularMatrixError) as info:
            linalg.dense_inverse([[1.0, 2.0], [2.0, 4.0]])
        assert info.value.pivot == 1
        assert "pivot 1" in str(info.value)


class TestTrace:
    def test_identity(self):
        assert linalg.trace(np.eye(7)) == 7

    def test_analytic(self):
        assert linalg.trace([[1, 9], [9, 5]]) == 6

    def test_cyclic_factors(self):
        rng = np.random.default_rng(2)
        u, v = rng.standard_normal((4, 2)), rng.standard_normal((2, 4))
        assert linalg.trace(u @ v) == pytest.approx(linalg.trace(v @ u), rel=1e-12)

    def test_non_square(self):
        with pytest.raises(ContractError):
            linalg.trace(np.ones((2, 3)))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_trace_cyclic_property(m, n, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((m, n)), rng.standard_normal((n, m))
    t1, t2 = linalg.trace(a @ b), linalg.trace(b @ a)
    assert abs(t1 - t2) <= 1e-10 * max(1.0, abs(t1))


def test_lu_solve_reconstructs():
    rng = np.random.default_rng(9)
    m = well_conditioned(rng, 6)
    lu, perm, _, singular = linalg.lu_factor(m)
    assert not singular
    rhs = rng.standard_normal((6, 3))
    np.testing.assert_allclose(m @ linalg.lu_solve(lu, perm, rhs), rhs, atol=1e-12)
