import numpy as np
import pytest

from jadmm import (BlockOperator, BlockVector, Iterate, MetricSpec,
                   QuadraticTerm, SeparableObjective, ShapeError, apply,
                   metric_norm_sq)
from jadmm.core import CompositeMetric, ScaledIdentityMetric
from jadmm.prox import ProxLinear, ProxSpec

from oracles import dense_operator


class TestBlockVector:
    def test_basic(self):
        x = BlockVector([np.array([1.0, 2.0]), np.array([3.0])])
        assert x.n_blocks == 2
        assert x.sizes == (2, 1)
        assert x.size == 3
        np.testing.assert_array_equal(x.block(1), [3.0])

    def test_rejects_empty(self):
        with pytest.raises(ShapeError):
            BlockVector([])
        with pytest.raises(ShapeError):
            BlockVector([np.array([])])

    def test_immutable(self):
        x = BlockVector([np.array([1.0, 2.0])])
        with pytest.raises(ValueError):
            x.data[0] = 5.0
        with pytest.raises(ValueError):
            x.block(0)[0] = 5.0

    def test_from_packed(self):
        x = BlockVector.from_packed(np.arange(5.0), [2, 3])
        assert x.sizes == (2, 3)
        with pytest.raises(ShapeError):
            BlockVector.from_packed(np.arange(5.0), [2, 2])


class TestBlockOperator:
    def test_row_count_checked(self):
        with pytest.raises(ShapeError, match="block 1"):
            BlockOperator([np.ones((3, 2)), np.ones((4, 2))], np.zeros(3))
        with pytest.raises(ShapeError):
            BlockOperator([np.ones((3, 2))], np.zeros(4))

    def test_apply_zero(self):
        # identity blocks, x = 0
        A = BlockOperator([np.eye(2), np.eye(2)], np.zeros(2))
        x = BlockVector([np.zeros(2), np.zeros(2)])
        np.testing.assert_array_equal(apply(A, x), np.zeros(2))

    def test_apply_identity_blocks(self):
        A = BlockOperator([np.eye(2), np.eye(2)], np.zeros(2))
        x = BlockVector([np.array([1.0, 0.0]), np.array([0.0, 1.0])])
        np.testing.assert_array_equal(apply(A, x), [1.0, 1.0])

    def test_apply_matches_dense_assembly(self):
        rng = np.random.default_rng(0)
        A = BlockOperator([rng.standard_normal((4, 3)),
                           rng.standard_normal((4, 3))], rng.standard_normal(4))
        xp = rng.standard_normal(6)
        x = BlockVector.from_packed(xp, [3, 3])
        dense = dense_operator(A) @ xp
        np.testing.assert_allclose(apply(A, x), dense, rtol=1e-13, atol=1e-13)

    def test_apply_shape_error_names_block(self):
        A = BlockOperator([np.eye(2), np.eye(2)], np.zeros(2))
        x = BlockVector([np.zeros(2), np.zeros(3)])
        with pytest.raises(ShapeError, match="block 1"):
            apply(A, x)

    def test_apply_linear(self):
        rng = np.random.default_rng(1)
        A = BlockOperator([rng.standard_normal((5, 2)),
                           rng.standard_normal((5, 4))], np.zeros(5))
        for _ in range(20):
            xp, yp = rng.standard_normal(6), rng.standard_normal(6)
            a, b = rng.standard_normal(2)
            lhs = apply(A, BlockVector.from_packed(a * xp + b * yp, [2, 4]))
            rhs = a * apply(A, BlockVector.from_packed(xp, [2, 4])) \
                + b * apply(A, BlockVector.from_packed(yp, [2, 4]))
            np.testing.assert_allclose(lhs, rhs, rtol=1e-10, atol=1e-12)


class TestMetrics:
    def test_zero_vector(self):
        G = MetricSpec.identity([2, 2], lam_weight=1.0)
        u = Iterate(BlockVector([np.zeros(2), np.zeros(2)]), np.zeros(3))
        assert metric_norm_sq(G, u) == 0.0

    def test_euclidean_case(self):
        G = MetricSpec.identity([2])
        x = BlockVector([np.array([3.0, 4.0])])
        assert metric_norm_sq(G, x) == 25.0

    def test_composite_cancellation_exact(self):
        # (tau I - rho A^T A) + rho A^T A must evaluate to exactly tau ||x||^2
        rng = np.random.default_rng(2)
        Ai = rng.standard_normal((6, 4))
        tau, rho = 0.37, 1.9
        comp = CompositeMetric(ProxLinear(tau), rho, Ai)
        for _ in range(10):
            z = rng.standard_normal(4)
            assert comp.quad(z) == tau * float(np.dot(z, z))

    def test_parallelogram_law(self):
        rng = np.random.default_rng(3)
        A = BlockOperator([rng.standard_normal((5, 3)),
                           rng.standard_normal((5, 2))], np.zeros(5))
        prox = ProxSpec.standard(np.array([0.5, 1.5]))
        G = MetricSpec.solver_metric(A, 0.8, 1.0, prox)
        for _ in range(20):
            up = rng.standard_normal(5)
            vp = rng.standard_normal(5)
            lu, lv = rng.standard_normal(5), rng.standard_normal(5)
            u = Iterate(BlockVector.from_packed(up, [3, 2]), lu)
            v = Iterate(BlockVector.from_packed(vp, [3, 2]), lv)
            s = Iterate(BlockVector.from_packed(up + vp, [3, 2]), lu + lv)
            d = Iterate(BlockVector.from_packed(up - vp, [3, 2]), lu - lv)
            lhs = metric_norm_sq(G, s) + metric_norm_sq(G, d)
            rhs = 2 * metric_norm_sq(G, u) + 2 * metric_norm_sq(G, v)
            assert abs(lhs - rhs) <= 1e-8 * max(abs(rhs), 1.0)

    def test_clamps_tiny_negative(self):
        class Tiny:
            def quad(self, z):
                return -1e-13 * float(np.dot(z, z))

        G = MetricSpec([Tiny()])
        x = BlockVector([np.ones(3)])
        assert metric_norm_sq(G, x) == 0.0
        # larger negatives pass through untouched
        G2 = MetricSpec([ScaledIdentityMetric(-1.0)])
        assert metric_norm_sq(G2, x) == -3.0

    def test_iterate_requires_lambda_part(self):
        G = MetricSpec.identity([2])
        u = Iterate(BlockVector([np.zeros(2)]), np.zeros(2))
        with pytest.raises(ShapeError):
            metric_norm_sq(G, u)


class TestObjective:
    def test_quadratic_value(self):
        rng = np.random.default_rng(4)
        C, d = rng.standard_normal((5, 3)), rng.standard_normal(5)
        t = QuadraticTerm(C, d)
        x = rng.standard_normal(3)
        assert t.value(x) == pytest.approx(0.5 * np.linalg.norm(C @ x - d) ** 2)

    def test_l1_value(self):
        from jadmm import L1Term
        t = L1Term()
        assert t.value(np.array([1.0, -2.0, 0.5])) == 3.5

    def test_block_count_mismatch(self):
        obj = SeparableObjective([QuadraticTerm(np.eye(2), np.zeros(2))])
        x = BlockVector([np.zeros(2), np.zeros(2)])
        with pytest.raises(ShapeError):
            obj.value(x)
