import numpy as np
import pytest

from jadmm import gen_basis_pursuit, gen_exchange, partition, split_to_blocks
from jadmm.core import ShapeError

from oracles import dense_operator, kkt_least_squares


class TestGenExchange:
    def test_planted_solution_sums_to_zero_and_zero_objective(self):
        # "the optimal objective value is 0": d_i = C_i x_i* makes the planted
        # point feasible with objective exactly zero
        inst = gen_exchange(n=12, N=5, p=9, seed=42)
        s = np.zeros(12)
        for i in range(5):
            s = s + inst.x_star.block(i)
        np.testing.assert_array_equal(s, np.zeros(12))
        obj = inst.objective().value(inst.x_star)
        assert obj == 0.0

    def test_single_agent_degenerate(self):
        inst = gen_exchange(n=4, N=1, p=3, seed=0)
        np.testing.assert_array_equal(inst.x_star.block(0), np.zeros(4))
        np.testing.assert_array_equal(inst.d[0], np.zeros(3))

    def test_deterministic(self):
        a = gen_exchange(n=8, N=3, p=5, seed=7)
        b = gen_exchange(n=8, N=3, p=5, seed=7)
        np.testing.assert_array_equal(a.x_star.data, b.x_star.data)
        for i in range(3):
            np.testing.assert_array_equal(a.C[i], b.C[i])
            np.testing.assert_array_equal(a.d[i], b.d[i])
        c = gen_exchange(n=8, N=3, p=5, seed=8)
        assert not np.array_equal(a.C[0], c.C[0])

    def test_kkt_oracle_solvable(self):
        inst = gen_exchange(n=10, N=4, p=7, seed=1)
        prob = inst.problem()
        sol = kkt_least_squares(prob.operator, list(inst.C), list(inst.d))
        feas = np.linalg.norm(prob.operator.apply(sol.x))
        scale = sum(float(d @ d) for d in inst.d)
        assert feas <= 1e-8 * np.sqrt(scale)
        assert prob.objective.value(sol.x) <= 1e-16 * scale

    def test_rejects_bad_dims(self):
        with pytest.raises(ShapeError):
            gen_exchange(n=0, N=2, p=2, seed=0)


class TestGenBasisPursuit:
    def test_noise_free_consistency(self):
        inst = gen_basis_pursuit(m=20, n=50, N=5, k=6, sigma=0.0, seed=3)
        assert np.linalg.norm(inst.A @ inst.x_star - inst.c) == 0.0
        assert np.count_nonzero(inst.x_star) == 6

    def test_paper_experiment_shape(self):
        # n=1000, m=300, k=60 partitioned into N=100 blocks of width 10
        inst = gen_basis_pursuit(m=300, n=1000, N=100, k=60, sigma=0.0, seed=0)
        op = inst.operator()
        assert op.col_sizes == tuple([10] * 100)
        assert np.count_nonzero(inst.x_star) == 60

    def test_noise_scale_chi_bound(self):
        # ||A x* - c|| / sqrt(m) concentrates near sigma (chi distribution)
        sigma = 1e-3
        for seed in range(100):
            inst = gen_basis_pursuit(m=300, n=40, N=4, k=5, sigma=sigma, seed=seed)
            r = np.linalg.norm(inst.A @ inst.x_star - inst.c) / np.sqrt(300)
            assert 0.5e-3 <= r <= 2e-3

    def test_deterministic(self):
        a = gen_basis_pursuit(m=10, n=30, N=3, k=4, sigma=1e-2, seed=11)
        b = gen_basis_pursuit(m=10, n=30, N=3, k=4, sigma=1e-2, seed=11)
        np.testing.assert_array_equal(a.A, b.A)
        np.testing.assert_array_equal(a.c, b.c)
        np.testing.assert_array_equal(a.x_star, b.x_star)

    def test_sigma_does_not_change_signal(self):
        a = gen_basis_pursuit(m=10, n=30, N=3, k=4, sigma=0.0, seed=5)
        b = gen_basis_pursuit(m=10, n=30, N=3, k=4, sigma=1e-3, seed=5)
        np.testing.assert_array_equal(a.A, b.A)
        np.testing.assert_array_equal(a.x_star, b.x_star)

    def test_domain_errors(self):
        with pytest.raises(ShapeError):
            gen_basis_pursuit(m=5, n=10, N=3, k=11, sigma=0.0, seed=0)
        with pytest.raises(ShapeError):
            gen_basis_pursuit(m=5, n=10, N=11, k=2, sigma=0.0, seed=0)


class TestPartition:
    def test_single_block(self):
        A = np.arange(12.0).reshape(3, 4)
        op = partition(A, 1)
        np.testing.assert_array_equal(op.block(0), A)

    def test_ceiling_first_sizes(self):
        op = partition(np.ones((2, 10)), 3)
        assert op.col_sizes == (4, 3, 3)

    def test_concatenation_reproduces(self):
        rng = np.random.default_rng(6)
        A = rng.standard_normal((5, 13))
        op = partition(A, 4)
        np.testing.assert_array_equal(dense_operator(op), A)

    def test_apply_matches_dense_product(self):
        rng = np.random.default_rng(7)
        A = rng.standard_normal((6, 11))
        x = rng.standard_normal(11)
        op = partition(A, 3)
        xb = split_to_blocks(x, 3)
        np.testing.assert_allclose(op.apply(xb), A @ x, rtol=1e-13, atol=1e-13)

    def test_too_many_blocks(self):
        with pytest.raises(ShapeError):
            partition(np.ones((2, 3)), 4)
