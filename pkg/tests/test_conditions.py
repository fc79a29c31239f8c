import numpy as np
import pytest

from jadmm import BlockOperator
from jadmm.conditions import (STRICT_MARGIN, check_cond_2_14, check_cond_4_18,
                              check_near_orthogonality, suggest_tau)
from jadmm.prox import DomainError, ProxSpec

from oracles import near_orthogonal_problem


def _unit_norm_operator(N=2, n=2):
    # identity blocks: ||A_i|| = 1 exactly
    return BlockOperator([np.eye(n)] * N, np.zeros(n))


def _dense_min_eig(M):
    return float(np.linalg.eigvalsh(M)[0])


class TestCond214:
    def test_standard_satisfied(self):
        # N=2, gamma=1, rho=1, ||A_i||=1: threshold rho(N/(2-g)-1) = 1
        A = _unit_norm_operator()
        rep = check_cond_2_14(A, 1.0, 1.0, ProxSpec.standard(np.array([1.5, 1.5])))
        assert rep.satisfied
        for e in rep.margins:
            assert e["margin"] == pytest.approx(0.5, rel=1e-9)
        assert rep.thresholds["standard"] == pytest.approx([1.0, 1.0], rel=1e-9)

    def test_standard_violated_margin(self):
        A = _unit_norm_operator()
        rep = check_cond_2_14(A, 1.0, 1.0, ProxSpec.standard(np.array([0.5, 0.5])))
        assert not rep.satisfied
        assert rep.margins[0]["margin"] == pytest.approx(-0.5, rel=1e-9)

    def test_prox_linear_matches_dense_eig(self):
        rng = np.random.default_rng(0)
        rho, gamma = 0.7, 0.9
        N = 3
        blocks = [rng.standard_normal((6, int(rng.integers(2, 5)))) for _ in range(N)]
        A = BlockOperator(blocks, np.zeros(6))
        thr = [rho * N / (2 - gamma) * np.linalg.norm(b, 2) ** 2 for b in blocks]
        taus = 1.01 * np.array(thr)
        rep = check_cond_2_14(A, rho, gamma, ProxSpec.prox_linear(taus))
        assert rep.satisfied
        kappa = N / (2 - gamma) - 1
        for i, e in enumerate(rep.margins):
            gram = blocks[i].T @ blocks[i]
            P = taus[i] * np.eye(gram.shape[0]) - rho * gram
            expected = _dense_min_eig(P - rho * kappa * gram)
            assert e["margin"] == pytest.approx(expected, rel=1e-6, abs=1e-10)

    def test_explicit_blocks(self):
        rng = np.random.default_rng(1)
        A = BlockOperator([rng.standard_normal((5, 3))], np.zeros(5))
        gram = A.block(0).T @ A.block(0)
        P = 2.0 * gram + 0.5 * np.eye(3)  # comfortably above rho*kappa*gram
        rep = check_cond_2_14(A, 1.0, 1.0, ProxSpec.explicit([P]))
        # N=1, gamma=1: kappa = 0, condition is P > 0
        assert rep.satisfied

    def test_gamma_domain(self):
        A = _unit_norm_operator()
        with pytest.raises(DomainError):
            check_cond_2_14(A, 1.0, 2.0, ProxSpec.none(2))

    def test_monotone_in_tau(self):
        rng = np.random.default_rng(2)
        A = BlockOperator([rng.standard_normal((5, 3)) for _ in range(3)], np.zeros(5))
        taus = suggest_tau(A, 0.8, 1.0, "standard", 1.05)
        assert check_cond_2_14(A, 0.8, 1.0, ProxSpec.standard(taus)).satisfied
        for f in (1.5, 3.0, 10.0):
            assert check_cond_2_14(A, 0.8, 1.0, ProxSpec.standard(f * taus)).satisfied

    def test_scaling_covariance(self):
        # scaling A by s=2 scales the thresholds by exactly s^2
        rng = np.random.default_rng(3)
        blocks = [rng.standard_normal((4, 3)) for _ in range(2)]
        A1 = BlockOperator(blocks, np.zeros(4))
        A2 = BlockOperator([2.0 * b for b in blocks], np.zeros(4))
        r1 = check_cond_2_14(A1, 1.0, 1.0, ProxSpec.standard(np.array([1.0, 1.0])))
        r2 = check_cond_2_14(A2, 1.0, 1.0, ProxSpec.standard(np.array([4.0, 4.0])))
        t1 = np.array(r1.thresholds["standard"])
        t2 = np.array(r2.thresholds["standard"])
        np.testing.assert_allclose(t2, 4.0 * t1, rtol=1e-9)
        assert r1.satisfied == r2.satisfied


class TestSuggestTau:
    def test_standard_example(self):
        A = _unit_norm_operator()
        taus = suggest_tau(A, 1.0, 1.0, "standard", 1.1)
        np.testing.assert_allclose(taus, 1.1, rtol=1e-9)

    def test_prox_linear_example(self):
        A = _unit_norm_operator()
        taus = suggest_tau(A, 1.0, 1.0, "prox_linear", 1.1)
        np.testing.assert_allclose(taus, 2.2, rtol=1e-9)

    def test_feedback_satisfies(self):
        for seed in range(5):
            rng = np.random.default_rng(seed)
            N = int(rng.integers(2, 5))
            A = BlockOperator(
                [rng.standard_normal((6, int(rng.integers(1, 4)))) for _ in range(N)],
                np.zeros(6))
            for kind, make in (("standard", ProxSpec.standard),
                               ("prox_linear", ProxSpec.prox_linear)):
                taus = suggest_tau(A, 0.5, 1.2, kind, 1.1)
                assert check_cond_2_14(A, 0.5, 1.2, make(taus)).satisfied

    def test_slack_must_exceed_one(self):
        with pytest.raises(DomainError):
            suggest_tau(_unit_norm_operator(), 1.0, 1.0, "standard", 1.0)


class TestNearOrthogonality:
    def test_exactly_orthogonal(self):
        # disjoint orthonormal column groups: delta = 0, lambda_min = 1
        rng = np.random.default_rng(4)
        Q, _ = np.linalg.qr(rng.standard_normal((9, 6)))
        A = BlockOperator([Q[:, :2], Q[:, 2:4], Q[:, 4:6]], np.zeros(9))
        rep = check_near_orthogonality(A)
        assert rep.satisfied
        assert rep.delta == pytest.approx(0.0, abs=1e-12)
        np.testing.assert_allclose(rep.lambda_min, 1.0, rtol=1e-9)

    def test_identical_orthogonal_blocks_fail(self):
        rng = np.random.default_rng(5)
        Q, _ = np.linalg.qr(rng.standard_normal((4, 4)))
        A = BlockOperator([Q, Q], np.zeros(4))
        rep = check_near_orthogonality(A)
        assert not rep.satisfied
        assert rep.delta == pytest.approx(1.0, rel=1e-9)
        assert min(rep.lambda_min) == pytest.approx(1.0, rel=1e-9)

    def test_perturbed_matches_dense_oracle(self):
        prob = near_orthogonal_problem(0, N=3, ni=5, pert=1e-3)
        A = prob.operator
        rep = check_near_orthogonality(A)
        assert rep.satisfied
        delta_d = 0.0
        for i in range(3):
            for j in range(3):
                if i != j:
                    delta_d = max(delta_d, np.linalg.norm(
                        A.block(i).T @ A.block(j), 2))
        lmin_d = [float(np.linalg.eigvalsh(A.block(i).T @ A.block(i))[0])
                  for i in range(3)]
        assert rep.delta == pytest.approx(delta_d, rel=1e-6)
        np.testing.assert_allclose(rep.lambda_min, lmin_d, rtol=1e-6)

    def test_single_block_degenerate(self):
        rng = np.random.default_rng(6)
        A = BlockOperator([rng.standard_normal((4, 2))], np.zeros(4))
        rep = check_near_orthogonality(A)
        assert rep.satisfied and rep.delta == 0.0


class TestCond418:
    def test_orthogonal_full_rank_satisfied(self):
        rng = np.random.default_rng(7)
        Q, _ = np.linalg.qr(rng.standard_normal((8, 6)))
        A = BlockOperator([Q[:, :3], Q[:, 3:]], np.zeros(8))
        alpha, beta = 0.5, 1.0
        tau = 1.0 * (1 / alpha - 1) * 1.0 * 1.5  # above rho(1/a-1)||A_i||^2
        rep = check_cond_4_18(A, 1.0, 1.0, ProxSpec.standard(np.array([tau, tau])),
                              alpha, beta)
        assert rep.satisfied

    def test_rank_deficient_fails(self):
        rng = np.random.default_rng(8)
        Q, _ = np.linalg.qr(rng.standard_normal((8, 4)))
        low = Q[:, :3] @ rng.standard_normal((3, 4))  # rank 3 < 4 columns
        A = BlockOperator([low, Q[:, 2:4]], np.zeros(8))
        rep = check_cond_4_18(A, 1.0, 1.0,
                              ProxSpec.standard(np.array([50.0, 50.0])), 0.5, 1.0)
        assert not rep.satisfied

    def test_grid_matches_dense_brute_force(self):
        prob = near_orthogonal_problem(1, N=3, ni=4, pert=5e-3)
        A = prob.operator
        rho, gamma = 1.0, 1.0
        taus = np.full(3, 2.0)
        prox = ProxSpec.standard(taus)
        # dense delta
        delta = 0.0
        for i in range(3):
            for j in range(3):
                if i != j:
                    delta = max(delta, np.linalg.norm(A.block(i).T @ A.block(j), 2))
        for alpha in (0.1, 0.5, 0.9):
            for beta in (0.1, 0.5, 1.0, 2.0):
                rep = check_cond_4_18(A, rho, gamma, prox, alpha, beta)
                sat_d = True
                for i in range(3):
                    gram = A.block(i).T @ A.block(i)
                    M = (taus[i] * np.eye(4) - rho * (1 / alpha - 1) * gram
                         - (rho / beta) * delta * 2 * np.eye(4))
                    m1 = _dense_min_eig(M)
                    lmin = _dense_min_eig(gram)
                    rhs = (2 - gamma + beta) / (2 - gamma - alpha) * delta * 2
                    sat_d &= (m1 > STRICT_MARGIN) and (lmin - rhs > STRICT_MARGIN)
                assert rep.satisfied == sat_d, (alpha, beta)

    def test_alpha_domain(self):
        A = _unit_norm_operator()
        with pytest.raises(DomainError):
            check_cond_4_18(A, 1.0, 1.0, ProxSpec.none(2), alpha=1.0, beta=1.0)
        with pytest.raises(DomainError):
            check_cond_4_18(A, 1.0, 1.0, ProxSpec.none(2), alpha=0.5, beta=0.0)

    def test_report_serializes(self):
        A = _unit_norm_operator()
        rep = check_cond_4_18(A, 1.0, 1.0, ProxSpec.standard(np.array([3.0, 3.0])),
                              0.5, 1.0)
        d = rep.to_dict()
        assert d["condition"] == "cond_4_18"
        assert d["params"] == {"alpha": 0.5, "beta": 1.0}
        import json
        json.dumps(d)
