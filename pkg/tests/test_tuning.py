import numpy as np
import pytest

from jadmm import gen_exchange
from jadmm.prox import (DomainError, ProxExplicit, ProxLinear, ProxNone,
                        ProxSpec, ProxStandard)
from jadmm.solvers import ConfigurationError, SolverConfig, solve_prox_jacobi
from jadmm.tuning import (IncreaseAndRestart, Keep, TunerConfig,
                          TunerExhaustedError, grow_prox, tune_step)

from oracles import random_quadratic_problem, kkt_quadratic
from jadmm.conditions import suggest_tau


class TestTuneStep:
    def test_keep_when_contraction_holds(self):
        cfg = TunerConfig(eta=0.1)
        d = tune_step(1.0, 0.5, ProxSpec.standard(np.array([1.0])), cfg, rho=1.0)
        assert isinstance(d, Keep)  # 1.0 > 0.1 * 0.5

    def test_increase_doubles_tau_under_defaults(self):
        cfg = TunerConfig(eta=0.1)
        d = tune_step(0.0, 0.5, ProxSpec.standard(np.array([1.0, 2.0])), cfg, rho=1.0)
        assert isinstance(d, IncreaseAndRestart)
        assert [b.tau for b in d.new_prox.blocks] == [2.0, 4.0]

    def test_fixed_point_transition_keeps(self):
        cfg = TunerConfig(eta=0.1)
        d = tune_step(0.0, 0.0, ProxSpec.standard(np.array([1.0])), cfg, rho=1.0)
        assert isinstance(d, Keep)

    def test_default_eta_scaling(self):
        from jadmm.tuning import default_eta
        assert default_eta(0.01, 1.0) == pytest.approx(0.1)

    def test_exhausted(self):
        cfg = TunerConfig(eta=0.1, max_adjustments=3)
        with pytest.raises(TunerExhaustedError):
            tune_step(0.0, 1.0, ProxSpec.standard(np.array([1.0])), cfg,
                      rho=1.0, increases_done=3)

    def test_config_validation(self):
        with pytest.raises(DomainError):
            TunerConfig(alpha=1.0)
        with pytest.raises(DomainError):
            TunerConfig(beta=-0.1)
        with pytest.raises(DomainError):
            TunerConfig(eta=0.0)
        with pytest.raises(DomainError):
            TunerConfig(decrease_every=5)  # needs max_decreases >= 1


class TestGrowProx:
    def test_monotone_growth_all_variants(self):
        rng = np.random.default_rng(0)
        B = rng.standard_normal((3, 3))
        spec = ProxSpec([ProxStandard(0.5), ProxLinear(0.8), ProxExplicit(B @ B.T),
                         ProxNone()])
        cfg = TunerConfig(alpha=2.0, beta=0.5, q_scale=1.0)
        grown = grow_prox(spec, cfg, rho=1.0)
        assert grown.blocks[0].tau == pytest.approx(1.5)   # 2*0.5 + 0.5
        assert grown.blocks[1].tau == pytest.approx(2.1)   # 2*0.8 + 0.5
        assert isinstance(grown.blocks[3], ProxStandard)   # zero -> beta*q mass
        # quadratic forms grow strictly on random vectors
        for _ in range(10):
            z = rng.standard_normal(3)
            old = float(z @ (B @ B.T) @ z)
            new = float(z @ grown.blocks[2].P @ z)
            assert new > old

    def test_zero_block_needs_beta(self):
        cfg = TunerConfig(alpha=2.0, beta=0.0)
        with pytest.raises(DomainError):
            grow_prox(ProxSpec.none(2), cfg, rho=1.0)

    def test_per_block_factors(self):
        cfg = TunerConfig(alpha=[2.0, 3.0], beta=0.0)
        grown = grow_prox(ProxSpec.standard(np.array([1.0, 1.0])), cfg, rho=1.0)
        assert [b.tau for b in grown.blocks] == [2.0, 3.0]


class TestTunerInSolver:
    def test_restart_rolls_back_bitwise(self):
        # force a failing test at some iteration with a huge eta: the state
        # entering the next iteration must equal the pre-step state exactly
        prob, Cs, ds = random_quadratic_problem(0)
        taus = suggest_tau(prob.operator, 0.5, 1.0, "standard", 1.1)
        cfg = SolverConfig(scheme="prox_jacobi", rho=0.5, max_iters=6,
                           prox=ProxSpec.standard(taus))
        seen = []
        tuner = TunerConfig(eta=1e12, max_adjustments=4)

        def cb(k, it, rec):
            seen.append((k, rec.tuner_event, it.x.data.copy(), it.lam.copy()))

        with pytest.raises(TunerExhaustedError):
            solve_prox_jacobi(prob, cfg, tuner, callback=cb)
        assert seen, "expected at least one recorded iteration"
        restarts = [s for s in seen if s[1] and "increase_restart" in s[1]]
        assert restarts
        # every restarted iteration reports the unchanged (rolled back) state
        k0, _, x0, l0 = seen[0]
        for _, ev, x, lam in seen:
            if ev and "increase_restart" in ev:
                np.testing.assert_array_equal(x, x0)
                np.testing.assert_array_equal(lam, l0)

    def test_no_restarts_when_condition_holds(self):
        # with (2.14) satisfied and a small eta the test never fails
        for seed in range(3):
            prob, Cs, ds = random_quadratic_problem(seed)
            taus = suggest_tau(prob.operator, 0.5, 1.0, "standard", 1.1)
            cfg = SolverConfig(scheme="prox_jacobi", rho=0.5, max_iters=200,
                               prox=ProxSpec.standard(taus))
            h = solve_prox_jacobi(prob, cfg, TunerConfig(eta=1e-8))
            assert all(r.tuner_event is None for r in h.records)

    def test_exchange_desk_adjustments_finite_and_below_threshold(self):
        # start at the paper initialization 0.1 (N-1) rho and let the tuner run:
        # adjustments stop and the final tau stays strictly below the
        # sufficient-condition threshold rho (N/(2-gamma) - 1) ||A_i||^2
        inst = gen_exchange(n=20, N=8, p=16, seed=0)
        prob = inst.problem()
        rho, gamma, N = 0.01, 1.0, 8
        tau0 = 0.1 * (N - 1) * rho
        cfg = SolverConfig(scheme="prox_jacobi", rho=rho, gamma=gamma,
                           max_iters=400, prox=ProxSpec.standard(np.full(N, tau0)))
        h = solve_prox_jacobi(prob, cfg, TunerConfig())
        events = [r.tuner_event for r in h.records if r.tuner_event]
        assert len(events) < 20
        # no adjustments in the last three quarters of the run
        last_k = max((r.k for r in h.records if r.tuner_event), default=0)
        assert last_k < 100
        final_tau = max(float(r.tuner_event.split("tau_max=")[1].split(";")[0])
                        for r in h.records if r.tuner_event) if events else tau0
        threshold = rho * (N / (2 - gamma) - 1) * 1.0  # ||A_i|| = 1 (identity)
        assert final_tau < threshold

    def test_tuner_with_zero_prox_rejected(self):
        prob, _, _ = random_quadratic_problem(1)
        cfg = SolverConfig(scheme="prox_jacobi", rho=0.5, max_iters=5)
        with pytest.raises(ConfigurationError):
            solve_prox_jacobi(prob, cfg, TunerConfig(beta=0.0))

    def test_decrease_policy_bounded(self):
        prob, _, _ = random_quadratic_problem(2)
        taus = suggest_tau(prob.operator, 0.5, 1.0, "standard", 1.5)
        cfg = SolverConfig(scheme="prox_jacobi", rho=0.5, max_iters=100,
                           prox=ProxSpec.standard(taus))
        tuner = TunerConfig(eta=1e-10, decrease_every=10, decrease_factor=0.5,
                            max_decreases=3)
        h = solve_prox_jacobi(prob, cfg, tuner)
        dec = [r for r in h.records if r.tuner_event and "decrease" in r.tuner_event]
        assert 1 <= len(dec) <= 3
