import queue
import threading

import numpy as np
import pytest

from jadmm import gen_basis_pursuit, gen_exchange
from jadmm.diagnostics import records_equal
from jadmm.prox import ProxSpec
from jadmm.runtime import (Broadcast, CommStats, MESSAGE_HEADER_BYTES,
                           ProtocolError, Shutdown, WorkerAssignment,
                           check_message_k, comm_stats, run_distributed,
                           _Worker, _assignments)
from jadmm.solvers import (ConfigurationError, SolverConfig, solve,
                           solve_prox_jacobi)
from jadmm.tuning import TunerConfig

from oracles import random_quadratic_problem


def _exchange_setup(seed=0):
    inst = gen_exchange(n=20, N=8, p=16, seed=seed)
    rho = 0.01
    cfg = SolverConfig(scheme="prox_jacobi", rho=rho, max_iters=120,
                       prox=ProxSpec.standard(np.full(8, 0.1 * 7 * rho)))
    return inst.problem(), cfg


def _histories_identical(a, b):
    return (records_equal(a.records, b.records)
            and np.array_equal(a.final.x.data, b.final.x.data)
            and np.array_equal(a.final.lam, b.final.lam)
            and a.reason == b.reason)


class TestSerialDistributedEquality:
    def test_single_worker_equals_serial(self):
        prob, cfg = _exchange_setup()
        hs = solve_prox_jacobi(prob, cfg)
        hd = run_distributed(prob, cfg, 1)
        assert _histories_identical(hs, hd)

    def test_one_block_per_worker_equals_serial(self):
        prob, cfg = _exchange_setup()
        hs = solve_prox_jacobi(prob, cfg)
        hd = run_distributed(prob, cfg, 8)
        assert _histories_identical(hs, hd)

    def test_intermediate_worker_counts(self):
        prob, cfg = _exchange_setup(1)
        hs = solve_prox_jacobi(prob, cfg)
        for W in (2, 3, 5):
            hd = run_distributed(prob, cfg, W)
            assert _histories_identical(hs, hd), f"W={W}"

    def test_tuner_restart_mid_run_stays_bitwise(self):
        prob, cfg = _exchange_setup(2)
        tuner = TunerConfig()
        hs = solve_prox_jacobi(prob, cfg, tuner)
        assert any(r.tuner_event for r in hs.records), "expected a restart"
        hd = run_distributed(prob, cfg, 4, tuner=tuner)
        assert _histories_identical(hs, hd)

    def test_l1_prox_linear_scheme(self):
        bp = gen_basis_pursuit(m=20, n=60, N=6, k=5, sigma=0.0, seed=5)
        rho = 10.0 / np.abs(bp.c).sum()
        cfg = SolverConfig(scheme="prox_jacobi", rho=rho, max_iters=200,
                           prox=ProxSpec.prox_linear(np.full(6, 0.1 * 6 * rho)))
        hs = solve_prox_jacobi(bp.problem(), cfg, TunerConfig())
        hd = run_distributed(bp.problem(), cfg, 4, tuner=TunerConfig())
        assert _histories_identical(hs, hd)

    def test_corr_jacobi_blend(self):
        bp = gen_basis_pursuit(m=15, n=40, N=40, k=5, sigma=0.0, seed=4)
        cfg = SolverConfig(scheme="corr_jacobi", rho=0.05, max_iters=150,
                           alpha=0.5)
        hs = solve(bp.problem(), cfg)
        for W in (1, 3, 40):
            hd = run_distributed(bp.problem(), cfg, W)
            assert _histories_identical(hs, hd), f"W={W}"

    def test_jacobi_scheme(self):
        prob, _ = _exchange_setup(3)
        cfg = SolverConfig(scheme="jacobi", rho=0.01, max_iters=60)
        hs = solve(prob, cfg)
        hd = run_distributed(prob, cfg, 2)
        assert _histories_identical(hs, hd)

    def test_repeated_runs_deterministic(self):
        prob, cfg = _exchange_setup(4)
        h1 = run_distributed(prob, cfg, 3)
        h2 = run_distributed(prob, cfg, 3)
        assert _histories_identical(h1, h2)

    def test_callback_sees_same_iterates(self):
        prob, cfg = _exchange_setup(5)
        serial_caps, dist_caps = [], []
        solve_prox_jacobi(prob, cfg,
                          callback=lambda k, it, r: serial_caps.append(it.x.data.copy()))
        run_distributed(prob, cfg, 4,
                        callback=lambda k, it, r: dist_caps.append(it.x.data.copy()))
        assert len(serial_caps) == len(dist_caps)
        for a, b in zip(serial_caps, dist_caps):
            assert np.array_equal(a, b)


class TestValidation:
    def test_sequential_schemes_rejected(self):
        prob, _ = _exchange_setup()
        for scheme in ("gauss_seidel", "vsadmm"):
            cfg = SolverConfig(scheme=scheme, rho=1.0, max_iters=5)
            with pytest.raises(ConfigurationError, match="not amenable"):
                run_distributed(prob, cfg, 2)

    def test_worker_count_bounds(self):
        prob, cfg = _exchange_setup()
        with pytest.raises(ConfigurationError):
            run_distributed(prob, cfg, 0)
        with pytest.raises(ConfigurationError):
            run_distributed(prob, cfg, 9)  # N = 8

    def test_assignments_partition_blocks(self):
        for N in (5, 8, 13):
            for W in (1, 2, 3, N):
                asg = _assignments(N, W)
                covered = []
                for a in asg:
                    covered.extend(range(a.block_lo, a.block_hi))
                assert covered == list(range(N))
                sizes = [a.block_hi - a.block_lo for a in asg]
                assert max(sizes) - min(sizes) <= 1


class TestProtocol:
    def test_check_message_k(self):
        msg = Broadcast(k=3, lam=np.zeros(2), global_residual=np.zeros(2))
        check_message_k(msg, 3)
        with pytest.raises(ProtocolError, match="expected iteration 2"):
            check_message_k(msg, 2, sender="worker 1")

    def test_worker_reports_protocol_error(self):
        prob, cfg = _exchange_setup()
        inbox, outbox = queue.Queue(), queue.Queue()
        w = _Worker(WorkerAssignment(0, 0, 4), prob, cfg,
                    ProxSpec.standard(np.full(8, 0.007)),
                    np.zeros(prob.operator.n), inbox, outbox)
        inbox.put(Broadcast(k=5, lam=np.zeros(20), global_residual=np.zeros(20)))
        t = threading.Thread(target=w.run)
        t.start()
        msg = outbox.get(timeout=10)
        t.join(timeout=10)
        assert isinstance(msg, Shutdown)
        assert "expected iteration 1" in msg.reason

    def test_worker_failure_surfaces(self):
        # a worker that dies mid-run must not hang the coordinator
        prob, cfg = _exchange_setup()
        import jadmm.runtime as rt

        class Boom(rt._Worker):
            def _propose(self, msg):
                raise RuntimeError("boom")

        orig = rt._Worker
        rt._Worker = Boom
        try:
            with pytest.raises(rt.WorkerFailure, match="boom"):
                run_distributed(prob, cfg, 2)
        finally:
            rt._Worker = orig


class TestCommStats:
    def test_closed_form_three_settings(self):
        # bytes = W * (8 * 2m + 16) broadcast, W * (8 * m + 16) reduce, per iter
        settings = [(20, 1, 40), (20, 4, 40), (50, 2, 15)]
        for m, W, iters in settings:
            inst = gen_exchange(n=m, N=8, p=10, seed=0)
            # condition-satisfying taus so the run uses its full budget
            cfg = SolverConfig(scheme="prox_jacobi", rho=0.01, max_iters=iters,
                               prox=ProxSpec.standard(np.full(8, 0.08)))
            h = run_distributed(inst.problem(), cfg, W)
            st = comm_stats(h)
            assert st.broadcast_bytes_per_iter == W * (8 * 2 * m + 16)
            assert st.reduce_bytes_per_iter == W * (8 * m + 16)
            assert st.iterations == iters
            assert st.broadcast_bytes_total == st.broadcast_bytes_per_iter * iters

    def test_example_arithmetic(self):
        # m=300, W=4: broadcast bytes/iter = 4*8*(300+300) plus 4 headers
        st = CommStats(workers=4, m=300, iterations=10,
                       broadcast_bytes_per_iter=4 * (8 * 600 + MESSAGE_HEADER_BYTES),
                       reduce_bytes_per_iter=4 * (8 * 300 + MESSAGE_HEADER_BYTES),
                       broadcast_bytes_total=0, reduce_bytes_total=0)
        assert st.broadcast_bytes_per_iter == 4 * 8 * (300 + 300) + 4 * 16

    def test_linear_scaling_in_workers(self):
        prob, cfg = _exchange_setup()
        h2 = run_distributed(prob, cfg, 2)
        h4 = run_distributed(prob, cfg, 4)
        s2, s4 = comm_stats(h2), comm_stats(h4)
        assert s4.broadcast_bytes_per_iter == 2 * s2.broadcast_bytes_per_iter
        assert s4.reduce_bytes_per_iter == 2 * s2.reduce_bytes_per_iter

    def test_serial_history_rejected(self):
        prob, cfg = _exchange_setup()
        hs = solve_prox_jacobi(prob, cfg)
        with pytest.raises(ValueError):
            comm_stats(hs)
