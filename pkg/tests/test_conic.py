import numpy as np
import pytest

from ios_isac import conic


def lambda_max_program(c_sym, sense="max"):
    """max tr(C X) s.t. tr(X) = 1, X PSD -- optimum is lambda_max(C)."""
    b = conic.ConeProgramBuilder(sense=sense)
    n = c_sym.shape[0]
    x = b.psd_block(n)
    b.add_objective([(x, c_sym)])
    b.add_eq([(x, np.eye(n))], rhs=1.0)
    return b.build()


class TestSolveBasics:
    def test_analytic_lambda_max(self):
        prog = lambda_max_program(np.diag([1.0, 2.0]))
        res = conic.solve(prog)
        assert res.status == conic.OPTIMAL
        assert res.objective == pytest.approx(2.0, abs=1e-6)
        assert np.allclose(res.psd_blocks[0], np.diag([0.0, 1.0]), atol=1e-5)

    def test_feasibility_only(self):
        b = conic.ConeProgramBuilder(sense="min")
        x = b.psd_block(2)
        b.add_eq([(x, np.eye(2))], rhs=1.0)
        prog = b.build()
        res = conic.solve(prog)
        assert res.status == conic.OPTIMAL
        blk = res.psd_blocks[0]
        assert np.trace(blk) == pytest.approx(1.0, abs=1e-6)
        assert np.min(np.linalg.eigvalsh(0.5 * (blk + blk.T))) >= -1e-7

    def test_random_lambda_max_oracle(self):
        rng = np.random.default_rng(11)
        for trial in range(50):
            n = int(rng.integers(2, 9))
            m = rng.standard_normal((n, n))
            c = 0.5 * (m + m.T)
            prog = lambda_max_program(c)
            res = conic.solve(prog)
            assert res.status == conic.OPTIMAL, f"trial {trial}"
            expected = float(np.max(np.linalg.eigvalsh(c)))
            assert res.objective == pytest.approx(expected, abs=1e-6), f"trial {trial}"
            report = conic.verify_kkt(prog, res)
            assert report.primal <= 1e-6 and report.dual <= 1e-6 and report.gap <= 1e-6

    def test_min_sense(self):
        prog = lambda_max_program(np.diag([1.0, 2.0, -3.0]), sense="min")
        res = conic.solve(prog)
        assert res.objective == pytest.approx(-3.0, abs=1e-6)

    def test_nonneg_and_free_blocks(self):
        # max q s.t. q + s = 2, s >= 0  ->  q = 2 at s = 0
        b = conic.ConeProgramBuilder(sense="max")
        q = b.free()
        s = b.nonneg()
        b.add_objective([(q, 1.0)])
        b.add_eq([(q, 1.0), (s, 1.0)], rhs=2.0)
        res = conic.solve(b.build())
        assert res.status == conic.OPTIMAL
        assert res.free[0] == pytest.approx(2.0, abs=1e-6)

    def test_mixed_blocks_with_slack(self):
        # max tr(C X) s.t. tr(X) + s = 1  ->  puts all trace on the top
        # eigendirection when lambda_max > 0
        c = np.array([[1.0, 0.4], [0.4, 0.5]])
        b = conic.ConeProgramBuilder(sense="max")
        x = b.psd_block(2)
        s = b.nonneg()
        b.add_objective([(x, c)])
        b.add_eq([(x, np.eye(2)), (s, 1.0)], rhs=1.0)
        res = conic.solve(b.build())
        assert res.objective == pytest.approx(float(np.max(np.linalg.eigvalsh(c))), abs=1e-6)

    def test_determinism(self):
        prog = lambda_max_program(np.array([[0.3, 1.1], [1.1, -0.2]]))
        r1 = conic.solve(prog)
        r2 = conic.solve(prog)
        assert np.array_equal(r1.x, r2.x)
        assert r1.iterations == r2.iterations

    def test_objective_scaling_invariance(self):
        rng = np.random.default_rng(5)
        m = rng.standard_normal((4, 4))
        c = 0.5 * (m + m.T)
        res1 = conic.solve(lambda_max_program(c))
        res2 = conic.solve(lambda_max_program(100.0 * c))
        assert np.linalg.norm(res1.x - res2.x) < 1e-6 * (1 + np.linalg.norm(res1.x))

    def test_psd_blocks_nearly_psd(self):
        rng = np.random.default_rng(6)
        m = rng.standard_normal((5, 5))
        res = conic.solve(lambda_max_program(0.5 * (m + m.T)))
        blk = res.psd_blocks[0]
        tr = float(np.trace(blk))
        assert np.min(np.linalg.eigvalsh(0.5 * (blk + blk.T))) >= -1e-7 * (1 + tr)

    def test_strong_duality_on_optimal(self):
        rng = np.random.default_rng(7)
        m = rng.standard_normal((6, 6))
        prog = lambda_max_program(0.5 * (m + m.T))
        res = conic.solve(prog)
        report = conic.verify_kkt(prog, res)
        assert report.gap <= 1e-7 * 10

    def test_infeasible_detected(self):
        b = conic.ConeProgramBuilder(sense="max")
        x = b.psd_block(2)
        b.add_objective([(x, np.eye(2))])
        b.add_eq([(x, np.eye(2))], rhs=1.0)
        b.add_eq([(x, np.eye(2))], rhs=2.0)
        res = conic.solve(b.build(), conic.SolverSettings(max_iters=20_000))
        assert res.status == conic.INFEASIBLE
        assert res.residuals["primal"] > 1e-3

    def test_max_iters_returns_best(self):
        prog = lambda_max_program(np.diag([1.0, 2.0, 3.0]))
        res = conic.solve(prog, conic.SolverSettings(max_iters=40))
        assert res.status == conic.MAX_ITERS
        assert res.x.shape == (9,)
        report = conic.verify_kkt(prog, res)  # must not raise
        assert report.primal >= 0.0


class TestVerifyKkt:
    def test_perturbation_detected(self):
        prog = lambda_max_program(np.diag([1.0, 2.0]))
        res = conic.solve(prog)
        res.x[0] += 1e-2
        report = conic.verify_kkt(prog, res)
        assert report.primal > 1e-3

    def test_residuals_match_result(self):
        prog = lambda_max_program(np.diag([2.0, 1.0]))
        res = conic.solve(prog)
        report = conic.verify_kkt(prog, res)
        assert report.primal == pytest.approx(res.residuals["primal"], abs=1e-12)
        assert report.dual == pytest.approx(res.residuals["dual"], abs=1e-12)
        assert report.gap == pytest.approx(res.residuals["gap"], abs=1e-12)
        assert report.dual_cone_violation <= 1e-9


class TestWarmStart:
    def test_warm_start_converges_faster(self):
        rng = np.random.default_rng(8)
        m = rng.standard_normal((6, 6))
        c = 0.5 * (m + m.T)
        prog = lambda_max_program(c)
        cold = conic.solve(prog)
        prog2 = lambda_max_program(c + 1e-3 * np.eye(6))
        warm = conic.solve(prog2, warm_start=cold.warm)
        cold2 = conic.solve(prog2)
        assert warm.status == conic.OPTIMAL
        assert warm.iterations <= cold2.iterations
        assert warm.objective == pytest.approx(cold2.objective, abs=1e-5)


class TestDump:
    def test_roundtrip(self, tmp_path):
        prog = lambda_max_program(np.array([[0.5, 0.25], [0.25, -1.0]]))
        path = tmp_path / "prog.txt"
        conic.dump_program(prog, path)
        loaded = conic.load_program(path)
        assert loaded.sense == prog.sense
        assert loaded.psd_block_dims == prog.psd_block_dims
        assert np.array_equal(loaded.objective, prog.objective)
        assert np.array_equal(loaded.eq_matrix, prog.eq_matrix)
        assert np.array_equal(loaded.eq_rhs, prog.eq_rhs)
