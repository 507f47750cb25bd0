import math

import numpy as np
import pytest

from ios_isac import channel, model, rxfilter, txbeam
from ios_isac.errors import RankViolationError
from ios_isac.numerics import herm

LN2 = math.log(2.0)


def make_instance(seed=0, n_t=3, n_r=2, n=4, k_r=1, k_t=1, o_r=1, o_t=1,
                  d=1, m_k=2, r_th=0.5, p_max=10.0, noise_dbm=-100.0):
    cfg = model.ScenarioConfig(
        n_t=n_t, n_r=n_r, n=n, k_r=k_r, k_t=k_t, o_r=o_r, o_t=o_t,
        d_streams=[d] * (k_r + k_t), m_antennas=[m_k] * (k_r + k_t),
        r_th=r_th, p_max=p_max,
        noise_user_dbm=noise_dbm, noise_radar_dbm=noise_dbm,
        geometry=channel.Geometry(ios_grid=(n, 1)),
    )
    cfg, ch, _ = model.normalize_units(cfg, channel.generate(cfg, seed=seed))
    p_max = cfg.p_max
    rng = np.random.default_rng(seed + 1000)
    ios = model.IosCoefficients(
        theta_r=np.sqrt(0.5) * np.exp(1j * rng.uniform(0, 2 * np.pi, n)),
        theta_t=np.sqrt(0.5) * np.exp(1j * rng.uniform(0, 2 * np.pi, n)),
    )
    k = cfg.num_users
    w_list = []
    for kk in range(k):
        h = model.effective_user_channel(kk, ch, ios)
        _, _, vh = np.linalg.svd(h)
        w = vh.conj().T[:, :d] * math.sqrt(0.63 * p_max / (k * d))
        w_list.append(w)
    m_list = []
    for t in range(n_t):
        vec = np.zeros(n_t, dtype=complex)
        vec[t] = math.sqrt(0.27 * p_max / n_t)
        m_list.append(vec)
    lifted = txbeam.LiftedTx(
        w_lift=[w @ w.conj().T for w in w_list],
        m_lift=[np.outer(v, v.conj()) for v in m_list],
    )
    g_list, _, q1 = rxfilter.q_stage1(ch, ios, lifted.total_cov())
    state = txbeam.IrmState.from_lifted(
        lifted, cfg.d_streams, cfg.algo.gamma0, cfg.algo.gamma,
        cfg.algo.penalty_cap, p_max,
    )
    return cfg, ch, ios, lifted, g_list, q1, state


class TestSensingConstraint:
    def test_single_target_reduces_to_signal_term(self):
        cfg, ch, ios, lifted, g, q1, _ = make_instance(o_r=1, o_t=0, k_t=0)
        c_mat, c_i = txbeam.build_sensing_constraint(0, 0.7, g, ch, ios)
        theta = model.region_theta(ios, "R")
        s = (ch.a[0] * theta[None, :]) @ ch.h_rb
        sg = s.conj().T @ g[0]
        expected = abs(ch.echo[0]) ** 2 * np.outer(sg, sg.conj())
        assert np.allclose(c_mat, expected)
        assert c_i == pytest.approx(ch.noise_radar * np.linalg.norm(g[0]) ** 2)

    def test_unit_filter_constant(self):
        cfg, ch, ios, lifted, g, q1, _ = make_instance()
        _, c_i = txbeam.build_sensing_constraint(0, 0.0, g, ch, ios)
        assert c_i == pytest.approx(ch.noise_radar)

    def test_algebraic_rearrangement(self):
        # tr(C X) must equal num - q_fixed * interference computed directly
        cfg, ch, ios, lifted, g, q1, _ = make_instance(o_r=2, o_t=1, seed=3)
        r_x = lifted.total_cov()
        for i in range(3):
            q_fixed = 0.42
            c_mat, c_i = txbeam.build_sensing_constraint(i, q_fixed, g, ch, ios)
            val = float(np.real(np.trace(c_mat @ r_x)))
            sinr = model.sensing_sinr_cov(i, ch, ios, g[i], r_x)
            denom_terms = 0.0
            theta = model.region_theta(ios, ch.region_targets[i])
            for o in model.same_region_targets(ch, i):
                s_o = (ch.a[o] * theta[None, :]) @ ch.h_rb
                so_g = s_o.conj().T @ g[i]
                denom_terms += abs(ch.echo[o]) ** 2 * float(np.real(so_g.conj() @ r_x @ so_g))
            num = sinr * (denom_terms + c_i)
            assert val == pytest.approx(num - q_fixed * denom_terms, rel=1e-10, abs=1e-16)


class TestRateTaylor:
    def test_tight_at_anchor(self):
        cfg, ch, ios, lifted, g, q1, _ = make_instance(seed=1)
        rt = txbeam.rate_constraint_taylor(0, lifted, ch, ios, ch.noise_user, cfg.r_th)
        exact = rt.exact_logdet_j(lifted)
        bound = rt.taylor_upper_logdet_j(lifted, lifted)
        assert bound == pytest.approx(exact, abs=1e-10)

    def test_upper_bound_1000_perturbations(self):
        cfg, ch, ios, lifted, g, q1, _ = make_instance(seed=2)
        rt = txbeam.rate_constraint_taylor(0, lifted, ch, ios, ch.noise_user, cfg.r_th)
        rng = np.random.default_rng(7)
        n_t = cfg.n_t
        for _ in range(1000):
            scale = rng.uniform(0.1, 2.0)
            perturbed = txbeam.LiftedTx(
                w_lift=[_random_psd(rng, n_t, scale) for _ in lifted.w_lift],
                m_lift=[_random_psd(rng, n_t, scale) for _ in lifted.m_lift],
            )
            exact = rt.exact_logdet_j(perturbed)
            bound = rt.taylor_upper_logdet_j(perturbed, lifted)
            assert bound >= exact - 1e-9

    def test_margin_matches_single_user_form(self):
        # one user, no sensing streams: margin = logdet(I + H W~ H^H / s2) - R
        cfg, ch, ios, lifted, g, q1, _ = make_instance(k_t=0, o_t=0, seed=4)
        solo = txbeam.LiftedTx(w_lift=[lifted.w_lift[0]], m_lift=[])
        rt = txbeam.rate_constraint_taylor(0, solo, ch, ios, ch.noise_user, cfg.r_th)
        margin = rt.true_margin(solo)
        h = model.effective_user_channel(0, ch, ios)
        inner = np.eye(h.shape[0]) + h @ solo.w_lift[0] @ h.conj().T / ch.noise_user
        expected = float(np.linalg.slogdet(inner)[1]) - cfg.r_th * LN2
        assert margin == pytest.approx(expected, abs=1e-9)


def _random_psd(rng, n, scale=1.0):
    m = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return herm(m @ m.conj().T) * scale


class TestEigenGap:
    def test_forward_direction(self):
        x = np.diag([3.0, 2.0, 0.0])
        assert txbeam.eigen_gap_feasible(x, 2, e=0.0)

    def test_converse_violated_by_one(self):
        x = np.diag([3.0, 2.0, 1.0])
        v = txbeam.smallest_eigvec_block(x, 2)
        gap = txbeam.eigen_gap_matrix(x, v, 0.0)
        assert float(np.min(np.linalg.eigvalsh(gap))) == pytest.approx(-1.0)
        assert not txbeam.eigen_gap_feasible(x, 2, e=0.0)

    def test_500_random_rank_oracle(self):
        rng = np.random.default_rng(8)
        for trial in range(500):
            r = int(rng.integers(1, 4))
            if trial % 2 == 0:
                g = rng.standard_normal((6, r)) + 1j * rng.standard_normal((6, r))
                x = herm(g @ g.conj().T)
            else:
                x = _random_psd(rng, 6)
            vals = np.linalg.eigvalsh(x)[::-1]
            expected = vals[r] <= 1e-9
            assert txbeam.eigen_gap_feasible(x, r, e=0.0) == expected, f"trial {trial}"


class TestMtPenalty:
    def test_rank_one_zero(self):
        v = np.array([1.0, 2j, -0.5])
        m = np.outer(v, v.conj())
        assert txbeam.mt_penalty_exact(m) == pytest.approx(0.0, abs=1e-12)
        assert txbeam.mt_penalty_linearized(m, v / np.linalg.norm(v)) == pytest.approx(0.0, abs=1e-12)

    def test_identity(self):
        assert txbeam.mt_penalty_exact(np.eye(2)) == pytest.approx(1.0)

    def test_random_psd_nonnegative(self):
        rng = np.random.default_rng(9)
        for _ in range(200):
            rank = int(rng.integers(1, 4))
            g = rng.standard_normal((4, rank)) + 1j * rng.standard_normal((4, rank))
            m = herm(g @ g.conj().T)
            pen = txbeam.mt_penalty_exact(m)
            assert pen >= -1e-10
            numeric_rank = int(np.sum(np.linalg.eigvalsh(m) > 1e-9))
            assert (pen < 1e-9) == (numeric_rank <= 1)


class TestIrmSolve:
    def test_monotone_over_seeds(self):
        for seed in range(20):
            cfg, ch, ios, lifted, g, q1, state = make_instance(seed=seed)
            res = txbeam.irm_solve(lifted, state, q1, g, ch, ios, cfg)
            assert res.accepted, f"seed {seed}"
            assert res.q_value >= q1 - 1e-6, f"seed {seed}"
            q2_true = min(
                model.sensing_sinr_cov(i, ch, ios, g[i], res.lifted.total_cov())
                for i in range(len(ch.a))
            )
            assert q2_true >= q1 - 1e-6 * max(1.0, q1), f"seed {seed}"
            assert res.lifted.power() <= cfg.p_max * (1 + 1e-6), f"seed {seed}"

    def test_rate_margins_hold_after_acceptance(self):
        cfg, ch, ios, lifted, g, q1, state = make_instance(seed=5, r_th=1.0)
        res = txbeam.irm_solve(lifted, state, q1, g, ch, ios, cfg)
        assert res.accepted
        for k in range(cfg.num_users):
            rate = model.user_rate_lifted(
                k, ch, ios, res.lifted.w_lift, res.lifted.m_lift, ch.noise_user
            )
            assert rate >= cfg.r_th - 1e-5

    def test_e_sequence_nonincreasing(self):
        cfg, ch, ios, lifted, g, q1, state = make_instance(seed=6)
        prev_e = state.e_anchor[:]
        cur = lifted
        for _ in range(4):
            res = txbeam.irm_solve(cur, state, q1, g, ch, ios, cfg)
            assert res.accepted
            for a, b in zip(res.state.e_anchor, prev_e):
                assert a <= b + 1e-12
            prev_e = res.state.e_anchor[:]
            cur, state = res.lifted, res.state
            g, _, q1 = rxfilter.q_stage1(ch, ios, cur.total_cov())

    def test_unconstrained_sensing_optimum(self):
        # single user with r_th = 0, single target: fixed-filter optimum is
        # p_max * lambda_max(signal matrix) / noise
        cfg, ch, ios, lifted, g, q1, state = make_instance(
            seed=7, k_t=0, o_t=0, r_th=0.0
        )
        cur, st, qf = lifted, state, q1
        warm = None
        for _ in range(8):
            res = txbeam.irm_solve(cur, st, qf, g, ch, ios, cfg, warm_start=warm)
            assert res.accepted
            cur, st, warm = res.lifted, res.state, res.warm
            g, _, qf = rxfilter.q_stage1(ch, ios, cur.total_cov())
        c_mat, c_i = txbeam.build_sensing_constraint(0, 0.0, g, ch, ios)
        optimum = cfg.p_max * float(np.max(np.linalg.eigvalsh(c_mat))) / c_i
        assert qf >= 0.95 * optimum


class TestExtractBeamformers:
    def test_diag_rank_one(self):
        lifted = txbeam.LiftedTx(w_lift=[np.diag([4.0, 0.0])], m_lift=[])
        beams = txbeam.extract_beamformers(lifted, [1])
        assert np.allclose(beams.w[0], [[2.0], [0.0]])

    def test_amplitude_split(self):
        v = np.array([1.0, 1j]) / np.sqrt(2)
        lifted = txbeam.LiftedTx(w_lift=[np.outer(v, v.conj())], m_lift=[])
        beams = txbeam.extract_beamformers(lifted, [2])
        w = beams.w[0]
        assert w.shape == (2, 2)
        assert np.allclose(w @ w.conj().T, lifted.w_lift[0], atol=1e-12)
        assert np.allclose(np.abs(w[:, 0]), np.abs(w[:, 1]))

    def test_reconstruction_random(self):
        rng = np.random.default_rng(11)
        g = rng.standard_normal((5, 2)) + 1j * rng.standard_normal((5, 2))
        w_lift = herm(g @ g.conj().T)
        lifted = txbeam.LiftedTx(w_lift=[w_lift], m_lift=[np.outer(g[:, 0], g[:, 0].conj())])
        beams = txbeam.extract_beamformers(lifted, [2])
        recon = beams.w[0] @ beams.w[0].conj().T
        assert np.linalg.norm(recon - w_lift) <= 1e-6 * np.linalg.norm(w_lift)
        m_recon = np.outer(beams.m[0], beams.m[0].conj())
        assert np.linalg.norm(m_recon - lifted.m_lift[0]) <= 1e-8 * np.linalg.norm(lifted.m_lift[0])

    def test_rank_violation_raises(self):
        lifted = txbeam.LiftedTx(w_lift=[np.diag([3.0, 2.0, 1.0])], m_lift=[])
        with pytest.raises(RankViolationError) as err:
            txbeam.extract_beamformers(lifted, [1])
        assert err.value.residuals

    def test_zero_block(self):
        lifted = txbeam.LiftedTx(w_lift=[np.zeros((3, 3))], m_lift=[])
        beams = txbeam.extract_beamformers(lifted, [2])
        assert beams.w[0].shape == (3, 2)
        assert np.allclose(beams.w[0], 0.0)
