"""Transmit beamforming: lifted SDR with iterative rank control.

The communication matrices W_k and sensing vectors m_t are lifted to PSD
matrices; the minimum-SINR objective becomes linear through the usual
fixed-point split (the previous stage's quotient anchors the left side of
the per-target constraint).  Rank is steered back down by the eigen-gap
bound (a compression of each lifted block onto its previous trailing
eigenvectors must stay below a monotonically shrinking scalar) plus a
difference-of-convex penalty for the rank-one sensing blocks.

The per-user rate constraint is concave-minus-affine; the concave
log-determinant is linearized at the current iterate so the cone solver
sees an affine row, and a bisection back toward the iterate restores exact
feasibility of the concave form afterwards.  The retreat direction keeps
every other (linear) constraint satisfied, so the accepted point is always
feasible for the true convexified subproblem.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import conic, model
from .errors import RankViolationError
from .numerics import (
    complex_from_embed,
    embed_coeff,
    herm,
    hermitian_eig,
    log_det_psd,
)


def _rect_embed(v):
    """[[Re, -Im], [Im, Re]] for rectangular complex blocks; the map is a
    *-homomorphism, so congruences commute with the embedding."""
    return np.block([[v.real, -v.imag], [v.imag, v.real]])

LN2 = math.log(2.0)

__all__ = [
    "LiftedTx",
    "IrmState",
    "build_sensing_constraint",
    "RateTaylor",
    "rate_constraint_taylor",
    "smallest_eigvec_block",
    "eigen_gap_matrix",
    "eigen_gap_feasible",
    "mt_penalty_exact",
    "mt_penalty_linearized",
    "irm_solve",
    "Stage2Result",
    "extract_beamformers",
    "rank_residuals",
]


@dataclass
class LiftedTx:
    w_lift: list   # per user, Hermitian PSD N_t x N_t
    m_lift: list   # per sensing stream, Hermitian PSD N_t x N_t

    def total_cov(self):
        n_t = self.w_lift[0].shape[0] if self.w_lift else self.m_lift[0].shape[0]
        total = np.zeros((n_t, n_t), dtype=complex)
        for w in self.w_lift:
            total += w
        for m in self.m_lift:
            total += m
        return herm(total)

    def power(self):
        return float(np.real(np.trace(self.total_cov())))

    def interpolate(self, other, t):
        return LiftedTx(
            w_lift=[(1 - t) * a + t * b for a, b in zip(self.w_lift, other.w_lift)],
            m_lift=[(1 - t) * a + t * b for a, b in zip(self.m_lift, other.m_lift)],
        )


@dataclass
class IrmState:
    """Carryover between rank-minimization iterations."""

    v_blocks: list        # per user, N_t x (N_t - D_k) trailing eigenvectors
    e_anchor: list        # per user, nonincreasing eigen-gap bounds
    mt_anchor: list       # per stream, top eigenvector of the previous lift
    gamma_users: list     # per user penalty bases, grown by the outer loop
    gamma_mt: float
    iteration: int = 1
    penalty_cap: float = 1e6
    growth: float = 2.0

    def weight(self, k):
        return min(self.gamma_users[k] * self.growth ** self.iteration, self.penalty_cap)

    def weight_mt(self):
        return min(self.gamma_mt * self.growth ** self.iteration, self.penalty_cap)

    @classmethod
    def from_lifted(cls, lifted, d_streams, gamma0, growth, cap, p_max):
        v_blocks, e_anchor = [], []
        for k, w in enumerate(lifted.w_lift):
            n_t = w.shape[0]
            keep = n_t - d_streams[k]
            v_blocks.append(smallest_eigvec_block(w, d_streams[k]) if keep else None)
            # vacuous first bound; the penalty schedule pulls it down
            e_anchor.append(float(p_max))
        mt_anchor = [hermitian_eig(m).vectors[:, -1] for m in lifted.m_lift]
        return cls(
            v_blocks=v_blocks,
            e_anchor=e_anchor,
            mt_anchor=mt_anchor,
            gamma_users=[gamma0] * len(lifted.w_lift),
            gamma_mt=gamma0,
            penalty_cap=cap,
            growth=growth,
        )

    def grow_outer(self, factor):
        self.gamma_users = [g * factor for g in self.gamma_users]
        self.gamma_mt *= factor
        self.iteration = 1


def build_sensing_constraint(i, q_fixed, filters, channels, ios, ts_lambda=1.0):
    """Linear functional (C_i, c_i) so that the per-target constraint reads
    tr(C_i (sum W~ + sum M~)) >= q c_i."""
    region = channels.region_targets[i]
    theta = model.region_theta(ios, region)
    g = filters[i]
    s_i = (channels.a[i] * theta[None, :]) @ channels.h_rb
    sg = s_i.conj().T @ g
    c = ts_lambda * abs(channels.echo[i]) ** 2 * np.outer(sg, sg.conj())
    for o in model.same_region_targets(channels, i):
        s_o = (channels.a[o] * theta[None, :]) @ channels.h_rb
        so_g = s_o.conj().T @ g
        c -= q_fixed * abs(channels.echo[o]) ** 2 * np.outer(so_g, so_g.conj())
    c_i = channels.noise_radar * float(np.real(g.conj() @ g))
    return herm(c), c_i


@dataclass
class RateTaylor:
    """Convexified rate constraint of one user, anchored at the current lifts.

    The exact form is logdet(Y(X)) - ub(X) >= r_nats with Y affine in the
    lifts, ub the first-order upper bound of logdet(J_k); ``coeff_own`` /
    ``coeff_other`` are the net linear coefficients after also linearizing
    the concave term at the anchor, and ``rhs`` collects the constants.
    """

    k: int
    h_k: np.ndarray
    noise: float
    r_nats: float
    f_coef: np.ndarray      # H^H Ybar^-1 H
    g_coef: np.ndarray      # H^H Jbar^-1 H
    rhs: float

    def exact_logdet_j(self, lifted):
        m_k = self.h_k.shape[0]
        j = self.noise * np.eye(m_k, dtype=complex)
        for l, w in enumerate(lifted.w_lift):
            if l != self.k:
                j += self.h_k @ w @ self.h_k.conj().T
        for m in lifted.m_lift:
            j += self.h_k @ m @ self.h_k.conj().T
        return log_det_psd(herm(j))

    def taylor_upper_logdet_j(self, lifted, anchor):
        m_k = self.h_k.shape[0]
        jbar = self.noise * np.eye(m_k, dtype=complex)
        for l, w in enumerate(anchor.w_lift):
            if l != self.k:
                jbar += self.h_k @ w @ self.h_k.conj().T
        for m in anchor.m_lift:
            jbar += self.h_k @ m @ self.h_k.conj().T
        jbar = herm(jbar)
        val = log_det_psd(jbar)
        delta = 0.0
        for l in range(len(lifted.w_lift)):
            if l != self.k:
                delta += float(
                    np.real(np.trace(self.g_coef @ (lifted.w_lift[l] - anchor.w_lift[l])))
                )
        for t in range(len(lifted.m_lift)):
            delta += float(
                np.real(np.trace(self.g_coef @ (lifted.m_lift[t] - anchor.m_lift[t])))
            )
        return val + delta

    def true_margin(self, lifted):
        """Exact concave-minus-affine margin (nats); >= 0 means feasible."""
        m_k = self.h_k.shape[0]
        y = self.noise * np.eye(m_k, dtype=complex)
        for w in lifted.w_lift:
            y += self.h_k @ w @ self.h_k.conj().T
        for m in lifted.m_lift:
            y += self.h_k @ m @ self.h_k.conj().T
        # ub(X) in terms of the stored net coefficients:
        # logdet(Y) - ub(X) - r_nats = logdet(Y) + linear(X) - rhs' where the
        # linear pieces are already folded into rhs/coefs; recompute directly.
        ub = self._ub_value(lifted)
        return log_det_psd(herm(y)) - ub - self.r_nats

    def _ub_value(self, lifted):
        return self._jbar_logdet + sum(
            float(np.real(np.trace(self.g_coef @ (lifted.w_lift[l] - self._anchor.w_lift[l]))))
            for l in range(len(lifted.w_lift))
            if l != self.k
        ) + sum(
            float(np.real(np.trace(self.g_coef @ (lifted.m_lift[t] - self._anchor.m_lift[t]))))
            for t in range(len(lifted.m_lift))
        )


def rate_constraint_taylor(k, anchor, channels, ios, noise, r_th_bits):
    """Build the convexified rate constraint for user k around ``anchor``."""
    h_k = model.effective_user_channel(k, channels, ios)
    m_k = h_k.shape[0]
    ybar = noise * np.eye(m_k, dtype=complex)
    jbar = noise * np.eye(m_k, dtype=complex)
    for l, w in enumerate(anchor.w_lift):
        term = h_k @ w @ h_k.conj().T
        ybar += term
        if l != k:
            jbar += term
    for m in anchor.m_lift:
        term = h_k @ m @ h_k.conj().T
        ybar += term
        jbar += term
    ybar, jbar = herm(ybar), herm(jbar)
    f_coef = herm(h_k.conj().T @ np.linalg.solve(ybar, h_k))
    g_coef = herm(h_k.conj().T @ np.linalg.solve(jbar, h_k))
    r_nats = r_th_bits * LN2
    # tangent(f1) - ub >= r_nats  rearranged to  sum tr(net X) >= rhs
    rhs = r_nats - log_det_psd(ybar) + log_det_psd(jbar)
    for l, w in enumerate(anchor.w_lift):
        rhs += float(np.real(np.trace(f_coef @ w)))
        if l != k:
            rhs -= float(np.real(np.trace(g_coef @ w)))
    for m in anchor.m_lift:
        rhs += float(np.real(np.trace(f_coef @ m)))
        rhs -= float(np.real(np.trace(g_coef @ m)))
    rt = RateTaylor(
        k=k, h_k=h_k, noise=noise, r_nats=r_nats,
        f_coef=f_coef, g_coef=g_coef, rhs=rhs,
    )
    rt._anchor = anchor
    rt._jbar_logdet = log_det_psd(jbar)
    return rt


def smallest_eigvec_block(x, keep_rank):
    """Eigenvectors of the n - keep_rank smallest eigenvalues of Hermitian x."""
    eig = hermitian_eig(x)
    n = x.shape[0]
    return eig.vectors[:, : n - keep_rank]


def eigen_gap_matrix(x, v, e):
    """e I - V^H X V; PSD iff the compression stays below e."""
    comp = herm(v.conj().T @ x @ v)
    return e * np.eye(comp.shape[0]) - comp


def eigen_gap_feasible(x, rank_budget, e=0.0, tol=1e-9):
    """Rank bound test per the eigen-gap equivalence: with V the trailing
    eigenvectors of x itself, the constraint is feasible at e iff the
    (rank_budget+1)-th largest eigenvalue is at most e (+ tol)."""
    v = smallest_eigvec_block(x, rank_budget)
    if v.shape[1] == 0:
        return True
    gap = eigen_gap_matrix(x, v, e)
    return float(np.min(np.linalg.eigvalsh(gap))) >= -tol


def mt_penalty_exact(m):
    """trace - lambda_max; zero iff m is (at most) rank one."""
    vals = np.linalg.eigvalsh(herm(m))
    return float(np.real(np.trace(m)) - vals[-1])


def mt_penalty_linearized(m, anchor_vec):
    """DC majorant tr(M) - v^H M v at the anchor's top eigenvector."""
    return float(np.real(np.trace(m) - anchor_vec.conj() @ m @ anchor_vec))


@dataclass
class Stage2Result:
    accepted: bool
    lifted: LiftedTx
    q_value: float
    state: IrmState
    status: str
    warm: tuple = field(default=None, repr=False)
    diagnostics: dict = field(default_factory=dict)


def irm_solve(prev, state, q_fixed, filters, channels, ios, cfg,
              warm_start=None, ts_split=None, r_th_bits=None, dump_path=None):
    """One rank-controlled solve of the transmit subproblem.

    Returns the accepted lifted point (after the rate-feasibility retreat),
    the accepted auxiliary quotient, and the refreshed state.  ``accepted``
    is False when the cone solve failed or no feasible step existed; the
    caller then rolls the block back.
    """
    algo = cfg.algo
    n_t = cfg.n_t
    n_users = len(prev.w_lift)
    n_streams = len(prev.m_lift)
    n_targets = len(channels.a)
    r_th_bits = cfg.r_th if r_th_bits is None else r_th_bits

    def lam_user(k):
        if ts_split is None:
            return 1.0
        return ts_split[0] if channels.region_users[k] == "R" else ts_split[1]

    def lam_target(i):
        if ts_split is None:
            return 1.0
        return ts_split[0] if channels.region_targets[i] == "R" else ts_split[1]

    rate_rows = []
    for k in range(n_users):
        r_eff = r_th_bits / max(lam_user(k), algo.lambda_floor)
        rate_rows.append(
            rate_constraint_taylor(k, prev, channels, ios, channels.noise_user, r_eff)
        )

    sensing_rows = [
        build_sensing_constraint(i, q_fixed, filters, channels, ios, ts_lambda=lam_target(i))
        for i in range(n_targets)
    ]

    b = conic.ConeProgramBuilder(sense="max")
    w_blocks = [b.psd_block(2 * n_t) for _ in range(n_users)]
    m_blocks = [b.psd_block(2 * n_t) for _ in range(n_streams)]
    gap_blocks = []
    for k in range(n_users):
        d_free = n_t - cfg.d_streams[k]
        gap_blocks.append(b.psd_block(2 * d_free) if d_free else None)
    s_pow = b.nonneg()
    s_rate = [b.nonneg() for _ in range(n_users)]
    s_sens = [b.nonneg() for _ in range(n_targets)]
    e_vars = [b.nonneg() if gap_blocks[k] is not None else None for k in range(n_users)]
    s_emono = [b.nonneg() if e_vars[k] is not None else None for k in range(n_users)]
    s_floor = b.nonneg()
    q_var = b.free()
    # the quotient lives at the scale of the incumbent; normalize its axis
    q_scale = max(1.0, abs(q_fixed))

    b.add_objective([(q_var, q_scale)])
    for k in range(n_users):
        if e_vars[k] is not None:
            b.add_objective([(e_vars[k], -state.weight(k))])
    w_mt = state.weight_mt()
    eye_c = np.eye(n_t, dtype=complex)
    for t in range(n_streams):
        dc = eye_c - np.outer(state.mt_anchor[t], state.mt_anchor[t].conj())
        b.add_objective([(m_blocks[t], embed_coeff(-w_mt * dc))])

    # power
    terms = [(blk, embed_coeff(eye_c)) for blk in w_blocks + m_blocks]
    b.add_eq(terms + [(s_pow, 1.0)], rhs=cfg.p_max)

    # rates (linearized, natural logs)
    for k, rt in enumerate(rate_rows):
        terms = []
        for l in range(n_users):
            net = rt.f_coef if l == k else rt.f_coef - rt.g_coef
            terms.append((w_blocks[l], embed_coeff(net)))
        for t in range(n_streams):
            terms.append((m_blocks[t], embed_coeff(rt.f_coef - rt.g_coef)))
        terms.append((s_rate[k], -1.0))
        b.add_eq(terms, rhs=rt.rhs)

    # sensing
    for i, (c_mat, c_i) in enumerate(sensing_rows):
        terms = [(blk, embed_coeff(c_mat)) for blk in w_blocks + m_blocks]
        terms += [(q_var, -c_i * q_scale), (s_sens[i], -1.0)]
        b.add_eq(terms, rhs=0.0)

    # eigen-gap coupling rows: P = e I - V^H W~ V, entrywise in the embedding
    for k in range(n_users):
        if gap_blocks[k] is None:
            continue
        v_emb = _rect_embed(state.v_blocks[k])  # 2N_t x 2d
        d2 = v_emb.shape[1]
        for a in range(d2):
            for c in range(a, d2):
                coef = np.outer(v_emb[:, a], v_emb[:, c])
                pick = np.zeros((d2, d2))
                pick[a, c] = 1.0
                terms = [
                    (gap_blocks[k], pick),
                    (w_blocks[k], coef),
                ]
                if a == c:
                    terms.append((e_vars[k], -1.0))
                b.add_eq(terms, rhs=0.0)
        b.add_eq([(e_vars[k], 1.0), (s_emono[k], 1.0)], rhs=state.e_anchor[k])

    b.add_eq([(q_var, q_scale), (s_floor, -1.0)], rhs=q_fixed)

    program = b.build()
    if dump_path:
        conic.dump_program(program, dump_path)
    result = conic.solve(program, algo.solver_settings(), warm_start=warm_start)
    if result.status == conic.INFEASIBLE:
        return Stage2Result(False, prev, q_fixed, state, result.status, result.warm)

    new = LiftedTx(
        w_lift=[complex_from_embed(result.psd_blocks[k]) for k in range(n_users)],
        m_lift=[complex_from_embed(result.psd_blocks[n_users + t]) for t in range(n_streams)],
    )
    q_new = float(result.free[0]) * q_scale

    def margins(lifted):
        return [rt.true_margin(lifted) for rt in rate_rows]

    tol = -1e-7
    if all(mg >= tol for mg in margins(new)):
        t_step = 1.0
    else:
        lo, hi = 0.0, 1.0
        for _ in range(50):
            mid = 0.5 * (lo + hi)
            if all(mg >= tol for mg in margins(prev.interpolate(new, mid))):
                lo = mid
            else:
                hi = mid
        t_step = lo
    if t_step <= 0.0:
        return Stage2Result(False, prev, q_fixed, state, result.status, result.warm)

    accepted = prev.interpolate(new, t_step) if t_step < 1.0 else new
    q_acc = (1.0 - t_step) * q_fixed + t_step * q_new

    new_v, new_e = [], []
    for k in range(n_users):
        d_k = cfg.d_streams[k]
        if gap_blocks[k] is None:
            new_v.append(None)
            new_e.append(0.0)
            continue
        w_acc = accepted.w_lift[k]
        new_v.append(smallest_eigvec_block(w_acc, d_k))
        vals = np.linalg.eigvalsh(herm(w_acc))[::-1]
        new_e.append(min(state.e_anchor[k], max(float(vals[d_k]), 0.0)))
    new_state = IrmState(
        v_blocks=new_v,
        e_anchor=new_e,
        mt_anchor=[hermitian_eig(m).vectors[:, -1] for m in accepted.m_lift],
        gamma_users=list(state.gamma_users),
        gamma_mt=state.gamma_mt,
        iteration=state.iteration + 1,
        penalty_cap=state.penalty_cap,
        growth=state.growth,
    )
    diag = {
        "step": t_step,
        "solver_status": result.status,
        "solver_iterations": result.iterations,
        "e_values": new_e,
        "rank_residuals": rank_residuals(accepted, cfg.d_streams),
    }
    return Stage2Result(True, accepted, q_acc, new_state, result.status, result.warm, diag)


def rank_residuals(lifted, d_streams):
    """Relative rank-excess measures for every lifted block."""
    w_res = []
    for k, w in enumerate(lifted.w_lift):
        vals = np.linalg.eigvalsh(herm(w))[::-1]
        tr = max(float(np.sum(vals)), 1e-300)
        w_res.append(max(float(vals[d_streams[k]]), 0.0) / tr if len(vals) > d_streams[k] else 0.0)
    m_res = []
    for m in lifted.m_lift:
        tr = max(float(np.real(np.trace(m))), 1e-300)
        m_res.append(mt_penalty_exact(m) / tr)
    return {"w": w_res, "m": m_res}


def extract_beamformers(lifted, d_streams, tol=1e-8):
    """Factor each lifted block back into beamformer columns.

    Keeps eigenvalues above tol * trace; a deficit against the stream budget
    is covered by amplitude-splitting the last column so column energy is
    preserved, which keeps W W^H equal to the lifted block exactly.
    """
    w_out = []
    for k, w in enumerate(lifted.w_lift):
        d_k = d_streams[k]
        n_t = w.shape[0]
        eig = hermitian_eig(w)
        vals, vecs = eig.values[::-1], eig.vectors[:, ::-1]
        trace = max(float(np.sum(np.abs(vals))), 1e-300)
        keep = [j for j, v in enumerate(vals) if v > tol * trace]
        r_k = len(keep)
        if r_k > d_k:
            raise RankViolationError(
                f"user {k}: lifted rank {r_k} exceeds stream budget {d_k}",
                residuals={"eigenvalues": vals[: r_k + 1].tolist(), "trace": trace},
            )
        cols = [vecs[:, j] * math.sqrt(vals[j]) for j in keep]
        if r_k == 0:
            w_out.append(np.zeros((n_t, d_k), dtype=complex))
            continue
        if r_k < d_k:
            copies = d_k - r_k + 1
            last = cols.pop()
            cols.extend([last / math.sqrt(copies)] * copies)
        w_out.append(np.stack(cols, axis=1))
    m_out = []
    for m in lifted.m_lift:
        eig = hermitian_eig(m)
        lam = max(float(eig.values[-1]), 0.0)
        m_out.append(eig.vectors[:, -1] * math.sqrt(lam))
    return model.TxBeamformers(w=w_out, m=m_out)
