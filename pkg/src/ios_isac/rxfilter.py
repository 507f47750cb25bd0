"""Radar receive filters: closed-form whitened Rayleigh-quotient maximizers.

For each target the echo SINR is a generalized Rayleigh quotient
g^H Q g / g^H T g with Q the (echo-weighted) signal matrix and T the
interference-plus-noise matrix.  Whitening T = B^2 turns the problem into an
ordinary top-eigenvector computation; the expected transmit covariance
replaces the instantaneous signal outer product throughout, so filters
optimize the statistical SINR.
"""

from dataclasses import dataclass

import numpy as np

from . import model
from .numerics import herm, hermitian_eig, psd_sqrt_inv

__all__ = ["FilterProblem", "build_filter_problem", "solve_filter", "q_stage1", "update_filters"]


@dataclass
class FilterProblem:
    q: np.ndarray   # Hermitian PSD signal matrix (echo coefficient absorbed)
    t: np.ndarray   # Hermitian PD interference-plus-noise matrix


def build_filter_problem(i, channels, ios, r_x, lam=1.0):
    """Assemble (Q_i, T_i) for target i at transmit covariance ``r_x``.

    ``lam`` scales the signal matrix under the time-switching protocol.
    """
    region = channels.region_targets[i]
    theta = model.region_theta(ios, region)
    s_i = (channels.a[i] * theta[None, :]) @ channels.h_rb
    q = lam * abs(channels.echo[i]) ** 2 * herm(s_i @ r_x @ s_i.conj().T)
    n_r = channels.a[i].shape[0]
    t = channels.noise_radar * np.eye(n_r, dtype=complex)
    for o in model.same_region_targets(channels, i):
        s_o = (channels.a[o] * theta[None, :]) @ channels.h_rb
        t += abs(channels.echo[o]) ** 2 * herm(s_o @ r_x @ s_o.conj().T)
    return FilterProblem(q=q, t=herm(t))


def solve_filter(problem):
    """Optimal unit-norm filter and its quotient.

    g = B^-1 f with f the top eigenvector of B^-1 Q B^-1 and B the Hermitian
    square root of T.  A zero signal matrix (no power toward the target)
    returns the noise-whitened first basis vector with quotient 0 so the
    surrounding descent loop stays well defined at cold starts.
    """
    b, b_inv = psd_sqrt_inv(problem.t)
    n = problem.t.shape[0]
    if np.linalg.norm(problem.q) <= 1e-300:
        g = b_inv[:, 0] / np.linalg.norm(b_inv[:, 0])
        return g, 0.0
    eig = hermitian_eig(b_inv @ problem.q @ b_inv)
    f_opt = eig.vectors[:, -1]
    g = b_inv @ f_opt
    g = g / np.linalg.norm(g)
    sinr = float(np.real(g.conj() @ problem.q @ g) / np.real(g.conj() @ problem.t @ g))
    return g, sinr


def update_filters(channels, ios, r_x, ts_split=None):
    """Solve every per-target problem; returns (filters, per-target quotients)."""
    n_targets = len(channels.a)
    g_list, values = [], []
    for i in range(n_targets):
        lam = 1.0
        if ts_split is not None:
            lam = ts_split[0] if channels.region_targets[i] == "R" else ts_split[1]
        g, sinr = solve_filter(build_filter_problem(i, channels, ios, r_x, lam=lam))
        g_list.append(g)
        values.append(sinr)
    return g_list, values


def q_stage1(channels, ios, r_x, ts_split=None):
    """Optimal minimum SINR over all targets after the filter update."""
    g_list, values = update_filters(channels, ios, r_x, ts_split=ts_split)
    return g_list, values, float(min(values))
