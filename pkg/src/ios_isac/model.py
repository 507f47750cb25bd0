"""Scenario configuration, decision variables and performance metrics.

Rates are log base 2 (bits/s/Hz); dBm noise figures convert to watts at
config construction time.  Data symbols and radar streams are never sampled
here: every metric uses their unit-covariance / orthonormality in closed
form.  Monte-Carlo sampling exists only inside test oracles.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import channel as channel_mod
from .errors import ConfigError, NumericError
from .numerics import herm, log_det_psd

LN2 = math.log(2.0)

__all__ = [
    "AlgoParams",
    "ScenarioConfig",
    "IosCoefficients",
    "TxBeamformers",
    "ReceiveFilters",
    "Solution",
    "transmit_covariance",
    "total_power",
    "effective_user_channel",
    "user_rate",
    "user_rate_lifted",
    "sensing_sinr",
    "sensing_sinr_cov",
    "min_sinr",
    "ts_user_rate",
    "ts_sensing_sinr",
    "beam_pattern_gain",
    "region_theta",
    "same_region_targets",
]


@dataclass
class AlgoParams:
    """Optimizer knobs: loop tolerances, penalty schedules, solver settings."""

    inner_tol: float = 1e-3
    inner_max: int = 50
    outer_residual: float = 1e-4
    outer_max: int = 8
    gamma0: float = 1e-2          # initial rank-penalty weight
    gamma: float = 2.0            # geometric growth factor
    penalty_cap: float = 1e6
    nu0: float = 1e-2             # mode-switching binary penalty weight
    nu: float = 2.0
    rand_candidates: int = 200
    ts_full_amplitude: bool = False
    lambda_floor: float = 1e-3
    solver_eps: float = 1e-7
    solver_max_iters: int = 50_000
    debug_dump_dir: str = None

    def solver_settings(self):
        from .conic import SolverSettings

        return SolverSettings(
            eps_primal=self.solver_eps,
            eps_dual=self.solver_eps,
            eps_gap=self.solver_eps,
            max_iters=self.solver_max_iters,
        )


def _dbm_to_watts(dbm):
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass
class ScenarioConfig:
    """All physical and algorithmic parameters of one experiment."""

    n_t: int = 8
    n_r: int = 8
    n: int = 16
    k_r: int = 2
    k_t: int = 2
    o_r: int = 2
    o_t: int = 2
    d_streams: list = None        # per-user stream counts
    m_antennas: list = None       # per-user receive antennas
    r_th: float = 1.0             # bits/s/Hz
    p_max: float = 300.0          # watts
    noise_user_dbm: float = -60.0
    noise_radar_dbm: float = -60.0
    protocol: str = "es"
    echo_coeff_mag: float = 1e-3
    echo_distance_exponent: float = 0.0
    geometry: channel_mod.Geometry = None
    rician: channel_mod.RicianParams = None
    algo: AlgoParams = field(default_factory=AlgoParams)

    def __post_init__(self):
        k = self.k_r + self.k_t
        if self.d_streams is None:
            self.d_streams = [2] * k
        if isinstance(self.d_streams, int):
            self.d_streams = [self.d_streams] * k
        if self.m_antennas is None:
            self.m_antennas = [4] * k
        if isinstance(self.m_antennas, int):
            self.m_antennas = [self.m_antennas] * k
        if self.geometry is None:
            self.geometry = channel_mod.Geometry(ios_grid=_default_grid(self.n))
        if self.rician is None:
            self.rician = channel_mod.RicianParams()
        self.validate()

    @property
    def num_users(self):
        return self.k_r + self.k_t

    @property
    def num_targets(self):
        return self.o_r + self.o_t

    @property
    def noise_user(self):
        return _dbm_to_watts(self.noise_user_dbm)

    @property
    def noise_radar(self):
        return _dbm_to_watts(self.noise_radar_dbm)

    def validate(self):
        if min(self.n_t, self.n_r, self.n) < 1:
            raise ConfigError("antenna/element counts must be >= 1")
        if min(self.k_r, self.k_t, self.o_r, self.o_t) < 0:
            raise ConfigError("user/target counts cannot be negative")
        if self.num_targets < 1:
            raise ConfigError("at least one target is required (min-SINR objective)")
        if self.p_max <= 0:
            raise ConfigError("p_max must be positive")
        if self.r_th < 0:
            raise ConfigError("r_th cannot be negative")
        if len(self.d_streams) != self.num_users or len(self.m_antennas) != self.num_users:
            raise ConfigError("d_streams/m_antennas must have one entry per user")
        for k in range(self.num_users):
            limit = min(self.n_t, self.m_antennas[k])
            if not 1 <= self.d_streams[k] <= limit:
                raise ConfigError(
                    f"user {k}: d_streams={self.d_streams[k]} violates "
                    f"D_k <= min(N_t, M_k) = {limit}"
                )
        if self.protocol not in ("es", "ms", "ts"):
            raise ConfigError(f"unknown protocol {self.protocol!r}")
        if self.geometry.num_elements != self.n:
            raise ConfigError(
                f"surface grid {self.geometry.ios_grid} does not give n={self.n} elements"
            )


def _default_grid(n):
    """Widest near-square factorization (n_x, n_z) with n_x >= n_z."""
    best = (n, 1)
    for n_z in range(1, int(math.isqrt(n)) + 1):
        if n % n_z == 0:
            best = (n // n_z, n_z)
    return best


@dataclass
class IosCoefficients:
    """Per-element reflective/transmissive coefficients (amplitude, phase)."""

    theta_r: np.ndarray
    theta_t: np.ndarray

    def __post_init__(self):
        self.theta_r = np.asarray(self.theta_r, dtype=complex).reshape(-1)
        self.theta_t = np.asarray(self.theta_t, dtype=complex).reshape(-1)
        if self.theta_r.shape != self.theta_t.shape:
            raise ConfigError("reflective/transmissive coefficient lengths differ")

    def amplitudes(self):
        return np.abs(self.theta_r) ** 2, np.abs(self.theta_t) ** 2

    def coupling_residual(self):
        a_r, a_t = self.amplitudes()
        return float(np.max(np.abs(a_r + a_t - 1.0)))

    def binary_residual(self):
        a_r, a_t = self.amplitudes()
        amps = np.concatenate([a_r, a_t])
        return float(np.max(np.minimum(np.abs(amps), np.abs(amps - 1.0))))


@dataclass
class TxBeamformers:
    w: list   # per user, N_t x D_k
    m: list   # per sensing stream, length-N_t vectors

    def __post_init__(self):
        self.w = [np.asarray(mat, dtype=complex) for mat in self.w]
        self.m = [np.asarray(vec, dtype=complex).reshape(-1) for vec in self.m]


@dataclass
class ReceiveFilters:
    g: list   # per target, unit-norm length-N_r vectors

    def __post_init__(self):
        self.g = [np.asarray(vec, dtype=complex).reshape(-1) for vec in self.g]
        for i, vec in enumerate(self.g):
            if abs(np.linalg.norm(vec) - 1.0) > 1e-8:
                raise ConfigError(f"filter {i} is not unit norm")


@dataclass
class Solution:
    beamformers: TxBeamformers
    filters: ReceiveFilters
    ios: IosCoefficients
    ts_split: tuple = None   # (lambda_R, lambda_T), only under TS

    def lam(self, region):
        if self.ts_split is None:
            return 1.0
        return self.ts_split[0] if region == "R" else self.ts_split[1]


def transmit_covariance(beams):
    """R_x = sum_k W_k W_k^H + sum_t m_t m_t^H (PSD by construction)."""
    n_t = beams.w[0].shape[0] if beams.w else beams.m[0].shape[0]
    r_x = np.zeros((n_t, n_t), dtype=complex)
    for w in beams.w:
        r_x += w @ w.conj().T
    for m in beams.m:
        r_x += np.outer(m, m.conj())
    return herm(r_x)


def total_power(beams):
    return float(np.real(np.trace(transmit_covariance(beams))))


def region_theta(ios, region):
    return ios.theta_r if region == "R" else ios.theta_t


def effective_user_channel(k, channels, ios):
    """M_k x N_t cascaded channel through the user's side of the surface."""
    theta = region_theta(ios, channels.region_users[k])
    return (channels.h_ur[k] * theta[None, :]) @ channels.h_rb


def _interference_matrix(k, h_k, w_list, m_list, noise):
    m_k = h_k.shape[0]
    j = noise * np.eye(m_k, dtype=complex)
    for l, w in enumerate(w_list):
        if l == k:
            continue
        hw = h_k @ w
        j += hw @ hw.conj().T
    for m_vec in m_list:
        hm = h_k @ m_vec
        j += np.outer(hm, hm.conj())
    return herm(j)


def user_rate(k, solution, channels):
    """log2 det(I + W^H H^H J^-1 H W); J carries other users' streams and
    all sensing streams plus receiver noise."""
    h_k = effective_user_channel(k, channels, solution.ios)
    beams = solution.beamformers
    j = _interference_matrix(k, h_k, beams.w, beams.m, channels.noise_user)
    hw = h_k @ beams.w[k]
    try:
        j_inv_hw = np.linalg.solve(j, hw)
    except np.linalg.LinAlgError:
        raise NumericError("interference-plus-noise matrix is singular") from None
    inner = np.eye(beams.w[k].shape[1], dtype=complex) + hw.conj().T @ j_inv_hw
    return log_det_psd(inner) / LN2


def user_rate_lifted(k, channels, ios, w_lifts, m_lifts, noise):
    """Rate of user k evaluated on lifted covariances (determinant split)."""
    h_k = effective_user_channel(k, channels, ios)
    m_k = h_k.shape[0]
    total = noise * np.eye(m_k, dtype=complex)
    without_k = noise * np.eye(m_k, dtype=complex)
    for l, w_lift in enumerate(w_lifts):
        term = h_k @ w_lift @ h_k.conj().T
        total += term
        if l != k:
            without_k += term
    for m_lift in m_lifts:
        term = h_k @ m_lift @ h_k.conj().T
        total += term
        without_k += term
    return (log_det_psd(herm(total)) - log_det_psd(herm(without_k))) / LN2


def same_region_targets(channels, i):
    """Indices interfering with target i: same region, excluding i."""
    region = channels.region_targets[i]
    return [o for o, r in enumerate(channels.region_targets) if r == region and o != i]


def _sensing_matrices(channels, theta, indices):
    return {o: (channels.a[o] * theta[None, :]) @ channels.h_rb for o in indices}


def sensing_sinr_cov(i, channels, ios, g_i, r_x, lam=1.0):
    """Echo SINR of target i for a given transmit covariance."""
    region = channels.region_targets[i]
    theta = region_theta(ios, region)
    others = same_region_targets(channels, i)
    s_mats = _sensing_matrices(channels, theta, others + [i])
    s_i = s_mats[i]
    sg = s_i.conj().T @ g_i
    num = lam * abs(channels.echo[i]) ** 2 * float(np.real(sg.conj() @ r_x @ sg))
    denom = channels.noise_radar * float(np.real(g_i.conj() @ g_i))
    for o in others:
        so_g = s_mats[o].conj().T @ g_i
        denom += abs(channels.echo[o]) ** 2 * float(np.real(so_g.conj() @ r_x @ so_g))
    return num / denom


def sensing_sinr(i, solution, channels):
    r_x = transmit_covariance(solution.beamformers)
    return sensing_sinr_cov(i, channels, solution.ios, solution.filters.g[i], r_x)


def min_sinr(solution, channels):
    """Minimum over targets; ties report the lowest target index."""
    values = [sensing_sinr(i, solution, channels) for i in range(len(channels.a))]
    return float(min(values))


def ts_user_rate(k, solution, channels):
    if solution.ts_split is None:
        raise ConfigError("ts_user_rate requires a TS solution with a time split")
    return solution.lam(channels.region_users[k]) * user_rate(k, solution, channels)


def ts_sensing_sinr(i, solution, channels):
    if solution.ts_split is None:
        raise ConfigError("ts_sensing_sinr requires a TS solution with a time split")
    r_x = transmit_covariance(solution.beamformers)
    return sensing_sinr_cov(
        i, channels, solution.ios, solution.filters.g[i], r_x,
        lam=solution.lam(channels.region_targets[i]),
    )


def protocol_rate(k, solution, channels):
    return ts_user_rate(k, solution, channels) if solution.ts_split is not None else user_rate(k, solution, channels)


def protocol_sinr(i, solution, channels):
    return ts_sensing_sinr(i, solution, channels) if solution.ts_split is not None else sensing_sinr(i, solution, channels)


def protocol_min_sinr(solution, channels):
    values = [protocol_sinr(i, solution, channels) for i in range(len(channels.a))]
    return float(min(values))


def normalize_units(config, channels):
    """Rescale an instance to solver-friendly units (noise 1 W, unit budget).

    Every SINR and rate is invariant: the forward link absorbs
    sqrt(p_max)/sigma, the user links absorb the radar/user noise ratio, and
    beamformers returned by an optimizer in these units scale back by
    sqrt(p_max).  Echo coefficients, surface coefficients and filters are
    untouched.
    """
    import copy
    import dataclasses

    sigma_radar = math.sqrt(config.noise_radar)
    sigma_user = math.sqrt(config.noise_user)
    c_rb = math.sqrt(config.p_max) / sigma_radar
    scaled = copy.copy(channels)
    scaled.h_rb = channels.h_rb * c_rb
    scaled.h_ur = [h * (sigma_radar / sigma_user) for h in channels.h_ur]
    scaled.noise_user = 1.0
    scaled.noise_radar = 1.0
    cfg = dataclasses.replace(
        config, p_max=1.0, noise_user_dbm=30.0, noise_radar_dbm=30.0
    )
    return cfg, scaled, math.sqrt(config.p_max)


def beam_pattern_gain(azimuth, elevation, solution, channels, geometry, region):
    """Expected power radiated through the surface toward (azimuth, elevation)."""
    u = channel_mod.upa_response(
        azimuth, elevation, geometry.ios_grid, geometry.element_spacing_ios,
        geometry.carrier_frequency,
    )
    theta = region_theta(solution.ios, region)
    p = (u * theta) @ channels.h_rb
    r_x = transmit_covariance(solution.beamformers)
    return float(np.real(p @ r_x @ p.conj()))
