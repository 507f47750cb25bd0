"""Geometry-driven channel synthesis.

Builds the Rician links between the base station, the omni surface and the
users, plus the deterministic steering-based target response matrices used
by the sensing chain.  All randomness flows through explicit seeds, so a
given (config, seed) pair always reproduces the same :class:`ChannelSet`.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, GeometryError

SPEED_OF_LIGHT = 299_792_458.0

__all__ = [
    "Geometry",
    "RicianParams",
    "ChannelSet",
    "steering",
    "upa_response",
    "los_component",
    "rician",
    "target_response",
    "generate",
    "position_from_angles",
    "save_channelset",
    "load_channelset",
]


@dataclass
class Geometry:
    """Scene layout. Arrays are ULAs along the x axis; the surface is a
    uniform planar array in the x-z plane with its board normal along +y
    (reflective half-space y < 0)."""

    bs_position: tuple = (25.0, 25.0, 10.0)
    ios_position: tuple = (0.0, 0.0, 50.0)
    rx_array_positions: dict = field(
        default_factory=lambda: {"R": (50.0, -50.0, 10.0), "T": (-50.0, 50.0, 10.0)}
    )
    user_positions: list = None
    target_positions: list = None
    ios_grid: tuple = (4, 4)
    element_spacing_ios: tuple = None
    antenna_spacing_bs: float = None
    antenna_spacing_rx: float = None
    carrier_frequency: float = 3e9

    def __post_init__(self):
        half_wavelength = SPEED_OF_LIGHT / self.carrier_frequency / 2.0
        if self.element_spacing_ios is None:
            self.element_spacing_ios = (half_wavelength, half_wavelength)
        if self.antenna_spacing_bs is None:
            self.antenna_spacing_bs = half_wavelength
        if self.antenna_spacing_rx is None:
            self.antenna_spacing_rx = half_wavelength
        if min(self.element_spacing_ios) <= 0 or self.antenna_spacing_bs <= 0 or self.antenna_spacing_rx <= 0:
            raise ConfigError("antenna/element spacings must be positive")
        if min(self.ios_grid) < 1:
            raise ConfigError("surface grid counts must be >= 1")
        for name in ("bs_position", "ios_position"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ConfigError(f"{name} must be finite")

    @property
    def num_elements(self):
        return int(self.ios_grid[0] * self.ios_grid[1])


@dataclass
class RicianParams:
    kappa: float = 10.0
    pathloss_exponent: float = 2.2
    ref_gain: float = 1e-3  # -30 dB at the 1 m reference distance

    def __post_init__(self):
        if self.kappa < 0 or self.pathloss_exponent <= 0 or self.ref_gain <= 0:
            raise ConfigError("rician parameters out of range")


@dataclass
class ChannelSet:
    """One realized draw of every link plus noise/echo bookkeeping."""

    h_rb: np.ndarray            # N x N_t
    h_ur: list                  # per user, M_k x N
    a: list                     # per target, N_r x N
    echo: np.ndarray            # per-target complex echo coefficient
    noise_user: float           # watts
    noise_radar: float          # watts
    region_users: list          # "R" / "T" per user
    region_targets: list
    user_positions: list = None
    target_positions: list = None

    def __post_init__(self):
        if self.noise_user <= 0 or self.noise_radar <= 0:
            raise ConfigError("noise powers must be positive")
        if len(self.h_ur) != len(self.region_users):
            raise ConfigError("per-user channel count does not match region tags")
        if len(self.a) != len(self.region_targets) or len(self.a) != len(self.echo):
            raise ConfigError("per-target channel count does not match tags/echo")


def steering(phase_increment, count):
    """Unit-modulus steering vector exp(j 2 pi inc m), m = 0..count-1."""
    if count < 1:
        raise ConfigError("steering vector needs at least one element")
    return np.exp(2j * np.pi * phase_increment * np.arange(count))


def upa_response(theta_h, theta_v, grid, spacing, fc):
    """Planar-array response as the Kronecker product of the horizontal and
    vertical steering vectors; phase increments are
    fc*d_x*sin(th)*sin(tv)/c and fc*d_z*sin(th)*cos(tv)/c."""
    n_x, n_z = grid
    d_x, d_z = spacing
    inc_h = fc * d_x * math.sin(theta_h) * math.sin(theta_v) / SPEED_OF_LIGHT
    inc_v = fc * d_z * math.sin(theta_h) * math.cos(theta_v) / SPEED_OF_LIGHT
    return np.kron(steering(inc_h, n_x), steering(inc_v, n_z))


def _surface_angles(geometry, point):
    """(theta_h, theta_v) of `point` as seen from the surface.

    theta_h is the polar angle off the board normal (+y), theta_v the
    in-plane direction, so that the direction cosines along the board axes
    are sin(th)sin(tv) (x) and sin(th)cos(tv) (z)."""
    d = np.asarray(point, dtype=float) - np.asarray(geometry.ios_position, dtype=float)
    norm = np.linalg.norm(d)
    if norm < 1e-9:
        raise GeometryError("endpoint coincides with the surface position")
    d = d / norm
    theta_v = math.atan2(d[0], d[2])
    theta_h = math.asin(min(1.0, math.hypot(d[0], d[2])))
    return theta_h, theta_v


def _ula_sin(from_point, to_point):
    """x-direction cosine seen by a ULA at `from_point` looking at `to_point`."""
    d = np.asarray(to_point, dtype=float) - np.asarray(from_point, dtype=float)
    norm = np.linalg.norm(d)
    if norm < 1e-9:
        raise GeometryError("link endpoints coincide")
    return float(d[0] / norm)


def position_from_angles(theta_h, theta_v, distance, region, ios_position=(0.0, 0.0, 50.0)):
    """Place a point at `distance` from the surface realizing the given
    surface-side angle pair; region picks the sign of the normal component."""
    s = math.sin(theta_h)
    direction = np.array(
        [
            s * math.sin(theta_v),
            -abs(math.cos(theta_h)) if region == "R" else abs(math.cos(theta_h)),
            s * math.cos(theta_v),
        ]
    )
    return tuple(np.asarray(ios_position, dtype=float) + distance * direction)


def los_component(geometry, link, endpoint=None, endpoint_antennas=None):
    """Rank-one line-of-sight matrix for one hop.

    link = "bs_ios":  N x N_t response = u(angles) l(angles)^T with u the
    surface response and l the BS ULA steering.
    link = "ios_user": M_k x N response = l_user u^T for the user at
    `endpoint` with `endpoint_antennas` receive antennas.
    """
    fc = geometry.carrier_frequency
    if link == "bs_ios":
        th, tv = _surface_angles(geometry, geometry.bs_position)
        u = upa_response(th, tv, geometry.ios_grid, geometry.element_spacing_ios, fc)
        sin_bs = _ula_sin(geometry.bs_position, geometry.ios_position)
        lvec = steering(fc * geometry.antenna_spacing_bs * sin_bs / SPEED_OF_LIGHT,
                        endpoint_antennas)
        return np.outer(u, lvec)
    if link == "ios_user":
        th, tv = _surface_angles(geometry, endpoint)
        u = upa_response(th, tv, geometry.ios_grid, geometry.element_spacing_ios, fc)
        sin_user = _ula_sin(endpoint, geometry.ios_position)
        lvec = steering(fc * geometry.antenna_spacing_rx * sin_user / SPEED_OF_LIGHT,
                        endpoint_antennas)
        return np.outer(lvec, u)
    raise ConfigError(f"unknown link {link!r}")


def rician(los, params, distance, rng_seed):
    """Rician draw around a LoS matrix.

    sqrt(beta (d/d0)^-alpha) (sqrt(k/(k+1)) LoS + sqrt(1/(k+1)) NLoS), with
    i.i.d. unit-variance circular Gaussian NLoS entries drawn from the seed.
    """
    if distance <= 0:
        raise GeometryError("link distance must be positive")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    los = np.asarray(los, dtype=complex)
    nlos = (rng.standard_normal(los.shape) + 1j * rng.standard_normal(los.shape)) / math.sqrt(2.0)
    kappa = params.kappa
    mix = math.sqrt(kappa / (kappa + 1.0)) * los + math.sqrt(1.0 / (kappa + 1.0)) * nlos
    return math.sqrt(params.ref_gain * distance ** (-params.pathloss_exponent)) * mix


def target_response(azimuth_or, elevation_or, azimuth_ro, n_r, grid, spacing_ios,
                    spacing_rx, fc):
    """Rank-one N_r x N echo response l(theta_ro) u(theta_or)^T."""
    u = upa_response(azimuth_or, elevation_or, grid, spacing_ios, fc)
    lvec = steering(fc * spacing_rx * math.sin(azimuth_ro) / SPEED_OF_LIGHT, n_r)
    return np.outer(lvec, u)


def _dbm_to_watts(dbm):
    return 10.0 ** ((dbm - 30.0) / 10.0)


def _draw_position(rng, region):
    x = rng.uniform(-100.0, 100.0)
    y = rng.uniform(-100.0, 0.0) if region == "R" else rng.uniform(0.0, 100.0)
    return (x, y, 0.0)


def _region_of(y):
    return "R" if y <= 0.0 else "T"


def generate(config, seed):
    """Assemble a :class:`ChannelSet` for one scenario draw.

    Missing user/target positions are drawn uniformly in the region boxes
    (x in [-100, 100], y in [-100, 0] reflective / [0, 100] transmissive,
    ground level); fixed positions are tagged by the sign of y.
    """
    config.validate()
    geo = config.geometry
    if geo.num_elements != config.n:
        raise ConfigError(
            f"surface grid {geo.ios_grid} has {geo.num_elements} elements, config says {config.n}"
        )
    rng = np.random.default_rng(seed)
    k_total = config.k_r + config.k_t
    o_total = config.o_r + config.o_t

    region_users = ["R"] * config.k_r + ["T"] * config.k_t
    region_targets = ["R"] * config.o_r + ["T"] * config.o_t

    user_positions = list(geo.user_positions) if geo.user_positions else [None] * k_total
    target_positions = list(geo.target_positions) if geo.target_positions else [None] * o_total
    if len(user_positions) != k_total or len(target_positions) != o_total:
        raise ConfigError("fixed position lists do not match user/target counts")
    for k in range(k_total):
        if user_positions[k] is None:
            user_positions[k] = _draw_position(rng, region_users[k])
        elif _region_of(user_positions[k][1]) != region_users[k]:
            raise ConfigError(f"user {k} position lies outside its region")
    for i in range(o_total):
        if target_positions[i] is None:
            target_positions[i] = _draw_position(rng, region_targets[i])
        elif _region_of(target_positions[i][1]) != region_targets[i]:
            raise ConfigError(f"target {i} position lies outside its region")

    ios = np.asarray(geo.ios_position, dtype=float)
    d_rb = float(np.linalg.norm(np.asarray(geo.bs_position) - ios))
    h_rb = rician(
        los_component(geo, "bs_ios", endpoint_antennas=config.n_t),
        config.rician, d_rb, rng,
    )

    h_ur = []
    for k in range(k_total):
        pos = user_positions[k]
        los = los_component(geo, "ios_user", endpoint=pos, endpoint_antennas=config.m_antennas[k])
        h_ur.append(rician(los, config.rician, float(np.linalg.norm(np.asarray(pos) - ios)), rng))

    a_mats = []
    for i in range(o_total):
        pos = target_positions[i]
        th, tv = _surface_angles(geo, pos)
        rx = geo.rx_array_positions[region_targets[i]]
        sin_ro = _ula_sin(rx, pos)
        a_mats.append(
            target_response(th, tv, math.asin(sin_ro), config.n_r, geo.ios_grid,
                            geo.element_spacing_ios, geo.antenna_spacing_rx,
                            geo.carrier_frequency)
        )

    echo = np.full(o_total, complex(config.echo_coeff_mag), dtype=complex)
    if config.echo_distance_exponent:
        for i in range(o_total):
            d = float(np.linalg.norm(np.asarray(target_positions[i]) - ios))
            echo[i] *= d ** (-config.echo_distance_exponent / 2.0)

    return ChannelSet(
        h_rb=h_rb,
        h_ur=h_ur,
        a=a_mats,
        echo=echo,
        noise_user=_dbm_to_watts(config.noise_user_dbm),
        noise_radar=_dbm_to_watts(config.noise_radar_dbm),
        region_users=region_users,
        region_targets=region_targets,
        user_positions=[tuple(p) for p in user_positions],
        target_positions=[tuple(p) for p in target_positions],
    )


def _write_matrix(fh, name, m):
    fh.write(f"matrix {name} {m.shape[0]} {m.shape[1]}\n")
    for row in m:
        fh.write(" ".join(f"{v.real:.17g} {v.imag:.17g}" for v in row) + "\n")


def save_channelset(channels, path):
    """Plain-text export (re/im pairs, 17 significant digits) so exact
    instances can be replayed."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("channelset v1\n")
        fh.write(f"noise_user {channels.noise_user:.17g}\n")
        fh.write(f"noise_radar {channels.noise_radar:.17g}\n")
        fh.write("region_users " + " ".join(channels.region_users) + "\n")
        fh.write("region_targets " + " ".join(channels.region_targets) + "\n")
        fh.write("echo " + " ".join(f"{v.real:.17g} {v.imag:.17g}" for v in channels.echo) + "\n")
        for label, positions in (
            ("user_positions", channels.user_positions),
            ("target_positions", channels.target_positions),
        ):
            if positions is None:
                fh.write(f"{label} none\n")
            else:
                fh.write(f"{label} " + " ".join(f"{c:.17g}" for p in positions for c in p) + "\n")
        _write_matrix(fh, "H_RB", channels.h_rb)
        for k, m in enumerate(channels.h_ur):
            _write_matrix(fh, f"H_UR_{k}", m)
        for i, m in enumerate(channels.a):
            _write_matrix(fh, f"A_{i}", m)


def load_channelset(path):
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if lines[0] != "channelset v1":
        raise ConfigError("not a channelset file")
    fields = {}
    idx = 1
    while idx < len(lines) and not lines[idx].startswith("matrix "):
        key, _, rest = lines[idx].partition(" ")
        fields[key] = rest
        idx += 1
    matrices = {}
    while idx < len(lines):
        _, name, rows, cols = lines[idx].split()
        rows, cols = int(rows), int(cols)
        data = np.zeros((rows, cols), dtype=complex)
        for r in range(rows):
            vals = [float(t) for t in lines[idx + 1 + r].split()]
            data[r] = np.array(vals[0::2]) + 1j * np.array(vals[1::2])
        matrices[name] = data
        idx += 1 + rows

    def parse_positions(text):
        if text == "none":
            return None
        vals = [float(t) for t in text.split()]
        return [tuple(vals[i : i + 3]) for i in range(0, len(vals), 3)]

    echo_vals = [float(t) for t in fields["echo"].split()]
    region_users = fields["region_users"].split()
    region_targets = fields["region_targets"].split()
    return ChannelSet(
        h_rb=matrices["H_RB"],
        h_ur=[matrices[f"H_UR_{k}"] for k in range(len(region_users))],
        a=[matrices[f"A_{i}"] for i in range(len(region_targets))],
        echo=np.array(echo_vals[0::2]) + 1j * np.array(echo_vals[1::2]),
        noise_user=float(fields["noise_user"]),
        noise_radar=float(fields["noise_radar"]),
        region_users=region_users,
        region_targets=region_targets,
        user_positions=parse_positions(fields["user_positions"]),
        target_positions=parse_positions(fields["target_positions"]),
    )
