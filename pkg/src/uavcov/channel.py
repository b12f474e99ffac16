"""Air-to-ground link budget.

Pure functions for geometry, LoS probability, fading, received power,
inter-UAV interference and achievable rate. All functions accept scalars or
numpy arrays (broadcasting elementwise), so the same code evaluates a single
test link and a whole frame of links.

Conventions: distances in meters, powers in watts, bandwidth in Hz, rates in
bits/s. Fading factors are dimensionless power gains normalized to unit mean,
so the path-loss terms keep their physical interpretation.
"""

from dataclasses import dataclass

import numpy as np

from . import seeding


@dataclass(frozen=True)
class EnvConstants:
    """Propagation constants for the dense-urban scenario."""

    b: float = 0.136            # sigmoid slope of the LoS probability
    c: float = 11.95            # sigmoid offset, degrees
    alpha_los: float = 3.0      # path-loss exponent, LoS
    alpha_nlos: float = 4.0     # path-loss exponent, NLoS
    noise_power: float = 4e-15  # AWGN power, W
    rician_k_db: float = 10.0   # Rician K-factor of the LoS fading, dB

    def __post_init__(self):
        if not (self.b > 0 and self.c > 0):
            raise ValueError("sigmoid constants b, c must be positive")
        if not (self.alpha_nlos >= self.alpha_los > 2.0):
            raise ValueError("require alpha_nlos >= alpha_los > 2")
        if not self.noise_power > 0:
            raise ValueError("noise_power must be positive")


@dataclass(frozen=True)
class LinkGeometry:
    d: float      # horizontal distance, m
    r: float      # 3D distance, m
    theta: float  # elevation angle, rad


@dataclass(frozen=True)
class FadingDraw:
    g: float  # Rician power gain (LoS link)
    k: float  # Rayleigh power gain (NLoS link)


@dataclass(frozen=True)
class LinkBudget:
    p_los: float        # LoS probability
    power_los: float    # received power under the LoS hypothesis, W
    power_nlos: float   # received power under the NLoS hypothesis, W
    power_eff: float    # probability-weighted mix, W
    interference: float # co-channel NLoS interference, W
    rate: float         # achievable rate, bits/s


def link_geometry(ue_xy, uav_xyz) -> LinkGeometry:
    """Geometry of a single ground-to-air link. UAV altitude must be > 0."""
    ue = np.asarray(ue_xy, dtype=float)
    uav = np.asarray(uav_xyz, dtype=float)
    if not (np.all(np.isfinite(ue)) and np.all(np.isfinite(uav))):
        raise ValueError("non-finite coordinates")
    h = float(uav[2])
    if h <= 0:
        raise ValueError("UAV altitude must be positive")
    d = float(np.hypot(uav[0] - ue[0], uav[1] - ue[1]))
    r = float(np.hypot(d, h))
    theta = float(np.arcsin(h / r))
    return LinkGeometry(d=d, r=r, theta=theta)


def geometry_arrays(ue_xy, uav_xyz):
    """Vectorized (d, r, theta) for UE positions (n,2) against UAVs (m,3)."""
    ue = np.asarray(ue_xy, dtype=float)
    uav = np.asarray(uav_xyz, dtype=float)
    diff = ue[:, None, :2] - uav[None, :, :2]
    d = np.hypot(diff[..., 0], diff[..., 1])
    h = uav[None, :, 2]
    r = np.hypot(d, h)
    theta = np.arcsin(h / r)
    return d, r, theta


def los_probability(theta, env: EnvConstants):
    """LoS probability as a sigmoid in the elevation angle (radians)."""
    th = np.asarray(theta, dtype=float)
    if np.any(th < -1e-12) or np.any(th > np.pi / 2 + 1e-12):
        raise ValueError("theta outside [0, pi/2]")
    deg = np.degrees(th)
    p = 1.0 / (1.0 + env.c * np.exp(-env.b * (deg - env.c)))
    return p if p.ndim else float(p)


def received_power(p_tx, r, gain, alpha):
    """Faded power-law received power: p_tx * gain * r**(-alpha)."""
    p = np.asarray(p_tx, dtype=float)
    rr = np.asarray(r, dtype=float)
    if np.any(p < 0):
        raise ValueError("transmit power must be non-negative")
    if np.any(rr <= 0):
        raise ValueError("distance must be positive")
    out = p * np.asarray(gain, dtype=float) * rr ** (-float(alpha))
    return out if out.ndim else float(out)


def effective_power(p_los, power_los, power_nlos):
    """LoS-probability-weighted mix of the two link hypotheses."""
    pl = np.asarray(p_los, dtype=float)
    out = pl * np.asarray(power_los, dtype=float) + (1.0 - pl) * np.asarray(power_nlos, dtype=float)
    return out if out.ndim else float(out)


def interference_at(p_avg, rayleigh_gain, r, alpha_nlos):
    """Total NLoS interference from the given co-channel UAVs.

    Inputs are parallel arrays over the interfering UAVs only; the serving
    UAV must already be excluded by the caller. Empty arrays give 0.
    """
    p = np.atleast_1d(np.asarray(p_avg, dtype=float))
    if p.size == 0:
        return 0.0
    g = np.atleast_1d(np.asarray(rayleigh_gain, dtype=float))
    rr = np.atleast_1d(np.asarray(r, dtype=float))
    if np.any(rr <= 0):
        raise ValueError("distance must be positive")
    return float(np.sum(p * g * rr ** (-float(alpha_nlos))))


def achievable_rate(bandwidth, power_eff, interference, noise):
    """Shannon rate of the link: B * log2(1 + SINR)."""
    bw = np.asarray(bandwidth, dtype=float)
    nz = np.asarray(noise, dtype=float)
    if np.any(bw < 0):
        raise ValueError("bandwidth must be non-negative")
    if np.any(nz <= 0):
        raise ValueError("noise power must be positive")
    sinr = np.asarray(power_eff, dtype=float) / (np.asarray(interference, dtype=float) + nz)
    out = bw * np.log2(1.0 + sinr)
    return out if out.ndim else float(out)


def service_indicator(rate, r_th) -> int:
    """1 when the rate meets the target threshold (inclusive)."""
    if r_th <= 0:
        raise ValueError("rate threshold must be positive")
    return int(rate >= r_th)


def link_budget(ue_xy, uav_xyz, p_tx: float, fading: FadingDraw, bandwidth: float,
                interference: float, env: EnvConstants) -> LinkBudget:
    """Full budget of one link: geometry through achievable rate."""
    geom = link_geometry(ue_xy, uav_xyz)
    p_los = los_probability(geom.theta, env)
    pw_los = received_power(p_tx, geom.r, fading.g, env.alpha_los)
    pw_nlos = received_power(p_tx, geom.r, fading.k, env.alpha_nlos)
    p_eff = effective_power(p_los, pw_los, pw_nlos)
    rate = achievable_rate(bandwidth, p_eff, interference, env.noise_power)
    return LinkBudget(p_los=p_los, power_los=pw_los, power_nlos=pw_nlos,
                      power_eff=p_eff, interference=float(interference), rate=rate)


def rayleigh_power_gain(rng: np.random.Generator, size=None):
    """Unit-mean Rayleigh power gain, i.e. Exp(1)."""
    return rng.exponential(1.0, size=size)


def rician_power_gain(rng: np.random.Generator, k_db: float, size=None):
    """Unit-mean Rician power gain with K-factor k_db.

    |nu + x + iy|^2 with deterministic LoS amplitude nu and Gaussian scatter,
    scaled so the mean power is exactly 1.
    """
    k = 10.0 ** (k_db / 10.0)
    nu = np.sqrt(k / (k + 1.0))
    sigma = np.sqrt(1.0 / (2.0 * (k + 1.0)))
    shape = () if size is None else size
    x = rng.normal(0.0, sigma, size=shape)
    y = rng.normal(0.0, sigma, size=shape)
    g = (nu + x) ** 2 + y ** 2
    return g if np.ndim(g) else float(g)


def sample_fading(kind: str, rng: np.random.Generator, env: EnvConstants, size=None):
    """Draw one fading component ('rician' or 'rayleigh') from rng."""
    if kind == "rician":
        return rician_power_gain(rng, env.rician_k_db, size=size)
    if kind == "rayleigh":
        return rayleigh_power_gain(rng, size=size)
    raise ValueError(f"unknown fading kind: {kind}")


class FadingField:
    """Counter-addressed small-scale fading for every (UE, UAV) link.

    Gains are indexed by (frame, episode, step); regenerating the same index
    always yields the same matrices, regardless of what else was drawn.
    """

    def __init__(self, master_seed: int, env: EnvConstants, n_ues: int, n_uavs: int):
        self.master_seed = int(master_seed)
        self.env = env
        self.n_ues = int(n_ues)
        self.n_uavs = int(n_uavs)

    def draw(self, frame: int, episode: int, step: int):
        """(rician, rayleigh) gain matrices of shape (n_ues, n_uavs)."""
        rng = seeding.counter_stream(self.master_seed, seeding.FADING, (frame, episode, step))
        shape = (self.n_ues, self.n_uavs)
        g = rician_power_gain(rng, self.env.rician_k_db, size=shape)
        k = rayleigh_power_gain(rng, size=shape)
        return g, k
