"""Physical-layer and compute-layer formulas for the HAB edge network.

Everything here is a pure function of its inputs. Scalars and numpy arrays
are both accepted wherever the formula is elementwise.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

UPLINK = "uplink"
DOWNLINK = "downlink"
EDGE = "edge"
LOCAL = "local"


class DomainError(ValueError):
    """A user lies outside the HAB's boresight hemisphere."""


class InfeasibleLinkError(ValueError):
    """Bits must cross a link whose rate is zero."""


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


def dbm_to_watt(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


@dataclass(frozen=True)
class RadioParams:
    """Radio constants. Noise is stored in linear watts."""

    speed_of_light: float = 3.0e8
    carrier_freq: float = 28e9
    bandwidth: float = 10e6
    tx_power_hab: float = 20.0
    tx_power_user: float = 0.5
    noise_power: float = float(dbm_to_watt(-95.0))
    rolloff: float = 65.0
    user_antenna_gain: float = 1.0
    hab_height: float = 17e3
    rain_attenuation: float = 1.45
    ricean_gain_hab: float = float(db_to_linear(-20.0))
    ricean_gain_user: float = float(db_to_linear(-20.0))
    # "e" reads the "32 log 2" antenna factor as 32 ln 2, "10" as 32 log10 2
    log_base: str = "e"
    # +1 keeps the rain factor >= 1; -1 makes it a true attenuation
    attenuation_sign: int = 1

    def __post_init__(self):
        positive = ("speed_of_light", "carrier_freq", "bandwidth", "tx_power_hab",
                    "tx_power_user", "noise_power", "hab_height")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.rolloff < 1:
            raise ValueError("rolloff must be >= 1")
        for name in ("user_antenna_gain", "rain_attenuation", "ricean_gain_hab", "ricean_gain_user"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.log_base not in ("e", "10"):
            raise ValueError("log_base must be 'e' or '10'")
        if self.attenuation_sign not in (1, -1):
            raise ValueError("attenuation_sign must be +1 or -1")


_TABLE_RADIO = RadioParams()


@dataclass(frozen=True)
class ComputeParams:
    """CPU, chip-energy and weighting constants.

    Per-user fields may be scalars (shared by every user) or 1-D arrays
    indexed by user.
    """

    hab_cpu_freq: float = 10e9
    hab_cycles_per_bit: float = 1500.0
    user_cpu_freq: float | np.ndarray = 0.5e9
    user_cycles_per_bit: float | np.ndarray = 1500.0
    hab_chip_coeff: float = 3.44e-23
    user_chip_coeff: float | np.ndarray = 3.44e-23
    user_op_energy: float | np.ndarray = 0.0
    hab_hover_energy: float = 0.0
    energy_budget: float = 11500.0
    weight_energy: float = 0.5
    weight_time: float = 0.5

    def __post_init__(self):
        for name in ("hab_cpu_freq", "hab_cycles_per_bit", "user_cpu_freq", "user_cycles_per_bit"):
            if not np.all(np.asarray(getattr(self, name)) > 0):
                raise ValueError(f"{name} must be > 0")
        if self.weight_energy < 0 or self.weight_time < 0:
            raise ValueError("weights must be >= 0")
        if self.weight_energy + self.weight_time <= 0:
            raise ValueError("weight_energy + weight_time must be > 0")
        if not self.energy_budget > 0:
            raise ValueError("energy_budget must be > 0")

    def user(self, name: str, m):
        """Value of a per-user field for user index (or index array) ``m``."""
        value = np.asarray(getattr(self, name), dtype=float)
        if value.ndim == 0:
            return float(value) if np.ndim(m) == 0 else np.full(np.shape(m), float(value))
        return value[m]


@dataclass
class Geometry:
    """HAB and user positions in metres, shapes (N, 3) and (M, 3)."""

    hab_positions: np.ndarray
    user_positions: np.ndarray
    slant_distance: np.ndarray = field(init=False)
    boresight_angle: np.ndarray = field(init=False)

    def __post_init__(self):
        self.hab_positions = np.atleast_2d(np.asarray(self.hab_positions, dtype=float))
        self.user_positions = np.atleast_2d(np.asarray(self.user_positions, dtype=float))
        diff = self.hab_positions[None, :, :] - self.user_positions[:, None, :]
        self.slant_distance = np.linalg.norm(diff, axis=2)
        if np.any(self.slant_distance <= 0):
            raise ValueError("a user coincides with a HAB")
        # HAB antennas point at nadir; boresight angle from the vertical drop
        cos_psi = np.clip(diff[:, :, 2] / self.slant_distance, -1.0, 1.0)
        self.boresight_angle = np.arccos(cos_psi)

    @property
    def horizontal_distance(self) -> np.ndarray:
        d = self.hab_positions[None, :, :2] - self.user_positions[:, None, :2]
        return np.linalg.norm(d, axis=2)


def half_power_angle(rolloff: float) -> float:
    """Angle at which cos(psi)**rolloff falls to one half."""
    return float(np.arccos(0.5 ** (1.0 / rolloff)))


def antenna_gain(psi, rolloff: float, log_base: str = "e"):
    """HAB antenna pattern G_H(psi); zero at and beyond the horizon."""
    log2 = np.log(2.0) if log_base == "e" else np.log10(2.0)
    peak = 32.0 * log2 / (2.0 * (2.0 * half_power_angle(rolloff)) ** 2)
    c = np.clip(np.cos(np.asarray(psi, dtype=float)), 0.0, None)
    return peak * c ** rolloff


def rain_factor(r, params: RadioParams):
    """Cloud/rain factor A(r); distance and height both taken in km."""
    r_km = np.asarray(r, dtype=float) / 1e3
    h_km = params.hab_height / 1e3
    return 10.0 ** (params.attenuation_sign * 3.0 * params.rain_attenuation * r_km / (10.0 * h_km))


def _link_gain(params: RadioParams, r, psi, phi):
    free_space = params.speed_of_light / (4.0 * np.pi * r * params.carrier_freq)
    return (free_space * antenna_gain(psi, params.rolloff, params.log_base)
            * params.user_antenna_gain * rain_factor(r, params) * phi)


def _check_direction(direction):
    if direction not in (UPLINK, DOWNLINK):
        raise ValueError(f"direction must be {UPLINK!r} or {DOWNLINK!r}")


def channel_gain(params: RadioParams, geom: Geometry, m: int, n: int,
                 direction: str = UPLINK, phi: float | None = None) -> float:
    """Linear channel gain between user ``m`` and HAB ``n``.

    ``phi`` overrides the small-scale Ricean gain; by default the uplink uses
    the HAB-side constant and the downlink the user-side constant.
    """
    _check_direction(direction)
    psi = float(geom.boresight_angle[m, n])
    if psi > np.pi / 2:
        raise DomainError(f"user {m} is outside the boresight hemisphere of HAB {n} (psi={psi:.4f})")
    if phi is None:
        phi = params.ricean_gain_hab if direction == UPLINK else params.ricean_gain_user
    return float(_link_gain(params, geom.slant_distance[m, n], psi, phi))


def gain_matrix(params: RadioParams, geom: Geometry, direction: str = UPLINK, phi=None) -> np.ndarray:
    """Vectorised :func:`channel_gain` over every (user, HAB) pair, shape (M, N)."""
    _check_direction(direction)
    if np.any(geom.boresight_angle > np.pi / 2):
        m, n = np.argwhere(geom.boresight_angle > np.pi / 2)[0]
        raise DomainError(f"user {m} is outside the boresight hemisphere of HAB {n}")
    if phi is None:
        phi = params.ricean_gain_hab if direction == UPLINK else params.ricean_gain_user
    return _link_gain(params, geom.slant_distance, geom.boresight_angle, phi)


def data_rate(params: RadioParams, gain, a=1, direction: str = UPLINK):
    """Shannon rate in bit/s; ``a`` is the 0/1 association indicator."""
    _check_direction(direction)
    power = params.tx_power_user if direction == UPLINK else params.tx_power_hab
    return np.asarray(a) * params.bandwidth * np.log2(1.0 + power * np.asarray(gain, dtype=float) / params.noise_power)


def tx_delay(z, beta, rate):
    """Time to push ``beta * z`` bits over a link of the given rate.

    Zero bits over a zero-rate link take zero time.
    """
    bits = np.asarray(beta, dtype=float) * np.asarray(z, dtype=float)
    rate = np.asarray(rate, dtype=float)
    if np.any((bits > 0) & (rate <= 0)):
        raise InfeasibleLinkError("offloaded bits on a zero-rate link")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(bits > 0, bits / np.where(rate > 0, rate, 1.0), 0.0)
    return out if out.ndim else float(out)


def compute_time(z, beta, params: ComputeParams, where: str, m=0):
    """Processing time of the edge share (``where='edge'``) or the local share."""
    z = np.asarray(z, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if where == EDGE:
        out = params.hab_cycles_per_bit * beta * z / params.hab_cpu_freq
    elif where == LOCAL:
        out = params.user("user_cycles_per_bit", m) * (1.0 - beta) * z / params.user("user_cpu_freq", m)
    else:
        raise ValueError(f"where must be {EDGE!r} or {LOCAL!r}")
    return out if np.ndim(out) else float(out)


def total_task_time(beta, a, uplink_rate, downlink_rate, z, params: ComputeParams, m=0):
    """Completion time of one task: the slower of the edge path and the local path."""
    if not np.all(np.asarray(a) == 1):
        raise ValueError("total_task_time needs an associated user (a = 1)")
    edge = (tx_delay(z, beta, uplink_rate) + compute_time(z, beta, params, EDGE)
            + tx_delay(z, beta, downlink_rate))
    local = compute_time(z, beta, params, LOCAL, m)
    out = np.maximum(edge, local)
    return out if np.ndim(out) else float(out)


def user_energy(beta, a, z, uplink_rate, params: ComputeParams, m=0, radio: RadioParams = _TABLE_RADIO):
    """Device operation + local computing + uplink transmission energy (J)."""
    z = np.asarray(z, dtype=float)
    beta = np.asarray(beta, dtype=float)
    f = params.user("user_cpu_freq", m)
    out = (params.user("user_op_energy", m)
           + params.user("user_chip_coeff", m) * f ** 2 * (1.0 - beta) * z
           + radio.tx_power_user * tx_delay(z, beta, uplink_rate))
    return out if np.ndim(out) else float(out)


def hab_energy(beta, a, z, downlink_rate, params: ComputeParams, n=0, radio: RadioParams = _TABLE_RADIO):
    """Hover + edge computing + downlink transmission energy (J).

    The computing term carries no cycles-per-bit factor, matching the model
    as published.
    """
    z = np.asarray(z, dtype=float)
    beta = np.asarray(beta, dtype=float)
    out = (params.hab_hover_energy + params.hab_chip_coeff * params.hab_cpu_freq ** 2 * beta * z
           + radio.tx_power_hab * tx_delay(z, beta, downlink_rate))
    return out if np.ndim(out) else float(out)
