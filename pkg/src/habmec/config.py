"""Run configuration: documented defaults, INI loading and config hashing.

Precedence is command-line flag > config file > built-in default. Every
key, its unit and its origin is listed in ``DEFAULTS``; unknown sections or
keys in a file are an error.
"""
from __future__ import annotations

import configparser
import copy
import hashlib
import json
import math
from pathlib import Path

from .fedsvm import Hyper
from .netmodel import ComputeParams, RadioParams, db_to_linear, dbm_to_watt


class ConfigError(ValueError):
    pass


# section -> key -> (default, unit / provenance)
DEFAULTS: dict[str, dict[str, tuple[object, str]]] = {
    "radio": {
        "speed_of_light": (3.0e8, "m/s"),
        "carrier_freq": (28e9, "Hz"),
        "bandwidth": (10e6, "Hz"),
        "tx_power_hab": (20.0, "W"),
        "tx_power_user": (0.5, "W"),
        "noise_power_dbm": (-95.0, "dBm; converted to W on load"),
        "rolloff": (65.0, "antenna roll-off factor"),
        "user_antenna_gain": (1.0, "linear, 0 dBi"),
        "hab_height": (17e3, "m"),
        "rain_attenuation": (1.45, "dB/km"),
        "ricean_gain_db": (-20.0, "dB; small-scale gain on both link ends"),
        "log_base": ("e", "base of the log in the antenna normalisation: e or 10"),
        "attenuation_sign": (1, "+1 rain factor >= 1, -1 true attenuation"),
        "deterministic_fading": (True, "true: fixed nominal gain; false: Ricean draws per link and instant"),
        "ricean_k_factor": (10.0, "linear K-factor used when deterministic_fading = false"),
    },
    "compute": {
        "hab_cpu_freq": (10e9, "Hz"),
        "hab_cycles_per_bit": (1500.0, "cycles/bit"),
        "user_cpu_freq": (0.5e9, "Hz"),
        "user_cycles_per_bit": (1500.0, "cycles/bit"),
        "hab_chip_coeff": (3.44e-23, "J s^2"),
        "user_chip_coeff": (3.44e-23, "J s^2"),
        "user_op_energy": (0.0, "J per user per instant"),
        "hab_hover_energy": (0.0, "J per served user per instant"),
        "energy_budget": (11500.0, "J per HAB per instant, set so it binds in ~20% of oracle instances"),
        "weight_energy": (0.5, "gamma_E"),
        "weight_time": (0.5, "gamma_T"),
    },
    "scenario": {
        "users": (8, "M, desk scale"),
        "habs": (3, "N, desk scale"),
        "area_radius": (2500.0, "m"),
        "coverage_radius": (1700.0, "m, horizontal HAB coverage"),
        "mobility": (False, "random-waypoint user motion"),
        "speed": (20.0, "m per instant, random-waypoint speed"),
    },
    "traffic": {
        "instants": (60, "T, time instants per repetition"),
        "log_mean": (math.log(100.0), "mu: median task size exp(mu) KB"),
        "log_std": (0.5, "s: log-scale spread of task sizes"),
        "ar_coeff": (0.8, "AR(1) coefficient of the log-size process"),
        "trace_path": ("", "optional CSV trace (user_id,t,bits) replacing synthetic traffic"),
    },
    "fedsvm": {
        "lam1": (0.1, "Frobenius weight"),
        "lam2": (0.1, "structure weight"),
        "eta": (1.0, "dual step scale"),
        "theta": (0.1, "local accuracy target"),
        "sigma": (1.0, "sigma' in the local quadratic model"),
        "eps_omega": (1e-3, "smoothing of W^T W in the Omega update"),
        "eig_floor": (1e-8, "eigenvalue floor for Omega^-1"),
        "max_passes": (50, "coordinate-descent sweep cap per local solve"),
        "iterations": (500, "H, federated rounds"),
        "tol": (1e-6, "stop when gap and Omega change are both below this"),
    },
    "experiment": {
        "seed": (0, "base seed; repetition r uses seed sequence (seed, r)"),
        "reps": (100, "repetitions"),
        "train_fraction": (0.5, "chronological training share of each user's history"),
    },
}


def _coerce(value: str, default, where: str):
    try:
        if isinstance(default, bool):
            low = value.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
        return value.strip()
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {value!r} as {type(default).__name__}") from None


class Config:
    """Resolved configuration values, ``cfg[section][key]``."""

    def __init__(self, values: dict | None = None):
        self.values = {s: {k: v[0] for k, v in keys.items()} for s, keys in DEFAULTS.items()}
        if values:
            self.update(values)

    def __getitem__(self, section):
        return self.values[section]

    def update(self, values: dict):
        for section, keys in values.items():
            if section not in DEFAULTS:
                raise ConfigError(f"unknown config section [{section}]")
            for key, value in keys.items():
                if key not in DEFAULTS[section]:
                    raise ConfigError(f"unknown config key {section}.{key}")
                default = DEFAULTS[section][key][0]
                if isinstance(value, str) and not isinstance(default, str):
                    value = _coerce(value, default, f"{section}.{key}")
                self.values[section][key] = value
        return self

    def copy(self):
        out = Config()
        out.values = copy.deepcopy(self.values)
        return out

    def digest(self) -> str:
        """Short sha256 of the canonical JSON form; stamped on every output."""
        text = json.dumps(self.values, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]

    def radio(self) -> RadioParams:
        r = self.values["radio"]
        return RadioParams(
            speed_of_light=r["speed_of_light"], carrier_freq=r["carrier_freq"],
            bandwidth=r["bandwidth"], tx_power_hab=r["tx_power_hab"], tx_power_user=r["tx_power_user"],
            noise_power=float(dbm_to_watt(r["noise_power_dbm"])), rolloff=r["rolloff"],
            user_antenna_gain=r["user_antenna_gain"], hab_height=r["hab_height"],
            rain_attenuation=r["rain_attenuation"],
            ricean_gain_hab=float(db_to_linear(r["ricean_gain_db"])),
            ricean_gain_user=float(db_to_linear(r["ricean_gain_db"])),
            log_base=r["log_base"], attenuation_sign=int(r["attenuation_sign"]))

    def compute(self) -> ComputeParams:
        return ComputeParams(**self.values["compute"])

    def hyper(self) -> Hyper:
        f = self.values["fedsvm"]
        return Hyper(lam1=f["lam1"], lam2=f["lam2"], eta=f["eta"], theta=f["theta"], sigma=f["sigma"],
                     eps_omega=f["eps_omega"], eig_floor=f["eig_floor"], max_passes=int(f["max_passes"]))


def load_config(path=None, overrides: dict | None = None) -> Config:
    """Defaults, then the INI file at ``path`` (if any), then ``overrides``."""
    cfg = Config()
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        cfg.update({s: dict(parser.items(s)) for s in parser.sections()})
    if overrides:
        cfg.update(overrides)
    return cfg


def write_default_config(path) -> Path:
    """Write a commented INI file holding every default."""
    lines = []
    for section, keys in DEFAULTS.items():
        lines.append(f"[{section}]")
        for key, (value, doc) in keys.items():
            lines.append(f"# {doc}")
            text = str(value).lower() if isinstance(value, bool) else repr(value) if isinstance(value, float) else str(value)
            lines.append(f"{key} = {text}")
        lines.append("")
    path = Path(path)
    path.write_text("\n".join(lines), encoding="utf-8")
    return path
