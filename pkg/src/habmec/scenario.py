"""Network instances, task traffic and chronological dataset splits."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import netmodel
from .netmodel import ComputeParams, Geometry, RadioParams

MAX_PLACEMENT_TRIES = 100_000


class TraceFormatError(ValueError):
    """A trace file row is malformed; the message carries the line number."""


@dataclass
class TaskTrace:
    """Task sizes in bits, ``z[m, t]``."""

    z: np.ndarray

    def __post_init__(self):
        self.z = np.atleast_2d(np.asarray(self.z, dtype=float))
        if not np.all(np.isfinite(self.z)) or np.any(self.z <= 0):
            raise ValueError("task sizes must be positive and finite")

    @property
    def num_users(self) -> int:
        return self.z.shape[0]

    @property
    def instants(self) -> int:
        return self.z.shape[1]

    def export(self, path) -> Path:
        path = Path(path)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["user_id", "t", "bits"])
            for m in range(self.num_users):
                for t in range(self.instants):
                    out.writerow([m, t, int(self.z[m, t])])
        return path


def synth_traffic(seed: int, M: int, T: int, model: str = "lognormal-ar1",
                  log_mean: float = math.log(100.0), log_std: float = 0.5,
                  ar_coeff: float = 0.8) -> TaskTrace:
    """Lognormal task sizes driven by a stationary unit-variance AR(1) per user.

    ``z = exp(log_mean + log_std * y_t) * 8000`` bits, rounded to whole bits.
    """
    if model != "lognormal-ar1":
        raise ValueError(f"unknown traffic model {model!r}")
    if T < 1 or M < 1:
        raise ValueError("need M >= 1 and T >= 1")
    if not -1 < ar_coeff < 1:
        raise ValueError("ar_coeff must lie in (-1, 1)")
    rng = np.random.default_rng(seed)
    shocks = rng.standard_normal((M, T))
    y = np.empty((M, T))
    y[:, 0] = shocks[:, 0]
    innov = math.sqrt(1.0 - ar_coeff ** 2)
    for t in range(1, T):
        y[:, t] = ar_coeff * y[:, t - 1] + innov * shocks[:, t]
    z = np.maximum(np.rint(np.exp(log_mean + log_std * y) * 8000.0), 1.0)
    return TaskTrace(z)


def ingest_trace(path) -> TaskTrace:
    """Read a ``user_id,t,bits`` CSV; users and instants must both be dense from 0."""
    rows = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["user_id", "t", "bits"]:
            raise TraceFormatError(f"{path}:1: header must be 'user_id,t,bits'")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise TraceFormatError(f"{path}:{line}: expected 3 fields, got {len(row)}")
            try:
                m, t, bits = (int(c.strip()) for c in row)
            except ValueError:
                raise TraceFormatError(f"{path}:{line}: fields must be integers: {row}") from None
            if m < 0 or t < 0:
                raise TraceFormatError(f"{path}:{line}: negative user or instant index")
            if bits <= 0:
                raise TraceFormatError(f"{path}:{line}: task size must be positive, got {bits}")
            if (m, t) in rows:
                raise TraceFormatError(f"{path}:{line}: duplicate entry for user {m}, t {t}")
            rows[(m, t)] = (bits, line)
    if not rows:
        raise TraceFormatError(f"{path}: no data rows")
    M = max(m for m, _ in rows) + 1
    T = max(t for _, t in rows) + 1
    z = np.zeros((M, T))
    for m in range(M):
        for t in range(T):
            if (m, t) not in rows:
                raise TraceFormatError(f"{path}: user {m} is missing instant {t}")
            z[m, t] = rows[(m, t)][0]
    return TaskTrace(z)


def _uniform_disk(rng, count: int, radius: float) -> np.ndarray:
    r = radius * np.sqrt(rng.uniform(0.0, 1.0, count))
    a = rng.uniform(0.0, 2.0 * np.pi, count)
    return np.column_stack([r * np.cos(a), r * np.sin(a)])


def _covered(points, habs_xy, coverage_radius: float) -> np.ndarray:
    d = np.linalg.norm(points[:, None, :] - habs_xy[None, :, :], axis=2)
    return (d <= coverage_radius).any(axis=1)


@dataclass
class Scenario:
    """One network instance. ``user_track`` holds (T, M, 2) ground positions."""

    hab_positions: np.ndarray
    user_track: np.ndarray
    radio: RadioParams = field(default_factory=RadioParams)
    compute: ComputeParams = field(default_factory=ComputeParams)
    area_radius: float = 2500.0
    coverage_radius: float = 1700.0
    seed: int | None = None
    mobility: bool = False
    trace: TaskTrace | None = None
    fading_up: np.ndarray | None = None
    fading_down: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.hab_positions = np.atleast_2d(np.asarray(self.hab_positions, dtype=float))
        track = np.asarray(self.user_track, dtype=float)
        self.user_track = track[None] if track.ndim == 2 else track

    @property
    def num_users(self) -> int:
        return self.user_track.shape[1]

    @property
    def num_habs(self) -> int:
        return self.hab_positions.shape[0]

    def with_trace(self, trace: TaskTrace) -> "Scenario":
        if trace.num_users != self.num_users:
            raise ValueError(f"trace has {trace.num_users} users, scenario has {self.num_users}")
        return replace(self, trace=trace)

    def _step(self, t: int) -> int:
        return min(t, self.user_track.shape[0] - 1)

    def user_xy(self, t: int = 0) -> np.ndarray:
        return self.user_track[self._step(t)]

    def geometry(self, t: int = 0) -> Geometry:
        key = ("geom", self._step(t))
        if key not in self._cache:
            users = np.column_stack([self.user_xy(t), np.zeros(self.num_users)])
            self._cache[key] = Geometry(self.hab_positions, users)
        return self._cache[key]

    def coverage(self, t: int = 0) -> np.ndarray:
        """(M, N) boolean: user inside the HAB's horizontal coverage radius."""
        return self.geometry(t).horizontal_distance <= self.coverage_radius

    def link_rates(self, t: int = 0):
        """Uplink and downlink rates (M, N) in bit/s for every user-HAB pair."""
        key = ("rates", t if self.fading_up is not None else self._step(t))
        if key not in self._cache:
            geom = self.geometry(t)
            phi_up = None if self.fading_up is None else self.fading_up[t]
            phi_down = None if self.fading_down is None else self.fading_down[t]
            up = netmodel.data_rate(self.radio, netmodel.gain_matrix(self.radio, geom, netmodel.UPLINK, phi_up),
                                    1, netmodel.UPLINK)
            down = netmodel.data_rate(self.radio,
                                      netmodel.gain_matrix(self.radio, geom, netmodel.DOWNLINK, phi_down),
                                      1, netmodel.DOWNLINK)
            self._cache[key] = (up, down)
        return self._cache[key]

    def task_sizes(self, t: int = 0) -> np.ndarray:
        if self.trace is None:
            raise ValueError("scenario has no task trace attached")
        return self.trace.z[:, t]

    def features(self, t: int) -> np.ndarray:
        """Raw (x, y, z) feature rows of every user at instant ``t``."""
        return np.column_stack([self.user_xy(t), self.task_sizes(t)])


def _random_waypoint(rng, start, habs_xy, radius, coverage_radius, speed, T):
    M = start.shape[0]
    track = np.empty((T, M, 2))
    track[0] = start
    target = np.array([_covered_point(rng, habs_xy, radius, coverage_radius) for _ in range(M)])
    for t in range(1, T):
        pos = track[t - 1].copy()
        for m in range(M):
            gap = target[m] - pos[m]
            dist = float(np.hypot(*gap))
            nxt = target[m].copy() if dist <= speed else pos[m] + gap * (speed / dist)
            if dist <= speed or not _covered(nxt[None], habs_xy, coverage_radius)[0]:
                # arrived, or the straight path leaves coverage: pick a new waypoint
                target[m] = _covered_point(rng, habs_xy, radius, coverage_radius)
                if not _covered(nxt[None], habs_xy, coverage_radius)[0]:
                    nxt = pos[m]
            pos[m] = nxt
        track[t] = pos
    return track


def _covered_point(rng, habs_xy, radius, coverage_radius):
    for _ in range(MAX_PLACEMENT_TRIES):
        p = _uniform_disk(rng, 1, radius)
        if _covered(p, habs_xy, coverage_radius)[0]:
            return p[0]
    raise RuntimeError("could not place a covered point")


def generate_scenario(seed: int, M: int, N: int, radius: float = 2500.0, *,
                      radio: RadioParams | None = None, compute: ComputeParams | None = None,
                      coverage_radius: float = 1700.0, mobility: bool = False, instants: int = 1,
                      speed: float = 20.0, deterministic_fading: bool = True,
                      ricean_k: float = 10.0) -> Scenario:
    """Uniform HABs and users in a disk; every user lies inside some HAB's coverage.

    Users are rejection-sampled so each one can be served. Mobility and
    Ricean fading draws come from child streams of ``seed`` so turning them
    on does not move the static placement.
    """
    if M < 1 or N < 1:
        raise ValueError("need M >= 1 users and N >= 1 HABs")
    if radius <= 0 or coverage_radius <= 0:
        raise ValueError("radii must be > 0")
    radio = radio or RadioParams()
    compute = compute or ComputeParams()
    place, move, fade = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))
    habs_xy = _uniform_disk(place, N, radius)
    users = np.array([_covered_point(place, habs_xy, radius, coverage_radius) for _ in range(M)])
    habs = np.column_stack([habs_xy, np.full(N, radio.hab_height)])
    track = users[None]
    if mobility and instants > 1:
        track = _random_waypoint(move, users, habs_xy, radius, coverage_radius, speed, instants)
    fading_up = fading_down = None
    if not deterministic_fading:
        fading_up = radio.ricean_gain_hab * _ricean_power(fade, ricean_k, (instants, M, N))
        fading_down = radio.ricean_gain_user * _ricean_power(fade, ricean_k, (instants, M, N))
    return Scenario(habs, track, radio, compute, radius, coverage_radius, seed, mobility,
                    fading_up=fading_up, fading_down=fading_down)


def _ricean_power(rng, k: float, shape) -> np.ndarray:
    """Unit-mean |h|^2 of a Ricean channel with K-factor ``k``."""
    los = math.sqrt(k / (k + 1.0))
    scatter = math.sqrt(1.0 / (2.0 * (k + 1.0)))
    h = los + scatter * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    return np.abs(h) ** 2


def split_train_test(samples, fraction: float):
    """Chronological split of time-ordered samples; both sides keep at least one.

    ``samples`` is a sequence (or array) in time order; returns two lists
    (or arrays) covering it without overlap.
    """
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    n = len(samples)
    if n < 2:
        raise ValueError(f"need at least 2 samples to split, got {n}")
    cut = min(max(int(round(fraction * n)), 1), n - 1)
    return samples[:cut], samples[cut:]
