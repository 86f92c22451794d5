import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from habmec import netmodel as nm
from habmec.netmodel import ComputeParams, Geometry, RadioParams

# frozen from a 30-digit mpmath evaluation of the same closed forms
GH0_LN = 130.463084330039385862361614792
GH0_LOG10 = 56.6593976166147071547645082509
RAIN_NADIR = 2.7227013080779120193987929395
NADIR_GAIN = 1.78152565004013067706812856325e-07
NADIR_UP = 181037228.987989837435419501737
NADIR_DOWN = 234256460.000572645502277781449
GAIN_AT_60_DEG = 6.57373761781039257381859006565e-27


def nadir_geometry(offset=0.0):
    return Geometry([[0.0, 0.0, 17e3]], [[offset, 0.0, 0.0]])


def test_boresight_gain_natural_log():
    assert nm.antenna_gain(0.0, 65) == pytest.approx(GH0_LN, rel=1e-13)
    assert nm.antenna_gain(0.0, 65) == pytest.approx(130.5, abs=0.05)


def test_boresight_gain_log10_switch():
    assert nm.antenna_gain(0.0, 65, log_base="10") == pytest.approx(GH0_LOG10, rel=1e-13)


def test_gain_zero_at_horizon():
    assert nm.antenna_gain(math.pi / 2, 65) == pytest.approx(0.0, abs=1e-300)


def test_half_power_angle_halves_pattern():
    th = nm.half_power_angle(65)
    assert math.cos(th) ** 65 == pytest.approx(0.5, rel=1e-12)


def test_rain_factor_at_height():
    radio = RadioParams()
    assert nm.rain_factor(17e3, radio) == pytest.approx(RAIN_NADIR, rel=1e-13)
    assert nm.rain_factor(17e3, radio) == pytest.approx(2.72, abs=0.005)


def test_rain_factor_negative_sign_is_reciprocal():
    flipped = RadioParams(attenuation_sign=-1)
    assert nm.rain_factor(17e3, flipped) == pytest.approx(1 / RAIN_NADIR, rel=1e-13)
    assert nm.rain_factor(30e3, flipped) < 1.0


def test_channel_gain_and_rates_at_nadir():
    radio = RadioParams()
    geom = nadir_geometry()
    g = nm.channel_gain(radio, geom, 0, 0)
    assert g == pytest.approx(NADIR_GAIN, rel=1e-12)
    assert nm.data_rate(radio, g, 1, nm.UPLINK) == pytest.approx(NADIR_UP, rel=1e-12)
    g_down = nm.channel_gain(radio, geom, 0, 0, nm.DOWNLINK)
    assert nm.data_rate(radio, g_down, 1, nm.DOWNLINK) == pytest.approx(NADIR_DOWN, rel=1e-12)


def test_channel_gain_off_axis():
    radio = RadioParams()
    geom = nadir_geometry(offset=17e3 * math.tan(math.pi / 3))
    assert nm.channel_gain(radio, geom, 0, 0) == pytest.approx(GAIN_AT_60_DEG, rel=1e-9)


def test_gain_matrix_matches_scalar_calls():
    rng = np.random.default_rng(0)
    habs = np.column_stack([rng.uniform(-2e3, 2e3, (3, 2)), np.full(3, 17e3)])
    users = np.column_stack([rng.uniform(-2e3, 2e3, (5, 2)), np.zeros(5)])
    geom = Geometry(habs, users)
    radio = RadioParams()
    mat = nm.gain_matrix(radio, geom, nm.DOWNLINK)
    for m in range(5):
        for n in range(3):
            assert mat[m, n] == pytest.approx(nm.channel_gain(radio, geom, m, n, nm.DOWNLINK), rel=1e-14)


def test_user_above_hab_is_rejected():
    geom = Geometry([[0.0, 0.0, 0.0]], [[10.0, 0.0, 5.0]])
    with pytest.raises(nm.DomainError):
        nm.channel_gain(RadioParams(), geom, 0, 0)
    with pytest.raises(nm.DomainError):
        nm.gain_matrix(RadioParams(), geom)


def test_horizon_angle_returns_zero_gain():
    geom = Geometry([[0.0, 0.0, 0.0]], [[10.0, 0.0, 0.0]])
    assert nm.channel_gain(RadioParams(), geom, 0, 0) == pytest.approx(0.0, abs=1e-300)


def test_rate_examples():
    radio = RadioParams()
    gain = 1023 * radio.noise_power / radio.tx_power_user
    assert nm.data_rate(radio, gain, 1) == pytest.approx(1e8, rel=1e-12)
    assert nm.data_rate(radio, gain, 0) == 0.0
    assert nm.data_rate(radio, 0.0, 1) == 0.0


@given(st.floats(1e-15, 1e-3), st.floats(1.01, 10.0))
def test_rate_increases_with_gain(g, factor):
    radio = RadioParams()
    assert nm.data_rate(radio, g * factor, 1) > nm.data_rate(radio, g, 1)


def test_tx_delay_examples():
    assert nm.tx_delay(1e6, 0.0, 1e8) == 0.0
    assert nm.tx_delay(1e6, 0.5, 1e8) == pytest.approx(5e-3, rel=1e-15)
    assert nm.tx_delay(8e5, 1.0, 1e8) == pytest.approx(8e-3, rel=1e-15)
    assert nm.tx_delay(8e5, 0.0, 0.0) == 0.0
    with pytest.raises(nm.InfeasibleLinkError):
        nm.tx_delay(8e5, 0.1, 0.0)


def test_compute_time_examples():
    cp = ComputeParams()
    assert nm.compute_time(8e5, 1.0, cp, nm.EDGE) == pytest.approx(0.12, rel=1e-14)
    assert nm.compute_time(8e5, 0.0, cp, nm.LOCAL) == pytest.approx(2.4, rel=1e-14)
    assert nm.compute_time(8e5, 1.0, cp, nm.LOCAL) == 0.0
    with pytest.raises(ValueError):
        nm.compute_time(8e5, 1.0, cp, "cloud")


def test_total_task_time_is_max_of_branches():
    cp = ComputeParams()
    assert nm.total_task_time(0.0, 1, 1e8, 1e8, 8e5, cp) == pytest.approx(2.4)
    assert nm.total_task_time(1.0, 1, 1e8, 1e8, 8e5, cp) == pytest.approx(0.136)
    with pytest.raises(ValueError):
        nm.total_task_time(0.5, 0, 1e8, 1e8, 8e5, cp)


def test_total_task_time_minimum_at_crossing():
    cp = ComputeParams()
    grid = np.linspace(0, 1, 10001)
    vals = nm.total_task_time(grid, 1, 1e8, 1e8, 8e5, cp)
    crossing = 2.4 / (2.4 + 0.136)
    at_cross = nm.total_task_time(crossing, 1, 1e8, 1e8, 8e5, cp)
    assert at_cross <= vals.min() + 1e-12
    assert abs(grid[np.argmin(vals)] - crossing) <= 1e-4


@given(st.floats(0, 1), st.floats(0, 1), st.floats(1e4, 1e7), st.floats(1e6, 1e9), st.floats(1e6, 1e9))
def test_task_time_convex_in_split(b1, b2, z, up, down):
    cp = ComputeParams()
    f = lambda b: nm.total_task_time(b, 1, up, down, z, cp)
    mid = f(0.5 * (b1 + b2))
    assert mid <= 0.5 * (f(b1) + f(b2)) + 1e-12 * max(1.0, f(b1), f(b2))


def test_user_energy_examples():
    cp = ComputeParams()
    assert nm.user_energy(1.0, 1, 8e5, 1e8, cp) == pytest.approx(4e-3, rel=1e-14)
    assert nm.user_energy(0.0, 1, 8e5, 1e8, cp) == pytest.approx(6.88, rel=1e-12)
    cp_op = ComputeParams(user_op_energy=0.7)
    assert nm.user_energy(0.3, 1, 0.0, 1e8, cp_op) == pytest.approx(0.7)


def test_user_energy_table_constants_arithmetic():
    # 3.44e-23 * (5e8)^2 * 8e5 written out
    assert 3.44e-23 * 2.5e17 * 8e5 == pytest.approx(nm.user_energy(0.0, 1, 8e5, 1e8, ComputeParams()))


def test_hab_energy_examples():
    cp = ComputeParams()
    assert nm.hab_energy(0.0, 1, 1e4, 1e8, cp) == 0.0
    assert nm.hab_energy(1.0, 1, 1e4, 1e8, cp) == pytest.approx(34.402, rel=1e-12)
    hover = ComputeParams(hab_hover_energy=3.0)
    assert nm.hab_energy(0.0, 1, 1e4, 1e8, hover) == 3.0
    slow = nm.hab_energy(1.0, 1, 1e4, 1e8, cp) - 34.4
    fast = nm.hab_energy(1.0, 1, 1e4, 2e8, cp) - 34.4
    assert fast == pytest.approx(slow / 2, rel=1e-9)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(1e3, 1e7), st.floats(1e6, 1e9))
def test_energy_affine_in_split(b1, b2, z, rate):
    cp = ComputeParams()
    total = lambda b: nm.user_energy(b, 1, z, rate, cp) + nm.hab_energy(b, 1, z, rate, cp)
    mid = total(0.5 * (b1 + b2))
    assert mid == pytest.approx(0.5 * (total(b1) + total(b2)), rel=1e-12, abs=1e-15)


def test_per_user_arrays():
    cp = ComputeParams(user_cpu_freq=np.array([5e8, 1e9]))
    assert nm.compute_time(8e5, 0.0, cp, nm.LOCAL, m=1) == pytest.approx(1.2)


@pytest.mark.parametrize("kwargs", [
    {"bandwidth": 0.0}, {"rolloff": 0.5}, {"log_base": "2"}, {"attenuation_sign": 0},
    {"user_antenna_gain": -1.0},
])
def test_radio_validation(kwargs):
    with pytest.raises(ValueError):
        RadioParams(**kwargs)


@pytest.mark.parametrize("kwargs", [
    {"hab_cpu_freq": 0.0}, {"weight_energy": -1.0}, {"weight_energy": 0.0, "weight_time": 0.0},
    {"energy_budget": 0.0},
])
def test_compute_validation(kwargs):
    with pytest.raises(ValueError):
        ComputeParams(**kwargs)


def test_unit_conversions():
    assert nm.dbm_to_watt(30.0) == pytest.approx(1.0)
    assert nm.db_to_linear(-20.0) == pytest.approx(0.01)
