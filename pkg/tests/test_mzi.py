import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mzimesh.linalg import unitarity_defect
from mzimesh.mzi import (
    MziImperfection,
    MziPhases,
    ThermalParams,
    VoltagePhaseModel,
    bar_state,
    cross_state,
    mzi_transfer,
    phase_from_voltage,
    temperature_for_phase,
    thermal_phase_error,
    voltage_from_phase,
)


def closed_form(theta, phi):
    return np.exp(1j * theta / 2) * np.array(
        [[np.exp(1j * phi) * np.sin(theta / 2), np.exp(1j * phi) * np.cos(theta / 2)],
         [np.cos(theta / 2), -np.sin(theta / 2)]]
    )


@given(st.floats(-20, 20), st.floats(-20, 20))
def test_ideal_transfer_matches_closed_form(theta, phi):
    assert np.max(np.abs(mzi_transfer(MziPhases(theta, phi)) - closed_form(theta, phi))) < 1e-12


def test_cross_bar_and_half():
    c = mzi_transfer(cross_state())
    assert abs(c[0, 0]) < 1e-15 and np.isclose(abs(c[0, 1]), 1)
    b = mzi_transfer(bar_state())
    assert np.isclose(abs(b[0, 0]), 1) and np.isclose(abs(b[1, 1]), 1)
    assert abs(b[0, 1]) < 1e-15 and abs(b[1, 0]) < 1e-15
    h = mzi_transfer(MziPhases(np.pi / 2))
    assert np.isclose(abs(h[0, 0]) ** 2, 0.5)


def test_state_routing():
    x = np.array([1, 0])
    assert np.isclose(abs(mzi_transfer(cross_state()) @ x)[1], 1)
    assert np.isclose(abs(mzi_transfer(bar_state()) @ x)[0], 1)
    cc = mzi_transfer(cross_state()) @ mzi_transfer(cross_state()) @ x
    assert np.isclose(abs(cc[0]), 1)


def test_invalid_inputs_rejected():
    with pytest.raises(ValueError):
        MziPhases(float("nan"))
    with pytest.raises(ValueError):
        MziImperfection(loss_db=-1)
    with pytest.raises(ValueError):
        MziImperfection(splitting_delta=0.5)
    with pytest.raises(ValueError):
        VoltagePhaseModel(v_pi=0)
    with pytest.raises(ValueError):
        phase_from_voltage(-1.0)
    with pytest.raises(ValueError):
        voltage_from_phase(-0.1)
    with pytest.raises(ValueError):
        ThermalParams(length=0)


def test_display_wraps_without_touching_raw():
    p = MziPhases(7.0, -1.0)
    assert p.theta == 7.0
    assert np.allclose(p.display(), (7.0 - 2 * np.pi, 2 * np.pi - 1.0))


def test_voltage_law_examples():
    m = VoltagePhaseModel()
    assert phase_from_voltage(m.v_pi, m) == pytest.approx(np.pi)
    assert phase_from_voltage(0.0, m) == 0.0
    assert phase_from_voltage(m.v_pi / math.sqrt(2), m) == pytest.approx(np.pi / 2, abs=1e-15)


def test_thermal_examples():
    assert thermal_phase_error(2.7) == pytest.approx(0.197, abs=0.001)
    assert thermal_phase_error(0.0) == 0.0
    assert temperature_for_phase(np.pi) == pytest.approx(43.06, abs=0.01)


@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(0, 3), st.floats(-0.45, 0.45))
def test_unitary_scaled_by_loss(theta, phi, loss, delta):
    m = mzi_transfer(MziPhases(theta, phi), MziImperfection(loss, delta))
    a = 10 ** (-loss / 20)
    assert np.allclose(np.linalg.svd(m, compute_uv=False), [a, a], atol=1e-12)
    assert unitarity_defect(m / a) < 1e-12


@given(st.floats(-20, 20))
def test_top_to_top_power(theta):
    assert abs(mzi_transfer(MziPhases(theta))[0, 0]) ** 2 == pytest.approx(np.sin(theta / 2) ** 2, abs=1e-12)


@given(st.floats(0, 10), st.floats(0, 10), st.floats(1e-6, 1e-3))
def test_thermal_linear(dt1, dt2, length):
    p = ThermalParams(length=length)
    assert thermal_phase_error(dt1 + dt2, p) == pytest.approx(
        thermal_phase_error(dt1, p) + thermal_phase_error(dt2, p), rel=1e-12, abs=1e-15)
    p2 = ThermalParams(length=2 * length)
    assert thermal_phase_error(dt1, p2) == pytest.approx(2 * thermal_phase_error(dt1, p), rel=1e-12, abs=1e-15)


@given(st.floats(0, 4 * np.pi))
def test_voltage_round_trip(phase):
    assert phase_from_voltage(voltage_from_phase(phase)) == pytest.approx(phase, abs=1e-12)
