"""Single-MZI device model.

The 2x2 transfer follows the usual coupler / internal phase / coupler /
external phase composition. With ideal 50:50 couplers and no loss it reduces
to

    e^{j theta/2} [[e^{j phi} sin(theta/2), e^{j phi} cos(theta/2)],
                   [cos(theta/2),           -sin(theta/2)]]

so theta = 0 is the cross state and theta = pi the bar state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MziPhases:
    theta: float
    phi: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.theta) and math.isfinite(self.phi)):
            raise ValueError("MZI phases must be finite")

    def display(self) -> tuple[float, float]:
        """Phases wrapped to [0, 2pi) for printing only."""
        return (self.theta % (2 * math.pi), self.phi % (2 * math.pi))


@dataclass(frozen=True)
class MziImperfection:
    loss_db: float = 0.0
    splitting_delta: float = 0.0

    def __post_init__(self):
        if not self.loss_db >= 0:
            raise ValueError(f"loss_db must be >= 0, got {self.loss_db}")
        if not abs(self.splitting_delta) < 0.5:
            raise ValueError(f"|splitting_delta| must be < 0.5, got {self.splitting_delta}")


IDEAL = MziImperfection()


def bar_state() -> MziPhases:
    return MziPhases(theta=math.pi, phi=0.0)


def cross_state() -> MziPhases:
    return MziPhases(theta=0.0, phi=0.0)


def loss_amplitude(loss_db):
    return 10.0 ** (-np.asarray(loss_db, dtype=float) / 20.0)


def transfer_entries(theta, phi, loss_db=0.0, splitting_delta=0.0):
    """Broadcasting form of :func:`mzi_transfer`.

    Returns the four entries ``(m00, m01, m10, m11)`` as complex arrays with
    the broadcast shape of the inputs. Used by the batched propagation code.
    """
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    s = 0.5 + np.asarray(splitting_delta, dtype=float)
    c = np.sqrt(1.0 - s)
    t = np.sqrt(s)
    e = np.exp(1j * theta)
    f = np.exp(1j * phi)
    amp = loss_amplitude(loss_db)
    # -j * diag(e^{j phi}, 1) * B(s) * diag(e^{j theta}, 1) * B(s)
    m00 = -1j * f * (c * c * e - t * t) * amp
    m01 = f * (t * c * e + c * t) * amp
    m10 = (c * t * e + t * c) * amp
    m11 = -1j * (c * c - t * t * e) * amp
    return m00, m01, m10, m11


def transfer_derivatives(theta, phi, loss_db=0.0, splitting_delta=0.0):
    """d/dtheta and d/dphi of the four entries, same layout as transfer_entries."""
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    s = 0.5 + np.asarray(splitting_delta, dtype=float)
    c = np.sqrt(1.0 - s)
    t = np.sqrt(s)
    de = 1j * np.exp(1j * theta)
    f = np.exp(1j * phi)
    amp = loss_amplitude(loss_db)
    dth = (
        -1j * f * (c * c * de) * amp,
        f * (t * c * de) * amp,
        (c * t * de) * amp,
        -1j * (-t * t * de) * amp,
    )
    m00, m01, m10, m11 = transfer_entries(theta, phi, loss_db, splitting_delta)
    zero = np.zeros_like(m10)
    dph = (1j * m00, 1j * m01, zero, zero)
    return dth, dph


def mzi_transfer(phases: MziPhases, imp: MziImperfection = IDEAL) -> np.ndarray:
    """2x2 transfer matrix of one MZI, including loss and coupler imbalance."""
    m00, m01, m10, m11 = transfer_entries(
        phases.theta, phases.phi, imp.loss_db, imp.splitting_delta
    )
    return np.array([[m00, m01], [m10, m11]], dtype=np.complex128)


@dataclass(frozen=True)
class VoltagePhaseModel:
    """Thermo-optic shifter with phase proportional to dissipated power."""

    v_pi: float = 2.0
    resolution: float = 0.01

    def __post_init__(self):
        if not (self.v_pi > 0 and self.resolution > 0):
            raise ValueError("v_pi and resolution must be positive")


def phase_from_voltage(v, model: VoltagePhaseModel = VoltagePhaseModel()):
    v = np.asarray(v, dtype=float)
    if np.any(v < 0):
        raise ValueError("voltage must be non-negative")
    out = math.pi * (v / model.v_pi) ** 2
    return float(out) if out.ndim == 0 else out


def voltage_from_phase(phase, model: VoltagePhaseModel = VoltagePhaseModel()):
    phase = np.asarray(phase, dtype=float)
    if np.any(phase < 0):
        raise ValueError("phase must be non-negative")
    out = model.v_pi * np.sqrt(phase / math.pi)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ThermalParams:
    length: float = 100e-6
    lambda0: float = 1550e-9
    dn_dt: float = 1.8e-4

    def __post_init__(self):
        if not (self.length > 0 and self.lambda0 > 0 and self.dn_dt > 0):
            raise ValueError("thermal parameters must be strictly positive")


def thermal_phase_error(dT, p: ThermalParams = ThermalParams()):
    """Phase change (rad) produced by a temperature change ``dT`` (K)."""
    return 2 * math.pi * p.length / p.lambda0 * p.dn_dt * dT


def temperature_for_phase(dtheta, p: ThermalParams = ThermalParams()):
    """Inverse of :func:`thermal_phase_error`."""
    return dtheta / (2 * math.pi * p.length / p.lambda0 * p.dn_dt)
