"""
Closed-form model of a flux-tunable transmon used as a dc flux sensor.

Units used throughout the package:

* durations in nanoseconds (``*_ns``), except ``t_rep_us``
* angular frequencies in rad/s
* flux as a fraction of the flux quantum (the non-integer part of Phi/Phi0)
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Union

import numpy as np
from scipy import constants

TWO_PI = 2.0 * np.pi
HBAR = constants.hbar
BOHR_MAGNETON = constants.physical_constants["Bohr magneton"][0]
FLUX_QUANTUM = constants.physical_constants["mag. flux quantum"][0]

# Bias-point voltages of the flux line (volts).
CALIBRATION_VOLTAGE = 0.98
PASSPORT_V_FIRST = 0.977
PASSPORT_V_STEP = 0.0002

# Dephasing times measured at the sweet spot, kept for reference only.
SWEET_SPOT_GAMMA_WN_INV_NS = 1250.0
SWEET_SPOT_GAMMA_1F_INV_NS = 780.0


class PhysicsError(ValueError):
    """Raised when the transmon model is evaluated outside its domain."""


@dataclass(frozen=True)
class WhiteNoise:
    """White dephasing noise: ``gamma(tau) = exp(-rate * tau)``.

    ``rate`` is in 1/ns.
    """

    rate: float

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("white-noise dephasing rate must be positive")

    def log_decay(self, tau_ns):
        return -self.rate * np.asarray(tau_ns, dtype=float)

    def log_decay_derivative(self, tau_ns):
        return -self.rate * np.ones_like(np.asarray(tau_ns, dtype=float))


@dataclass(frozen=True)
class OneOverFNoise:
    """1/f dephasing noise: ``gamma(tau) = exp(-(rate * tau)**2)``.

    ``rate`` is in 1/ns; ``cutoff`` is the low-frequency cutoff in 1/s that
    enters only the rate/spectrum conversion.
    """

    rate: float
    cutoff: float = 1.0

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("1/f dephasing rate must be positive")
        if not self.cutoff > 0:
            raise ValueError("1/f cutoff must be positive")

    def log_decay(self, tau_ns):
        return -((self.rate * np.asarray(tau_ns, dtype=float)) ** 2)

    def log_decay_derivative(self, tau_ns):
        return -2.0 * self.rate**2 * np.asarray(tau_ns, dtype=float)


DephasingModel = Union[WhiteNoise, OneOverFNoise]


@dataclass(frozen=True)
class SensorParams:
    """Physical parameters of the simulated transmon sensor.

    Defaults describe the bias point of the device. ``e_j_sigma_ghz`` is
    26.169 GHz rather than the rounded 26.2 GHz so that the drive detuning at
    the far edge of the passport is 2pi x 15.8 MHz with the drive at
    7.246 GHz.

    Attributes
    ----------
    e_c_mhz : float
        Charging energy E_C/h in MHz.
    e_j_sigma_ghz : float
        Total Josephson energy E_JSigma/h in GHz.
    flux_slope_ghz : float
        d(omega01)/dPhi / 2pi in GHz per flux quantum at the bias point.
    t1_ns : float
        Energy relaxation time.
    dephasing : WhiteNoise or OneOverFNoise
        Pure dephasing model.
    tau0_ns : float
        Effective duration of the two pi/2 pulses.
    omega_d_ghz : float
        Drive frequency omega_d/2pi in GHz.
    t_rep_us : float
        Duration of a single Ramsey repetition.
    loop_area_um2 : float
        SQUID loop area.
    v0_volts, phi_trapped : float
        Voltage-to-flux conversion constants.
    residual_phase : float
        Flux-independent phase offset of the Ramsey fringes (radians).
    """

    e_c_mhz: float = 299.0
    e_j_sigma_ghz: float = 26.169
    flux_slope_ghz: float = -5.3
    t1_ns: float = 260.0
    dephasing: DephasingModel = field(default_factory=lambda: WhiteNoise(1.0 / 520.0))
    tau0_ns: float = 31.6
    omega_d_ghz: float = 7.246
    t_rep_us: float = 6.546
    loop_area_um2: float = 600.0
    v0_volts: float = 12.55
    phi_trapped: float = 0.059
    residual_phase: float = -0.095

    def __post_init__(self):
        for name in ("e_c_mhz", "e_j_sigma_ghz", "t1_ns", "omega_d_ghz", "t_rep_us", "v0_volts"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        for name in ("tau0_ns", "loop_area_um2"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.tau0_ns >= self.t1_ns:
            warnings.warn("tau0_ns is not small compared with t1_ns", stacklevel=2)

    @property
    def flux_slope(self) -> float:
        """d(omega01)/dPhi in rad/s per flux quantum."""
        return TWO_PI * self.flux_slope_ghz * 1e9

    @property
    def omega_d(self) -> float:
        return TWO_PI * self.omega_d_ghz * 1e9

    @property
    def t_rep_ns(self) -> float:
        return self.t_rep_us * 1e3

    @property
    def t2_ns(self) -> float:
        """1/e time of the full Ramsey envelope (exact for white dephasing)."""
        return 1.0 / (1.0 / (2.0 * self.t1_ns) + self.dephasing.rate)

    def replace(self, **changes) -> "SensorParams":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = {
            "e_c_mhz": self.e_c_mhz,
            "e_j_sigma_ghz": self.e_j_sigma_ghz,
            "flux_slope_ghz": self.flux_slope_ghz,
            "t1_ns": self.t1_ns,
            "tau0_ns": self.tau0_ns,
            "omega_d_ghz": self.omega_d_ghz,
            "t_rep_us": self.t_rep_us,
            "loop_area_um2": self.loop_area_um2,
            "v0_volts": self.v0_volts,
            "phi_trapped": self.phi_trapped,
            "residual_phase": self.residual_phase,
        }
        if isinstance(self.dephasing, WhiteNoise):
            d["gamma_wn_inv_ns"] = 1.0 / self.dephasing.rate
        else:
            d["gamma_1f_inv_ns"] = 1.0 / self.dephasing.rate
            d["cutoff_per_s"] = self.dephasing.cutoff
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SensorParams":
        d = dict(d)
        has_wn = "gamma_wn_inv_ns" in d
        has_1f = "gamma_1f_inv_ns" in d
        if has_wn and has_1f:
            raise ValueError("give exactly one of gamma_wn_inv_ns and gamma_1f_inv_ns")
        kwargs = {}
        if has_wn:
            kwargs["dephasing"] = WhiteNoise(1.0 / float(d.pop("gamma_wn_inv_ns")))
        elif has_1f:
            cutoff = float(d.pop("cutoff_per_s", 1.0))
            kwargs["dephasing"] = OneOverFNoise(1.0 / float(d.pop("gamma_1f_inv_ns")), cutoff)
        d.pop("cutoff_per_s", None)
        known = {f for f in cls.__dataclass_fields__ if f != "dephasing"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown sensor parameter keys: {sorted(unknown)}")
        kwargs.update({k: float(v) for k, v in d.items()})
        return cls(**kwargs)


def save_sensor_params(params: SensorParams, path) -> None:
    Path(path).write_text(json.dumps(params.to_dict(), indent=2, sort_keys=True) + "\n")


def load_sensor_params(path) -> SensorParams:
    return SensorParams.from_dict(json.loads(Path(path).read_text()))


def josephson_energy_ghz(flux, params: SensorParams):
    """E_J(Phi)/h = E_JSigma |cos(pi Phi/Phi0)| in GHz."""
    return params.e_j_sigma_ghz * np.abs(np.cos(np.pi * np.asarray(flux, dtype=float)))


def transition_frequency(flux, params: SensorParams):
    """Angular frequency omega01 (rad/s) of the first transmon transition.

    Raises
    ------
    PhysicsError
        If sqrt(8 E_C E_J) <= E_C somewhere, which happens only close to
        half a flux quantum.
    """
    e_c = params.e_c_mhz * 1e-3
    plasma = np.sqrt(8.0 * e_c * josephson_energy_ghz(flux, params))
    if np.any(plasma <= e_c):
        raise PhysicsError("transition frequency is not positive at this flux")
    out = TWO_PI * 1e9 * (plasma - e_c)
    return float(out) if np.ndim(out) == 0 else out


def detuning(flux, params: SensorParams):
    """Drive detuning omega_d - omega01(Phi) in rad/s."""
    return params.omega_d - transition_frequency(flux, params)


def transition_slope(flux, params: SensorParams, h: float = 1e-7) -> float:
    """Central finite-difference slope d(omega01)/dPhi in rad/s per flux quantum."""
    return (transition_frequency(flux + h, params) - transition_frequency(flux - h, params)) / (2 * h)


def decay_function(tau_ns, model: DephasingModel):
    """Pure-dephasing envelope gamma(tau); equals 1 at tau = 0."""
    tau = np.asarray(tau_ns, dtype=float)
    if np.any(tau < 0):
        raise ValueError("delay must be nonnegative")
    out = np.exp(model.log_decay(tau))
    return float(out) if out.ndim == 0 else out


def ramsey_envelope(tau_ns, params: SensorParams):
    """Combined relaxation and dephasing envelope exp(-tau/2T1) gamma(tau)."""
    tau = np.asarray(tau_ns, dtype=float)
    return np.exp(-tau / (2.0 * params.t1_ns) + params.dephasing.log_decay(tau))


def ramsey_probability(tau_ns, flux, params: SensorParams, residual_phase=None):
    """Excited-state probability after a Ramsey sequence with delay ``tau_ns``.

    P = 1/2 + 1/2 exp(-tau/2T1) gamma(tau) cos[dw (tau + tau0) + dphi]

    The phase includes the pulse-duration offset ``tau0_ns`` and the residual
    phase (``params.residual_phase`` unless overridden). Broadcasts over
    ``tau_ns`` and ``flux``.
    """
    tau = np.asarray(tau_ns, dtype=float)
    if np.any(tau < 0):
        raise ValueError("delay must be nonnegative")
    dphi = params.residual_phase if residual_phase is None else residual_phase
    dw = detuning(flux, params)
    phase = dw * (tau + params.tau0_ns) * 1e-9 + dphi
    out = 0.5 + 0.5 * ramsey_envelope(tau, params) * np.cos(phase)
    return float(out) if np.ndim(out) == 0 else out


def voltage_to_flux(voltage, v0_volts: float = 12.55, phi_trapped: float = 0.059):
    """Non-integer part of the normalized flux produced by a bias voltage."""
    if not v0_volts > 0:
        raise ValueError("v0_volts must be positive")
    # reducing the voltage first keeps V and V + V0 bit-identical
    reduced = np.mod(np.asarray(voltage, dtype=float), v0_volts)
    out = np.mod(reduced / v0_volts + phi_trapped, 1.0)
    return float(out) if out.ndim == 0 else out


def magnetic_moment(params: SensorParams) -> float:
    """Magnetic moment S hbar |d omega01/dPhi| in Bohr magnetons."""
    area_m2 = params.loop_area_um2 * 1e-12
    slope_per_weber = abs(params.flux_slope) / FLUX_QUANTUM
    return area_m2 * HBAR * slope_per_weber / BOHR_MAGNETON


def dispersive_shift(omega01, g01, omega_c, omega_res):
    """Partial dispersive shift chi12 = 2 g01^2 / (omega01 - omega_C - omega_res).

    Any consistent frequency unit works.
    """
    return 2.0 * g01**2 / (omega01 - omega_c - omega_res)


def resonator_pull(omega01, d_omega01, g01, omega_c, omega_res):
    """Change of the resonator frequency when omega01 moves by ``d_omega01``.

    To first order this is (1/2) d(chi12)/d(omega01) * d_omega01.
    """
    return -(g01**2) / (omega01 - omega_c - omega_res) ** 2 * d_omega01


def passport_flux_axis(params: SensorParams | None = None):
    """(phi1, phi_step) of the passport grid implied by the flux-line voltages."""
    p = params or SensorParams()
    phi1 = voltage_to_flux(PASSPORT_V_FIRST, p.v0_volts, p.phi_trapped)
    step = PASSPORT_V_STEP / p.v0_volts
    return phi1, step


def calibration_flux(params: SensorParams | None = None) -> float:
    p = params or SensorParams()
    return voltage_to_flux(CALIBRATION_VOLTAGE, p.v0_volts, p.phi_trapped)


def ideal_sensor(t2_ns: float, **changes) -> SensorParams:
    """Sensor whose Ramsey envelope decays as exp(-tau/T2).

    Relaxation and white dephasing contribute equally (T1 = T2,
    1/Gamma = 2 T2).
    """
    return SensorParams(t1_ns=t2_ns, dephasing=WhiteNoise(1.0 / (2.0 * t2_ns)), **changes)

