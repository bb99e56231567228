"""
Synthesis, persistence and fitting of the sensor passport.

The passport is the grid of mean readout values ``P_p(tau_j, Phi_i)`` that the
estimation procedures use as the mean of their likelihood. Rows are delays,
columns are fluxes: ``values[j, i]``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy import ndimage, optimize, signal

from .physics import (
    SensorParams,
    calibration_flux,
    passport_flux_axis,
    ramsey_probability,
)

FORMAT_NAME = "transmon-pe/passport"
FORMAT_VERSION = 1

N_FLUX = 161
N_TAU = 241
TAU_STEP_NS = 2.0
N_PASS = 65000

_PHI1, _PHI_STEP = passport_flux_axis()
_PHI_CAL = calibration_flux()
# Linear readout gain reaching 1.15 at the far edge of the flux range.
DEFAULT_GAIN_SLOPE = 0.15 / (_PHI1 + (N_FLUX - 1) * _PHI_STEP - _PHI_CAL)


class PassportFormatError(ValueError):
    """Malformed passport file."""


class PassportShapeError(PassportFormatError):
    """Passport matrix does not match the dimensions in its header."""


class FitError(RuntimeError):
    """Column fit failed. ``best`` holds the best parameters found, if any."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True)
class DistortionConfig:
    """Deviations of the synthesized passport from the ideal Ramsey surface.

    Attributes
    ----------
    gain_slope : float
        Readout miscalibration: values are multiplied by
        ``1 + gain_slope * (Phi - calibration_flux)``.
    calibration_flux : float
        Flux at which the readout was calibrated (gain exactly 1).
    additive_sampling_noise : bool
        Draw every node as the mean of ``n_pass`` noisy single-shot readouts.
    sampling_sigma1_sq : float
        Single-shot amplifier noise variance used for that draw.
    wander_amplitude : float
        RMS of the slow flux offset (in Phi0) seen while each column was
        recorded.
    wander_correlation : float
        Correlation length of that offset, in flux columns.
    residual_phase_std : float
        Column-to-column scatter of the residual fringe phase (radians).
    g01_mhz, omega_c_mhz, omega_res_mhz : float
        Qubit-resonator coupling, charging frequency and resonator frequency
        (all /2pi), used to estimate the resonator pull across the range.
    """

    gain_slope: float = DEFAULT_GAIN_SLOPE
    calibration_flux: float = _PHI_CAL
    additive_sampling_noise: bool = True
    sampling_sigma1_sq: float = 3.5
    wander_amplitude: float = 3e-5
    wander_correlation: float = 8.0
    residual_phase_std: float = 0.055
    g01_mhz: float = 100.0
    omega_c_mhz: float = 299.0
    omega_res_mhz: float = 5120.0

    def __post_init__(self):
        for name in (
            "gain_slope",
            "sampling_sigma1_sq",
            "wander_amplitude",
            "wander_correlation",
            "residual_phase_std",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    @classmethod
    def ideal(cls) -> "DistortionConfig":
        return cls(
            gain_slope=0.0,
            additive_sampling_noise=False,
            wander_amplitude=0.0,
            residual_phase_std=0.0,
        )

    @property
    def is_ideal(self) -> bool:
        return (
            self.gain_slope == 0
            and not self.additive_sampling_noise
            and self.wander_amplitude == 0
            and self.residual_phase_std == 0
        )

    def gain(self, flux):
        """Readout gain at ``flux``."""
        return 1.0 + self.gain_slope * (np.asarray(flux, dtype=float) - self.calibration_flux)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DistortionConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown distortion keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True, eq=False)
class PassportGrid:
    """Immutable passport grid.

    ``values`` has shape ``(n_tau, n_flux)``; ``values[j, i]`` is the mean
    readout at delay ``j * tau_step_ns`` and flux ``phi1 + i * phi_step``.
    ``n_pass`` is None for an infinitely averaged (noise-free) grid.
    """

    phi1: float
    phi_step: float
    tau_step_ns: float
    values: np.ndarray
    n_pass: int | None = N_PASS
    seed: int | None = None
    distortion: DistortionConfig | None = None
    created_from: str = "truth"
    sensor: dict | None = field(default=None)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2:
            raise PassportShapeError("passport values must be a 2-D matrix")
        if not self.phi_step > 0 or not self.tau_step_ns > 0:
            raise ValueError("passport axes need positive steps")
        if not np.all(np.isfinite(values)):
            raise ValueError("passport values must be finite")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def n_tau(self) -> int:
        return self.values.shape[0]

    @property
    def n_flux(self) -> int:
        return self.values.shape[1]

    @property
    def flux_axis(self) -> np.ndarray:
        return self.phi1 + self.phi_step * np.arange(self.n_flux)

    @property
    def delay_axis(self) -> np.ndarray:
        return self.tau_step_ns * np.arange(self.n_tau)

    def delay_ns(self, j: int) -> float:
        return self.tau_step_ns * j

    def delay_index(self, tau_ns: float) -> int:
        j = int(round(tau_ns / self.tau_step_ns))
        if not 0 <= j < self.n_tau or not math.isclose(j * self.tau_step_ns, tau_ns, abs_tol=1e-9):
            raise ValueError(f"delay {tau_ns} ns is not on the passport grid")
        return j

    def sensor_params(self) -> SensorParams:
        """Sensor the grid was synthesized from (package defaults if unknown)."""
        return SensorParams() if self.sensor is None else SensorParams.from_dict(self.sensor)

    def nearest_flux_index(self, flux: float) -> int:
        return int(np.clip(np.rint((flux - self.phi1) / self.phi_step), 0, self.n_flux - 1))

    def header(self) -> dict:
        return {
            "phi1": self.phi1,
            "phi_step": self.phi_step,
            "n_flux": self.n_flux,
            "tau_step_ns": self.tau_step_ns,
            "n_tau": self.n_tau,
            "n_pass": self.n_pass,
            "seed": self.seed,
            "distortion": None if self.distortion is None else self.distortion.to_dict(),
            "created_from": self.created_from,
            "sensor": self.sensor,
        }

    def __eq__(self, other):
        if not isinstance(other, PassportGrid):
            return NotImplemented
        return self.header() == other.header() and np.array_equal(self.values, other.values)

    __hash__ = None


def wander_profile(n_flux: int, amplitude: float, correlation: float, rng) -> np.ndarray:
    """Smooth random flux offset per column with the given RMS amplitude."""
    white = rng.standard_normal(n_flux)
    if amplitude == 0:
        return np.zeros(n_flux)
    if correlation > 0:
        white = ndimage.gaussian_filter1d(white, correlation, mode="reflect")
    white -= white.mean()
    rms = np.sqrt(np.mean(white**2))
    return amplitude * white / rms if rms > 0 else np.zeros(n_flux)


def generate_passport(
    params: SensorParams,
    distortion: DistortionConfig | None = None,
    *,
    seed: int | None = 0,
    phi1: float = _PHI1,
    phi_step: float = _PHI_STEP,
    n_flux: int = N_FLUX,
    tau_step_ns: float = TAU_STEP_NS,
    n_tau: int = N_TAU,
    n_pass: int | None = N_PASS,
) -> PassportGrid:
    """Synthesize a passport from the physics model.

    Each column ``i`` is the Ramsey probability at the slightly wandered flux
    ``Phi_i + w_i`` with a jittered residual phase, scaled by the readout gain
    at ``Phi_i``. With sampling noise enabled and finite ``n_pass``, every
    node is then replaced by the mean of ``n_pass`` simulated single shots
    (binomial projection plus Gaussian amplifier noise).
    """
    if distortion is None:
        distortion = DistortionConfig()
    if not phi_step > 0 or not tau_step_ns > 0:
        raise ValueError("passport axes need positive steps")
    if n_flux < 1 or n_tau < 1:
        raise ValueError("passport axes need at least one point")
    if n_pass is not None and n_pass < 1:
        raise ValueError("n_pass must be positive or None")
    rng = np.random.default_rng(seed)

    flux = phi1 + phi_step * np.arange(n_flux)
    tau = tau_step_ns * np.arange(n_tau)
    wander = wander_profile(
        n_flux, distortion.wander_amplitude, distortion.wander_correlation, rng
    )
    jitter = distortion.residual_phase_std * rng.standard_normal(n_flux)
    prob = ramsey_probability(
        tau[:, None],
        (flux + wander)[None, :],
        params,
        residual_phase=params.residual_phase + jitter[None, :],
    )
    gain = distortion.gain(flux)[None, :]
    if distortion.additive_sampling_noise and n_pass is not None:
        shots = rng.binomial(n_pass, np.clip(prob, 0.0, 1.0))
        amp = rng.normal(0.0, math.sqrt(distortion.sampling_sigma1_sq / n_pass), prob.shape)
        values = gain * shots / n_pass + amp
    else:
        values = gain * prob
    return PassportGrid(
        phi1=phi1,
        phi_step=phi_step,
        tau_step_ns=tau_step_ns,
        values=values,
        n_pass=n_pass,
        seed=seed,
        distortion=distortion,
        created_from="truth",
        sensor=params.to_dict(),
    )


def ideal_passport(params: SensorParams, **axes) -> PassportGrid:
    """Noise-free passport that equals the Ramsey probability at every node."""
    return generate_passport(params, DistortionConfig.ideal(), seed=None, n_pass=None, **axes)


# -- persistence -------------------------------------------------------------


def save_passport(grid: PassportGrid, path) -> None:
    doc = {"format": FORMAT_NAME, "version": FORMAT_VERSION}
    doc.update(grid.header())
    doc["values"] = grid.values.tolist()
    text = json.dumps(doc, separators=(",", ":"), allow_nan=False)
    Path(path).write_text(text + "\n")


def _require(doc, key, types):
    if key not in doc:
        raise PassportFormatError(f"missing field {key!r}")
    value = doc[key]
    if not isinstance(value, types) or isinstance(value, bool):
        raise PassportFormatError(f"field {key!r} has the wrong type")
    return value


def load_passport(path) -> PassportGrid:
    """Read a passport written by :func:`save_passport`.

    Raises
    ------
    PassportFormatError
        On unparsable JSON or a missing/mistyped header field.
    PassportShapeError
        When the matrix does not have ``n_tau`` rows of ``n_flux`` values.
    """
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise PassportFormatError(f"passport file is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise PassportFormatError("passport file must hold a JSON object")
    if doc.get("format") != FORMAT_NAME:
        raise PassportFormatError("field 'format' does not name a passport file")
    if doc.get("version") != FORMAT_VERSION:
        raise PassportFormatError(f"unsupported passport version {doc.get('version')!r}")
    phi1 = float(_require(doc, "phi1", (int, float)))
    phi_step = float(_require(doc, "phi_step", (int, float)))
    n_flux = _require(doc, "n_flux", int)
    tau_step = float(_require(doc, "tau_step_ns", (int, float)))
    n_tau = _require(doc, "n_tau", int)
    n_pass = doc.get("n_pass")
    if n_pass is not None and (not isinstance(n_pass, int) or isinstance(n_pass, bool)):
        raise PassportFormatError("field 'n_pass' has the wrong type")
    seed = doc.get("seed")
    if seed is not None and not isinstance(seed, int):
        raise PassportFormatError("field 'seed' has the wrong type")
    distortion = doc.get("distortion")
    if distortion is not None:
        try:
            distortion = DistortionConfig.from_dict(distortion)
        except (TypeError, ValueError) as exc:
            raise PassportFormatError(f"field 'distortion' is invalid: {exc}") from None
    rows = _require(doc, "values", list)
    if len(rows) != n_tau:
        raise PassportShapeError(f"header declares n_tau={n_tau} but matrix has {len(rows)} rows")
    for j, row in enumerate(rows):
        if not isinstance(row, list) or len(row) != n_flux:
            got = len(row) if isinstance(row, list) else "no"
            raise PassportShapeError(
                f"header declares n_flux={n_flux} but row {j} has {got} columns"
            )
    try:
        values = np.array(rows, dtype=float)
    except (TypeError, ValueError):
        raise PassportFormatError("field 'values' holds non-numeric entries") from None
    return PassportGrid(
        phi1=phi1,
        phi_step=phi_step,
        tau_step_ns=tau_step,
        values=values,
        n_pass=n_pass,
        seed=seed,
        distortion=distortion,
        created_from=doc.get("created_from", "file"),
        sensor=doc.get("sensor"),
    )


# -- column fits ---------------------------------------------------------------


@dataclass(frozen=True)
class ColumnFit:
    """Damped-cosine fit of one passport column.

    ``omega`` is in rad/s, ``phase`` in [-pi, pi). For the exponential model
    ``decay_rate`` (1/ns) is set; for the Gaussian model ``t1_ns`` and
    ``t_phi_ns``.
    """

    model: str
    alpha: float
    beta: float
    omega: float
    phase: float
    residual_norm: float
    decay_rate: float | None = None
    t1_ns: float | None = None
    t_phi_ns: float | None = None
    flux_index: int | None = None

    def evaluate(self, tau_ns):
        tau = np.asarray(tau_ns, dtype=float)
        if self.model == "exponential":
            env = np.exp(-self.decay_rate * tau)
        else:
            env = np.exp(-tau / (2 * self.t1_ns) - (tau / self.t_phi_ns) ** 2)
        return self.alpha + self.beta * env * np.cos(self.omega * 1e-9 * tau + self.phase)


def _model_exp(p, tau):
    alpha, beta, rate, omega, phase = p
    return alpha + beta * np.exp(-rate * tau) * np.cos(omega * tau + phase)


def _model_gauss(p, tau):
    alpha, beta, t1, t_phi, omega, phase = p
    return alpha + beta * np.exp(-tau / (2 * t1) - (tau / t_phi) ** 2) * np.cos(omega * tau + phase)


def _wrap_phase(phase):
    return (phase + np.pi) % (2 * np.pi) - np.pi


def _initial_guess(tau, y):
    """FFT peak for the frequency and phase, log-envelope slope for the decay."""
    alpha = float(np.mean(y[len(y) // 2 :])) if len(y) >= 8 else float(np.mean(y))
    centered = y - alpha
    dt = tau[1] - tau[0]
    n_fft = max(4096, 8 * len(y))
    spectrum = np.fft.rfft(centered, n_fft)
    freqs = np.fft.rfftfreq(n_fft, dt)
    k = int(np.argmax(np.abs(spectrum[1:]))) + 1
    omega = 2 * np.pi * freqs[k]
    phase = float(np.angle(spectrum[k]))
    envelope = np.abs(signal.hilbert(centered))
    ok = envelope > 1e-12
    if ok.sum() >= 2:
        slope, intercept = np.polyfit(tau[ok], np.log(envelope[ok]), 1)
        rate = max(-slope, 1.0 / (100 * tau[-1]))
        beta = float(np.exp(intercept))
    else:
        rate, beta = 1.0 / tau[-1], float(np.ptp(y) / 2)
    return alpha, beta, rate, omega, phase


def fit_column(
    grid: PassportGrid, flux_index: int, model: str = "exponential", max_nfev: int = 2000
) -> ColumnFit:
    """Least-squares fit of a damped cosine to passport column ``flux_index``.

    ``model`` is ``"exponential"`` (alpha + beta e^{-g tau} cos(w tau + phi))
    or ``"gaussian"`` (envelope exp(-tau/2T1 - (tau/T_phi)^2)).

    Raises
    ------
    FitError
        If the column is degenerate (no oscillation) or the optimizer does not
        converge within ``max_nfev`` evaluations; the error carries the best
        parameters found.
    """
    if model not in ("exponential", "gaussian"):
        raise ValueError(f"unknown fit model {model!r}")
    if not 0 <= flux_index < grid.n_flux:
        raise IndexError(f"flux index {flux_index} out of range")
    tau = grid.delay_axis
    y = np.asarray(grid.values[:, flux_index], dtype=float)
    if len(y) < 6:
        raise FitError("column needs at least 6 points")
    if np.ptp(y) < 1e-12:
        raise FitError("column is constant: amplitude is zero and the phase is undefined")
    alpha, beta, rate, omega, phase = _initial_guess(tau, y)
    if model == "exponential":
        fun, p0 = _model_exp, [alpha, beta, rate, omega, phase]
        lower = [-np.inf, 0.0, 0.0, 0.0, -np.inf]
    else:
        fun = _model_gauss
        p0 = [alpha, beta, 1.0 / (2 * rate), 3.0 / rate, omega, phase]
        lower = [-np.inf, 0.0, 1e-3, 1e-3, 0.0, -np.inf]
    scale = float(np.ptp(y))

    best = None
    # The FFT seed can sit a bin off for columns with less than one period.
    for omega_scale in (1.0, 0.5, 1.5):
        start = list(p0)
        start[-2] = p0[-2] * omega_scale
        res = optimize.least_squares(
            lambda p: (fun(p, tau) - y) / scale,
            start,
            bounds=(lower, np.inf),
            method="trf",
            x_scale="jac",
            xtol=1e-14,
            ftol=1e-14,
            gtol=1e-14,
            max_nfev=max_nfev,
        )
        if best is None or res.cost < best.cost:
            best = res
        if res.status > 0 and np.sqrt(2 * res.cost) * scale < 1e-9:
            break

    p = np.array(best.x, dtype=float)
    resid = float(np.linalg.norm(fun(p, tau) - y))
    beta, omega_ns, ph = p[1], p[-2], p[-1]
    if beta < 0:
        beta, ph = -beta, ph + np.pi
    if omega_ns < 0:
        omega_ns, ph = -omega_ns, -ph
    common = dict(
        model=model,
        alpha=float(p[0]),
        beta=float(beta),
        omega=float(omega_ns * 1e9),
        phase=float(_wrap_phase(ph)),
        residual_norm=resid,
        flux_index=flux_index,
    )
    if model == "exponential":
        fit = ColumnFit(decay_rate=float(p[2]), **common)
    else:
        fit = ColumnFit(t1_ns=float(p[2]), t_phi_ns=float(p[3]), **common)
    if best.status <= 0:
        raise FitError(f"fit did not converge: {best.message}", best=fit)
    return fit


@dataclass(frozen=True)
class LinearFit:
    slope: float
    intercept: float

    def __call__(self, x):
        return self.slope * np.asarray(x, dtype=float) + self.intercept


def fit_linear_parameters(fits, voltages) -> dict:
    """Ordinary least squares of the column-fit parameters against bias voltage.

    Returns a dict with :class:`LinearFit` entries ``omega`` (rad/s per V),
    ``phase`` (rad per V), ``alpha`` and ``beta`` (per V), plus ``tau0_ns``,
    the effective pulse duration d(phase)/d(omega).
    """
    v = np.asarray(voltages, dtype=float)
    if len(fits) != len(v):
        raise ValueError("need one voltage per fit")
    if len(v) < 2:
        raise ValueError("need at least two columns")
    if np.ptp(v) == 0:
        raise ValueError("singular design: all voltages are equal")
    design = np.column_stack([v, np.ones_like(v)])
    out = {}
    for name in ("omega", "phase", "alpha", "beta"):
        y = np.array([getattr(f, name) for f in fits], dtype=float)
        (slope, intercept), *_ = np.linalg.lstsq(design, y, rcond=None)
        out[name] = LinearFit(float(slope), float(intercept))
    out["tau0_ns"] = out["phase"].slope / out["omega"].slope * 1e9
    return out


def column_voltages(grid: PassportGrid, params: SensorParams) -> np.ndarray:
    """Bias voltages of the passport columns (inverse of the flux conversion)."""
    return (grid.flux_axis - params.phi_trapped) * params.v0_volts
