"""
Metrology formulas, scaling fits and the Monte Carlo ensemble runner.

Durations follow the package convention (ns) unless a name says otherwise;
sensitivities are in flux quanta per root hertz, i.e. the resolution reached
after ``t_s = 1`` second.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize, stats

from .estimators import (
    EstimationTrace,
    FourierConfig,
    KitaevConfig,
    classical_procedure,
    fourier_procedure,
    kitaev_procedure,
)
from .inference import shannon_entropy
from .physics import OneOverFNoise, SensorParams, WhiteNoise
from .readout import SHOTS, SIGMA1_SQ, ReadoutModel, ReadoutOracle

DEFAULT_REPEATS = 25


class AnalysisError(ValueError):
    pass


# --------------------------------------------------------------------------
# sensitivities and noise conversions


def _slope_abs(params: SensorParams) -> float:
    s = abs(params.flux_slope)
    if s == 0:
        raise AnalysisError("flux slope must be nonzero")
    return s


def classical_sensitivity(params: SensorParams, t_s: float = 1.0, t_rep_ns: float | None = None) -> float:
    """Shot-noise limited resolution of zero-delay Ramsey measurements.

    ``1 / (|d omega/d Phi| tau0 sqrt(t / T_rep))``.
    """
    t_rep = (params.t_rep_ns if t_rep_ns is None else t_rep_ns) * 1e-9
    return 1.0 / (_slope_abs(params) * params.tau0_ns * 1e-9 * math.sqrt(t_s / t_rep))


def quantum_sensitivity(
    params: SensorParams,
    tau_star_ns: float | None = None,
    t_s: float = 1.0,
    t_rep_ns: float | None = None,
) -> float:
    """Best resolution when every measurement uses the delay ``tau_star_ns``.

    ``e / (|d omega/d Phi| tau* sqrt(t / T_rep))``; ``tau_star_ns`` defaults to
    :func:`optimal_delay`.
    """
    tau = optimal_delay(params) if tau_star_ns is None else tau_star_ns
    if not tau > 0:
        raise AnalysisError("tau* must be positive")
    t_rep = (params.t_rep_ns if t_rep_ns is None else t_rep_ns) * 1e-9
    return math.e / (_slope_abs(params) * tau * 1e-9 * math.sqrt(t_s / t_rep))


def flux_resolution_n_shots(params: SensorParams, tau_ns: float, n: int) -> float:
    """Resolution of ``n`` Ramsey shots at delay ``tau_ns`` including decay."""
    if not tau_ns > 0 or n < 1:
        raise AnalysisError("need tau > 0 and n >= 1")
    log_env = tau_ns / (2.0 * params.t1_ns) - float(params.dephasing.log_decay(tau_ns))
    return math.exp(log_env) / (_slope_abs(params) * tau_ns * 1e-9 * math.sqrt(n))


def _optimal_delay_closed(params: SensorParams) -> float:
    inv_2t1 = 1.0 / (2.0 * params.t1_ns)
    model = params.dephasing
    if isinstance(model, WhiteNoise):
        return 1.0 / (model.rate + inv_2t1)
    if isinstance(model, OneOverFNoise):
        g = model.rate
        if g == 0:
            return 2.0 * params.t1_ns
        x = inv_2t1 / g
        return (math.sqrt(8.0 + x * x) - x) / (4.0 * g)
    raise AnalysisError(f"no closed form for {type(model).__name__}")


def _optimal_delay_numeric(params: SensorParams) -> float:
    inv_2t1 = 1.0 / (2.0 * params.t1_ns)
    model = params.dephasing

    def residual(tau):
        return inv_2t1 - float(model.log_decay_derivative(tau)) - 1.0 / tau

    hi = 10.0 * params.t2_ns
    lo = hi * 1e-9
    if residual(lo) * residual(hi) > 0:
        raise AnalysisError("no optimal delay in (0, 10 T2]")
    return optimize.brentq(residual, lo, hi, xtol=1e-14, rtol=1e-15, maxiter=500)


def optimal_delay(params: SensorParams, method: str = "closed") -> float:
    """Delay (ns) that minimizes the single-shot flux resolution.

    Solves ``1/(2 T1) - d/dtau ln gamma(tau) = 1/tau``. ``method="closed"``
    uses the analytic roots of the white and 1/f models, ``"numeric"`` a
    bracketing root search on ``(0, 10 T2]``.
    """
    if method == "closed":
        return _optimal_delay_closed(params)
    if method == "numeric":
        return _optimal_delay_numeric(params)
    raise AnalysisError(f"unknown method {method!r}")


def rate_spectrum_conversion(
    rate_per_ns: float, params: SensorParams, model: str = "white", cutoff_per_s: float = 1.0
) -> float:
    """Flux noise spectral density (Phi0^2/Hz) behind a dephasing rate.

    White: ``S = 2 Gamma / slope^2``. 1/f: ``S = 2 pi Gamma^2 / (slope^2
    |ln(omega_c 2 T1)|)``, the amplitude of ``S(f) = S / f``.
    """
    g = rate_per_ns * 1e9
    slope = _slope_abs(params)
    if model == "white":
        return 2.0 * g / slope**2
    if model == "1/f":
        return 2.0 * math.pi * g * g / (slope**2 * _log_factor(params, cutoff_per_s))
    raise AnalysisError(f"unknown noise model {model!r}")


def spectrum_rate_conversion(
    spectrum: float, params: SensorParams, model: str = "white", cutoff_per_s: float = 1.0
) -> float:
    """Inverse of :func:`rate_spectrum_conversion`; returns a rate in 1/ns."""
    slope = _slope_abs(params)
    if model == "white":
        g = 0.5 * spectrum * slope**2
    elif model == "1/f":
        g = math.sqrt(spectrum * slope**2 * _log_factor(params, cutoff_per_s) / (2.0 * math.pi))
    else:
        raise AnalysisError(f"unknown noise model {model!r}")
    return g * 1e-9


def _log_factor(params, cutoff_per_s):
    f = abs(math.log(cutoff_per_s * 2.0 * params.t1_ns * 1e-9))
    if f == 0:
        raise AnalysisError("cutoff times 2 T1 must differ from 1")
    return f


def low_freq_flux_wander(amplitude: float, t_s: float, tau_star_s: float) -> float:
    """RMS flux drift of ``S(f) = A^2/f`` integrated from ``1/t`` to ``1/tau*``."""
    if not t_s > tau_star_s > 0:
        raise AnalysisError("need t > tau* > 0")
    return amplitude * math.sqrt(math.log(t_s / tau_star_s))


# --------------------------------------------------------------------------
# scaling fits


@dataclass(frozen=True)
class ScalingFit:
    """Power law ``y = exp(intercept) x^exponent`` with a 95% interval."""

    exponent: float
    intercept: float
    ci_low: float
    ci_high: float
    stderr: float

    def predict(self, x):
        return np.exp(self.intercept) * np.asarray(x, dtype=float) ** self.exponent


def fit_scaling_exponent(x, y=None) -> ScalingFit:
    """Unweighted least squares of ``log y`` against ``log x``.

    Accepts a :class:`ScalingCurve` or two arrays. The interval uses the
    Student t quantile with ``n - 2`` degrees of freedom.
    """
    if isinstance(x, ScalingCurve):
        x, y = x.x, x.y
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise AnalysisError("x and y must be 1-d arrays of equal length")
    if len(x) < 3:
        raise AnalysisError("need at least three points")
    if np.any(x <= 0) or np.any(y <= 0):
        raise AnalysisError("power-law fit needs positive values")
    lx, ly = np.log(x), np.log(y)
    res = stats.linregress(lx, ly)
    half = stats.t.ppf(0.975, len(x) - 2) * res.stderr
    return ScalingFit(
        float(res.slope),
        float(res.intercept),
        float(res.slope - half),
        float(res.slope + half),
        float(res.stderr),
    )


@dataclass
class ScalingCurve:
    x: np.ndarray
    y: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.x.shape != self.y.shape:
            raise AnalysisError("x and y differ in length")
        if np.any(self.x <= 0) or np.any(np.diff(self.x) <= 0):
            raise AnalysisError("x must be positive and strictly increasing")

    @classmethod
    def from_points(cls, x, y, label: str = "") -> "ScalingCurve":
        """Build from unordered points, sorting by ``x``."""
        order = np.argsort(np.asarray(x, dtype=float), kind="stable")
        return cls(np.asarray(x, dtype=float)[order], np.asarray(y, dtype=float)[order], label)

    @property
    def fit(self) -> ScalingFit:
        return fit_scaling_exponent(self)

    def window(self, x_min=None, x_max=None) -> "ScalingCurve":
        keep = np.ones(len(self.x), dtype=bool)
        if x_min is not None:
            keep &= self.x >= x_min
        if x_max is not None:
            keep &= self.x <= x_max
        return ScalingCurve(self.x[keep], self.y[keep], self.label)


def info_gain(trace: EstimationTrace, step: int | None = None) -> float:
    """Entropy drop (bits) from the uniform prior to the end of ``step``.

    The posterior at the end of a step is restricted to that step's survivors
    before its entropy is taken. ``step`` is 1-based and defaults to the last.
    """
    if not trace.steps:
        return 0.0
    rec = trace.steps[-1] if step is None else trace.steps[step - 1]
    return math.log2(trace.n_flux) - shannon_entropy(rec.restricted_posterior())


# --------------------------------------------------------------------------
# ensembles


def estimator_from_spec(spec: dict):
    """Build ``(kind, config)`` from a JSON-style estimator description.

    ``{"kind": "kitaev", "steps": 5, "tolerance": 0.05}``,
    ``{"kind": "fourier", "starting_delay_ns": 360}`` or
    ``{"kind": "classical", "budget": 256, "checkpoints": [16, 64]}``.
    """
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind == "kitaev":
        return kind, KitaevConfig(**spec)
    if kind == "fourier":
        if "tolerances" in spec:
            spec["tolerances"] = tuple(spec["tolerances"])
        return kind, FourierConfig(**spec)
    if kind == "classical":
        budget = spec.pop("budget", None)
        checkpoints = spec.pop("checkpoints", None)
        if spec:
            raise AnalysisError(f"unknown classical options {sorted(spec)}")
        if budget is None or int(budget) < 1:
            raise AnalysisError("classical estimator needs budget >= 1")
        return kind, {"budget": int(budget), "checkpoints": list(checkpoints or [])}
    raise AnalysisError(f"unknown estimator kind {kind!r}")


def run_estimator(kind: str, config, oracle, passport, sigma_n: float) -> EstimationTrace:
    if kind == "kitaev":
        return kitaev_procedure(config, oracle, passport, sigma_n)[1]
    if kind == "fourier":
        return fourier_procedure(config, oracle, passport, sigma_n)[1]
    if kind == "classical":
        return classical_procedure(
            config["budget"], oracle, passport, sigma_n, checkpoints=config["checkpoints"]
        )[1]
    raise AnalysisError(f"unknown estimator kind {kind!r}")


def derive_seed(master: int, flux_index: int, repeat: int) -> int:
    """Independent per-run seed, stable under reordering and parallelism."""
    ss = np.random.SeedSequence([int(master), int(flux_index), int(repeat)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass
class RunSummary:
    """Compact per-run record; enough to rebuild resolution and info-gain curves."""

    flux_index: int
    repeat: int
    seed: int
    status: str
    estimate_index: int
    success: bool | None
    step_estimates: list
    step_calls: list
    step_sensing_time_s: list
    step_phase_time_s: list
    step_effective_phase_time_s: list
    step_info_gain: list

    @classmethod
    def from_trace(cls, trace: EstimationTrace, flux_index: int, repeat: int) -> "RunSummary":
        return cls(
            flux_index=flux_index,
            repeat=repeat,
            seed=trace.seed,
            status=trace.status,
            estimate_index=trace.estimate,
            success=trace.success,
            step_estimates=[s.estimate for s in trace.steps],
            step_calls=[s.ledger["calls"] for s in trace.steps],
            step_sensing_time_s=[s.ledger["sensing_time_s"] for s in trace.steps],
            step_phase_time_s=[s.ledger["phase_time_s"] for s in trace.steps],
            step_effective_phase_time_s=[s.ledger["effective_phase_time_s"] for s in trace.steps],
            step_info_gain=[info_gain(trace, k) for k in range(1, len(trace.steps) + 1)],
        )


@dataclass
class EnsembleResult:
    """Estimates of ``repeats`` runs at each of several true fluxes.

    ``estimates[i, j]`` is the flux estimate of repeat ``j`` at truth
    ``truths[i]``. ``axis`` maps flux indices to flux values and is needed to
    evaluate intermediate steps.
    """

    truths: np.ndarray
    estimates: np.ndarray
    flux_indices: list = field(default_factory=list)
    runs: list = field(default_factory=list)
    estimator: dict = field(default_factory=dict)
    axis: np.ndarray | None = None

    def __post_init__(self):
        self.truths = np.asarray(self.truths, dtype=float)
        self.estimates = np.asarray(self.estimates, dtype=float)
        if self.axis is not None:
            self.axis = np.asarray(self.axis, dtype=float)
        if self.estimates.ndim != 2 or self.estimates.shape[0] != len(self.truths):
            raise AnalysisError("estimates must have shape (n_flux, repeats)")

    @property
    def repeats(self) -> int:
        return self.estimates.shape[1]

    @property
    def n_flux(self) -> int:
        return len(self.truths)

    @property
    def kind(self) -> str | None:
        return self.estimator.get("kind")

    @property
    def success_rate(self) -> float:
        flags = [r.success for r in self.runs if r.success is not None]
        return float(np.mean(flags)) if flags else float("nan")

    @property
    def n_steps(self) -> int:
        return min(len(r.step_calls) for r in self.runs) if self.runs else 0

    @property
    def converged(self) -> bool:
        return all(r.status == "ok" for r in self.runs)

    def step_ensemble(self, step: int) -> "EnsembleResult":
        """Ensemble of the estimates recorded at the end of ``step`` (1-based)."""
        if self.axis is None:
            raise AnalysisError("ensemble has no flux axis")
        est = np.empty_like(self.estimates)
        pos = {idx: i for i, idx in enumerate(self.flux_indices)}
        for r in self.runs:
            est[pos[r.flux_index], r.repeat] = self.axis[r.step_estimates[step - 1]]
        return EnsembleResult(
            self.truths, est, list(self.flux_indices), self.runs, self.estimator, self.axis
        )

    def step_mean(self, step: int, key: str) -> float:
        """Mean over runs of a per-step quantity, e.g. ``"sensing_time_s"``."""
        return float(np.mean([getattr(r, "step_" + key)[step - 1] for r in self.runs]))

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "flux_indices": [int(i) for i in self.flux_indices],
            "truths": [float(t) for t in self.truths],
            "estimates": [[float(e) for e in row] for row in self.estimates],
            "axis": None if self.axis is None else [float(a) for a in self.axis],
            "runs": [asdict(r) for r in self.runs],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EnsembleResult":
        return cls(
            truths=d["truths"],
            estimates=d["estimates"],
            flux_indices=d["flux_indices"],
            runs=[RunSummary(**r) for r in d["runs"]],
            estimator=d["estimator"],
            axis=d.get("axis"),
        )


def aggregated_resolution(e: EnsembleResult) -> float:
    """Ensemble standard deviation of ``estimate - truth``.

    Squared deviations are summed over repeats with ``n - 1`` normalization
    and averaged over the true fluxes.
    """
    n = e.repeats
    if n < 2:
        raise AnalysisError("need at least two repeats per flux")
    dev = e.estimates - e.truths[:, None]
    return float(math.sqrt(np.mean((dev**2).sum(axis=1) / (n - 1))))


def _run_one(job):
    passport, kind, config, flux_index, repeat, master, readout, sigma_n, keep = job
    seed = derive_seed(master, flux_index, repeat)
    model = ReadoutModel(seed=seed, **readout)
    oracle = ReadoutOracle(
        passport.flux_axis[flux_index], passport.sensor_params(), model, passport.distortion
    )
    trace = run_estimator(kind, config, oracle, passport, sigma_n)
    trace.seed = seed
    trace.true_index = flux_index
    return RunSummary.from_trace(trace, flux_index, repeat), (trace if keep else None)


def run_ensemble(
    passport,
    estimator: dict,
    flux_indices=None,
    repeats: int = DEFAULT_REPEATS,
    seed: int = 0,
    readout: dict | None = None,
    sigma_n: float | None = None,
    workers: int = 1,
    keep_traces: bool = False,
):
    """Run one estimator ``repeats`` times at every flux in ``flux_indices``.

    Each run draws its readout noise from :func:`derive_seed`, so the result
    does not depend on ``workers``.

    Parameters
    ----------
    passport : PassportGrid
        Shared likelihood table; its sensor and distortion also drive the
        simulated readout.
    estimator : dict
        Description accepted by :func:`estimator_from_spec`.
    readout : dict, optional
        Keyword arguments of :class:`ReadoutModel` other than ``seed``.
    sigma_n : float, optional
        Likelihood width; defaults to ``sqrt(3.5 / shots)``.
    keep_traces : bool
        Also return the full traces, ordered like ``result.runs``.

    Returns
    -------
    EnsembleResult, or ``(EnsembleResult, traces)`` when ``keep_traces``.
    """
    kind, config = estimator_from_spec(estimator)
    if repeats < 1:
        raise AnalysisError("repeats must be positive")
    if flux_indices is None:
        flux_indices = range(passport.n_flux)
    flux_indices = [int(i) for i in flux_indices]
    if any(not 0 <= i < passport.n_flux for i in flux_indices):
        raise AnalysisError("flux index outside the passport")
    readout = dict(readout or {})
    if sigma_n is None:
        sigma_n = math.sqrt(SIGMA1_SQ / readout.get("shots", SHOTS))
    jobs = [
        (passport, kind, config, i, r, seed, readout, sigma_n, keep_traces)
        for i in flux_indices
        for r in range(repeats)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(_run_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        out = [_run_one(j) for j in jobs]
    out.sort(key=lambda o: (o[0].flux_index, o[0].repeat))
    runs = [o[0] for o in out]
    axis = passport.flux_axis
    est = np.array([axis[r.estimate_index] for r in runs]).reshape(len(flux_indices), repeats)
    result = EnsembleResult(axis[flux_indices], est, flux_indices, runs, dict(estimator), axis)
    if keep_traces:
        return result, [o[1] for o in out]
    return result


def resolution_curve(ensembles, step=None, label: str = "") -> ScalingCurve:
    """Aggregated resolution against mean sensing time (s).

    Every ensemble contributes the state after ``step`` (default: its last
    step), e.g. one point per tolerance of a sweep. ``step="all"`` adds a
    point for every recorded step or classical checkpoint.
    """
    if isinstance(ensembles, EnsembleResult):
        ensembles = [ensembles]
    xs, ys = [], []
    for e in ensembles:
        steps = range(1, e.n_steps + 1) if step == "all" else [step or e.n_steps]
        for k in steps:
            sub = e if k == e.n_steps and e.axis is None else e.step_ensemble(k)
            xs.append(e.step_mean(k, "sensing_time_s"))
            ys.append(aggregated_resolution(sub))
    return ScalingCurve.from_points(xs, ys, label)


def default_info_steps(kind: str, n_steps: int) -> list:
    """Steps entering the information-gain fit of one procedure.

    Kitaev skips its zero-delay first step; Fourier keeps its final two
    steps, where the posterior has a single peak; classical keeps all.
    """
    if kind == "kitaev":
        return list(range(2, n_steps + 1))
    if kind == "fourier":
        return list(range(max(1, n_steps - 1), n_steps + 1))
    return list(range(1, n_steps + 1))


def info_gain_curve(ensembles, steps=None, label: str = "") -> ScalingCurve:
    """Information gain against phase accumulation time, averaged over runs.

    Each point is ``(mean effective phase time, 2 ** mean gain)`` for one
    step, so that the fitted exponent is the number of bits learned per
    doubling of the phase time. ``steps="default"`` applies
    :func:`default_info_steps`; ``None`` uses every step.
    """
    if isinstance(ensembles, EnsembleResult):
        ensembles = [ensembles]
    xs, ys = [], []
    for e in ensembles:
        if steps == "default":
            chosen = default_info_steps(e.kind, e.n_steps)
        else:
            chosen = steps or range(1, e.n_steps + 1)
        for k in chosen:
            xs.append(e.step_mean(k, "effective_phase_time_s"))
            ys.append(2.0 ** e.step_mean(k, "info_gain"))
    return ScalingCurve.from_points(xs, ys, label)


# --------------------------------------------------------------------------
# exports


def write_curve_csv(curve: ScalingCurve, path, fit: ScalingFit | None = None) -> None:
    """CSV with columns x, y, y_fit and the fit parameters repeated per row."""
    if fit is None and len(curve.x) >= 3:
        fit = curve.fit
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "y_fit", "exponent", "ci_low", "ci_high"])
        for x, y in zip(curve.x, curve.y):
            if fit is None:
                w.writerow([repr(float(x)), repr(float(y)), "", "", "", ""])
            else:
                w.writerow(
                    [
                        repr(float(x)),
                        repr(float(y)),
                        repr(float(fit.predict(x))),
                        repr(fit.exponent),
                        repr(fit.ci_low),
                        repr(fit.ci_high),
                    ]
                )


def write_json(data: dict, path) -> None:
    Path(path).write_text(json.dumps(data, sort_keys=True, indent=1, allow_nan=False) + "\n")


def sensitivity_summary(params: SensorParams, t_s: float = 1.0) -> dict:
    """Closed-form figures of merit for a sensor."""
    tau = optimal_delay(params)
    a_q = quantum_sensitivity(params, tau, t_s)
    a_c = classical_sensitivity(params, t_s)
    return {
        "optimal_delay_ns": tau,
        "quantum_sensitivity": a_q,
        "classical_sensitivity": a_c,
        "quantum_advantage": a_c / a_q,
    }
