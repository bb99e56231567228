import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from transmon_pe import analysis as an
from transmon_pe.estimators import EstimationTrace, StepRecord
from transmon_pe.physics import OneOverFNoise, SensorParams, WhiteNoise

rates = st.floats(1e-5, 1e-1)
t1s = st.floats(20.0, 1e5)


# -- sensitivities -----------------------------------------------------------------


def test_classical_sensitivity_unit_count(params):
    a = an.classical_sensitivity(params, t_s=params.t_rep_ns * 1e-9)
    assert a == pytest.approx(1 / (abs(params.flux_slope) * params.tau0_ns * 1e-9), rel=1e-12)


@given(st.floats(1e-6, 1e3))
def test_sensitivities_scale_as_inverse_sqrt_time(t):
    p = SensorParams()
    for f in (an.classical_sensitivity, lambda q, t_s: an.quantum_sensitivity(q, 520.0, t_s)):
        assert f(p, t_s=4 * t) == pytest.approx(f(p, t_s=t) / 2, rel=1e-12)
        assert f(p, t_s=t) * math.sqrt(t) == pytest.approx(f(p, t_s=1.0), rel=1e-12)


def test_e_fold_identity(params):
    q = an.quantum_sensitivity(params, math.e * params.tau0_ns)
    assert q == pytest.approx(an.classical_sensitivity(params), rel=1e-12)


def test_advantage_factor(params):
    ratio = an.classical_sensitivity(params) / an.quantum_sensitivity(params, 520.0)
    assert ratio == pytest.approx(6.0, rel=0.15)
    summary = an.sensitivity_summary(params)
    assert summary["optimal_delay_ns"] == pytest.approx(params.t2_ns)


def test_n_shot_resolution(params):
    tau = an.optimal_delay(params)
    n = round(1.0 / (params.t_rep_ns * 1e-9))
    a = an.flux_resolution_n_shots(params, tau, n)
    assert a == pytest.approx(an.quantum_sensitivity(params, tau, t_s=n * params.t_rep_ns * 1e-9), rel=1e-12)
    assert an.flux_resolution_n_shots(params, tau, 4 * n) == pytest.approx(a / 2, rel=1e-12)
    grid = np.linspace(10, 1500, 3000)
    best = min(an.flux_resolution_n_shots(params, t, n) for t in grid)
    assert best == pytest.approx(a, rel=1e-4)
    with pytest.raises(an.AnalysisError):
        an.flux_resolution_n_shots(params, 0.0, 1)


# -- optimal delay -------------------------------------------------------------------


def test_optimal_delay_limits():
    relax_only = SensorParams(t1_ns=300.0, dephasing=WhiteNoise(1e-12))
    assert an.optimal_delay(relax_only) == pytest.approx(600.0, rel=1e-6)
    gauss = SensorParams(t1_ns=1e12, dephasing=OneOverFNoise(1 / 420))
    assert an.optimal_delay(gauss) == pytest.approx(420 / math.sqrt(2), rel=1e-6)


@settings(max_examples=40)
@given(rates, t1s, st.booleans())
def test_optimal_delay_numeric_matches_closed_form(rate, t1, white):
    model = WhiteNoise(rate) if white else OneOverFNoise(rate)
    p = SensorParams(t1_ns=t1, dephasing=model, tau0_ns=0.0)
    closed = an.optimal_delay(p)
    assert an.optimal_delay(p, "numeric") == pytest.approx(closed, rel=1e-9)


def test_optimal_delay_unknown_method(params):
    with pytest.raises(an.AnalysisError):
        an.optimal_delay(params, "guess")


# -- noise conversions -----------------------------------------------------------------


def test_white_spectrum(params):
    s = an.rate_spectrum_conversion(1 / 520, params, "white")
    assert math.sqrt(s) == pytest.approx(5.9e-8, rel=0.10)
    assert an.rate_spectrum_conversion(0.0, params, "white") == 0.0


def test_one_over_f_spectrum_order_of_magnitude(params):
    s = an.rate_spectrum_conversion(1 / 420, params, "1/f")
    ratio = math.sqrt(s) / 1.9e-5
    assert 1 / 3 <= ratio <= 3


@given(st.floats(1e-20, 1e-6), st.sampled_from(["white", "1/f"]))
def test_spectrum_round_trip(s, model):
    p = SensorParams()
    rate = an.spectrum_rate_conversion(s, p, model)
    assert an.rate_spectrum_conversion(rate, p, model) == pytest.approx(s, rel=1e-12)


def test_flux_wander():
    assert an.low_freq_flux_wander(1.9e-5, 0.05, 520e-9) == pytest.approx(6.4e-5, rel=0.10)
    assert an.low_freq_flux_wander(2e-5, math.e * 1e-6, 1e-6) == pytest.approx(2e-5, rel=1e-12)
    assert an.low_freq_flux_wander(2e-5, 1e-6 * (1 + 1e-12), 1e-6) < 1e-10
    with pytest.raises(an.AnalysisError):
        an.low_freq_flux_wander(2e-5, 1e-6, 1e-6)


# -- fits ----------------------------------------------------------------------


@given(st.floats(-2, 2), st.floats(1e-3, 1e3))
def test_power_law_recovered(alpha, c):
    x = np.geomspace(1e-3, 10, 12)
    fit = an.fit_scaling_exponent(x, c * x**alpha)
    assert fit.exponent == pytest.approx(alpha, abs=1e-6)
    assert fit.ci_low <= fit.exponent <= fit.ci_high


def test_fit_interval_matches_reference():
    rng = np.random.default_rng(1)
    x = np.geomspace(1, 100, 10)
    y = 3 * x**0.7 * np.exp(rng.normal(0, 0.1, 10))
    fit = an.fit_scaling_exponent(x, y)
    lx, ly = np.log(x), np.log(y)
    design = np.column_stack([lx, np.ones_like(lx)])
    coef, res, *_ = np.linalg.lstsq(design, ly, rcond=None)
    sigma2 = res[0] / (len(x) - 2)
    se = math.sqrt(sigma2 / np.sum((lx - lx.mean()) ** 2))
    assert fit.exponent == pytest.approx(coef[0], rel=1e-12)
    assert fit.stderr == pytest.approx(se, rel=1e-9)
    assert fit.ci_high - fit.exponent == pytest.approx(2.306004135 * se, rel=1e-8)


def test_fit_rejects_bad_curves():
    with pytest.raises(an.AnalysisError):
        an.fit_scaling_exponent([1, 2], [1, 2])
    with pytest.raises(an.AnalysisError):
        an.fit_scaling_exponent([1, 2, 3], [1, 0, 2])
    with pytest.raises(an.AnalysisError):
        an.ScalingCurve([1, 1, 2], [1, 2, 3])


def test_curve_window_and_csv(tmp_path):
    curve = an.ScalingCurve.from_points([4, 1, 2, 8], [0.5, 2, 1, 0.25])
    assert curve.x.tolist() == [1, 2, 4, 8]
    assert curve.fit.exponent == pytest.approx(-1.0)
    assert curve.window(2, 4).x.tolist() == [2, 4]
    path = tmp_path / "c.csv"
    an.write_curve_csv(curve, path)
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["x", "y", "y_fit", "exponent", "ci_low", "ci_high"]
    assert float(rows[2]["y_fit"]) == pytest.approx(0.5)


# -- information gain --------------------------------------------------------------


def _trace_with(posterior, survivors, n=161):
    rec = StepRecord(1, 0, 0.0, 1, np.asarray(survivors), np.asarray(posterior, dtype=float), 0, {})
    return EstimationTrace("kitaev", {}, n, steps=[rec])


def test_info_gain_to_point_mass():
    p = np.zeros(161)
    p[12] = 1.0
    assert an.info_gain(_trace_with(p, [12])) == pytest.approx(math.log2(161))
    assert an.info_gain(EstimationTrace("kitaev", {}, 161)) == 0.0


@given(st.integers(2, 161), st.integers(0, 2**32 - 1))
def test_info_gain_nonnegative_after_restriction(n, seed):
    rng = np.random.default_rng(seed)
    keep = rng.choice(n, size=rng.integers(1, n + 1), replace=False)
    p = np.full(n, 1.0 / n)
    assert an.info_gain(_trace_with(p, keep, n)) >= -1e-12


# -- ensembles -------------------------------------------------------------------


def _ensemble(truths, estimates):
    return an.EnsembleResult(np.asarray(truths), np.asarray(estimates))


def test_aggregated_resolution_cases():
    phi, d = 0.138, 3e-5
    assert an.aggregated_resolution(_ensemble([phi], [[phi + d, phi - d]])) == pytest.approx(d * math.sqrt(2))
    assert an.aggregated_resolution(_ensemble([0.1, 0.2], [[0.1] * 3, [0.2] * 3])) == 0.0
    with pytest.raises(an.AnalysisError):
        an.aggregated_resolution(_ensemble([0.1], [[0.1]]))


def test_aggregated_resolution_brute_force():
    rng = np.random.default_rng(3)
    truths = rng.uniform(0.13, 0.14, 7)
    est = truths[:, None] + rng.normal(0, 1e-4, (7, 5))
    total = 0.0
    for i in range(7):
        total += sum((est[i, j] - truths[i]) ** 2 for j in range(5)) / 4
    expected = math.sqrt(total / 7)
    assert an.aggregated_resolution(_ensemble(truths, est)) == pytest.approx(expected, rel=1e-12)
    shuffled = np.array([rng.permutation(row) for row in est])
    assert an.aggregated_resolution(_ensemble(truths, shuffled)) == pytest.approx(expected, rel=1e-12)


def test_derive_seed_is_stable():
    assert an.derive_seed(0, 3, 4) == an.derive_seed(0, 3, 4)
    assert len({an.derive_seed(0, i, r) for i in range(10) for r in range(10)}) == 100


def test_estimator_spec_parsing():
    kind, cfg = an.estimator_from_spec({"kind": "fourier", "tolerances": [0.1] * 5})
    assert kind == "fourier" and cfg.tolerances == (0.1,) * 5
    with pytest.raises(an.AnalysisError):
        an.estimator_from_spec({"kind": "quantum"})
    with pytest.raises(an.AnalysisError):
        an.estimator_from_spec({"kind": "classical"})


def test_run_ensemble_structure(small_grid):
    spec = {"kind": "kitaev", "steps": 4, "tolerance": 0.05}
    e, traces = an.run_ensemble(small_grid, spec, [2, 20, 38], repeats=4, seed=1, keep_traces=True)
    assert e.estimates.shape == (3, 4) and e.repeats == 4 and e.n_flux == 3
    assert e.n_steps == 4 and e.kind == "kitaev"
    assert [t.seed for t in traces] == [r.seed for r in e.runs]
    assert all(np.all(np.diff(r.step_calls) >= 0) for r in e.runs)
    first = e.step_ensemble(1)
    assert first.estimates.shape == e.estimates.shape
    again = an.EnsembleResult.from_dict(json.loads(json.dumps(e.to_dict())))
    assert an.aggregated_resolution(again) == an.aggregated_resolution(e)


def test_parallel_equals_serial(small_grid):
    spec = {"kind": "fourier", "steps": 4, "starting_delay_ns": 200}
    serial = an.run_ensemble(small_grid, spec, range(0, 41, 8), repeats=3, seed=4)
    parallel = an.run_ensemble(small_grid, spec, range(0, 41, 8), repeats=3, seed=4, workers=2)
    assert json.dumps(serial.to_dict()) == json.dumps(parallel.to_dict())


def test_curves_from_ensembles(small_grid):
    spec = {"kind": "classical", "budget": 64, "checkpoints": [4, 16]}
    e = an.run_ensemble(small_grid, spec, range(0, 41, 4), repeats=3, seed=2)
    res = an.resolution_curve(e, step="all")
    assert len(res.x) == 3
    assert res.x[0] == pytest.approx(4 * 32 * 6546e-9)
    info = an.info_gain_curve(e)
    assert np.all(np.diff(info.y) > 0)
    assert an.default_info_steps("kitaev", 5) == [2, 3, 4, 5]
    assert an.default_info_steps("fourier", 5) == [4, 5]
    assert an.default_info_steps("classical", 3) == [1, 2, 3]


def test_kitaev_info_gain_exponent_in_band(small_grid):
    spec = {"kind": "kitaev", "steps": 5, "tolerance": 0.01}
    e = an.run_ensemble(small_grid, spec, range(0, 41, 2), repeats=3, seed=6)
    alpha = an.info_gain_curve(e, steps="default").fit.exponent
    assert 0.5 < alpha <= 1.0
