import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from transmon_pe.passport import (
    N_FLUX,
    N_TAU,
    ColumnFit,
    DistortionConfig,
    FitError,
    PassportFormatError,
    PassportGrid,
    PassportShapeError,
    column_voltages,
    fit_column,
    fit_linear_parameters,
    generate_passport,
    ideal_passport,
    load_passport,
    save_passport,
)
from transmon_pe.physics import TWO_PI, calibration_flux, detuning, ramsey_probability


def test_default_dimensions(ideal_grid):
    assert ideal_grid.values.shape == (N_TAU, N_FLUX) == (241, 161)
    assert ideal_grid.delay_axis[0] == 0.0
    assert ideal_grid.delay_axis[-1] == 480.0
    assert np.all(np.diff(ideal_grid.flux_axis) > 0)


def test_ideal_passport_equals_ramsey_surface(params, ideal_grid):
    tau = ideal_grid.delay_axis[:, None]
    expected = ramsey_probability(tau, ideal_grid.flux_axis[None, :], params)
    assert np.max(np.abs(ideal_grid.values - expected)) <= 1e-12


def test_zero_distortion_with_sampling_off_is_ideal(params, ideal_grid):
    grid = generate_passport(params, DistortionConfig.ideal(), seed=3)
    np.testing.assert_array_equal(grid.values, ideal_grid.values)


def test_generation_is_deterministic(params):
    a = generate_passport(params, seed=11, n_tau=40)
    b = generate_passport(params, seed=11, n_tau=40)
    c = generate_passport(params, seed=12, n_tau=40)
    assert a == b
    np.testing.assert_array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)


def test_gain_is_one_at_calibration_and_peaks_at_edge(real_grid):
    d = real_grid.distortion
    assert d.gain(calibration_flux()) == 1.0
    assert float(d.gain(real_grid.flux_axis[-1])) == pytest.approx(1.15, abs=1e-12)
    # the bright fringes near the far edge exceed one
    assert 1.0 < real_grid.values.max() <= 1.2
    assert np.argmax(real_grid.values.max(axis=0)) > 120


def test_sampling_noise_scale(params):
    d = DistortionConfig(gain_slope=0.0, wander_amplitude=0.0, residual_phase_std=0.0)
    noisy = generate_passport(params, d, seed=5, n_tau=60)
    clean = ideal_passport(params, n_tau=60)
    resid = noisy.values - clean.values
    p = clean.values
    expected = np.sqrt((3.5 + p * (1 - p)) / 65000)
    assert np.std(resid / expected) == pytest.approx(1.0, rel=0.05)


def test_generate_rejects_bad_axes(params):
    with pytest.raises(ValueError):
        generate_passport(params, phi_step=0.0)
    with pytest.raises(ValueError):
        generate_passport(params, tau_step_ns=-2.0)


def test_distortion_rejects_negative_amplitudes():
    with pytest.raises(ValueError):
        DistortionConfig(wander_amplitude=-1e-5)
    with pytest.raises(ValueError):
        DistortionConfig.from_dict({"gain": 1.0})


def test_round_trip(tmp_path, real_grid):
    path = tmp_path / "p.json"
    save_passport(real_grid, path)
    loaded = load_passport(path)
    assert loaded == real_grid
    assert loaded.distortion == real_grid.distortion
    assert loaded.sensor_params() == real_grid.sensor_params()
    header = json.loads(path.read_text())
    for key in ("phi1", "phi_step", "n_flux", "tau_step_ns", "n_tau", "n_pass", "seed", "distortion"):
        assert key in header


@settings(max_examples=30, deadline=None)
@given(
    hnp.arrays(
        float,
        hnp.array_shapes(min_dims=2, max_dims=2, min_side=1, max_side=6),
        elements=st.floats(-10, 10, allow_nan=False),
    ),
    st.floats(0, 1),
    st.floats(1e-9, 1),
    st.one_of(st.none(), st.integers(1, 10**6)),
)
def test_round_trip_random_grids(tmp_path_factory, values, phi1, step, n_pass):
    grid = PassportGrid(phi1, step, 2.0, values, n_pass=n_pass, seed=None, distortion=None)
    path = tmp_path_factory.mktemp("rt") / "g.json"
    save_passport(grid, path)
    assert load_passport(path) == grid


def test_truncated_file_is_a_format_error(tmp_path, small_grid):
    path = tmp_path / "p.json"
    save_passport(small_grid, path)
    text = path.read_text()
    path.write_text(text[: len(text) // 2])
    with pytest.raises(PassportFormatError):
        load_passport(path)


def test_missing_field_is_named(tmp_path, small_grid):
    path = tmp_path / "p.json"
    save_passport(small_grid, path)
    doc = json.loads(path.read_text())
    del doc["phi_step"]
    path.write_text(json.dumps(doc))
    with pytest.raises(PassportFormatError, match="phi_step"):
        load_passport(path)


def test_column_count_mismatch_is_structural(tmp_path, small_grid):
    path = tmp_path / "p.json"
    save_passport(small_grid, path)
    doc = json.loads(path.read_text())
    doc["values"] = [row[:-1] for row in doc["values"]]
    path.write_text(json.dumps(doc))
    with pytest.raises(PassportShapeError):
        load_passport(path)


def test_fit_recovers_synthetic_parameters():
    tau = 2.0 * np.arange(241)
    truth = ColumnFit("exponential", 0.48, 0.51, TWO_PI * 14e6, 0.7, 0.0, decay_rate=1 / 260)
    grid = PassportGrid(0.1, 1e-5, 2.0, truth.evaluate(tau)[:, None], n_pass=None)
    fit = fit_column(grid, 0)
    for name in ("alpha", "beta", "omega", "phase", "decay_rate"):
        assert getattr(fit, name) == pytest.approx(getattr(truth, name), rel=1e-6)
    assert fit.residual_norm < 1e-8


def test_fit_canonicalizes_sign_and_phase():
    tau = 2.0 * np.arange(241)
    y = 0.5 - 0.4 * np.exp(-tau / 200) * np.cos(TWO_PI * 10e6 * tau * 1e-9 + 0.3)
    fit = fit_column(PassportGrid(0.1, 1e-5, 2.0, y[:, None], n_pass=None), 0)
    assert fit.beta > 0
    assert -np.pi <= fit.phase < np.pi
    assert fit.phase == pytest.approx(0.3 - np.pi, abs=1e-6)


def test_fit_ideal_passport_columns(params, ideal_grid):
    for i in (0, 80, 160):
        fit = fit_column(ideal_grid, i)
        assert 1 / fit.decay_rate == pytest.approx(260, abs=30)
        assert fit.omega == pytest.approx(abs(detuning(ideal_grid.flux_axis[i], params)), rel=0.02)


def test_fit_gaussian_model(ideal_grid):
    fit = fit_column(ideal_grid, 40, "gaussian")
    assert fit.beta > 0 and fit.t1_ns > 0 and fit.t_phi_ns > 0
    assert np.isfinite(fit.residual_norm)


def test_fit_distorted_column_is_close(real_grid):
    fit = fit_column(real_grid, 80)
    assert 1 / fit.decay_rate == pytest.approx(260, abs=30)


def test_constant_column_raises():
    grid = PassportGrid(0.1, 1e-5, 2.0, np.full((50, 1), 0.5), n_pass=None)
    with pytest.raises(FitError):
        fit_column(grid, 0)


def test_linear_parameters_of_ideal_passport(params, ideal_grid):
    idx = list(range(0, 161, 10))
    fits = [fit_column(ideal_grid, i) for i in idx]
    lin = fit_linear_parameters(fits, column_voltages(ideal_grid, params)[idx])
    assert lin["omega"].slope / TWO_PI / 1e6 == pytest.approx(423, rel=0.05)
    assert lin["tau0_ns"] == pytest.approx(31.6, rel=0.10)


def test_linear_parameters_identical_columns():
    fit = ColumnFit("exponential", 0.5, 0.5, 1e8, 0.2, 0.0, decay_rate=0.004)
    lin = fit_linear_parameters([fit, fit, fit], [0.1, 0.2, 0.3])
    for name in ("omega", "phase", "alpha", "beta"):
        scale = abs(getattr(fit, name))
        assert abs(lin[name].slope) <= 1e-12 * scale
    with pytest.raises(ValueError):
        fit_linear_parameters([fit, fit], [0.5, 0.5])


def test_delay_index_lookup(ideal_grid):
    assert ideal_grid.delay_index(360.0) == 180
    with pytest.raises(ValueError):
        ideal_grid.delay_index(361.0)
    with pytest.raises(ValueError):
        ideal_grid.delay_index(2000.0)
