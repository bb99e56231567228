"""Generate a distorted passport and recover sensor parameters from it.

Fits a damped cosine to every eighth column, then regresses frequency and
phase against bias voltage to get the transfer slope and pulse duration.

    python demos/passport_and_fit.py
"""

import numpy as np

from transmon_pe.passport import column_voltages, fit_column, fit_linear_parameters, generate_passport
from transmon_pe.physics import SensorParams


def main():
    params = SensorParams()
    grid = generate_passport(params, seed=1)
    print(f"passport: {grid.n_tau} delays x {grid.n_flux} flux points")

    cols = range(0, grid.n_flux, 8)
    fits = [fit_column(grid, j) for j in cols]
    volts = column_voltages(grid, params)[list(cols)]
    for f in fits[::4]:
        print(f"  column {f.flux_index:3d}: T2 ~ {1 / f.decay_rate:6.1f} ns, "
              f"f = {f.omega / (2 * np.pi) / 1e6:6.2f} MHz")

    lin = fit_linear_parameters(fits, volts)
    print(f"d omega / dV = {abs(lin['omega'].slope) / (2 * np.pi) / 1e6:.0f} MHz/V")
    print(f"effective pulse duration = {lin['tau0_ns']:.1f} ns")


if __name__ == "__main__":
    main()
