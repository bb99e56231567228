"""One Kitaev run on the distorted passport, printed step by step.

    python demos/single_run.py [flux_index]
"""

import sys

from transmon_pe.analysis import info_gain
from transmon_pe.estimators import KitaevConfig, contiguous_runs, kitaev_procedure
from transmon_pe.passport import generate_passport
from transmon_pe.physics import SensorParams
from transmon_pe.readout import ReadoutModel, ReadoutOracle


def main(flux_index=100):
    grid = generate_passport(SensorParams(), seed=1)
    oracle = ReadoutOracle(grid.flux_axis[flux_index], grid.sensor_params(), ReadoutModel(seed=7), grid.distortion)
    est, trace = kitaev_procedure(KitaevConfig(steps=5, tolerance=0.01), oracle, grid)

    for k, rec in enumerate(trace.steps, 1):
        runs = contiguous_runs(rec.survivors)
        print(f"step {k}: tau = {rec.delay_ns:5.0f} ns, {rec.calls:4d} calls, "
              f"{len(rec.survivors):3d} survivors in {len(runs)} interval(s), "
              f"gain {info_gain(trace, k):.2f} bits")
    print(f"status {trace.status}: estimate {est}, truth {flux_index}")
    print(f"total sensing time {oracle.ledger.snapshot()['sensing_time_s'] * 1e3:.2f} ms")


if __name__ == "__main__":
    main(*(int(a) for a in sys.argv[1:2]))
