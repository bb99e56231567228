"""Resolution against sensing time for the classical and Kitaev procedures.

A reduced ensemble (every eighth flux point, three repeats) keeps the run
under a minute; the exponents are correspondingly rough.

    python demos/scaling_curves.py
"""

from transmon_pe.analysis import resolution_curve, run_ensemble
from transmon_pe.estimators import KITAEV_TOLERANCES
from transmon_pe.passport import generate_passport
from transmon_pe.physics import SensorParams

FLUX = range(0, 161, 8)
REPEATS = 3


def main():
    grid = generate_passport(SensorParams(), seed=1)

    classical = run_ensemble(
        grid, {"kind": "classical", "budget": 1024, "checkpoints": [16, 32, 64, 128, 256, 512]},
        FLUX, REPEATS, seed=11,
    )
    curve = resolution_curve(classical, step="all", label="classical")
    print(f"classical: exponent {curve.fit.exponent:+.2f}")

    kitaev = [
        run_ensemble(grid, {"kind": "kitaev", "steps": 5, "tolerance": eps}, FLUX, REPEATS, seed=11)
        for eps in KITAEV_TOLERANCES
    ]
    curve = resolution_curve(kitaev, label="kitaev")
    print(f"kitaev:    exponent {curve.fit.exponent:+.2f}")
    for t, d in zip(curve.x, curve.y):
        print(f"  t = {t * 1e3:7.2f} ms   dPhi = {d:.2e}")


if __name__ == "__main__":
    main()
