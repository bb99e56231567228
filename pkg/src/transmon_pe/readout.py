"""
Stochastic readout of the simulated sensor and bookkeeping of spent time.
"""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .passport import DistortionConfig
from .physics import SensorParams, ramsey_probability

SHOTS = 32
SIGMA1_SQ = 3.5


@dataclass
class ReadoutModel:
    """Noise model of one averaged readout ``h_N``.

    Each of the ``shots`` single readouts is ``h = g s + xi`` with a projected
    qubit state ``s`` (Bernoulli) and Gaussian amplifier noise ``xi`` of
    variance ``sigma1_sq``; ``g`` is the readout gain at the true flux.
    Setting ``include_projection_variance=False`` replaces ``s`` by its mean.
    """

    sigma1_sq: float = SIGMA1_SQ
    shots: int = SHOTS
    seed: int | None = None
    include_projection_variance: bool = True
    rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if self.sigma1_sq < 0:
            raise ValueError("sigma1_sq must be nonnegative")
        if self.shots < 1:
            raise ValueError("shots must be at least 1")
        self.rng = np.random.default_rng(self.seed)

    @property
    def likelihood_sigma(self) -> float:
        """sigma_N = sqrt(sigma1^2 / N) of the Gaussian readout likelihood."""
        return math.sqrt(self.sigma1_sq / self.shots)


def _exact(x) -> Fraction:
    return Fraction(x) if not isinstance(x, Fraction) else x


class BudgetLedger:
    """Counts subroutine calls and the time they consume.

    All totals are accumulated as exact fractions (nanoseconds), so

    * ``sensing_time_ns == shots * t_rep_ns * calls``
    * ``phase_time_ns == shots * sum(tau_k * m_k)``
    * ``effective_phase_time_ns == shots * sum((tau_k + tau0) * m_k)``

    hold exactly. The effective phase time counts the pulse duration, so a
    zero-delay Ramsey sequence still accumulates ``tau0`` of phase.
    """

    def __init__(self, shots: int, t_rep_ns: float, tau0_ns: float = 0.0):
        self.shots = int(shots)
        self.t_rep_ns = _exact(t_rep_ns)
        self.tau0_ns = _exact(tau0_ns)
        self.calls = 0
        self.delay_counts: Counter = Counter()
        self._delay_sum = Fraction(0)
        self._exact_cache: dict = {}

    @classmethod
    def for_sensor(cls, params: SensorParams, shots: int = SHOTS) -> "BudgetLedger":
        return cls(shots, params.t_rep_ns, params.tau0_ns)

    def record(self, tau_ns: float, calls: int = 1) -> None:
        tau = self._exact_cache.get(tau_ns)
        if tau is None:
            tau = self._exact_cache[tau_ns] = _exact(tau_ns)
        self.calls += calls
        self.delay_counts[tau] += calls
        self._delay_sum += tau * calls

    @property
    def sensing_time_ns(self) -> Fraction:
        return self.shots * self.t_rep_ns * self.calls

    @property
    def phase_time_ns(self) -> Fraction:
        return self.shots * self._delay_sum

    @property
    def effective_phase_time_ns(self) -> Fraction:
        return self.shots * (self._delay_sum + self.tau0_ns * self.calls)

    def check(self) -> bool:
        """True if the running totals equal their recomputation from counters."""
        n = self.shots
        return (
            self.calls == sum(self.delay_counts.values())
            and self.sensing_time_ns == n * self.t_rep_ns * sum(self.delay_counts.values())
            and self.phase_time_ns == n * sum(t * m for t, m in self.delay_counts.items())
            and self.effective_phase_time_ns
            == n * sum((t + self.tau0_ns) * m for t, m in self.delay_counts.items())
        )

    def snapshot(self) -> dict:
        return {
            "calls": self.calls,
            "sensing_time_s": float(self.sensing_time_ns) * 1e-9,
            "phase_time_s": float(self.phase_time_ns) * 1e-9,
            "effective_phase_time_s": float(self.effective_phase_time_ns) * 1e-9,
            "delay_counts": {repr(float(t)): m for t, m in sorted(self.delay_counts.items())},
        }

    def exact_state(self) -> dict:
        """Counters and totals as exact rational strings (for trace files)."""
        return {
            "shots": self.shots,
            "t_rep_ns": str(self.t_rep_ns),
            "tau0_ns": str(self.tau0_ns),
            "calls": self.calls,
            "delay_counts": [[str(t), m] for t, m in sorted(self.delay_counts.items())],
            "sensing_time_ns": str(self.sensing_time_ns),
            "phase_time_ns": str(self.phase_time_ns),
            "effective_phase_time_ns": str(self.effective_phase_time_ns),
        }

    @classmethod
    def from_exact_state(cls, state: dict) -> "BudgetLedger":
        """Rebuild from counters and verify the stored totals against them."""
        led = cls(state["shots"], Fraction(state["t_rep_ns"]), Fraction(state["tau0_ns"]))
        for t, m in state["delay_counts"]:
            led.record(Fraction(t), m)
        if led.calls != state["calls"] or any(
            getattr(led, key) != Fraction(state[key])
            for key in ("sensing_time_ns", "phase_time_ns", "effective_phase_time_ns")
        ):
            raise ValueError("ledger totals disagree with the per-delay counts")
        return led


def get_outcome(
    tau_ns: float,
    flux: float,
    model: ReadoutModel,
    params: SensorParams,
    ledger: BudgetLedger | None = None,
    distortion: DistortionConfig | None = None,
) -> float:
    """Simulate one call of the readout: ``shots`` Ramsey runs, averaged.

    The mean of the returned ``h_N`` is ``gain(flux) * P(tau, flux)``; its
    variance is ``(sigma1^2 + gain^2 P (1 - P)) / N``.
    """
    p = ramsey_probability(tau_ns, flux, params)
    gain = 1.0 if distortion is None else float(distortion.gain(flux))
    n = model.shots
    rng = model.rng
    if model.include_projection_variance:
        projected = rng.binomial(n, min(max(p, 0.0), 1.0)) / n
    else:
        projected = p
    h = gain * projected
    if model.sigma1_sq > 0:
        h += rng.normal(0.0, math.sqrt(model.sigma1_sq / n))
    if ledger is not None:
        ledger.record(tau_ns)
    return float(h)


class ReadoutOracle:
    """Readout bound to a hidden true flux; call it with a delay in ns.

    Optionally keeps an outcome log that :meth:`write_log` dumps as CSV.
    """

    def __init__(
        self,
        flux: float,
        params: SensorParams,
        model: ReadoutModel | None = None,
        distortion: DistortionConfig | None = None,
        keep_log: bool = False,
    ):
        self.flux = float(flux)
        self.params = params
        self.model = model if model is not None else ReadoutModel()
        self.distortion = distortion
        self.ledger = BudgetLedger.for_sensor(params, self.model.shots)
        self.log: list | None = [] if keep_log else None

    def __call__(self, tau_ns: float) -> float:
        h = get_outcome(tau_ns, self.flux, self.model, self.params, self.ledger, self.distortion)
        if self.log is not None:
            s = self.ledger.snapshot()
            self.log.append(
                (
                    len(self.log),
                    float(tau_ns),
                    h,
                    self.ledger.calls,
                    s["sensing_time_s"] * 1e6,
                    s["phase_time_s"] * 1e6,
                )
            )
        return h

    def write_log(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "tau_ns", "h_N", "m", "t_us", "tau_phi_us"])
            for row in self.log or []:
                writer.writerow([row[0], repr(row[1]), repr(row[2]), row[3], repr(row[4]), repr(row[5])])
