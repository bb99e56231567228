"""
Adaptive flux estimation on the passport grid.

Three procedures share the Bayesian learning subroutine:

* :func:`kitaev_procedure` halves the flux interval step by step, starting at
  zero delay and choosing each next delay where the surviving passport
  columns spread the most.
* :func:`fourier_procedure` starts at a long delay, which leaves several
  aliased intervals, then discriminates between groups of them at shorter
  delays.
* :func:`classical_procedure` measures at zero delay only.

Every procedure talks to an *oracle*: a callable ``oracle(tau_ns) -> h_N``
with a ``ledger`` attribute (see :class:`transmon_pe.readout.ReadoutOracle`).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .inference import (
    FluxPosterior,
    half_partition,
    point_estimate,
    shannon_entropy,
    update_at_delay,
)
from .readout import SHOTS, SIGMA1_SQ

TRACE_SCHEMA_VERSION = 1
SIGMA_N = math.sqrt(SIGMA1_SQ / SHOTS)
MAX_CALLS_PER_STEP = 10_000
# default tolerance sweep for Kitaev scaling curves
KITAEV_TOLERANCES = (0.1, 0.05, 0.01, 0.005, 0.002)


class EstimationError(RuntimeError):
    pass


@dataclass(frozen=True)
class KitaevConfig:
    steps: int = 5
    tolerance: float = 0.05
    max_calls_per_step: int = MAX_CALLS_PER_STEP

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("need at least one step")
        if not 0 < self.tolerance < 0.5:
            raise ValueError("tolerance must lie in (0, 0.5)")
        if self.max_calls_per_step < 1:
            raise ValueError("max_calls_per_step must be positive")

    def validate_for(self, n_flux: int) -> None:
        if 2**self.steps > n_flux:
            raise ValueError(f"{self.steps} halvings need at least {2**self.steps} flux points")

    @property
    def error_probability(self) -> float:
        """Overall error bound 1 - prod(1 - eps_k)."""
        return 1.0 - (1.0 - self.tolerance) ** self.steps


@dataclass(frozen=True)
class FourierConfig:
    steps: int = 5
    tolerances: tuple = (0.182, 0.076, 0.039, 0.02, 0.01)
    starting_delay_ns: float = 360.0
    max_calls_per_step: int = MAX_CALLS_PER_STEP

    def __post_init__(self):
        object.__setattr__(self, "tolerances", tuple(float(e) for e in self.tolerances))
        if self.steps < 1:
            raise ValueError("need at least one step")
        if len(self.tolerances) < self.steps:
            raise ValueError("need one tolerance per step")
        if not all(0 < e < 0.5 for e in self.tolerances):
            raise ValueError("tolerances must lie in (0, 0.5)")
        if not self.starting_delay_ns > 0:
            raise ValueError("starting delay must be positive")

    def validate_for(self, n_flux: int) -> None:
        if 2**self.steps > n_flux:
            raise ValueError(f"{self.steps} halvings need at least {2**self.steps} flux points")


@dataclass
class StepRecord:
    """State at the end of one step (or one checkpoint of the classical run)."""

    step: int
    delay_index: int
    delay_ns: float
    calls: int
    survivors: np.ndarray
    posterior: np.ndarray
    estimate: int
    ledger: dict
    separation: float | None = None

    def to_dict(self) -> dict:
        d = {
            "step": self.step,
            "delay_index": self.delay_index,
            "delay_ns": self.delay_ns,
            "calls": self.calls,
            "survivors": [int(i) for i in self.survivors],
            "posterior": [float(p) for p in self.posterior],
            "estimate": self.estimate,
            "ledger": self.ledger,
        }
        if self.separation is not None:
            d["separation"] = self.separation
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StepRecord":
        return cls(
            step=d["step"],
            delay_index=d["delay_index"],
            delay_ns=d["delay_ns"],
            calls=d["calls"],
            survivors=np.array(d["survivors"], dtype=int),
            posterior=np.array(d["posterior"], dtype=float),
            estimate=d["estimate"],
            ledger=d["ledger"],
            separation=d.get("separation"),
        )

    def restricted_posterior(self) -> FluxPosterior:
        """End-of-step posterior restricted to the survivors and renormalized."""
        with np.errstate(divide="ignore"):
            lw = np.log(self.posterior)
        return FluxPosterior(lw).restrict(self.survivors)


@dataclass
class EstimationTrace:
    procedure: str
    config: dict
    n_flux: int
    steps: list = field(default_factory=list)
    estimate: int | None = None
    status: str = "ok"
    true_flux: float | None = None
    true_index: int | None = None
    seed: int | None = None
    ledger: dict | None = None

    @property
    def converged(self) -> bool:
        return self.status == "ok"

    @property
    def success(self) -> bool | None:
        """Whether the truth survived (None when the truth is unknown)."""
        if self.true_index is None or not self.steps:
            return None
        if not self.converged:
            return False
        return bool(self.true_index in set(int(i) for i in self.steps[-1].survivors))

    def to_dict(self) -> dict:
        return {
            "schema_version": TRACE_SCHEMA_VERSION,
            "procedure": self.procedure,
            "config": self.config,
            "n_flux": self.n_flux,
            "seed": self.seed,
            "true_flux": self.true_flux,
            "true_index": self.true_index,
            "estimate": self.estimate,
            "status": self.status,
            "steps": [s.to_dict() for s in self.steps],
            "ledger": self.ledger,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EstimationTrace":
        version = d.get("schema_version")
        if version != TRACE_SCHEMA_VERSION:
            raise EstimationError(
                f"trace schema version {version!r} is not {TRACE_SCHEMA_VERSION}"
            )
        return cls(
            procedure=d["procedure"],
            config=d["config"],
            n_flux=d["n_flux"],
            steps=[StepRecord.from_dict(s) for s in d["steps"]],
            estimate=d["estimate"],
            status=d["status"],
            true_flux=d.get("true_flux"),
            true_index=d.get("true_index"),
            seed=d.get("seed"),
            ledger=d.get("ledger"),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "EstimationTrace":
        return cls.from_dict(json.loads(Path(path).read_text()))


class FourierSplit(NamedTuple):
    delay_index: int
    high: np.ndarray
    low: np.ndarray
    separation: float

    @property
    def zero_separation(self) -> bool:
        return not self.separation > 0


def _window(passport, max_delay_index):
    if max_delay_index is None:
        return passport.values
    return passport.values[: max_delay_index + 1]


def next_optimal_delay_kitaev(survivors, passport, max_delay_index: int | None = None) -> int:
    """Delay index where the passport spread over ``survivors`` is largest.

    The spread is max - min of the passport values over the surviving flux
    indices; ties go to the shortest delay.
    """
    s = np.asarray(survivors, dtype=int)
    if len(s) < 2:
        raise ValueError("need at least two surviving indices")
    vals = _window(passport, max_delay_index)[:, s]
    spread = vals.max(axis=1) - vals.min(axis=1)
    return int(np.argmax(spread))


def next_optimal_delay_fourier(
    survivors, passport, max_delay_index: int | None = None
) -> FourierSplit:
    """Delay that best separates the survivors into a high and a low group.

    At each delay the survivors are ordered by passport value (ties to the
    lower index); the ``ceil(n/2)`` highest form the high group. The
    separation is the gap between the lowest high value and the highest low
    value. Returns the delay with the widest gap (ties to the shortest).
    """
    s = np.sort(np.asarray(survivors, dtype=int))
    if len(s) < 2:
        raise ValueError("need at least two surviving indices")
    vals = _window(passport, max_delay_index)[:, s]
    order = np.argsort(-vals, axis=1, kind="stable")
    ranked = np.take_along_axis(vals, order, axis=1)
    n_high = (len(s) + 1) // 2
    gaps = ranked[:, n_high - 1] - ranked[:, n_high]
    j = int(np.argmax(gaps))
    return FourierSplit(j, np.sort(s[order[j, :n_high]]), np.sort(s[order[j, n_high:]]), float(gaps[j]))


def _record(step, delay_index, passport, calls, survivors, posterior, oracle, separation=None):
    return StepRecord(
        step=step,
        delay_index=int(delay_index),
        delay_ns=float(passport.delay_ns(delay_index)),
        calls=calls,
        survivors=np.array(survivors, dtype=int),
        posterior=posterior.probabilities,
        estimate=point_estimate(posterior),
        ledger=oracle.ledger.snapshot(),
        separation=separation,
    )


def _truth(oracle, passport):
    flux = getattr(oracle, "flux", None)
    if flux is None:
        return None, None
    return float(flux), passport.nearest_flux_index(flux)


def _halve(posterior, passport, delay_index, oracle, sigma_n, tolerance, cap):
    """Learn at one delay until the less probable half holds at most ``tolerance``."""
    calls = 0
    while True:
        h = oracle(passport.delay_ns(delay_index))
        posterior = update_at_delay(posterior, passport, delay_index, h, sigma_n)
        calls += 1
        top, bottom = half_partition(posterior)
        if posterior.mass(bottom) <= tolerance:
            return posterior, top, calls, True
        if calls >= cap:
            return posterior, top, calls, False


def kitaev_procedure(cfg: KitaevConfig, oracle, passport, sigma_n: float = SIGMA_N):
    """Modified Kitaev estimation. Returns ``(estimate_index, trace)``.

    Step 1 learns at zero delay. Each step repeats the Bayesian update until
    the less probable half of the current index set holds at most
    ``cfg.tolerance``, keeps the more probable half, resets to a uniform
    distribution on it and moves to the delay with the widest passport spread
    over the survivors.

    If a step exceeds ``cfg.max_calls_per_step`` the run stops with status
    ``"max_calls"`` and a partial trace.
    """
    cfg.validate_for(passport.n_flux)
    true_flux, true_index = _truth(oracle, passport)
    trace = EstimationTrace(
        "kitaev", asdict(cfg), passport.n_flux, true_flux=true_flux, true_index=true_index
    )
    survivors = np.arange(passport.n_flux)
    delay = 0
    posterior = FluxPosterior.uniform(passport.n_flux)
    for k in range(1, cfg.steps + 1):
        posterior = FluxPosterior.uniform(passport.n_flux, survivors)
        posterior, top, calls, ok = _halve(
            posterior, passport, delay, oracle, sigma_n, cfg.tolerance, cfg.max_calls_per_step
        )
        trace.steps.append(_record(k, delay, passport, calls, top, posterior, oracle))
        if not ok:
            trace.status = "max_calls"
            break
        survivors = top
        if k < cfg.steps:
            delay = next_optimal_delay_kitaev(survivors, passport)
    trace.estimate = point_estimate(posterior)
    trace.ledger = oracle.ledger.exact_state()
    return trace.estimate, trace


def fourier_procedure(cfg: FourierConfig, oracle, passport, sigma_n: float = SIGMA_N):
    """Modified semiclassical Fourier estimation. Returns ``(estimate_index, trace)``.

    Step 1 learns at the starting delay until the less probable half holds at
    most ``eps_1``; the survivors then form several disjoint intervals. Each
    later step splits the survivors into the high and low groups of
    :func:`next_optimal_delay_fourier` (delays up to the starting delay),
    learns until one group holds at most ``eps_k`` and keeps the heavier one.

    Stops with status ``"zero_separation"`` if no delay separates the groups
    and ``"max_calls"`` if a step exceeds its call cap.
    """
    cfg.validate_for(passport.n_flux)
    true_flux, true_index = _truth(oracle, passport)
    config = asdict(cfg)
    config["tolerances"] = list(cfg.tolerances)
    trace = EstimationTrace(
        "fourier", config, passport.n_flux, true_flux=true_flux, true_index=true_index
    )
    start = passport.delay_index(cfg.starting_delay_ns)
    posterior = FluxPosterior.uniform(passport.n_flux)
    posterior, survivors, calls, ok = _halve(
        posterior, passport, start, oracle, sigma_n, cfg.tolerances[0], cfg.max_calls_per_step
    )
    trace.steps.append(_record(1, start, passport, calls, survivors, posterior, oracle))
    if not ok:
        trace.status = "max_calls"
    for k in range(2, cfg.steps + 1):
        if not trace.converged:
            break
        eps = cfg.tolerances[k - 1]
        posterior = FluxPosterior.uniform(passport.n_flux, survivors)
        split = next_optimal_delay_fourier(survivors, passport, max_delay_index=start)
        if split.zero_separation:
            trace.status = "zero_separation"
            break
        calls = 0
        while True:
            h = oracle(passport.delay_ns(split.delay_index))
            posterior = update_at_delay(posterior, passport, split.delay_index, h, sigma_n)
            calls += 1
            p_high, p_low = posterior.mass(split.high), posterior.mass(split.low)
            if min(p_high, p_low) <= eps:
                break
            if calls >= cfg.max_calls_per_step:
                trace.status = "max_calls"
                break
        survivors = split.high if p_high > p_low else split.low
        trace.steps.append(
            _record(
                k, split.delay_index, passport, calls, survivors, posterior, oracle, split.separation
            )
        )
    trace.estimate = point_estimate(posterior)
    trace.ledger = oracle.ledger.exact_state()
    return trace.estimate, trace


def classical_procedure(
    budget: int, oracle, passport, sigma_n: float = SIGMA_N, checkpoints=None
):
    """Standard estimation: ``budget`` updates at zero delay, no restriction.

    ``checkpoints`` lists call counts at which to record the state (the final
    budget is always recorded). Returns ``(posterior, trace)``.
    """
    if budget < 0:
        raise ValueError("budget must be nonnegative")
    marks = sorted(set(int(c) for c in (checkpoints or []) if 0 < c <= budget) | {budget})
    true_flux, true_index = _truth(oracle, passport)
    trace = EstimationTrace(
        "classical",
        {"budget": budget, "checkpoints": marks},
        passport.n_flux,
        true_flux=true_flux,
        true_index=true_index,
    )
    everything = np.arange(passport.n_flux)
    posterior = FluxPosterior.uniform(passport.n_flux)
    done = 0
    for k, mark in enumerate(marks, start=1):
        while done < mark:
            h = oracle(passport.delay_ns(0))
            posterior = update_at_delay(posterior, passport, 0, h, sigma_n)
            done += 1
        trace.steps.append(_record(k, 0, passport, done, everything, posterior, oracle))
    trace.estimate = point_estimate(posterior)
    trace.ledger = oracle.ledger.exact_state()
    return posterior, trace


def contiguous_runs(indices) -> list:
    """Split sorted indices into maximal runs of consecutive integers."""
    idx = np.sort(np.asarray(indices, dtype=int))
    if len(idx) == 0:
        return []
    breaks = np.flatnonzero(np.diff(idx) > 1) + 1
    return [run for run in np.split(idx, breaks)]


def trace_entropies(trace: EstimationTrace) -> list:
    """Entropy (bits) of the restricted posterior at the end of every step."""
    return [shannon_entropy(s.restricted_posterior()) for s in trace.steps]
