"""
Discrete Bayesian learning of the flux on the passport grid.
"""

from __future__ import annotations

import csv
import math

import numpy as np

_LOG2 = math.log(2.0)


class FluxPosterior:
    """Normalized distribution over passport flux indices, kept in log space.

    Inactive indices carry ``-inf`` log weight (probability exactly zero).
    Updates return new objects; instances are never mutated after creation.
    """

    __slots__ = ("log_weights",)

    def __init__(self, log_weights):
        lw = np.array(log_weights, dtype=float)
        if lw.ndim != 1 or not np.any(np.isfinite(lw)):
            raise ValueError("posterior needs at least one active index")
        if np.any(np.isnan(lw)) or np.any(lw == np.inf):
            raise ValueError("log weights must be finite or -inf")
        lw -= lw.max()
        lw -= math.log(np.exp(lw).sum())
        lw.flags.writeable = False
        self.log_weights = lw

    @classmethod
    def uniform(cls, n: int, active=None) -> "FluxPosterior":
        """Uniform over ``active`` (all ``n`` indices when omitted)."""
        lw = np.full(n, -np.inf)
        if active is None:
            lw[:] = 0.0
        else:
            lw[np.asarray(active, dtype=int)] = 0.0
        return cls(lw)

    @property
    def size(self) -> int:
        return len(self.log_weights)

    @property
    def probabilities(self) -> np.ndarray:
        return np.exp(self.log_weights)

    @property
    def active(self) -> np.ndarray:
        return np.flatnonzero(np.isfinite(self.log_weights))

    def mass(self, indices) -> float:
        return float(self.probabilities[np.asarray(indices, dtype=int)].sum())

    def restrict(self, indices) -> "FluxPosterior":
        """Drop every index outside ``indices`` and renormalize."""
        lw = np.full(self.size, -np.inf)
        idx = np.asarray(indices, dtype=int)
        lw[idx] = self.log_weights[idx]
        return FluxPosterior(lw)

    def __repr__(self):
        return f"FluxPosterior(n={self.size}, active={len(self.active)})"


def bayesian_update(posterior: FluxPosterior, column, h: float, sigma_n: float) -> FluxPosterior:
    """Multiply by the Gaussian likelihood of outcome ``h`` and renormalize.

    Parameters
    ----------
    posterior : FluxPosterior
        Current distribution.
    column : array_like
        Passport values ``P_p(tau_j, Phi_i)`` at the chosen delay, one per flux
        index.
    h : float
        Averaged readout ``h_N``.
    sigma_n : float
        Standard deviation of ``h_N`` assumed by the likelihood.
    """
    if not sigma_n > 0:
        raise ValueError("sigma_n must be positive")
    col = np.asarray(column, dtype=float)
    lw = posterior.log_weights - (h - col) ** 2 / (2.0 * sigma_n * sigma_n)
    return FluxPosterior(lw)


def update_at_delay(posterior: FluxPosterior, passport, delay_index: int, h: float, sigma_n: float):
    """:func:`bayesian_update` with the passport row of ``delay_index``."""
    return bayesian_update(posterior, passport.values[delay_index], h, sigma_n)


def shannon_entropy(posterior: FluxPosterior) -> float:
    """Entropy in bits (0 log 0 = 0)."""
    p = posterior.probabilities
    nz = p > 0
    return float(-(p[nz] * posterior.log_weights[nz]).sum() / _LOG2)


def half_partition(posterior: FluxPosterior):
    """Split the active set into its more and less probable halves.

    The top half holds the ``ceil(n/2)`` most probable active indices; ties
    go to the lower index. Both halves are returned sorted ascending.
    """
    active = posterior.active
    if len(active) < 2:
        raise ValueError("need at least two active indices to partition")
    p = posterior.log_weights[active]
    order = np.lexsort((active, -p))
    n_top = (len(active) + 1) // 2
    return np.sort(active[order[:n_top]]), np.sort(active[order[n_top:]])


def point_estimate(posterior: FluxPosterior) -> int:
    """Most probable index; ties go to the lowest index."""
    return int(np.argmax(posterior.log_weights))


def write_posterior_csv(posterior: FluxPosterior, flux_axis, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["flux_index", "phi", "probability"])
        for i, (phi, p) in enumerate(zip(flux_axis, posterior.probabilities)):
            writer.writerow([i, repr(float(phi)), repr(float(p))])
