"""Laser intensity noise, Monte Carlo oracle, and photon-loss fidelity.

The intensity of each pulse fluctuates as Omega^2(t) + sqrt(D) xi(t) with
xi zero-mean Gaussian white noise.  The transfer exponent mu then becomes a
Gaussian random variable whose mean is the deterministic value and whose
variance is g^4 D T / (16 delta^4 k_c^2).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidInputError, ModelValidityWarning
from .model import (
    InitialSuperposition,
    PolarizationBranch,
    Pulse,
    per_branch,
    pulse_integral_mu,
)

DEFAULT_STEPS = 2000
NEGATIVE_MU_TOLERANCE = 1e-4


@dataclass(frozen=True)
class NoiseSpec:
    """Intensity-noise strength given as exactly one of ``D`` or ``fr``."""

    D: float | None = None
    fr: float | None = None
    seed: int = 0
    sample_count: int = 100_000
    steps: int = DEFAULT_STEPS

    def __post_init__(self) -> None:
        if (self.D is None) == (self.fr is None):
            raise InvalidInputError("exactly one of D or fr must be given")
        value = self.D if self.D is not None else self.fr
        name = "D" if self.D is not None else "fr"
        if not (math.isfinite(value) and value >= 0):
            raise InvalidInputError(f"{name} must be finite and >= 0, got {value}")
        if int(self.sample_count) != self.sample_count or self.sample_count < 1:
            raise InvalidInputError(f"sample_count must be >= 1, got {self.sample_count}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise InvalidInputError(f"steps must be >= 1, got {self.steps}")
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidInputError(f"seed must be an unsigned 64-bit integer, got {self.seed}")

    def diffusion(self, pulse: Pulse) -> float:
        """D in MHz^4 us, converting from fr when needed."""
        return self.D if self.D is not None else convert_fr_to_d(self.fr, pulse)


@dataclass(frozen=True)
class MuStatistics:
    mean: float
    variance: float

    def __post_init__(self) -> None:
        if self.variance < 0:
            raise InvalidInputError(f"variance must be >= 0, got {self.variance}")

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)


def convert_fr_to_d(fr: float, pulse: Pulse) -> float:
    """D = fr^2 (int Omega^2 dt)^2 / T."""
    if not (math.isfinite(fr) and fr >= 0):
        raise InvalidInputError(f"fr must be finite and >= 0, got {fr}")
    area = pulse.area()
    if fr > 0 and area == 0:
        raise InvalidInputError("relative fluctuation is undefined for a zero-area pulse")
    return fr * fr * area * area / pulse.duration


def convert_d_to_fr(D: float, pulse: Pulse) -> float:
    """Inverse of :func:`convert_fr_to_d`."""
    if not (math.isfinite(D) and D >= 0):
        raise InvalidInputError(f"D must be finite and >= 0, got {D}")
    area = pulse.area()
    if area == 0:
        if D > 0:
            raise InvalidInputError("relative fluctuation is undefined for a zero-area pulse")
        return 0.0
    return math.sqrt(D * pulse.duration) / area


def _mu_prefactor(branch: PolarizationBranch) -> float:
    return branch.g**2 / (4.0 * branch.delta**2 * branch.k_c)


def mu_statistics(pulse: Pulse, branch: PolarizationBranch, D: float) -> MuStatistics:
    if not (math.isfinite(D) and D >= 0):
        raise InvalidInputError(f"D must be finite and >= 0, got {D}")
    mean = pulse_integral_mu(pulse, branch)
    variance = branch.g**4 * D * pulse.duration / (16.0 * branch.delta**4 * branch.k_c**2)
    return MuStatistics(mean, variance)


def trial_generator(seed: int, trial: int) -> np.random.Generator:
    """Independent Philox stream for one Monte Carlo trial.

    The 64-bit seed is the Philox key and the trial index sets the counter,
    so any trial can be regenerated without touching the others.
    """
    key = int(seed) % 2**64
    return np.random.Generator(np.random.Philox(key=key, counter=[0, 0, 0, int(trial)]))


def wiener_endpoints(duration: float, seed: int, trials, steps: int = DEFAULT_STEPS) -> np.ndarray:
    """W(T) = sum_j sqrt(dt) z_j for each trial index in ``trials``."""
    trials = np.atleast_1d(np.asarray(trials, dtype=np.int64))
    root_dt = math.sqrt(duration / steps)
    out = np.empty(trials.size)
    for i, trial in enumerate(trials):
        z = trial_generator(seed, int(trial)).standard_normal(steps)
        out[i] = root_dt * np.sum(z)  # numpy sums pairwise
    return out


def mu_from_endpoints(pulse: Pulse, branch: PolarizationBranch, D: float, endpoints) -> np.ndarray:
    return _mu_prefactor(branch) * (pulse.area() + math.sqrt(D) * np.asarray(endpoints))


def sample_mu(pulse: Pulse, branch: PolarizationBranch, D: float, seed: int,
              trial: int = 0, steps: int = DEFAULT_STEPS) -> float:
    """One stochastic mu: (g^2/4 delta^2 k_c) [int Omega^2 dt + sqrt(D) W(T)]."""
    if int(steps) != steps or steps < 1:
        raise InvalidInputError(f"steps must be >= 1, got {steps}")
    if D == 0:
        return pulse_integral_mu(pulse, branch)
    endpoint = wiener_endpoints(pulse.duration, seed, [trial], steps)
    return float(mu_from_endpoints(pulse, branch, D, endpoint)[0])


def sample_mu_batch(pulse: Pulse, branch: PolarizationBranch, D: float, seed: int,
                    count: int, steps: int = DEFAULT_STEPS, first_trial: int = 0) -> np.ndarray:
    """Samples for trials first_trial .. first_trial + count - 1."""
    endpoints = wiener_endpoints(pulse.duration, seed, np.arange(first_trial, first_trial + count), steps)
    return mu_from_endpoints(pulse, branch, D, endpoints)


def _check_n(n: int) -> int:
    if int(n) != n or n < 0:
        raise InvalidInputError(f"photon count n must be a non-negative integer, got {n}")
    return int(n)


def _per_branch_d(D) -> tuple:
    if isinstance(D, (list, tuple)):
        return per_branch(list(D), "diffusion values")
    return (D, D)


def averaged_single_cycle(pulse: Pulse, branch: PolarizationBranch, D: float) -> float:
    """<1 - exp(-2 mu)> = 1 - exp(-2<mu> + 2 sigma^2) for Gaussian mu."""
    stats = mu_statistics(pulse, branch, D)
    if stats.variance > stats.mean:
        warnings.warn(
            f"sigma^2 = {stats.variance:.4g} exceeds <mu> = {stats.mean:.4g}: the Gaussian "
            "model gives unphysical averaged fidelities",
            ModelValidityWarning,
            stacklevel=3,
        )
    return -math.expm1(-2.0 * stats.mean + 2.0 * stats.variance)


def averaged_fidelity(n: int, branches, pulses, c: InitialSuperposition, D) -> float:
    """Gaussian average of the n-cycle fidelity, independent noise in every pulse."""
    n = _check_n(n)
    total = 0.0
    for weight, branch, pulse, d in zip(c.weights, per_branch(branches, "branches"),
                                        per_branch(pulses, "pulses"), _per_branch_d(D)):
        total += weight * averaged_single_cycle(pulse, branch, d) ** n
    return total


def negative_mu_probability(stats: MuStatistics) -> float:
    if stats.variance == 0:
        return 0.0
    return 0.5 * math.erfc(stats.mean / (stats.std * math.sqrt(2.0)))


@dataclass(frozen=True)
class MonteCarloEstimate:
    mean: float
    std_error: float
    samples: np.ndarray

    @property
    def count(self) -> int:
        return self.samples.size


def monte_carlo_transfer(pulse: Pulse, branch: PolarizationBranch, D: float, seed: int,
                         sample_count: int, steps: int = DEFAULT_STEPS,
                         endpoints: np.ndarray | None = None) -> MonteCarloEstimate:
    """Monte Carlo mean and standard error of 1 - exp(-2 mu).

    ``endpoints`` lets callers reuse one set of Wiener endpoints across
    several D values.
    """
    stats = mu_statistics(pulse, branch, D)
    p_negative = negative_mu_probability(stats)
    if p_negative > NEGATIVE_MU_TOLERANCE:
        warnings.warn(
            f"P(mu < 0) = {p_negative:.3g} exceeds {NEGATIVE_MU_TOLERANCE}; negative samples "
            "are kept as drawn",
            ModelValidityWarning,
            stacklevel=2,
        )
    if endpoints is None:
        endpoints = wiener_endpoints(pulse.duration, seed, np.arange(sample_count), steps)
    mu = mu_from_endpoints(pulse, branch, D, endpoints[:sample_count])
    values = -np.expm1(-2.0 * mu)
    mean = float(np.sum(values) / values.size)
    if values.size > 1:
        err = float(np.std(values, ddof=1) / math.sqrt(values.size))
    else:
        err = float("nan")
    return MonteCarloEstimate(mean, err, mu)


def monte_carlo_fidelities(n_values, branches, pulses, c: InitialSuperposition, D, seed: int,
                           sample_count: int, steps: int = DEFAULT_STEPS) -> list[tuple[float, float]]:
    """Monte Carlo n-cycle fidelities and standard errors for every n in ``n_values``.

    Cycle j of branch a uses trials (2j + a) * sample_count onward, so each
    pulse gets its own noise and larger n reuse the earlier cycles.
    """
    n_values = [_check_n(n) for n in n_values]
    cycles = max(n_values, default=0)
    means = np.zeros(len(n_values))
    variances = np.zeros(len(n_values))
    for weight, branch, pulse, d in zip(c.weights, per_branch(branches, "branches"),
                                        per_branch(pulses, "pulses"), _per_branch_d(D)):
        if weight == 0:
            continue
        running = np.ones(sample_count)
        products = {0: running.copy()}
        for cycle in range(cycles):
            mu = sample_mu_batch(pulse, branch, d, seed, sample_count, steps,
                                 first_trial=(2 * cycle + branch.label) * sample_count)
            running = running * -np.expm1(-2.0 * mu)
            products[cycle + 1] = running
        for i, n in enumerate(n_values):
            values = products[n]
            means[i] += weight * float(np.sum(values) / values.size)
            if values.size > 1:
                variances[i] += weight**2 * float(np.var(values, ddof=1)) / values.size
    return [(float(m), math.sqrt(v)) for m, v in zip(means, variances)]


def monte_carlo_fidelity(n: int, branches, pulses, c: InitialSuperposition, D, seed: int,
                         sample_count: int, steps: int = DEFAULT_STEPS) -> tuple[float, float]:
    return monte_carlo_fidelities([n], branches, pulses, c, D, seed, sample_count, steps)[0]


def mc_diagnostics_rows(samples: Sequence[float]):
    """Rows (trial, mu_sample) for the Monte Carlo diagnostics CSV."""
    return [(i, float(mu)) for i, mu in enumerate(samples)]


MC_DIAGNOSTIC_COLUMNS = ("trial", "mu_sample")


def loss_fidelity(n: int, branches, pulses, c: InitialSuperposition) -> float:
    """sum_a |c_a|^2 [k_c/(k_c+k_a)]^n [1 - exp(-2 mu'_a)]^n, mu' with k_c + k_a."""
    n = _check_n(n)
    total = 0.0
    for weight, branch, pulse in zip(c.weights, per_branch(branches, "branches"), per_branch(pulses, "pulses")):
        mu = pulse_integral_mu(pulse, branch, include_loss=True)
        single = branch.k_c / (branch.k_c + branch.k_a) * (-math.expm1(-2.0 * mu))
        total += weight * single**n
    return total

