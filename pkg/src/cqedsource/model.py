"""Domain types and closed-form quantities of the photon source.

Unit convention: every frequency (couplings, detunings, decay rates, Rabi
frequencies, continuum detunings) is an angular frequency in MHz and every
time is in microseconds, so rate x time products are dimensionless.  Laser
intensities are squared Rabi frequencies (MHz^2).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy import integrate
from scipy.signal import czt

from .errors import ConfigError, DomainError, InvalidInputError

# ---------------------------------------------------------------------------
# Branch parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PolarizationBranch:
    """Effective two-level Raman system for one cavity polarization.

    ``g`` is the Raman (atom-cavity) coupling, ``delta`` the common detuning
    from the eliminated excited level, ``k_c`` the decay rate through the
    output mirror and ``k_a`` the decay rate into undesired (loss) modes.
    """

    g: float
    delta: float
    k_c: float
    k_a: float = 0.0
    label: int = 0
    strict: bool = False

    def __post_init__(self) -> None:
        for name in ("g", "delta", "k_c", "k_a"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise InvalidInputError(f"{name} must be finite, got {value!r}")
        if self.g <= 0:
            raise InvalidInputError(f"g must be > 0, got {self.g}")
        if self.delta <= 0:
            raise InvalidInputError(f"delta must be > 0, got {self.delta}")
        if self.k_c <= 0:
            raise InvalidInputError(f"k_c must be > 0, got {self.k_c}")
        if self.k_a < 0:
            raise InvalidInputError(f"k_a must be >= 0, got {self.k_a}")
        if self.label not in (0, 1):
            raise InvalidInputError(f"label must be 0 or 1, got {self.label}")
        if self.strict and self.delta < 10 * max(self.g, self.k_c):
            raise InvalidInputError(
                f"large-detuning regime requires delta >= 10*max(g, k_c) = "
                f"{10 * max(self.g, self.k_c)}, got delta = {self.delta}"
            )

    def kappa(self, include_loss: bool = False) -> float:
        """Photon decay rate entering mu: k_c, or k_c + k_a with losses."""
        return self.k_c + self.k_a if include_loss else self.k_c


# ---------------------------------------------------------------------------
# Pulses
# ---------------------------------------------------------------------------


def _check_duration(duration: float) -> None:
    if not (math.isfinite(duration) and duration > 0):
        raise InvalidInputError(f"pulse duration must be finite and > 0, got {duration}")


@dataclass(frozen=True)
class Square:
    """Constant intensity ``intensity`` (MHz^2) on ``[0, duration]``."""

    intensity: float
    duration: float

    def __post_init__(self) -> None:
        _check_duration(self.duration)
        if not math.isfinite(self.intensity):
            raise InvalidInputError("square pulse intensity must be finite")
        if self.intensity < 0:
            raise InvalidInputError(f"intensity must be >= 0, got {self.intensity}")

    def intensity_at(self, t):
        t = np.asarray(t, dtype=float)
        inside = (t >= 0) & (t <= self.duration)
        return np.where(inside, self.intensity, 0.0)

    def cumulative_area(self, t):
        t = np.clip(np.asarray(t, dtype=float), 0.0, self.duration)
        return self.intensity * t

    def area(self) -> float:
        return self.intensity * self.duration

    def peak(self) -> float:
        return self.intensity


@dataclass(frozen=True)
class SineSquaredRamp:
    """Flat-top pulse with sin^2 rise and fall over ``ramp_fraction * duration``."""

    peak_intensity: float
    duration: float
    ramp_fraction: float = 0.1

    def __post_init__(self) -> None:
        _check_duration(self.duration)
        if not (math.isfinite(self.peak_intensity) and self.peak_intensity >= 0):
            raise InvalidInputError("ramp peak intensity must be finite and >= 0")
        if not 0 < self.ramp_fraction <= 0.5:
            raise InvalidInputError(
                f"ramp_fraction must lie in (0, 0.5], got {self.ramp_fraction}"
            )

    @property
    def ramp_time(self) -> float:
        return self.ramp_fraction * self.duration

    def intensity_at(self, t):
        t = np.asarray(t, dtype=float)
        tau, big_t = self.ramp_time, self.duration
        rise = np.sin(0.5 * np.pi * np.clip(t, 0, tau) / tau) ** 2
        fall = np.sin(0.5 * np.pi * np.clip(big_t - t, 0, tau) / tau) ** 2
        shape = np.minimum(rise, fall)
        inside = (t >= 0) & (t <= big_t)
        return np.where(inside, self.peak_intensity * shape, 0.0)

    def _ramp_area(self, s):
        # integral of sin^2(pi s / 2 tau) from 0 to s, s in [0, tau]
        tau = self.ramp_time
        return 0.5 * s - tau / (2 * np.pi) * np.sin(np.pi * s / tau)

    def cumulative_area(self, t):
        t = np.clip(np.asarray(t, dtype=float), 0.0, self.duration)
        tau, big_t, peak = self.ramp_time, self.duration, self.peak_intensity
        total = peak * (big_t - tau)
        up = peak * self._ramp_area(np.minimum(t, tau))
        flat = peak * np.clip(t - tau, 0.0, big_t - 2 * tau)
        down = peak * (0.5 * tau - self._ramp_area(np.clip(big_t - t, 0.0, tau)))
        out = up + flat + np.where(t > big_t - tau, down, 0.0)
        return np.where(t >= big_t, total, out)

    def area(self) -> float:
        tau, big_t = self.ramp_time, self.duration
        value, _ = integrate.quad(
            self.intensity_at, 0.0, big_t, points=[tau, big_t - tau], limit=200,
            epsabs=0.0, epsrel=1e-13,
        )
        return float(value)

    def peak(self) -> float:
        return self.peak_intensity


@dataclass(frozen=True, eq=False)
class Sampled:
    """Piecewise-linear intensity through ``(times, values)`` samples."""

    times: np.ndarray
    values: np.ndarray
    duration: float | None = None

    def __post_init__(self) -> None:
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if times.ndim != 1 or times.shape != values.shape or times.size < 2:
            raise InvalidInputError("sampled pulse needs matching 1-D arrays of >= 2 points")
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(values))):
            raise InvalidInputError("sampled pulse contains non-finite samples")
        if np.any(values < 0):
            raise InvalidInputError("sampled intensity must be >= 0 everywhere")
        if np.any(np.diff(times) <= 0):
            raise InvalidInputError("sampled pulse times must be strictly increasing")
        duration = float(times[-1]) if self.duration is None else float(self.duration)
        _check_duration(duration)
        if times[0] > 0 or times[-1] < duration:
            raise InvalidInputError(
                f"sample grid [{times[0]}, {times[-1]}] does not cover [0, {duration}]"
            )
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "duration", duration)
        knots = np.concatenate(([0.0], np.cumsum(0.5 * np.diff(times) * (values[1:] + values[:-1]))))
        object.__setattr__(self, "_knot_area", knots)

    def intensity_at(self, t):
        t = np.asarray(t, dtype=float)
        out = np.interp(t, self.times, self.values)
        return np.where((t >= 0) & (t <= self.duration), out, 0.0)

    def _area_from_start(self, t):
        # exact integral of the interpolant from times[0] to t
        idx = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, self.times.size - 2)
        t0 = self.times[idx]
        v0 = self.values[idx]
        v_t = np.interp(t, self.times, self.values)
        return self._knot_area[idx] + 0.5 * (t - t0) * (v0 + v_t)

    def cumulative_area(self, t):
        t = np.clip(np.asarray(t, dtype=float), 0.0, self.duration)
        return self._area_from_start(t) - self._area_from_start(np.zeros_like(t))

    def area(self) -> float:
        return float(self.cumulative_area(self.duration))

    def peak(self) -> float:
        mask = (self.times >= 0) & (self.times <= self.duration)
        inner = self.values[mask]
        ends = self.intensity_at(np.array([0.0, self.duration]))
        return float(max(inner.max(initial=0.0), ends.max()))


PulseShape = Union[Square, SineSquaredRamp, Sampled]


@dataclass(frozen=True, eq=False)
class SampledPhase:
    """Laser phase (radians) interpolated linearly through samples."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if times.ndim != 1 or times.shape != values.shape or times.size < 2:
            raise InvalidInputError("sampled phase needs matching 1-D arrays of >= 2 points")
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(values))):
            raise InvalidInputError("sampled phase contains non-finite samples")
        if np.any(np.diff(times) <= 0):
            raise InvalidInputError("sampled phase times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    def __call__(self, t):
        return np.interp(t, self.times, self.values)


@dataclass(frozen=True, eq=False)
class Pulse:
    """Deterministic laser pulse: intensity profile plus phase."""

    shape: PulseShape
    phase: Union[float, SampledPhase] = 0.0

    def __post_init__(self) -> None:
        if isinstance(self.phase, SampledPhase):
            if self.phase.times[0] > 0 or self.phase.times[-1] < self.duration:
                raise InvalidInputError("sampled phase grid must cover [0, T]")
        elif not math.isfinite(float(self.phase)):
            raise InvalidInputError("pulse phase must be finite")

    @property
    def duration(self) -> float:
        return float(self.shape.duration)

    T = duration

    def intensity(self, t):
        return self.shape.intensity_at(t)

    def rabi(self, t):
        """Laser Rabi frequency Omega(t) = sqrt(Omega^2(t))."""
        return np.sqrt(self.shape.intensity_at(t))

    def phase_at(self, t):
        if isinstance(self.phase, SampledPhase):
            return self.phase(t)
        return np.full(np.shape(t), float(self.phase))

    def cumulative_area(self, t):
        return self.shape.cumulative_area(t)

    def area(self) -> float:
        return self.shape.area()

    def peak_intensity(self) -> float:
        return self.shape.peak()

    def with_phase(self, phase) -> "Pulse":
        return Pulse(self.shape, phase)


def square_pulse(intensity: float, duration: float, phase: float = 0.0) -> Pulse:
    return Pulse(Square(intensity, duration), phase)


# ---------------------------------------------------------------------------
# Initial atomic superposition
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InitialSuperposition:
    """Amplitudes ``c0, c1`` of the atom in |i>_0 and |i>_1."""

    c0: complex
    c1: complex

    def __post_init__(self) -> None:
        object.__setattr__(self, "c0", complex(self.c0))
        object.__setattr__(self, "c1", complex(self.c1))
        norm = abs(self.c0) ** 2 + abs(self.c1) ** 2
        if not abs(norm - 1.0) <= 1e-12:
            raise InvalidInputError(f"|c0|^2 + |c1|^2 must equal 1, got {norm!r}")

    @classmethod
    def balanced(cls) -> "InitialSuperposition":
        a = 1 / math.sqrt(2)
        return cls(a, a)

    @classmethod
    def normalized(cls, c0: complex, c1: complex) -> "InitialSuperposition":
        norm = math.sqrt(abs(c0) ** 2 + abs(c1) ** 2)
        if norm == 0:
            raise InvalidInputError("c0 = c1 = 0 cannot be normalized")
        return cls(c0 / norm, c1 / norm)

    @property
    def weights(self) -> tuple[float, float]:
        a, b = abs(self.c0) ** 2, abs(self.c1) ** 2
        return a / (a + b), b / (a + b)


# ---------------------------------------------------------------------------
# Discretized output continuum
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ContinuumGrid:
    """Uniform midpoint grid of ``mode_count`` continuum modes.

    Detunings are measured from the cavity resonance and span
    ``[-half_bandwidth, half_bandwidth]``; mode ``m`` sits at
    ``-W + (m + 1/2) * spacing``.
    """

    half_bandwidth: float
    mode_count: int
    center: float = 0.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.half_bandwidth) and self.half_bandwidth > 0):
            raise ConfigError(f"half_bandwidth must be > 0, got {self.half_bandwidth}")
        if int(self.mode_count) != self.mode_count or self.mode_count < 2:
            raise ConfigError(f"mode_count must be an integer >= 2, got {self.mode_count}")
        object.__setattr__(self, "mode_count", int(self.mode_count))

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_bandwidth / self.mode_count

    @property
    def first(self) -> float:
        return self.center - self.half_bandwidth + 0.5 * self.spacing

    @property
    def frequencies(self) -> np.ndarray:
        return self.first + self.spacing * np.arange(self.mode_count)

    @property
    def weight(self) -> float:
        """Per-mode quadrature weight sqrt(spacing)."""
        return math.sqrt(self.spacing)

    @property
    def recurrence_time(self) -> float:
        return 2 * math.pi / self.spacing

    def validate_for(self, duration: float, kappa: float) -> None:
        """Raise ConfigError unless the grid resolves a pulse of this length."""
        if self.spacing * duration > math.pi / 2 * (1 + 1e-12):
            raise ConfigError(
                f"grid spacing {self.spacing:.6g} MHz violates spacing*T <= pi/2 "
                f"for T = {duration} us (recurrence time {self.recurrence_time:.6g} us "
                f"must exceed 4T)"
            )
        need = 8 * max(kappa, 2 * math.pi / duration)
        if self.half_bandwidth < need * (1 - 1e-12):
            raise ConfigError(
                f"half_bandwidth {self.half_bandwidth} MHz below required {need:.6g} MHz"
            )

    def refined(self, factor: int) -> "ContinuumGrid":
        """Same band, ``factor`` times as many modes."""
        return ContinuumGrid(self.half_bandwidth, self.mode_count * int(factor), self.center)


def default_grid(duration: float, kappa: float) -> ContinuumGrid:
    """Smallest grid meeting the bandwidth and recurrence bounds."""
    _check_duration(duration)
    half = max(8.0 * kappa, 16.0 * math.pi / duration)
    count = max(2, math.ceil(4.0 * half * duration / math.pi - 1e-9))
    return ContinuumGrid(half, count)


# ---------------------------------------------------------------------------
# Pulse integrals
# ---------------------------------------------------------------------------


def _check_pulse_finite(pulse: Pulse) -> None:
    if isinstance(pulse.shape, Sampled):
        return  # validated at construction
    if not math.isfinite(pulse.peak_intensity()):
        raise InvalidInputError("pulse profile is not finite")


def pulse_integral_mu(pulse: Pulse, branch: PolarizationBranch, include_loss: bool = False) -> float:
    """Transfer exponent mu(T) = g^2 / (4 delta^2 kappa) * int_0^T Omega^2 dt."""
    _check_pulse_finite(pulse)
    kappa = branch.kappa(include_loss)
    prefactor = branch.g**2 / (4.0 * branch.delta**2 * kappa)
    if isinstance(pulse.shape, Square):
        return prefactor * pulse.shape.intensity * pulse.shape.duration
    area = pulse.area()
    if not math.isfinite(area):
        raise InvalidInputError("pulse area is not finite")
    return prefactor * area


def pulse_integral_theta(pulse: Pulse, delta: float) -> float:
    """Accumulated ac-Stark phase int_0^T Omega^2 / (4 delta) dt (radians)."""
    if delta == 0:
        raise DomainError("Stark phase undefined for zero detuning")
    _check_pulse_finite(pulse)
    if isinstance(pulse.shape, Square):
        return pulse.shape.intensity * pulse.shape.duration / (4.0 * delta)
    return pulse.area() / (4.0 * delta)


# ---------------------------------------------------------------------------
# Spectral envelope of the emitted wavepacket
# ---------------------------------------------------------------------------


def simpson_weights(intervals: int, step: float) -> np.ndarray:
    """Composite Simpson weights for an even number of intervals."""
    if intervals < 2 or intervals % 2:
        raise ValueError("Simpson's rule needs an even number (>= 2) of intervals")
    w = np.ones(intervals + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * (step / 3.0)


def time_grid(duration: float, max_step: float) -> tuple[np.ndarray, float]:
    """Uniform grid on [0, duration] with an even interval count and step <= max_step."""
    intervals = max(2, math.ceil(duration / max_step - 1e-9))
    intervals += intervals % 2
    return np.linspace(0.0, duration, intervals + 1), duration / intervals


def grid_transform(samples: np.ndarray, step: float, grid: ContinuumGrid) -> np.ndarray:
    """sum_j samples[j] * exp(i w_m t_j) for t_j = j*step, every grid mode w_m.

    Evaluated with a chirp-z transform, O((N + M) log(N + M)).
    """
    n = samples.shape[0]
    t = step * np.arange(n)
    shifted = samples * np.exp(1j * grid.first * t)
    return czt(shifted, m=grid.mode_count, w=np.exp(1j * grid.spacing * step), a=1.0)


def mode_sum_in_time(amplitudes: np.ndarray, grid: ContinuumGrid, step: float, count: int) -> np.ndarray:
    """sum_m amplitudes[m] * exp(i w_m t_j) at t_j = j*step, j < count."""
    out = czt(np.asarray(amplitudes, dtype=complex), m=count, w=np.exp(1j * grid.spacing * step), a=1.0)
    t = step * np.arange(count)
    return out * np.exp(1j * grid.first * t)


@dataclass(frozen=True, eq=False)
class SpectralEnvelope:
    """Complex envelope G(w_m, T) of the emitted photon on a continuum grid."""

    label: int
    grid: ContinuumGrid
    amplitudes: np.ndarray = field(repr=False)

    @property
    def frequencies(self) -> np.ndarray:
        return self.grid.frequencies

    def norm(self) -> float:
        """Discrete version of int |G|^2 dw."""
        return float(np.sum(np.abs(self.amplitudes) ** 2) * self.grid.spacing)

    def rows(self):
        g = self.amplitudes
        return list(zip(self.frequencies, g.real, g.imag, np.abs(g) ** 2))

    columns = ("omega_MHz", "re_G", "im_G", "abs2_G")


def emission_profile(pulse: Pulse, branch: PolarizationBranch, t: np.ndarray, include_loss: bool = False) -> np.ndarray:
    """Time-domain integrand of the envelope (the amplitude leaking into the continuum per sqrt(time))."""
    kappa = branch.kappa(include_loss)
    area = pulse.cumulative_area(t)
    mu_t = branch.g**2 / (4.0 * branch.delta**2 * kappa) * area
    theta_t = area / (4.0 * branch.delta)
    rabi = pulse.rabi(t)
    amp = math.sqrt(branch.k_c / math.pi) * branch.g * rabi / (2.0 * branch.delta * kappa)
    return amp * np.exp(-mu_t - 1j * (theta_t + pulse.phase_at(t)))


def spectral_envelope(
    pulse: Pulse,
    branch: PolarizationBranch,
    grid: ContinuumGrid,
    include_loss: bool = False,
) -> SpectralEnvelope:
    """Evaluate G(w, T) on every grid mode by composite Simpson quadrature in time.

    The time step is at most min(1/(8W), T/2000).  With ``include_loss`` the
    decay rate in mu(t) is k_c + k_a, and the envelope norm becomes
    k_c/(k_c+k_a) * (1 - exp(-2 mu)).
    """
    duration = pulse.duration
    grid.validate_for(duration, branch.k_c + branch.k_a)
    _check_pulse_finite(pulse)
    max_step = min(1.0 / (8.0 * grid.half_bandwidth), duration / 2000.0)
    t, step = time_grid(duration, max_step)
    profile = emission_profile(pulse, branch, t, include_loss)
    if not np.all(np.isfinite(profile)):
        raise InvalidInputError("pulse profile produced non-finite envelope samples")
    weighted = simpson_weights(t.size - 1, step) * profile
    return SpectralEnvelope(branch.label, grid, grid_transform(weighted, step, grid))


def wavepacket_overlap(env: SpectralEnvelope, dt: float) -> complex:
    """Commutator kernel sum_m |G(w_m)|^2 exp(i w_m dt) dw of two wavepackets dt apart.

    The kernel of a discrete grid is periodic in ``dt`` with period
    ``env.grid.recurrence_time``; it describes distinct wavepackets only for
    ``|dt| < recurrence_time - T``.
    """
    power = np.abs(env.amplitudes) ** 2
    return complex(np.sum(power * np.exp(1j * env.frequencies * dt)) * env.grid.spacing)


# ---------------------------------------------------------------------------
# Fidelities and the final atomic measurement
# ---------------------------------------------------------------------------

BranchesLike = Union[PolarizationBranch, Sequence[PolarizationBranch]]
PulsesLike = Union[Pulse, Sequence[Pulse]]


def per_branch(items, kind: str) -> tuple:
    """Expand one shared item, or validate a pair, into a (branch 0, branch 1) tuple."""
    if isinstance(items, (PolarizationBranch, Pulse)) or not isinstance(items, (list, tuple)):
        return (items, items)
    if len(items) == 1:
        return (items[0], items[0])
    if len(items) != 2:
        raise InvalidInputError(f"expected one or two {kind}, got {len(items)}")
    return tuple(items)


def _check_count(n: int) -> int:
    if int(n) != n or n < 0:
        raise InvalidInputError(f"photon count n must be a non-negative integer, got {n}")
    return int(n)


def ideal_fidelity(n: int, branches: BranchesLike, pulses: PulsesLike, c: InitialSuperposition) -> float:
    """P(n) = sum_a |c_a|^2 [1 - exp(-2 mu_a)]^n for a perfectly still, lossless source."""
    n = _check_count(n)
    total = 0.0
    for weight, branch, pulse in zip(c.weights, per_branch(branches, "branches"), per_branch(pulses, "pulses")):
        mu = pulse_integral_mu(pulse, branch)
        total += weight * (-math.expm1(-2.0 * mu)) ** n
    return total


def project_measurement(c, sign: str, n: int) -> dict[str, complex]:
    """Photon state left after projecting the atom onto (|f>_0 +/- |f>_1)/sqrt2.

    Returns the amplitudes of ``|0...0>`` and ``|1...1>`` (n photons each),
    normalized to one.
    """
    if int(n) != n or n < 1:
        raise InvalidInputError(f"n must be >= 1, got {n}")
    if sign not in ("+", "-"):
        raise InvalidInputError(f"sign must be '+' or '-', got {sign!r}")
    c0, c1 = (c.c0, c.c1) if isinstance(c, InitialSuperposition) else (complex(c[0]), complex(c[1]))
    norm = math.sqrt(abs(c0) ** 2 + abs(c1) ** 2)
    if norm == 0:
        raise InvalidInputError("c0 = c1 = 0: nothing to project")
    s = 1.0 if sign == "+" else -1.0
    n = int(n)
    return {"0" * n: c0 / norm, "1" * n: s * c1 / norm}
