"""Photon generation by a trapped atom with quantized center-of-mass motion.

The wavefunction lives in the one-excitation sector: for every vibrational
Fock level n the atom is either in |i> with no photon (``a_i``), in |f> with
one cavity photon (``a_c``), or in |f> with one photon in continuum mode m
(``a_m``).  The atom position enters through the standing-wave cosines,
expanded to second order in the Lamb-Dicke parameters:

    cos^2 -> 1 - eta^2 X^2,    X = l + l^dagger.

Frame: continuum phases exp(i w_m t) are explicit, the vibrational energy
nu_n = w0 (n + 1/2) is on the diagonal.  The constant cavity light shift
g^2/delta is absorbed in the cavity frequency (dressed-cavity frame) unless
``include_cavity_shift`` is set; its motional part -(g^2/delta) eta_r^2 X^2
is always kept.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import sparse

from .errors import ConfigError, InvalidInputError, NumericalInstabilityError, TruncationError
from .model import (
    ContinuumGrid,
    InitialSuperposition,
    PolarizationBranch,
    Pulse,
    SpectralEnvelope,
    Square,
    default_grid,
    mode_sum_in_time,
    per_branch,
    simpson_weights,
    spectral_envelope,
)

THERMAL_TAIL = 1e-6
NORM_TOLERANCE = 1e-6
STEP_FACTOR = 0.02
MIN_STEPS = 60_000


def _auto_nmax(N: float) -> int:
    n_max = math.ceil(10 * N + 5)
    if N == 0:
        return n_max
    ratio = N / (1 + N)
    while True:
        tail = ratio ** (n_max + 1)
        # mean of the discarded tail, weighted by its mass
        tail_mean = tail * (n_max + 1 + N)
        if tail < THERMAL_TAIL and tail_mean < THERMAL_TAIL:
            return n_max
        n_max += 1


@dataclass(frozen=True)
class MotionSpec:
    """Trap frequency, Lamb-Dicke parameters and thermal occupancy.

    ``n_max`` defaults to the smallest truncation with n_max >= ceil(10 N + 5)
    whose discarded thermal tail carries less than 1e-6 of both probability
    and mean occupation.
    """

    omega0: float
    eta_L: float = 0.0
    eta_r: float = 0.0
    N: float = 0.0
    n_max: int | None = None

    def __post_init__(self) -> None:
        if not (math.isfinite(self.omega0) and self.omega0 > 0):
            raise InvalidInputError(f"omega0 must be > 0, got {self.omega0}")
        for name in ("eta_L", "eta_r"):
            value = getattr(self, name)
            if not 0 <= value <= 0.5:
                raise InvalidInputError(f"{name} must lie in [0, 0.5] (Lamb-Dicke regime), got {value}")
        if not (math.isfinite(self.N) and self.N >= 0):
            raise InvalidInputError(f"N must be finite and >= 0, got {self.N}")
        if self.n_max is None:
            object.__setattr__(self, "n_max", _auto_nmax(self.N))
        if int(self.n_max) != self.n_max:
            raise ConfigError(f"n_max must be an integer, got {self.n_max}")
        object.__setattr__(self, "n_max", int(self.n_max))
        floor = math.ceil(10 * self.N + 5)
        if self.n_max < floor:
            raise ConfigError(f"n_max = {self.n_max} below required ceil(10 N + 5) = {floor}")
        thermal_weights(self.N, self.n_max)  # raises on a heavy tail

    @property
    def levels(self) -> int:
        return self.n_max + 1

    def vibrational_energies(self) -> np.ndarray:
        return self.omega0 * (np.arange(self.levels) + 0.5)

    def with_nmax(self, n_max: int) -> "MotionSpec":
        return MotionSpec(self.omega0, self.eta_L, self.eta_r, self.N, n_max)


def position_squared(levels: int) -> np.ndarray:
    """Matrix of (l + l^dagger)^2 on Fock levels 0 .. levels-1."""
    n = np.arange(levels, dtype=float)
    x2 = np.diag(2 * n + 1)
    off = np.sqrt((n[:-2] + 1) * (n[:-2] + 2))
    x2[np.arange(2, levels), np.arange(levels - 2)] = off
    x2[np.arange(levels - 2), np.arange(2, levels)] = off
    return x2


@dataclass(frozen=True, eq=False)
class LambDickeCoefficients:
    x2: np.ndarray
    eta_L: float
    eta_r: float

    @property
    def eta_bar(self) -> float:
        """Raman correction coefficient (eta_L^2 + eta_r^2) / 2."""
        return 0.5 * (self.eta_L**2 + self.eta_r**2)

    @property
    def raman(self) -> np.ndarray:
        return np.eye(self.x2.shape[0]) - self.eta_bar * self.x2

    @property
    def stark(self) -> np.ndarray:
        return np.eye(self.x2.shape[0]) - self.eta_L**2 * self.x2

    @property
    def cavity(self) -> np.ndarray:
        """Motional part of the cavity light shift, in units of g^2/delta."""
        return -self.eta_r**2 * self.x2


def lamb_dicke_coefficients(motion: MotionSpec) -> LambDickeCoefficients:
    return LambDickeCoefficients(position_squared(motion.levels), motion.eta_L, motion.eta_r)


def thermal_weights(N: float, n_max: int) -> np.ndarray:
    """Bose-Einstein populations p_n ~ N^n / (1+N)^(n+1), truncated and renormalized."""
    if not (math.isfinite(N) and N >= 0):
        raise InvalidInputError(f"N must be finite and >= 0, got {N}")
    if int(n_max) != n_max or n_max < 0:
        raise ConfigError(f"n_max must be a non-negative integer, got {n_max}")
    n = np.arange(int(n_max) + 1)
    if N == 0:
        return (n == 0).astype(float)
    ratio = N / (1 + N)
    discarded = ratio ** (n_max + 1)
    if discarded >= THERMAL_TAIL:
        raise TruncationError(
            f"n_max = {n_max} discards thermal mass {discarded:.3g} >= {THERMAL_TAIL} at N = {N}"
        )
    p = ratio**n / (1 + N)
    return p / p.sum()


# ---------------------------------------------------------------------------
# State and Hamiltonian
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class SingleExcitationState:
    """Amplitudes on the vibrational levels ``levels`` at time ``t``."""

    atom: np.ndarray
    cavity: np.ndarray
    continuum: np.ndarray
    t: float
    grid: ContinuumGrid
    levels: np.ndarray
    diagnostics: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def excited(cls, level: int, grid: ContinuumGrid, levels: Sequence[int], t: float = 0.0):
        """Atom in |i>, vibrational Fock level ``level``, empty cavity and continuum."""
        levels = np.asarray(levels, dtype=int)
        if level not in levels:
            raise InvalidInputError(f"level {level} not among propagated levels")
        atom = (levels == level).astype(complex)
        return cls(atom, np.zeros(levels.size, complex),
                   np.zeros((levels.size, grid.mode_count), complex), float(t), grid, levels)

    def populations(self) -> tuple[float, float, float]:
        return (float(np.sum(np.abs(self.atom) ** 2)), float(np.sum(np.abs(self.cavity) ** 2)),
                float(np.sum(np.abs(self.continuum) ** 2)))

    def norm(self) -> float:
        return sum(self.populations())

    def vector(self) -> np.ndarray:
        """Flattened amplitudes in the order used by MotionHamiltonian.matrix."""
        blocks = [np.concatenate(([a], [c], m)) for a, c, m in zip(self.atom, self.cavity, self.continuum)]
        return np.concatenate(blocks)


def excitation_number(state: SingleExcitationState) -> float:
    """Expectation of the excitation number; equals the norm in this basis."""
    return state.norm()


class MotionHamiltonian:
    """Generator of the one-excitation dynamics for one polarization branch.

    The explicit form of the Hamiltonian is available via :meth:`matrix`;
    the propagators use the equivalent dense atom/cavity blocks.
    """

    def __init__(self, branch: PolarizationBranch, motion: MotionSpec, grid: ContinuumGrid,
                 levels: Sequence[int] | None = None, include_cavity_shift: bool = False):
        self.branch = branch
        self.motion = motion
        self.grid = grid
        self.include_cavity_shift = include_cavity_shift
        if levels is None:
            levels = np.arange(motion.levels)
        self.levels = np.asarray(levels, dtype=int)
        ld = lamb_dicke_coefficients(motion)
        sub = np.ix_(self.levels, self.levels)
        self.x2 = ld.x2[sub]
        self.stark_factor = ld.stark[sub]
        self.raman_factor = ld.raman[sub]
        cavity = branch.g**2 / branch.delta * ld.cavity[sub]
        if include_cavity_shift:
            cavity = cavity + branch.g**2 / branch.delta * np.eye(self.levels.size)
        self.cavity_shift = cavity
        self.nu = motion.omega0 * (self.levels + 0.5)

    @property
    def coupling(self) -> float:
        """Cavity-mode coupling sqrt(k_c * spacing / pi)."""
        return math.sqrt(self.branch.k_c * self.grid.spacing / math.pi)

    def pulse_samples(self, pulse: Pulse, t):
        """Stark shift Omega^2/(4 delta) and Raman coupling g Omega e^(i phi)/(2 delta)."""
        t = np.asarray(t, dtype=float)
        stark = pulse.intensity(t) / (4.0 * self.branch.delta)
        raman = self.branch.g * pulse.rabi(t) / (2.0 * self.branch.delta) * np.exp(1j * pulse.phase_at(t))
        return stark, raman

    def blocks(self, damping: float = 0.0):
        """Dense blocks A0, AS, AR, AR2 with d/dt y = (A0 + S AS + R AR + R* AR2) y.

        y = [a_i(levels), a_c(levels)].  ``damping`` adds -damping on a_c,
        the Markov limit of the flat continuum.
        """
        k = self.levels.size
        eye = np.eye(k)
        A0 = np.zeros((2 * k, 2 * k), complex)
        A0[:k, :k] = -1j * np.diag(self.nu)
        A0[k:, k:] = -1j * (np.diag(self.nu) + self.cavity_shift) - damping * eye
        AS = np.zeros_like(A0)
        AS[:k, :k] = -1j * self.stark_factor
        AR = np.zeros_like(A0)
        AR[:k, k:] = -self.raman_factor
        AR2 = np.zeros_like(A0)
        AR2[k:, :k] = self.raman_factor
        return A0, AS, AR, AR2

    def matrix(self, t: float, pulse: Pulse, pulse_start: float = 0.0) -> sparse.csr_matrix:
        """Sparse Hermitian H(t) over (level, {i, c, m_0 .. m_M-1})."""
        k = self.levels.size
        M = self.grid.mode_count
        block = M + 2
        stark, raman = self.pulse_samples(pulse, t - pulse_start)
        stark, raman = float(stark), complex(raman)
        rows, cols, vals = [], [], []

        def put(r, c_, v):
            rows.append(r)
            cols.append(c_)
            vals.append(v)

        omega = self.grid.frequencies
        hop = -1j * self.coupling * np.exp(-1j * omega * t)
        for a in range(k):
            base_a = a * block
            for b in range(k):
                base_b = b * block
                diag = self.nu[a] if a == b else 0.0
                put(base_a, base_b, diag + stark * self.stark_factor[a, b])
                put(base_a + 1, base_b + 1, diag + self.cavity_shift[a, b])
                put(base_a, base_b + 1, -1j * raman * self.raman_factor[a, b])
                put(base_a + 1, base_b, 1j * np.conj(raman) * self.raman_factor[a, b])
            idx = base_a + 2 + np.arange(M)
            rows.extend([base_a + 1] * M)
            cols.extend(idx.tolist())
            vals.extend(hop.tolist())
            rows.extend(idx.tolist())
            cols.extend([base_a + 1] * M)
            vals.extend(np.conj(hop).tolist())
            rows.extend(idx.tolist())
            cols.extend(idx.tolist())
            vals.extend([self.nu[a]] * M)
        size = k * block
        return sparse.csr_matrix((vals, (rows, cols)), shape=(size, size), dtype=complex)

    def max_frequency(self, pulse: Pulse, markov: bool = False) -> float:
        """Largest rate in the generator, used to bound the time step."""
        bound = 4 * int(self.levels.max()) + 3  # row-sum bound of X^2
        peak = pulse.peak_intensity()
        stark = peak / (4 * self.branch.delta) * (1 + self.motion.eta_L**2 * bound)
        raman = self.branch.g * math.sqrt(peak) / (2 * self.branch.delta) * (1 + bound * 0.5 * (
            self.motion.eta_L**2 + self.motion.eta_r**2))
        cavity = float(np.max(np.abs(self.cavity_shift).sum(axis=1)))
        rates = [stark, raman, cavity, float(self.nu.max())]
        if markov:
            rates.append(self.branch.k_c)
        else:
            rates.append(float(np.max(np.abs(self.grid.frequencies))))
        return max(rates)

    def default_step(self, pulse: Pulse, markov: bool = False) -> float:
        return min(STEP_FACTOR / self.max_frequency(pulse, markov), pulse.duration / MIN_STEPS)


# ---------------------------------------------------------------------------
# Explicit-continuum propagation
# ---------------------------------------------------------------------------


def _step_count(duration: float, dt: float, limit: float, even: bool = False) -> int:
    if not (math.isfinite(dt) and dt > 0):
        raise ConfigError(f"time step must be > 0, got {dt}")
    if dt > limit * (1 + 1e-9):
        raise ConfigError(f"time step {dt:.4g} us exceeds the stability bound {limit:.4g} us")
    steps = math.ceil(duration / dt - 1e-9)
    if even:
        steps += steps % 2
    return steps


def propagate(state0: SingleExcitationState, H: MotionHamiltonian, pulse: Pulse,
              dt: float | None = None, record_every: int = 0) -> SingleExcitationState:
    """Integrate the Schroedinger equation across one pulse with fixed-step RK4.

    The pulse starts at ``state0.t``.  With ``record_every > 0`` the result
    carries rows (t_us, norm, pop_atom, pop_cavity, pop_continuum).
    """
    from ._kernels import explicit_rk4

    if not np.array_equal(state0.levels, H.levels):
        raise InvalidInputError("state and Hamiltonian cover different vibrational levels")
    if state0.grid != H.grid:
        raise InvalidInputError("state and Hamiltonian use different continuum grids")
    limit = STEP_FACTOR / H.max_frequency(pulse)
    steps = _step_count(pulse.duration, limit if dt is None else dt, limit)
    h = pulse.duration / steps
    local = np.linspace(0.0, pulse.duration, 2 * steps + 1)
    stark, raman = H.pulse_samples(pulse, local)
    A0, AS, AR, AR2 = H.blocks()
    y = np.concatenate((state0.atom, state0.cavity)).astype(complex)
    t0 = state0.t
    # continuum amplitudes in the frame rotating with nu_n
    modes = state0.continuum * np.exp(1j * H.nu * t0)[:, None]
    modes = np.ascontiguousarray(modes, dtype=complex)
    rows = steps // record_every if record_every > 0 else 0
    record = np.zeros((rows, 5))
    norm0 = state0.norm()
    y = explicit_rk4(y, modes, A0, AS, AR, AR2, stark.astype(float), raman.astype(complex),
                     H.nu.astype(float), H.grid.frequencies, H.coupling, h, t0, steps,
                     1000, record_every, record)
    t1 = t0 + pulse.duration
    k = H.levels.size
    state = SingleExcitationState(y[:k].copy(), y[k:].copy(), modes * np.exp(-1j * H.nu * t1)[:, None],
                                  t1, H.grid, H.levels.copy(), record if rows else None)
    drift = abs(state.norm() - norm0)
    if not drift < NORM_TOLERANCE:
        raise NumericalInstabilityError(f"norm drift {drift:.3g} exceeds {NORM_TOLERANCE}")
    return state


DIAGNOSTIC_COLUMNS = ("t_us", "norm", "pop_atom", "pop_cavity", "pop_continuum")


def target_state(env: SpectralEnvelope, c: InitialSuperposition | None = None) -> np.ndarray:
    """Discretized ideal photon amplitudes G(w_m) sqrt(spacing), unnormalized.

    With ``c`` the two polarization sectors are stacked as rows weighted by
    c_0 and c_1 for one shared envelope.
    """
    amps = env.amplitudes * env.grid.weight
    if c is None:
        return amps
    return np.vstack((c.c0 * amps, c.c1 * amps))


# ---------------------------------------------------------------------------
# Fidelity with thermal motion
# ---------------------------------------------------------------------------


def coupled_components(H: MotionHamiltonian) -> list[np.ndarray]:
    """Groups of vibrational levels connected by the motional couplings."""
    link = (np.abs(H.stark_factor - np.diag(np.diag(H.stark_factor))) > 0) | \
           (np.abs(H.raman_factor - np.diag(np.diag(H.raman_factor))) > 0) | \
           (np.abs(H.cavity_shift - np.diag(np.diag(H.cavity_shift))) > 0)
    k = link.shape[0]
    label = -np.ones(k, int)
    groups = []
    for start in range(k):
        if label[start] >= 0:
            continue
        stack, members = [start], []
        label[start] = len(groups)
        while stack:
            node = stack.pop()
            members.append(node)
            for nxt in np.flatnonzero(link[node]):
                if label[nxt] < 0:
                    label[nxt] = len(groups)
                    stack.append(nxt)
        groups.append(np.array(sorted(members)))
    return groups


def _is_constant(pulse: Pulse) -> bool:
    return isinstance(pulse.shape, Square) and not callable(pulse.phase)


def _markov_overlaps(H: MotionHamiltonian, pulse: Pulse, profile: np.ndarray, h: float,
                     start: np.ndarray, block: int = 512) -> np.ndarray:
    """Overlaps sum_m conj(T_m) a_m(n', T) for initial columns ``start`` (2k x K).

    The continuum back-action is the exact flat-band damping -k_c a_c; the
    emitted amplitudes follow from a_m = c sum_j w_j exp(i(w_m + nu) t_j) a_c(t_j),
    so their projection onto the target reduces to a time integral against
    ``profile`` (the target in the time domain).
    """
    kc = H.branch.k_c
    A0, AS, AR, AR2 = H.blocks(damping=kc)
    k = H.levels.size
    steps = profile.size - 1
    w = simpson_weights(steps, h)
    duration = steps * h
    t = h * np.arange(steps + 1)
    kernel = w * profile
    rot = np.exp(1j * np.outer(t, H.nu))  # (steps+1, k)
    Y = start.astype(complex)
    acc = np.zeros((k, Y.shape[1]), complex)
    flux = np.zeros(Y.shape[1])

    def absorb(j0, ac):  # ac: (J, k, K)
        J = ac.shape[0]
        acc[:] += np.einsum("j,jl,jlk->lk", kernel[j0:j0 + J], rot[j0:j0 + J], ac)
        flux[:] += 2 * kc * np.einsum("j,jlk->k", w[j0:j0 + J], np.abs(ac) ** 2)

    if _is_constant(pulse):
        stark, raman = H.pulse_samples(pulse, np.array([0.5 * duration]))
        A = A0 + stark[0] * AS + raman[0] * AR + np.conj(raman[0]) * AR2
        hA = h * A
        step = np.eye(2 * k) + hA @ (np.eye(2 * k) + hA @ (np.eye(2 * k) / 2 + hA @ (np.eye(2 * k) / 6 + hA / 24)))
        powers = [np.eye(2 * k)]
        for _ in range(block - 1):
            powers.append(step @ powers[-1])
        powers = np.array(powers)
        jump = step @ powers[-1]
        j = 0
        while j <= steps:
            count = min(block, steps + 1 - j)
            states = powers[:count] @ Y  # (count, 2k, K)
            absorb(j, states[:, k:, :])
            Y = jump @ Y if count == block else states[-1]
            j += count
        final = Y
    else:
        local = np.linspace(0.0, duration, 2 * steps + 1)
        stark, raman = H.pulse_samples(pulse, local)

        def gen(i):
            return A0 + stark[i] * AS + raman[i] * AR + np.conj(raman[i]) * AR2

        history = np.empty((min(block, steps + 1), k, Y.shape[1]), complex)
        history[0] = Y[k:]
        filled, first = 1, 0
        for j in range(steps):
            A1, A2, A3 = gen(2 * j), gen(2 * j + 1), gen(2 * j + 2)
            k1 = A1 @ Y
            k2 = A2 @ (Y + 0.5 * h * k1)
            k3 = A2 @ (Y + 0.5 * h * k2)
            k4 = A3 @ (Y + h * k3)
            Y = Y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            history[filled] = Y[k:]
            filled += 1
            if filled == history.shape[0]:
                absorb(first, history[:filled])
                first += filled
                filled = 0
        if filled:
            absorb(first, history[:filled])
        final = Y
    total = np.sum(np.abs(final) ** 2, axis=0) + flux
    drift = np.max(np.abs(total - np.sum(np.abs(start) ** 2, axis=0)))
    if not drift < NORM_TOLERANCE:
        raise NumericalInstabilityError(f"probability balance off by {drift:.3g} (> {NORM_TOLERANCE})")
    return np.exp(-1j * H.nu * duration)[:, None] * acc


def _target_profile(env: SpectralEnvelope, coupling: float, h: float, steps: int) -> np.ndarray:
    """Target photon in the time domain: c sqrt(dw) sum_m conj(G_m) exp(i w_m t_j)."""
    return coupling * env.grid.weight * mode_sum_in_time(np.conj(env.amplitudes), env.grid, h, steps + 1)


def branch_overlaps(branch: PolarizationBranch, pulse: Pulse, motion: MotionSpec, grid: ContinuumGrid,
                    initial_levels: Sequence[int], engine: str = "markov", dt: float | None = None,
                    env: SpectralEnvelope | None = None) -> tuple[np.ndarray, float]:
    """Overlap vectors v[n', k] with the ideal photon, for each initial level k.

    Returns the (levels x len(initial_levels)) matrix and the squared target
    norm.
    """
    if env is None:
        env = spectral_envelope(pulse, branch, grid)
    target_norm = float(np.sum(np.abs(env.amplitudes) ** 2) * grid.spacing)
    full = MotionHamiltonian(branch, motion, grid)
    groups = coupled_components(full)
    out = np.zeros((motion.levels, len(initial_levels)), complex)
    initial_levels = list(initial_levels)
    if engine not in ("markov", "explicit"):
        raise InvalidInputError(f"engine must be 'markov' or 'explicit', got {engine!r}")
    if target_norm == 0:
        return out, 0.0

    singleton_cache: complex | None = None
    for members in groups:
        cols = [i for i, lev in enumerate(initial_levels) if lev in members]
        if not cols:
            continue
        if members.size == 1 and singleton_cache is not None:
            lev = int(members[0])
            # an isolated level only adds the global phase exp(-i nu T)
            out[lev, cols[0]] = np.exp(-1j * motion.omega0 * (lev + 0.5) * pulse.duration) * singleton_cache
            continue
        H = MotionHamiltonian(branch, motion, grid, levels=members)
        if engine == "markov":
            limit = STEP_FACTOR / H.max_frequency(pulse, markov=True)
            step = min(limit, pulse.duration / MIN_STEPS) if dt is None else dt
            steps = _step_count(pulse.duration, step, limit, even=True)
            h = pulse.duration / steps
            profile = _target_profile(env, H.coupling, h, steps)
            start = np.zeros((2 * members.size, len(cols)), complex)
            for j, col in enumerate(cols):
                start[np.searchsorted(members, initial_levels[col]), j] = 1.0
            v = _markov_overlaps(H, pulse, profile, h, start)
        else:
            target = env.amplitudes * grid.weight
            v = np.zeros((members.size, len(cols)), complex)
            for j, col in enumerate(cols):
                state = SingleExcitationState.excited(initial_levels[col], grid, members)
                final = propagate(state, H, pulse, dt)
                v[:, j] = final.continuum @ np.conj(target)
        out[np.ix_(members, cols)] = v
        if members.size == 1:
            lev = int(members[0])
            singleton_cache = complex(v[0, 0] * np.exp(1j * motion.omega0 * (lev + 0.5) * pulse.duration))
    return out, target_norm


@dataclass(frozen=True)
class MotionResult:
    single_cycle: float
    per_level: np.ndarray
    weights: np.ndarray

    def fidelity(self, n: int) -> float:
        return self.single_cycle ** int(n)


def motion_single_cycle(branches, pulses, motion: MotionSpec, c: InitialSuperposition,
                        grid: ContinuumGrid | None = None, engine: str = "markov",
                        dt: float | None = None) -> MotionResult:
    """P(1) with thermal motion: sum_k p_k |sum_a |c_a|^2 v_a,k|^2 / sum_a |c_a|^2 |T_a|^2.

    The two polarizations emit into orthogonal modes, so the overlap of the
    emitted state with the normalized target splits into branch terms
    weighted by |c_a|^2 that add coherently within each vibrational level.
    """
    branches = per_branch(branches, "branches")
    pulses = per_branch(pulses, "pulses")
    weights = thermal_weights(motion.N, motion.n_max)
    levels = [k for k in range(motion.levels) if weights[k] > 0]
    cw = c.weights
    total_v = np.zeros((motion.levels, len(levels)), complex)
    norm = 0.0
    cache = {}
    for alpha in (0, 1):
        if cw[alpha] == 0:
            continue
        key = (branches[alpha].g, branches[alpha].delta, branches[alpha].k_c, id(pulses[alpha]))
        if key not in cache:
            g = grid or default_grid(pulses[alpha].duration, branches[alpha].k_c + branches[alpha].k_a)
            cache[key] = branch_overlaps(branches[alpha], pulses[alpha], motion, g, levels, engine, dt)
        v, tn = cache[key]
        total_v += cw[alpha] * v
        norm += cw[alpha] * tn
    if norm == 0:
        return MotionResult(0.0, np.zeros(len(levels)), weights[levels])
    per_level = np.sum(np.abs(total_v) ** 2, axis=0) / norm
    return MotionResult(float(np.dot(weights[levels], per_level)), per_level, weights[levels])


def motion_fidelity(n: int, branches, pulses, motion: MotionSpec, c: InitialSuperposition,
                    grid: ContinuumGrid | None = None, engine: str = "markov",
                    dt: float | None = None) -> float:
    """P(n) = P(1)^n, the vibrational state being re-prepared every cycle."""
    if int(n) != n or n < 0:
        raise InvalidInputError(f"photon count n must be a non-negative integer, got {n}")
    return motion_single_cycle(branches, pulses, motion, c, grid, engine, dt).fidelity(n)
