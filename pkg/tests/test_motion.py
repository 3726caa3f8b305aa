import math

import numpy as np
import pytest

from cqedsource.errors import ConfigError, InvalidInputError, TruncationError
from cqedsource.model import (
    ContinuumGrid,
    InitialSuperposition,
    PolarizationBranch,
    Pulse,
    SineSquaredRamp,
    default_grid,
    ideal_fidelity,
    spectral_envelope,
    square_pulse,
)
from cqedsource.motion import (
    MotionHamiltonian,
    MotionSpec,
    SingleExcitationState,
    coupled_components,
    excitation_number,
    lamb_dicke_coefficients,
    motion_fidelity,
    motion_single_cycle,
    position_squared,
    propagate,
    target_state,
    thermal_weights,
)

# Short pulse with the same mu as the reference curves, cheap enough for
# the explicit-continuum propagator.
SHORT_T = 5.0
SHORT_PULSE = square_pulse(3600.0 * 6, SHORT_T)
BRANCH = PolarizationBranch(60.0, 1500.0, 25.0)
SHORT_GRID = default_grid(SHORT_T, 25.0)


# -- Lamb-Dicke and thermal pieces --------------------------------------------

def test_position_squared_elements():
    x2 = position_squared(8)
    for n in range(8):
        assert x2[n, n] == 2 * n + 1
        if n + 2 < 8:
            assert x2[n + 2, n] == pytest.approx(math.sqrt((n + 1) * (n + 2)), rel=1e-15)
    np.testing.assert_array_equal(x2, x2.T)
    assert np.count_nonzero(x2 - np.diag(np.diag(x2))) == 2 * 6
    # agrees with building X from ladder operators on a larger space
    a = np.diag(np.sqrt(np.arange(1, 12)), 1)
    x = a + a.T
    np.testing.assert_allclose((x @ x)[:8, :8], x2, atol=1e-12)


def test_lamb_dicke_coefficients():
    still = lamb_dicke_coefficients(MotionSpec(1.0, 0.0, 0.0, 0.0))
    np.testing.assert_array_equal(still.raman, np.eye(still.x2.shape[0]))
    moving = lamb_dicke_coefficients(MotionSpec(1.0, 0.07, 0.07, 0.0))
    assert moving.eta_bar == pytest.approx(0.0049, abs=1e-15)
    assert moving.raman[0, 0] == pytest.approx(1 - 0.0049, abs=1e-15)
    assert moving.x2[0, 0] == 1


def test_thermal_weights():
    np.testing.assert_array_equal(thermal_weights(0.0, 6), [1, 0, 0, 0, 0, 0, 0])
    p = thermal_weights(1.0, 40)
    np.testing.assert_allclose(p, 2.0 ** -(np.arange(41) + 1.0) / (1 - 2.0**-41), rtol=1e-12)
    assert p.sum() == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(TruncationError):
        thermal_weights(1.0, 15)


@pytest.mark.parametrize("N", [0.01, 0.1, 0.5, 1.0, 2.0])
def test_auto_truncation_mean(N):
    m = MotionSpec(1.0, 0.07, 0.07, N)
    assert m.n_max >= math.ceil(10 * N + 5)
    p = thermal_weights(N, m.n_max)
    assert abs(np.dot(np.arange(m.levels), p) - N) < 1e-6


def test_motion_spec_validation():
    with pytest.raises(InvalidInputError):
        MotionSpec(1.0, 0.6, 0.0, 0.0)
    with pytest.raises(InvalidInputError):
        MotionSpec(0.0, 0.0, 0.0, 0.0)
    with pytest.raises(ConfigError):
        MotionSpec(1.0, 0.07, 0.07, 1.0, n_max=10)
    with pytest.raises(TruncationError):
        MotionSpec(1.0, 0.07, 0.07, 1.0, n_max=16)


# -- Hamiltonian ----------------------------------------------------------------------

@pytest.mark.parametrize("t", [0.0, 0.37, 2.5, 4.99])
def test_hamiltonian_hermitian(t):
    grid = ContinuumGrid(10.0, 12)
    motion = MotionSpec(1.3, 0.1, 0.05, 0.0)
    pulse = Pulse(SineSquaredRamp(2000.0, 5.0, 0.3), 0.4)
    H = MotionHamiltonian(BRANCH, motion, grid).matrix(t, pulse)
    dense = H.toarray()
    np.testing.assert_allclose(dense, dense.conj().T, atol=1e-13)


def test_hamiltonian_sparsity_fixed():
    grid = ContinuumGrid(10.0, 12)
    H = MotionHamiltonian(BRANCH, MotionSpec(1.0, 0.07, 0.07, 0.0), grid)
    p = square_pulse(3600.0, 5.0)
    a, b = H.matrix(0.5, p), H.matrix(3.0, p)
    assert a.nnz == b.nnz
    assert np.array_equal(a.indices, b.indices)


def test_hamiltonian_matches_propagator_generator():
    # one Euler-sized check: H from matrix() and the dense blocks agree on a, c rows
    grid = ContinuumGrid(10.0, 6)
    motion = MotionSpec(1.0, 0.2, 0.1, 0.0)
    H = MotionHamiltonian(BRANCH, motion, grid)
    pulse = square_pulse(3600.0, 5.0, phase=0.3)
    full = H.matrix(0.0, pulse).toarray()
    A0, AS, AR, AR2 = H.blocks()
    stark, raman = H.pulse_samples(pulse, np.array([0.0]))
    A = A0 + stark[0] * AS + raman[0] * AR + np.conj(raman[0]) * AR2
    k = H.levels.size
    block = grid.mode_count + 2
    idx = np.concatenate((np.arange(k) * block, np.arange(k) * block + 1))
    np.testing.assert_allclose(-1j * full[np.ix_(idx, idx)], A, atol=1e-12)


def test_components_follow_parity():
    grid = ContinuumGrid(10.0, 6)
    comps = coupled_components(MotionHamiltonian(BRANCH, MotionSpec(1.0, 0.07, 0.07, 0.0), grid))
    assert [list(c) for c in comps] == [[0, 2, 4], [1, 3, 5]]
    comps = coupled_components(MotionHamiltonian(BRANCH, MotionSpec(1.0, 0.0, 0.0, 0.0), grid))
    assert len(comps) == 6


# -- explicit propagation -------------------------------------------------------------

def test_zero_pulse_only_diagonal_phases():
    motion = MotionSpec(1.0, 0.07, 0.07, 0.0)
    H = MotionHamiltonian(BRANCH, motion, SHORT_GRID)
    rng = np.random.default_rng(4)
    state = SingleExcitationState.excited(0, SHORT_GRID, H.levels)
    state.atom = rng.normal(size=H.levels.size) + 1j * rng.normal(size=H.levels.size)
    state.atom /= np.linalg.norm(state.atom)
    pulse = square_pulse(0.0, 1.0)
    final = propagate(state, H, pulse)
    np.testing.assert_allclose(np.abs(final.atom), np.abs(state.atom), atol=1e-12)
    np.testing.assert_allclose(final.atom, state.atom * np.exp(-1j * H.nu * 1.0), atol=1e-10)
    assert np.all(final.cavity == 0) and np.all(final.continuum == 0)


def test_step_bound_enforced():
    H = MotionHamiltonian(BRANCH, MotionSpec(1.0), SHORT_GRID, levels=[0])
    state = SingleExcitationState.excited(0, SHORT_GRID, [0])
    with pytest.raises(ConfigError):
        propagate(state, H, SHORT_PULSE, dt=1e-3)


@pytest.fixture(scope="module")
def short_run():
    H = MotionHamiltonian(BRANCH, MotionSpec(1.0), SHORT_GRID, levels=[0])
    state = SingleExcitationState.excited(0, SHORT_GRID, [0])
    return state, propagate(state, H, SHORT_PULSE, record_every=5000)


@pytest.mark.slow
def test_motionless_emission_matches_closed_form(pulse, branch, grid):
    H = MotionHamiltonian(branch, MotionSpec(1.0), grid, levels=[0])
    state = SingleExcitationState.excited(0, grid, [0])
    final = propagate(state, H, pulse)
    assert abs(final.populations()[2] - (1 - math.exp(-2 * 1.728))) < 1e-3
    assert abs(final.norm() - state.norm()) < 1e-6


def test_short_run_conserves_norm(short_run):
    state, final = short_run
    assert abs(final.norm() - state.norm()) < 1e-6
    assert excitation_number(state) == state.norm() == 1.0
    assert abs(excitation_number(final) - 1) < 1e-6


def test_diagnostics_rows(short_run):
    _, final = short_run
    d = final.diagnostics
    assert d.shape[1] == 5 and d.shape[0] >= 9
    np.testing.assert_allclose(d[:, 1], d[:, 2] + d[:, 3] + d[:, 4], rtol=1e-12)
    assert np.all(np.abs(d[:, 1] - 1) < 1e-6)
    assert np.all(np.diff(d[:, 4]) > 0)


def test_explicit_step_convergence():
    motion = MotionSpec(1.0)
    c = InitialSuperposition.balanced()
    coarse = motion_fidelity(1, BRANCH, SHORT_PULSE, motion, c, SHORT_GRID, engine="explicit")
    H = MotionHamiltonian(BRANCH, motion, SHORT_GRID, levels=[0])
    fine = motion_fidelity(1, BRANCH, SHORT_PULSE, motion, c, SHORT_GRID, engine="explicit",
                           dt=0.5 * H.default_step(SHORT_PULSE))
    assert abs(coarse - fine) < 1e-7


def test_sequential_propagations_conserve_excitation():
    grid = default_grid(2.0, 25.0)
    H = MotionHamiltonian(BRANCH, MotionSpec(1.0), grid, levels=[0])
    state = SingleExcitationState.excited(0, grid, [0])
    pulse = square_pulse(3600.0, 2.0)
    for _ in range(10):
        state = propagate(state, H, pulse)
    assert abs(excitation_number(state) - 1) < 1e-5
    assert state.t == pytest.approx(20.0)


def test_engines_agree_with_motion():
    # the reduced engine is the infinite-band limit: the gap falls like 1/W
    motion = MotionSpec(1.0, 0.07, 0.07, 0.0)
    c = InitialSuperposition.balanced()
    gaps = []
    for grid in (SHORT_GRID, ContinuumGrid(400.0, 2 * SHORT_GRID.mode_count)):
        markov = motion_single_cycle(BRANCH, SHORT_PULSE, motion, c, grid)
        explicit = motion_single_cycle(BRANCH, SHORT_PULSE, motion, c, grid, engine="explicit")
        gaps.append(abs(markov.single_cycle - explicit.single_cycle))
    assert gaps[0] < 2.5e-3
    assert gaps[1] < 0.6 * gaps[0]


# -- targets and fidelity ---------------------------------------------------------------

def test_target_state(envelope, balanced):
    t = target_state(envelope, balanced)
    mu = 1.728
    assert np.sum(np.abs(t) ** 2) == pytest.approx(envelope.norm(), rel=1e-12)
    assert abs(np.sum(np.abs(t) ** 2) - (1 - math.exp(-2 * mu))) < 1e-3
    np.testing.assert_array_equal(np.abs(t[0]), np.abs(t[1]))
    zero = target_state(spectral_envelope(square_pulse(0.0, 30.0), BRANCH, envelope.grid))
    assert np.all(zero == 0)


def test_markov_engine_motionless(pulse, branch, balanced):
    for N in (0.0, 1.0):
        p = motion_fidelity(1, branch, pulse, MotionSpec(1.0, 0.0, 0.0, N), balanced)
        assert abs(p - ideal_fidelity(1, branch, pulse, balanced)) < 3e-3
    p0 = motion_fidelity(3, branch, pulse, MotionSpec(1.0, 0.0, 0.0, 0.0), balanced)
    p1 = motion_fidelity(3, branch, pulse, MotionSpec(1.0, 0.0, 0.0, 1.0), balanced)
    assert p0 == pytest.approx(p1, abs=1e-12)


def test_markov_smooth_pulse_motionless(branch, balanced):
    # without the abrupt switch-on the cavity delay costs only second order
    ramp = Pulse(SineSquaredRamp(4000.0, 30.0, 0.2))
    got = motion_fidelity(1, branch, ramp, MotionSpec(1.0), balanced)
    assert abs(got - ideal_fidelity(1, branch, ramp, balanced)) < 1e-3


def test_zero_pulse_fidelity(branch, balanced):
    assert motion_fidelity(1, branch, square_pulse(0.0, 30.0), MotionSpec(1.0, 0.07, 0.07, 0.1), balanced) == 0.0


def test_markov_step_convergence(pulse, branch, balanced):
    motion = MotionSpec(1.0, 0.07, 0.07, 0.1)
    a = motion_fidelity(1, branch, pulse, motion, balanced)
    b = motion_fidelity(1, branch, pulse, motion, balanced, dt=30.0 / 120_000)
    assert abs(a - b) < 1e-7


def test_fidelity_is_power_of_single_cycle(pulse, branch, balanced):
    motion = MotionSpec(1.0, 0.07, 0.07, 0.5)
    one = motion_fidelity(1, branch, pulse, motion, balanced)
    assert motion_fidelity(7, branch, pulse, motion, balanced) == pytest.approx(one**7, rel=1e-14)
    assert motion_fidelity(0, branch, pulse, motion, balanced) == 1.0


def test_unequal_branches_combination(pulse):
    b0 = PolarizationBranch(60.0, 1500.0, 25.0, label=0)
    b1 = PolarizationBranch(50.0, 1500.0, 25.0, label=1)
    motion = MotionSpec(1.0, 0.0, 0.0, 0.0)
    only0 = motion_fidelity(1, [b0, b1], pulse, motion, InitialSuperposition(1.0, 0.0))
    same = motion_fidelity(1, b0, pulse, motion, InitialSuperposition.balanced())
    assert only0 == pytest.approx(same, rel=1e-12)
    mixed = motion_fidelity(1, [b0, b1], pulse, motion, InitialSuperposition.balanced())
    assert 0 < mixed < 1
