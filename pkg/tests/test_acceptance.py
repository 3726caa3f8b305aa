"""Acceptance criteria, one test each.

Every test prints ``PASS`` or ``FAIL`` with the measured quantity and its
tolerance, then asserts.  The lines are repeated in the pytest terminal
summary.  Reference parameters: g = 60, I = 3600, delta = 1500, k_c = 25
(angular MHz), T = 30 us, square pulses, identical branches.
"""
import math

import numpy as np
import pytest

from cqedsource.experiment import figure_command
from cqedsource.model import (
    PolarizationBranch,
    ideal_fidelity,
    spectral_envelope,
    wavepacket_overlap,
)
from cqedsource.motion import (
    MotionHamiltonian,
    MotionSpec,
    SingleExcitationState,
    motion_single_cycle,
    propagate,
    target_state,
)
from cqedsource.noise import convert_fr_to_d, loss_fidelity, mu_from_endpoints, wiener_endpoints

from conftest import ACCEPTANCE, DELTA, G, INTENSITY, KC, MU, T, closed_p


def report(number: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    ACCEPTANCE.append(line)
    print(line)


def test_criterion_1_ideal_closed_form(branch, pulse, balanced):
    # independent evaluation straight from the parameters
    mu = G**2 * INTENSITY * T / (4 * DELTA**2 * KC)
    expected = {n: (1 - math.exp(-2 * mu)) ** n for n in (1, 10)}
    got = {n: ideal_fidelity(n, branch, pulse, balanced) for n in (1, 10)}
    err = max(abs(got[n] - expected[n]) for n in got)
    # printed references agree to one unit in their last digit
    quoted = abs(got[1] - 0.96845) <= 1e-5 and abs(got[10] - 0.7257) <= 1e-4
    ok = err < 1e-6 and quoted
    report(1, ok, f"P(1)={got[1]:.7f} P(10)={got[10]:.7f}, |err| {err:.1e} < 1e-6, "
                  f"printed 0.96845/0.7257 within one last-digit unit: {quoted}")
    assert ok


def test_criterion_2_envelope_norm(branch, pulse, grid):
    target = 1 - math.exp(-2 * MU)
    coarse = spectral_envelope(pulse, branch, grid).norm() - target
    fine_grid = grid.refined(4)
    fine = spectral_envelope(pulse, branch, fine_grid).norm() - target
    ok = abs(coarse) < 1e-3 and abs(fine) < 1e-5
    report(2, ok, f"norm error {coarse:.2e} (tol 1e-3, M={grid.mode_count}), "
                  f"{fine:.2e} at 4x modes (tol 1e-5, M={fine_grid.mode_count}); "
                  f"residual is the square-pulse spectral tail beyond W={grid.half_bandwidth:g}")
    assert ok


def test_criterion_3_monte_carlo_average(branch, pulse):
    samples = 100_000
    endpoints = wiener_endpoints(T, seed=2024, trials=np.arange(samples))
    noiseless = 1 - math.exp(-2 * MU)
    parts, ok = [], True
    for fr in (0.05, 0.1, 0.2):
        D = convert_fr_to_d(fr, pulse)
        mu = mu_from_endpoints(pulse, branch, D, endpoints)
        values = 1 - np.exp(-2 * mu)
        mean = values.mean()
        se = values.std(ddof=1) / math.sqrt(samples)
        sigma2 = G**4 * D * T / (16 * DELTA**4 * KC**2)
        closed = 1 - math.exp(-2 * MU + 2 * sigma2)
        z = (mean - closed) / se
        below = mean < noiseless
        ok &= abs(z) < 3 and below
        parts.append(f"fr={fr}: mean {mean:.6f} vs {closed:.6f} (z={z:+.2f}, below noiseless: {below})")
    report(3, ok, "; ".join(parts))
    assert ok


def test_criterion_4_loss(pulse, balanced):
    ka = 0.01 * KC
    kappa = KC + ka
    mu = G**2 * INTENSITY * T / (4 * DELTA**2 * kappa)
    rederived = (KC / kappa * (1 - math.exp(-2 * mu))) ** 10
    lossy = PolarizationBranch(G, DELTA, KC, ka)
    got = loss_fidelity(10, lossy, pulse, balanced)
    lossless = PolarizationBranch(G, DELTA, KC)
    reduces = all(loss_fidelity(n, lossless, pulse, balanced) == ideal_fidelity(n, lossless, pulse, balanced)
                  for n in (1, 10))
    ok = abs(got - rederived) < 1e-3 and abs(got - 0.6496) < 1e-3 and reduces
    report(4, ok, f"P(10)={got:.6f} vs re-derived {rederived:.6f} and 0.6496 (tol 1e-3); "
                  f"k_a=0 equals ideal exactly: {reduces}")
    assert ok


@pytest.mark.slow
def test_criterion_5_motionless_limit(branch, pulse, grid, balanced, envelope):
    motion = MotionSpec(1.0)
    H = MotionHamiltonian(branch, motion, grid, levels=[0])
    final = propagate(SingleExcitationState.excited(0, grid, [0]), H, pulse)
    emitted = final.populations()[2]
    photon = final.continuum[0]
    ideal = target_state(envelope)
    overlap = np.vdot(ideal, photon)
    fidelity = abs(overlap) ** 2 / np.vdot(ideal, ideal).real
    # remove the global phase picked up by the vibrational ground state
    aligned = photon * np.exp(-1j * np.angle(overlap))
    dominant = np.abs(ideal) ** 2 >= 0.01 * np.max(np.abs(ideal) ** 2)
    rel = np.max(np.abs(aligned[dominant] - ideal[dominant]) / np.abs(ideal[dominant]))
    p1 = closed_p(1)
    ok = abs(fidelity - p1) < 1e-3 and rel < 1e-2
    report(5, ok, f"explicit engine: overlap P(1)={fidelity:.6f} vs {p1:.6f} (tol 1e-3), "
                  f"emitted {emitted:.6f}; max rel. mode error {rel:.2e} on {dominant.sum()} "
                  f"dominant modes (tol 1e-2); gap from cavity filtering of the square-pulse tail")
    assert ok


def test_criterion_6_thermal_ordering(branch, pulse, grid, balanced):
    thermal = (0.01, 0.1, 0.5, 1.0)
    results = [motion_single_cycle(branch, pulse, MotionSpec(1.0, 0.07, 0.07, N), balanced, grid)
               for N in thermal]
    ordered = all(a.fidelity(n) > b.fidelity(n) for n in range(1, 11) for a, b in zip(results, results[1:]))
    near = abs(results[0].fidelity(1) - closed_p(1))
    drift = 0.0
    for N, res in zip(thermal, results):
        spec = MotionSpec(1.0, 0.07, 0.07, N)
        wider = motion_single_cycle(branch, pulse, spec.with_nmax(spec.n_max + 5), balanced, grid)
        drift = max(drift, max(abs(wider.fidelity(n) - res.fidelity(n)) for n in range(1, 11)))
    ok = ordered and near < 0.02 and drift < 1e-4
    report(6, ok, f"strictly decreasing in N for n=1..10: {ordered}; N=0.01 vs motionless at n=1 "
                  f"{near:.2e} (tol 0.02); n_max+5 drift {drift:.1e} (tol 1e-4)")
    assert ok


def test_criterion_7_wavepacket_independence(branch, pulse, grid, envelope):
    # a discrete grid recurs after 2 pi / spacing, so only shifts short of
    # the first echo describe distinct wavepackets
    zero_err = abs(wavepacket_overlap(envelope, 0.0) - envelope.norm())
    echo = grid.recurrence_time
    shifts = np.arange(3 * T, echo - T + 1e-9, 0.25)
    coarse = max(abs(wavepacket_overlap(envelope, s)) for s in np.concatenate([shifts, -shifts]))
    fine_env = spectral_envelope(pulse, branch, grid.refined(4))
    wide = np.arange(3 * T, 10 * T + 1e-9, 0.25)
    fine = max(abs(wavepacket_overlap(fine_env, s)) for s in np.concatenate([wide, -wide]))
    ok = zero_err < 1e-6 and coarse < 0.01 and fine < 0.01
    report(7, ok, f"|overlap(0)-norm| {zero_err:.1e} (tol 1e-6); max |overlap| {coarse:.1e} for "
                  f"3T<=|dt|<={echo - T:.0f}, {fine:.1e} for 3T<=|dt|<=10T at 4x modes (tol 0.01)")
    assert ok


@pytest.mark.slow
def test_criterion_8_determinism(tmp_path, monkeypatch):
    runs = {}
    runs["a"] = figure_command("fig2", tmp_path / "a", seed=42, workers=1)
    runs["b"] = figure_command("fig2", tmp_path / "b", seed=42, workers=1)
    runs["c"] = figure_command("fig2", tmp_path / "c", seed=42, workers=3)
    monkeypatch.setenv("CQEDSOURCE_WORKERS", "2")
    runs["d"] = figure_command("fig2", tmp_path / "d", seed=42)
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    identical = all(
        sorted(p.name for p in (tmp_path / k).iterdir()) == names
        and all((tmp_path / k / name).read_bytes() == (tmp_path / "a" / name).read_bytes() for name in names)
        for k in "bcd"
    )
    ok = identical and len(names) == 4
    report(8, ok, f"fig2 files {names} byte-identical across reruns and worker counts 1, 3, env 2: {identical}")
    assert ok
