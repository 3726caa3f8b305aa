"""Compiled inner loop for the explicit-continuum propagator."""
from __future__ import annotations

import numba
import numpy as np


@numba.njit(cache=True)
def _stage(y, q, A, nvib, c):
    out = A @ y
    for n in range(nvib):
        out[nvib + n] -= c * q[n]
    return out


@numba.njit(cache=True)
def _assemble(A0, AS, AR, AR2, s, r):
    return A0 + s * AS + r * AR + np.conj(r) * AR2


@numba.njit(cache=True)
def explicit_rk4(y, modes, A0, AS, AR, AR2, stark, raman, nu, omega, c, h, t0,
                 nsteps, resync, record_every, record):
    """Classical RK4 for atom/cavity amplitudes coupled to discrete continuum modes.

    ``y`` holds [a_i(n), a_c(n)] per vibrational level, ``modes[n, m]`` the
    continuum amplitudes in the frame rotating with the vibrational energy
    nu_n.  ``stark`` and ``raman`` are the pulse samples at every half step.
    The mode sums are updated in closed form, which is exactly the RK4 step
    of the full linear system with the mode phases exp(i w_m t) kept explicit.
    """
    nvib = nu.shape[0]
    nmodes = omega.shape[0]
    u = np.exp(0.5j * h * omega)
    k1sum = np.sum(np.conj(u))
    nu_half = np.exp(-0.5j * h * nu)
    phase = np.exp(1j * omega * t0)
    q0 = np.zeros(nvib, np.complex128)
    q1 = np.zeros(nvib, np.complex128)
    q2 = np.zeros(nvib, np.complex128)
    row = 0
    for step in range(nsteps):
        t = t0 + step * h
        if step % resync == 0:
            phase = np.exp(1j * omega * t)
        for n in range(nvib):
            s0 = 0j
            s1 = 0j
            s2 = 0j
            for m in range(nmodes):
                p0 = phase[m]
                p1 = p0 * u[m]
                p2 = p1 * u[m]
                x = modes[n, m]
                s0 += np.conj(p0) * x
                s1 += np.conj(p1) * x
                s2 += np.conj(p2) * x
            rot = np.exp(-1j * nu[n] * t)
            q0[n] = rot * s0
            q1[n] = rot * nu_half[n] * s1
            q2[n] = rot * nu_half[n] * nu_half[n] * s2
        A1 = _assemble(A0, AS, AR, AR2, stark[2 * step], raman[2 * step])
        A2 = _assemble(A0, AS, AR, AR2, stark[2 * step + 1], raman[2 * step + 1])
        A3 = _assemble(A0, AS, AR, AR2, stark[2 * step + 2], raman[2 * step + 2])

        k1 = _stage(y, q0, A1, nvib, c)
        y2 = y + 0.5 * h * k1
        k2 = _stage(y2, q1 + 0.5 * h * c * y[nvib:] * nu_half * k1sum, A2, nvib, c)
        y3 = y + 0.5 * h * k2
        k3 = _stage(y3, q1 + 0.5 * h * c * y2[nvib:] * nmodes, A2, nvib, c)
        y4 = y + h * k3
        k4 = _stage(y4, q2 + h * c * y3[nvib:] * nu_half * k1sum, A3, nvib, c)

        coef = h / 6.0 * c
        for n in range(nvib):
            e0 = np.exp(1j * nu[n] * t)
            e1 = e0 / nu_half[n]
            e2 = e1 / nu_half[n]
            b0 = coef * e0 * y[nvib + n]
            b1 = 2.0 * coef * e1 * (y2[nvib + n] + y3[nvib + n])
            b2 = coef * e2 * y4[nvib + n]
            for m in range(nmodes):
                p0 = phase[m]
                p1 = p0 * u[m]
                modes[n, m] += p0 * b0 + p1 * b1 + p1 * u[m] * b2
        for m in range(nmodes):
            phase[m] *= u[m] * u[m]
        y = y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

        if record_every > 0 and (step + 1) % record_every == 0 and row < record.shape[0]:
            pa = 0.0
            pc = 0.0
            for n in range(nvib):
                pa += abs(y[n]) ** 2
                pc += abs(y[nvib + n]) ** 2
            pm = 0.0
            for n in range(nvib):
                for m in range(nmodes):
                    pm += modes[n, m].real ** 2 + modes[n, m].imag ** 2
            record[row, 0] = t + h
            record[row, 1] = pa + pc + pm
            record[row, 2] = pa
            record[row, 3] = pc
            record[row, 4] = pm
            row += 1
    return y
