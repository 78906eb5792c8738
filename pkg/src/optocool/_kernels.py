"""Compiled per-trajectory Euler loop for the Gaussian-moment sampler."""
import math

import numba
import numpy as np

BLOWUP_LIMIT = 1e15


@numba.njit(cache=True, nogil=True)
def integrate_chunk(beta, u, V, z, dt, kappa, gamma, g, n_b, n_c, delta, omega_c, force,
                    step0, stride, burn_step, out_nc, out_na, out_beta, acc):
    """Advance one trajectory over ``z.shape[0]`` Euler steps in place.

    ``beta`` is a length-2 float array (Re, Im), ``u``/``V`` the first and
    non-central second moments.  Samples are written after every ``stride``-th
    global step into slot ``(step // stride)``.  ``acc`` accumulates
    ``[sum n_c, sum n_a, count, min n_c]`` over steps at or beyond
    ``burn_step``.  Returns the global step index of a blow-up, or -1.
    """
    noise = math.sqrt(kappa * n_b * dt)
    d_mech = gamma * (2.0 * n_c + 1.0)
    br = beta[0]
    bi = beta[1]
    AV = np.empty((4, 4))
    for k in range(z.shape[0]):
        bx = 2.0 * br
        by = 2.0 * bi
        a12 = g * bx
        a13 = g * by
        a20 = -g * by
        a30 = g * bx
        f1 = force * g * (br * br + bi * bi)
        u0 = u[0]
        u1 = u[1]
        u2 = u[2]
        u3 = u[3]
        for j in range(4):
            v0 = V[0, j]
            v1 = V[1, j]
            v2 = V[2, j]
            v3 = V[3, j]
            AV[0, j] = -gamma * v0 + omega_c * v1
            AV[1, j] = -omega_c * v0 - gamma * v1 + a12 * v2 + a13 * v3
            AV[2, j] = a20 * v0 - kappa * v2 + delta * v3
            AV[3, j] = a30 * v0 - delta * v2 - kappa * v3
        for i in range(4):
            for j in range(i, 4):
                V[i, j] = V[i, j] + (AV[i, j] + AV[j, i]) * dt
        V[0, 0] += d_mech * dt
        V[1, 1] += d_mech * dt
        V[2, 2] += kappa * dt
        V[3, 3] += kappa * dt
        # F = f u^T + u f^T with f = [0, f1, 0, 0], pre-update mean
        V[0, 1] += f1 * u0 * dt
        V[1, 1] += 2.0 * f1 * u1 * dt
        V[1, 2] += f1 * u2 * dt
        V[1, 3] += f1 * u3 * dt
        for i in range(4):
            for j in range(i + 1, 4):
                V[j, i] = V[i, j]
        u[0] = u0 + (-gamma * u0 + omega_c * u1) * dt
        u[1] = u1 + (-omega_c * u0 - gamma * u1 + a12 * u2 + a13 * u3 + f1) * dt
        u[2] = u2 + (a20 * u0 - kappa * u2 + delta * u3) * dt
        u[3] = u3 + (a30 * u0 - delta * u2 - kappa * u3) * dt
        nbr = br - kappa * br * dt + noise * z[k, 0]
        bi = bi - kappa * bi * dt + noise * z[k, 1]
        br = nbr

        step = step0 + k + 1
        nc_now = 0.5 * (V[0, 0] + V[1, 1] - 1.0)
        if step >= burn_step:
            acc[0] += nc_now
            acc[1] += 0.5 * (V[2, 2] + V[3, 3] - 1.0)
            acc[2] += 1.0
            if nc_now < acc[3]:
                acc[3] = nc_now
        if step % stride == 0:
            s = step // stride
            out_nc[s] = nc_now
            out_na[s] = 0.5 * (V[2, 2] + V[3, 3] - 1.0)
            out_beta[s, 0] = br
            out_beta[s, 1] = bi
            bad = False
            for i in range(4):
                for j in range(4):
                    x = V[i, j]
                    if not (abs(x) <= BLOWUP_LIMIT):
                        bad = True
            if bad:
                beta[0] = br
                beta[1] = bi
                return step
    beta[0] = br
    beta[1] = bi
    for i in range(4):
        for j in range(4):
            if not (abs(V[i, j]) <= BLOWUP_LIMIT):
                return step0 + z.shape[0]
    return -1
