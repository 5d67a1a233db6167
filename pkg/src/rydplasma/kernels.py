"""Numba kernels for direct-sum soft-core Coulomb interactions (scaled units).

Loops run in a fixed order so results are bit-reproducible for a given input.
Charges are in units of e; ``kc`` is the Coulomb constant for unit charges.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def pair_forces(pos, q, a2, kc, out):
    """Overwrite ``out`` with the soft-core Coulomb force on every particle.

    The pair loop visits each pair once and applies equal and opposite
    contributions, so the total internal force vanishes up to rounding.
    """
    n = pos.shape[0]
    for i in range(n):
        out[i, 0] = 0.0
        out[i, 1] = 0.0
        out[i, 2] = 0.0
    for i in range(n):
        xi = pos[i, 0]
        yi = pos[i, 1]
        zi = pos[i, 2]
        qi = kc * q[i]
        fx = 0.0
        fy = 0.0
        fz = 0.0
        for j in range(i + 1, n):
            dx = xi - pos[j, 0]
            dy = yi - pos[j, 1]
            dz = zi - pos[j, 2]
            r2 = dx * dx + dy * dy + dz * dz + a2
            s = qi * q[j] / (r2 * np.sqrt(r2))
            fx += s * dx
            fy += s * dy
            fz += s * dz
            out[j, 0] -= s * dx
            out[j, 1] -= s * dy
            out[j, 2] -= s * dz
        out[i, 0] += fx
        out[i, 1] += fy
        out[i, 2] += fz


@njit(cache=True)
def add_trap_forces(pos, kT, radius, zeta, out):
    """Add -dV/dr for V(r) = kT r^zeta / (zeta R^zeta)."""
    n = pos.shape[0]
    c = kT / radius**zeta
    half = 0.5 * (zeta - 2)
    for i in range(n):
        r2 = pos[i, 0] ** 2 + pos[i, 1] ** 2 + pos[i, 2] ** 2
        s = -c * r2**half
        out[i, 0] += s * pos[i, 0]
        out[i, 1] += s * pos[i, 1]
        out[i, 2] += s * pos[i, 2]


@njit(cache=True)
def add_charge_forces(pos, q, src, src_q, a2, kc, out):
    """Add forces exerted on the particles by fixed-in-time source charges."""
    n = pos.shape[0]
    m = src.shape[0]
    for i in range(n):
        fx = 0.0
        fy = 0.0
        fz = 0.0
        for k in range(m):
            dx = pos[i, 0] - src[k, 0]
            dy = pos[i, 1] - src[k, 1]
            dz = pos[i, 2] - src[k, 2]
            r2 = dx * dx + dy * dy + dz * dz + a2
            s = src_q[k] / (r2 * np.sqrt(r2))
            fx += s * dx
            fy += s * dy
            fz += s * dz
        c = kc * q[i]
        out[i, 0] += c * fx
        out[i, 1] += c * fy
        out[i, 2] += c * fz


@njit(cache=True)
def add_dipole_forces(pos, q, centers, moments, a2, kc, out):
    """Add forces from soft-cored ideal point dipoles (moments in e*length)."""
    n = pos.shape[0]
    m = centers.shape[0]
    for i in range(n):
        fx = 0.0
        fy = 0.0
        fz = 0.0
        for k in range(m):
            dx = pos[i, 0] - centers[k, 0]
            dy = pos[i, 1] - centers[k, 1]
            dz = pos[i, 2] - centers[k, 2]
            r2 = dx * dx + dy * dy + dz * dz + a2
            inv3 = 1.0 / (r2 * np.sqrt(r2))
            pr = moments[k, 0] * dx + moments[k, 1] * dy + moments[k, 2] * dz
            c5 = 3.0 * pr * inv3 / r2
            fx += c5 * dx - moments[k, 0] * inv3
            fy += c5 * dy - moments[k, 1] * inv3
            fz += c5 * dz - moments[k, 2] * inv3
        c = kc * q[i]
        out[i, 0] += c * fx
        out[i, 1] += c * fy
        out[i, 2] += c * fz


@njit(cache=True)
def fields_at(points, pos, q, a2, kc, out):
    """Overwrite ``out`` with the soft-core Coulomb field of the charges at ``points``."""
    npts = points.shape[0]
    n = pos.shape[0]
    for p in range(npts):
        ex = 0.0
        ey = 0.0
        ez = 0.0
        for i in range(n):
            dx = points[p, 0] - pos[i, 0]
            dy = points[p, 1] - pos[i, 1]
            dz = points[p, 2] - pos[i, 2]
            r2 = dx * dx + dy * dy + dz * dz + a2
            s = q[i] / (r2 * np.sqrt(r2))
            ex += s * dx
            ey += s * dy
            ez += s * dz
        out[p, 0] = kc * ex
        out[p, 1] = kc * ey
        out[p, 2] = kc * ez


@njit(cache=True)
def dipole_drive(pos, q, center, axis, a2, kc):
    """Sum of q_i (axis . r_i) / (|r_i|^2 + a^2)^(3/2), r_i relative to ``center``.

    Multiplied by -kc this is the force on a unit-charge dipole coordinate
    along ``axis`` in the dipole approximation.
    """
    s = 0.0
    for i in range(pos.shape[0]):
        dx = pos[i, 0] - center[0]
        dy = pos[i, 1] - center[1]
        dz = pos[i, 2] - center[2]
        r2 = dx * dx + dy * dy + dz * dz + a2
        s += q[i] * (axis[0] * dx + axis[1] * dy + axis[2] * dz) / (r2 * np.sqrt(r2))
    return kc * s


@njit(cache=True)
def kinetic_and_potential(pos, vel, q, m, a2, kc):
    """Total kinetic energy and soft-core pair potential energy of the particles."""
    n = pos.shape[0]
    ke = 0.0
    pe = 0.0
    for i in range(n):
        ke += 0.5 * m[i] * (vel[i, 0] ** 2 + vel[i, 1] ** 2 + vel[i, 2] ** 2)
        for j in range(i + 1, n):
            dx = pos[i, 0] - pos[j, 0]
            dy = pos[i, 1] - pos[j, 1]
            dz = pos[i, 2] - pos[j, 2]
            pe += kc * q[i] * q[j] / np.sqrt(dx * dx + dy * dy + dz * dz + a2)
    return ke, pe
