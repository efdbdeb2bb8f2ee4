"""Numba-compiled hot kernels (default backend).

Fused loops for the pull-back advection gather, the O(N) exponential
convolution recurrence, and the per-trajectory jump-process sampler.
All kernels are nogil so candidate/SSA workers can thread over them.
"""

from __future__ import annotations

import numpy as np
from numba import njit

BACKEND_NAME = "numba"

_JIT = dict(cache=True, nogil=True, fastmath=False)


@njit(**_JIT)
def _foot(n, stretch):
    j0 = np.empty(n, dtype=np.int64)
    w = np.empty(n, dtype=np.float64)
    for i in range(n):
        f = stretch * (i + 0.5) - 0.5
        j = int(np.floor(f))
        j0[i] = j
        w[i] = f - j
    return j0, w


@njit(**_JIT)
def _gather_1d(v, j0, w):
    n = v.shape[0]
    out = np.zeros(n, dtype=np.float64)
    for i in range(n):
        j = j0[i]
        a = v[j] if 0 <= j < n else 0.0
        b = v[j + 1] if 0 <= j + 1 < n else 0.0
        out[i] = (1.0 - w[i]) * a + w[i] * b
    return out


@njit(**_JIT)
def _gather_2d(v, j00, w0, j10, w1):
    n0, n1 = v.shape
    out = np.zeros((n0, n1), dtype=np.float64)
    for i0 in range(n0):
        a0 = j00[i0]
        c0 = 1.0 - w0[i0]
        d0 = w0[i0]
        ok0a = 0 <= a0 < n0
        ok0b = 0 <= a0 + 1 < n0
        if not (ok0a or ok0b):
            continue
        for i1 in range(n1):
            a1 = j10[i1]
            ok1a = 0 <= a1 < n1
            ok1b = 0 <= a1 + 1 < n1
            if not (ok1a or ok1b):
                continue
            c1 = 1.0 - w1[i1]
            d1 = w1[i1]
            acc = 0.0
            if ok0a:
                if ok1a:
                    acc += c0 * c1 * v[a0, a1]
                if ok1b:
                    acc += c0 * d1 * v[a0, a1 + 1]
            if ok0b:
                if ok1a:
                    acc += d0 * c1 * v[a0 + 1, a1]
                if ok1b:
                    acc += d0 * d1 * v[a0 + 1, a1 + 1]
            out[i0, i1] = acc
    return out


@njit(**_JIT)
def _gather_3d(v, j00, w0, j10, w1, j20, w2):
    n0, n1, n2 = v.shape
    out = np.zeros((n0, n1, n2), dtype=np.float64)
    for i0 in range(n0):
        a0 = j00[i0]
        if a0 >= n0:
            continue
        c0 = 1.0 - w0[i0]
        d0 = w0[i0]
        hi0 = a0 + 1 < n0
        for i1 in range(n1):
            a1 = j10[i1]
            if a1 >= n1:
                continue
            c1 = 1.0 - w1[i1]
            d1 = w1[i1]
            hi1 = a1 + 1 < n1
            for i2 in range(n2):
                a2 = j20[i2]
                if a2 >= n2:
                    continue
                c2 = 1.0 - w2[i2]
                d2 = w2[i2]
                hi2 = a2 + 1 < n2
                acc = c0 * c1 * c2 * v[a0, a1, a2]
                if hi2:
                    acc += c0 * c1 * d2 * v[a0, a1, a2 + 1]
                if hi1:
                    acc += c0 * d1 * c2 * v[a0, a1 + 1, a2]
                    if hi2:
                        acc += c0 * d1 * d2 * v[a0, a1 + 1, a2 + 1]
                if hi0:
                    acc += d0 * c1 * c2 * v[a0 + 1, a1, a2]
                    if hi2:
                        acc += d0 * c1 * d2 * v[a0 + 1, a1, a2 + 1]
                    if hi1:
                        acc += d0 * d1 * c2 * v[a0 + 1, a1 + 1, a2]
                        if hi2:
                            acc += d0 * d1 * d2 * v[a0 + 1, a1 + 1, a2 + 1]
                out[i0, i1, i2] = acc
    return out


def resample_exp_stretch(values: np.ndarray, stretches: np.ndarray) -> np.ndarray:
    """Multilinear pull-back at per-axis stretched foot points (zero outside).

    Foot points of a decaying flow always sit upstream (stretch >= 1), so the
    j0 >= 0 guard only matters for degenerate stretches < 1.
    """
    v = np.ascontiguousarray(values, dtype=np.float64)
    idx = [_foot(v.shape[k], float(stretches[k])) for k in range(v.ndim)]
    if v.ndim == 1:
        return _gather_1d(v, idx[0][0], idx[0][1])
    if v.ndim == 2:
        return _gather_2d(v, idx[0][0], idx[0][1], idx[1][0], idx[1][1])
    if v.ndim == 3:
        return _gather_3d(v, idx[0][0], idx[0][1], idx[1][0], idx[1][1], idx[2][0], idx[2][1])
    raise ValueError(f"unsupported ndim {v.ndim}")


@njit(**_JIT)
def _exp_conv_lines(g2, q, w0, w1):
    lines, n = g2.shape
    out = np.empty_like(g2)
    for l in range(lines):
        acc = w0 * g2[l, 0]
        out[l, 0] = acc
        for j in range(1, n):
            acc = q * acc + w0 * g2[l, j] + w1 * g2[l, j - 1]
            out[l, j] = acc
    return out


def exp_conv_last(g: np.ndarray, q: float, w0: float, w1: float) -> np.ndarray:
    """One-sided exponential convolution along the last axis, O(N) per line."""
    g = np.ascontiguousarray(g, dtype=np.float64)
    flat = g.reshape(-1, g.shape[-1])
    return _exp_conv_lines(flat, q, w0, w1).reshape(g.shape)


@njit(**_JIT)
def _ssa_loop(seed, n_traj, x0, durations, scalings, gamma, k_m, burst_size,
              regulator, hill_k, hill_h, leakage):
    np.random.seed(seed)
    n = gamma.size
    lam_max = k_m.sum()
    out = np.empty((n_traj, n), dtype=np.float64)
    for m in range(n_traj):
        x = x0.copy()
        for seg in range(durations.size):
            t_rem = durations[seg]
            while True:
                dt = np.random.exponential(1.0 / lam_max)
                if dt >= t_rem:
                    for i in range(n):
                        x[i] *= np.exp(-gamma[i] * t_rem)
                    break
                t_rem -= dt
                for i in range(n):
                    x[i] *= np.exp(-gamma[i] * dt)
                pick = np.random.random() * lam_max
                gene = 0
                acc = k_m[0]
                while pick > acc and gene < n - 1:
                    gene += 1
                    acc += k_m[gene]
                reg = regulator[gene]
                if reg >= 0:
                    ratio = x[reg] / hill_k[gene]
                    rho = 1.0 / (1.0 + ratio ** hill_h[gene] * scalings[seg, gene])
                else:
                    rho = 1.0
                c = rho + leakage[gene] * (1.0 - rho)
                if np.random.random() < c:
                    x[gene] += np.random.exponential(burst_size[gene])
        out[m] = x
    return out


def ssa_final_states(seed, n_traj, x0, durations, scalings, gamma, k_m, burst_size,
                     regulator, hill_k, hill_h, leakage):
    """Endpoint states of the jump-decay process (sequential trajectories)."""
    return _ssa_loop(
        int(seed), int(n_traj),
        np.ascontiguousarray(x0, dtype=np.float64),
        np.ascontiguousarray(durations, dtype=np.float64),
        np.ascontiguousarray(scalings, dtype=np.float64),
        np.ascontiguousarray(gamma, dtype=np.float64),
        np.ascontiguousarray(k_m, dtype=np.float64),
        np.ascontiguousarray(burst_size, dtype=np.float64),
        np.ascontiguousarray(regulator, dtype=np.int64),
        np.ascontiguousarray(hill_k, dtype=np.float64),
        np.ascontiguousarray(hill_h, dtype=np.float64),
        np.ascontiguousarray(leakage, dtype=np.float64),
    )
