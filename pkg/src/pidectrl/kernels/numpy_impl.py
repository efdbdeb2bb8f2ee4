"""Pure-numpy reference implementations of the hot kernels.

Selected when the numba backend is unavailable or disabled via
``PIDECTRL_BACKEND=numpy``. Same contracts as ``numba_impl``; results agree
up to floating-point associativity.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "numpy"


def _foot_points(n: int, stretch: float):
    # foot of cell center i (index units): stretch*(i+1/2) - 1/2
    f = stretch * (np.arange(n) + 0.5) - 0.5
    j0 = np.floor(f).astype(np.int64)
    w = f - j0
    return j0, w


def _resample_axis(values: np.ndarray, stretch: float, axis: int) -> np.ndarray:
    """Linear-interpolation resample along one axis at stretched coordinates.

    Values outside the grid are treated as zero.
    """
    n = values.shape[axis]
    j0, w = _foot_points(n, stretch)
    j1 = j0 + 1
    in0 = (j0 >= 0) & (j0 < n)
    in1 = (j1 >= 0) & (j1 < n)
    w0 = np.where(in0, 1.0 - w, 0.0)
    w1 = np.where(in1, w, 0.0)
    shape = [1] * values.ndim
    shape[axis] = n
    a = np.take(values, np.clip(j0, 0, n - 1), axis=axis) * w0.reshape(shape)
    b = np.take(values, np.clip(j1, 0, n - 1), axis=axis) * w1.reshape(shape)
    return a + b


def resample_exp_stretch(values: np.ndarray, stretches: np.ndarray) -> np.ndarray:
    """Multilinear pull-back of `values` at per-axis stretched foot points.

    Tensor-product interpolation factorizes into sequential per-axis passes.
    The Jacobian of the flow is NOT applied here.
    """
    out = values
    for axis in range(values.ndim):
        out = _resample_axis(out, float(stretches[axis]), axis)
    return np.ascontiguousarray(out)


def exp_conv_last(g: np.ndarray, q: float, w0: float, w1: float) -> np.ndarray:
    """One-sided exponential convolution along the last axis.

    Linear recurrence out[j] = q*out[j-1] + w0*g[j] + w1*g[j-1], a one-pass
    O(N) evaluation of the discrete kernel {w0, w1*q^0, w1*q^1, ...}.
    """
    out = np.empty_like(g)
    out[..., 0] = w0 * g[..., 0]
    for j in range(1, g.shape[-1]):
        out[..., j] = q * out[..., j - 1] + w0 * g[..., j] + w1 * g[..., j - 1]
    return out


def ssa_final_states(
    seed: int,
    n_traj: int,
    x0: np.ndarray,
    durations: np.ndarray,
    scalings: np.ndarray,
    gamma: np.ndarray,
    k_m: np.ndarray,
    burst_size: np.ndarray,
    regulator: np.ndarray,
    hill_k: np.ndarray,
    hill_h: np.ndarray,
    leakage: np.ndarray,
) -> np.ndarray:
    """Endpoint states of the jump-decay process, vectorized over trajectories.

    Thinning sampler: candidate events at the total maximal rate, gene picked
    proportionally to k_m, accepted with the state-dependent activation
    probability. Deterministic decay is applied exactly between events.
    `scalings` holds the inducer scaling factor per (segment, gene).
    """
    rng = np.random.default_rng(seed)
    n = gamma.size
    lam_max = float(k_m.sum())
    cum = np.cumsum(k_m)
    x = np.tile(np.asarray(x0, dtype=np.float64), (n_traj, 1))
    rows = np.arange(n_traj)
    for seg in range(durations.size):
        f_seg = scalings[seg]
        t_rem = np.full(n_traj, float(durations[seg]))
        active = t_rem > 0.0
        while active.any():
            dt = rng.exponential(1.0 / lam_max, size=n_traj)
            dt_eff = np.where(active, np.minimum(dt, t_rem), 0.0)
            x *= np.exp(-gamma[None, :] * dt_eff[:, None])
            fired = active & (dt < t_rem)
            t_rem = t_rem - np.where(active, dt, 0.0)
            gene = np.searchsorted(cum, rng.random(n_traj) * lam_max)
            gene = np.minimum(gene, n - 1)
            reg = regulator[gene]
            xj = np.where(reg >= 0, x[rows, np.maximum(reg, 0)], 0.0)
            ratio = np.where(reg >= 0, xj / hill_k[gene], 0.0)
            rho = 1.0 / (1.0 + ratio ** hill_h[gene] * f_seg[gene])
            c = rho + leakage[gene] * (1.0 - rho)
            accept = fired & (rng.random(n_traj) < c)
            bump = rng.exponential(1.0, size=n_traj) * burst_size[gene]
            x[rows[accept], gene[accept]] += bump[accept]
            active = t_rem > 0.0
    return x
