"""Discretized probability densities on bounded rectangular domains.

Cell-centered storage: axis i spans [0, upper_i] in N_i cells of width
dx_i = upper_i / N_i, cell centers at (j + 1/2) dx_i. All integrals are
cell-centered Riemann sums, so mass bookkeeping is exact at first order
and consistent with the solver's grid. Arrays are row-major with the last
axis fastest.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .errors import DomainMismatchError, NumericalError, SizingError

MASS_TOL = 1e-8
KL_FLOOR = 1e-30
DEFAULT_MAX_CELLS = 32_000_000


@dataclass(frozen=True)
class DomainSpec:
    """Bounded rectangular domain [0, upper_i]^n with N_i cells per axis."""

    upper: tuple[float, ...]
    cells: tuple[int, ...]
    max_cells: int = DEFAULT_MAX_CELLS

    def __post_init__(self):
        object.__setattr__(self, "upper", tuple(float(u) for u in self.upper))
        object.__setattr__(self, "cells", tuple(int(c) for c in self.cells))
        if len(self.upper) != len(self.cells):
            raise ValueError("upper and cells must have equal length")
        n = len(self.upper)
        if not 1 <= n <= 3:
            raise ValueError(f"dimension must be 1..3, got {n}")
        for i, (u, c) in enumerate(zip(self.upper, self.cells)):
            if u <= 0.0:
                raise ValueError(f"upper[{i}] must be positive, got {u}")
            if c < 2:
                raise ValueError(f"cells[{i}] must be >= 2, got {c}")
        total = self.total_cells
        if total > self.max_cells:
            raise SizingError(
                f"grid of {total} cells exceeds the budget of {self.max_cells}; "
                f"raise max_cells explicitly if this is intended"
            )

    @property
    def ndim(self) -> int:
        return len(self.upper)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(u / c for u, c in zip(self.upper, self.cells))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def total_cells(self) -> int:
        return int(np.prod(self.cells))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.cells

    def centers(self, axis: int) -> np.ndarray:
        """Cell-center coordinates along one axis."""
        dx = self.spacing[axis]
        return (np.arange(self.cells[axis]) + 0.5) * dx

    def axis_domain(self, axis: int) -> "DomainSpec":
        return DomainSpec((self.upper[axis],), (self.cells[axis],), self.max_cells)

    def nearest_cell(self, point) -> tuple[int, ...]:
        """Index of the cell whose center is nearest to `point` (snapping)."""
        idx = []
        for k, x in enumerate(point):
            j = int(np.floor(float(x) / self.spacing[k]))
            idx.append(min(max(j, 0), self.cells[k] - 1))
        return tuple(idx)

    def cell_center(self, index) -> tuple[float, ...]:
        return tuple((j + 0.5) * dx for j, dx in zip(index, self.spacing))


@dataclass(frozen=True)
class DensityGrid:
    """Non-negative field on a DomainSpec, plus a dimensionless timestamp.

    Instances are immutable once constructed (the value array is marked
    read-only), so they are safe to share across concurrent workers.
    Use :meth:`density` for unit-mass construction; the plain constructor
    accepts any non-negative field (e.g. max-normalized shapes).
    """

    domain: DomainSpec
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if v.shape != self.domain.shape:
            raise ValueError(f"values shape {v.shape} != domain shape {self.domain.shape}")
        if not np.isfinite(v).all():
            raise NumericalError("non-finite values in grid field")
        if (v < 0.0).any():
            raise ValueError("grid field must be non-negative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def density(cls, domain: DomainSpec, values: np.ndarray, time: float = 0.0,
                normalize: bool = True) -> "DensityGrid":
        """Construct a probability density; renormalizes (or checks) unit mass."""
        v = np.ascontiguousarray(values, dtype=np.float64)
        m = float(v.sum()) * domain.cell_volume
        if normalize:
            if m <= 0.0:
                raise ValueError("cannot normalize a field with zero mass")
            v = v / m
        elif abs(m - 1.0) > MASS_TOL:
            raise ValueError(f"mass {m} deviates from 1 beyond {MASS_TOL}")
        return cls(domain, v, time)

    def with_values(self, values: np.ndarray, time: float | None = None) -> "DensityGrid":
        return DensityGrid(self.domain, values, self.time if time is None else time)

    def value_at(self, index) -> float:
        return float(self.values[tuple(index)])

    def argmax_index(self) -> tuple[int, ...]:
        """Cell index of the maximum; first in storage order on ties."""
        return tuple(int(i) for i in np.unravel_index(int(np.argmax(self.values)), self.values.shape))


def total_mass(p: DensityGrid) -> float:
    """Riemann mass sum(values) * prod(dx)."""
    return float(p.values.sum()) * p.domain.cell_volume


def _require_same_domain(p: DensityGrid, q: DensityGrid):
    if p.domain != q.domain:
        raise DomainMismatchError(f"domains differ: {p.domain} vs {q.domain}")


def l1_distance(p: DensityGrid, q: DensityGrid) -> float:
    """Cellwise L1 distance sum(|p - q|) * prod(dx)."""
    _require_same_domain(p, q)
    return float(np.abs(p.values - q.values).sum()) * p.domain.cell_volume


def marginal(p: DensityGrid, axis: int) -> DensityGrid:
    """Integrate the joint density over all axes except `axis`."""
    n = p.domain.ndim
    if n < 2:
        raise ValueError("marginal requires a joint density (ndim >= 2)")
    if not 0 <= axis < n:
        raise ValueError(f"axis {axis} out of range for ndim {n}")
    others = tuple(k for k in range(n) if k != axis)
    weight = float(np.prod([p.domain.spacing[k] for k in others]))
    vals = p.values.sum(axis=others) * weight
    return DensityGrid(p.domain.axis_domain(axis), vals, p.time)


def normalize_by_max(f: DensityGrid) -> DensityGrid:
    """Scale so the maximum equals 1 exactly; shape and argmax preserved."""
    peak = float(f.values.max())
    if peak <= 0.0:
        raise ValueError("cannot max-normalize an all-zero field")
    return f.with_values(f.values / peak)


def kl_divergence(p: DensityGrid, q: DensityGrid) -> float:
    """KL divergence of p from reference q, with q floored at KL_FLOOR.

    Cells with p == 0 contribute nothing; the result is clamped at 0 so
    quadrature round-off never produces a negative divergence.
    """
    _require_same_domain(p, q)
    pv = p.values
    qv = np.maximum(q.values, KL_FLOOR)
    mask = pv > 0.0
    val = float(np.sum(pv[mask] * np.log(pv[mask] / qv[mask]))) * p.domain.cell_volume
    return max(val, 0.0)


# ---------------------------------------------------------------------------
# construction helpers for named initial-condition shapes

def uniform_density(domain: DomainSpec, time: float = 0.0) -> DensityGrid:
    vals = np.full(domain.shape, 1.0 / (domain.cell_volume * domain.total_cells))
    return DensityGrid(domain, vals, time)


def delta_density(domain: DomainSpec, point, time: float = 0.0) -> DensityGrid:
    """All mass in the single cell containing `point` (grid-delta box)."""
    vals = np.zeros(domain.shape)
    vals[domain.nearest_cell(point)] = 1.0 / domain.cell_volume
    return DensityGrid(domain, vals, time)


def gaussian_density(domain: DomainSpec, center, sigma, time: float = 0.0) -> DensityGrid:
    """Truncated (renormalized) Gaussian bump evaluated at cell centers."""
    center = np.atleast_1d(np.asarray(center, dtype=np.float64))
    sigma = np.atleast_1d(np.asarray(sigma, dtype=np.float64))
    if sigma.size == 1:
        sigma = np.repeat(sigma, domain.ndim)
    logs = []
    for k in range(domain.ndim):
        xk = domain.centers(k)
        logs.append(-0.5 * ((xk - center[k]) / sigma[k]) ** 2)
    expo = logs[0]
    for k in range(1, domain.ndim):
        expo = expo[..., None] + logs[k]
    vals = np.exp(expo)
    return DensityGrid.density(domain, vals, time)


def uniform_box_density(domain: DomainSpec, lo, hi, time: float = 0.0) -> DensityGrid:
    """Uniform density over an axis-aligned box (cells whose centers fall inside)."""
    mask = box_mask(domain, lo, hi)
    if not mask.any():
        raise ValueError("box contains no cell centers")
    return DensityGrid.density(domain, mask.astype(np.float64), time)


def mixture_density(components: list[tuple[float, DensityGrid]], time: float = 0.0) -> DensityGrid:
    """Convex mixture of unit-mass components."""
    dom = components[0][1].domain
    vals = np.zeros(dom.shape)
    wsum = 0.0
    for w, comp in components:
        _require_same_domain(components[0][1], comp)
        vals += w * comp.values
        wsum += w
    return DensityGrid.density(dom, vals / wsum, time)


def box_mask(domain: DomainSpec, lo, hi) -> np.ndarray:
    """Boolean mask of cells whose centers lie in the closed box [lo, hi]."""
    lo = np.atleast_1d(np.asarray(lo, dtype=np.float64))
    hi = np.atleast_1d(np.asarray(hi, dtype=np.float64))
    for k in range(domain.ndim):
        if lo[k] > hi[k]:
            raise ValueError(f"box axis {k} has lo > hi")
        if lo[k] < 0.0 or hi[k] > domain.upper[k]:
            raise ValueError(f"box axis {k} outside the domain")
    masks = []
    for k in range(domain.ndim):
        xk = domain.centers(k)
        masks.append((xk >= lo[k]) & (xk <= hi[k]))
    m = masks[0]
    for k in range(1, domain.ndim):
        m = m[..., None] & masks[k]
    return m


# ---------------------------------------------------------------------------
# serialization


def write_grid_binary(p: DensityGrid, path) -> None:
    """Flat little-endian layout: ndim, N_i..., upper_i..., then cell values."""
    with open(path, "wb") as fh:
        np.asarray([p.domain.ndim], dtype="<i8").tofile(fh)
        np.asarray(p.domain.cells, dtype="<i8").tofile(fh)
        np.asarray(p.domain.upper, dtype="<f8").tofile(fh)
        np.ascontiguousarray(p.values, dtype="<f8").tofile(fh)


def read_grid_binary(path, max_cells: int = DEFAULT_MAX_CELLS) -> DensityGrid:
    with open(path, "rb") as fh:
        n = int(np.fromfile(fh, dtype="<i8", count=1)[0])
        cells = tuple(int(c) for c in np.fromfile(fh, dtype="<i8", count=n))
        upper = tuple(float(u) for u in np.fromfile(fh, dtype="<f8", count=n))
        dom = DomainSpec(upper, cells, max_cells)
        vals = np.fromfile(fh, dtype="<f8", count=dom.total_cells).reshape(cells)
    return DensityGrid(dom, vals)


def write_grid_csv(p: DensityGrid, path) -> None:
    """One row per cell: center coordinates then the value."""
    dom = p.domain
    cols = np.meshgrid(*[dom.centers(k) for k in range(dom.ndim)], indexing="ij")
    buf = io.StringIO()
    buf.write(",".join(f"x{k + 1}" for k in range(dom.ndim)) + ",value\n")
    flat = [c.ravel() for c in cols] + [p.values.ravel()]
    for row in zip(*flat):
        buf.write(",".join(f"{v:.17g}" for v in row) + "\n")
    with open(path, "w") as fh:
        fh.write(buf.getvalue())
