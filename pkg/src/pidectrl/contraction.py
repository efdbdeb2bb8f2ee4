"""Empirical contraction analysis and a trajectory-level simulation oracle.

Replays a recorded switching profile on several initial densities, tracks
pairwise L1 distances, and fits the geometric decay rate on the series
tail. Also hosts the thinning-based stochastic simulator of the underlying
jump-decay process, used as an implementation-independent cross-check of
the grid solver.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DomainMismatchError
from .grid import DensityGrid, DomainSpec
from .network import GrnParams, gene_scaling
from .solver import FixedInputPropagator, PropagationReport, StepConfig

#: distances below this floor are numerical zero and are excluded from fits
DISTANCE_FLOOR = 1e-14


@dataclass
class DecayFit:
    """Least-squares fit of d(t) ~ prefactor * exp(-rate * t) on the tail."""

    rate: float
    prefactor: float
    r_squared: float
    n_points: int
    floored: bool = False


@dataclass
class ContractionReport:
    labels: list[str]
    times: np.ndarray
    distances: dict[tuple[int, int], np.ndarray]
    fits: dict[tuple[int, int], DecayFit] = field(default_factory=dict)
    violations: int = 0
    max_violation: float = 0.0
    applied_rows: list[int] = field(default_factory=list)

    def pairs(self):
        return sorted(self.distances.keys())

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("t,pair,distance\n")
            for pair in self.pairs():
                tag = f"{self.labels[pair[0]]}|{self.labels[pair[1]]}"
                for t, d in zip(self.times, self.distances[pair]):
                    fh.write(f"{t:.10g},{tag},{d:.17g}\n")

    def summary(self) -> dict:
        out = {
            "labels": self.labels,
            "violations": self.violations,
            "max_violation": self.max_violation,
            "pairs": {},
        }
        for pair, fit in self.fits.items():
            tag = f"{self.labels[pair[0]]}|{self.labels[pair[1]]}"
            out["pairs"][tag] = {
                "rate": fit.rate,
                "prefactor": fit.prefactor,
                "r_squared": fit.r_squared,
                "n_points": fit.n_points,
                "floored": fit.floored,
            }
        return out

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2)


def fit_decay_rate(times, dists, tail_fraction: float = 0.5) -> DecayFit:
    """Fit log(d) against t by least squares over the tail of the series.

    The early part of a contraction curve is dominated by the prefactor, so
    only the trailing `tail_fraction` is used. Points at or below the
    distance floor terminate the usable series; if that leaves fewer than 5
    points the fitted rate is reported as a lower bound (floored=True).
    """
    t = np.asarray(times, dtype=np.float64)
    d = np.asarray(dists, dtype=np.float64)
    if t.size != d.size or t.size < 5:
        raise ValueError("need at least 5 (t, d) samples")
    above = d > DISTANCE_FLOOR
    if not above.all():
        cut = int(np.argmin(above))  # first floored index
        t, d = t[:cut], d[:cut]
    floored = False
    if t.size < 5:
        floored = True
        if t.size < 2:
            return DecayFit(rate=0.0, prefactor=float(d[0]) if d.size else 0.0,
                            r_squared=0.0, n_points=int(t.size), floored=True)
    start = int(np.floor(t.size * (1.0 - tail_fraction)))
    start = min(start, t.size - 2)
    tt, ld = t[start:], np.log(d[start:])
    A = np.stack([tt, np.ones_like(tt)], axis=1)
    coef, *_ = np.linalg.lstsq(A, ld, rcond=None)
    pred = A @ coef
    ss_res = float(np.sum((ld - pred) ** 2))
    ss_tot = float(np.sum((ld - ld.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0.0 else (1.0 if ss_res == 0.0 else 0.0)
    return DecayFit(rate=float(-coef[0]), prefactor=float(np.exp(coef[1])),
                    r_squared=r2, n_points=int(tt.size), floored=floored)


def replay_profile(initials: list[DensityGrid], rows: list[int], inputs: list[np.ndarray],
                   window_steps: int, cfg: StepConfig, params: GrnParams,
                   labels: list[str] | None = None,
                   record_fine_steps: bool = False,
                   report: PropagationReport | None = None) -> ContractionReport:
    """Propagate several initial densities under one recorded input profile.

    `rows`/`inputs` are the per-window configuration indices and inducer
    vectors of a previous control run, applied verbatim. Pairwise L1
    distances are recorded at window boundaries (every fine step when
    `record_fine_steps`), and each pair's tail is fitted for a decay rate.
    """
    if len(initials) < 2:
        raise ValueError("need at least two initial densities")
    if len(rows) != len(inputs):
        raise ValueError("rows and inputs must align")
    dom = initials[0].domain
    for p in initials[1:]:
        if p.domain != dom:
            raise DomainMismatchError("replay initials must share one domain")
    labels = labels or [f"ic{k}" for k in range(len(initials))]

    unique: dict[int, FixedInputPropagator] = {}
    for r, u in zip(rows, inputs):
        if r not in unique:
            unique[r] = FixedInputPropagator(dom, params, cfg, u)

    states = [p.values for p in initials]
    pairs = [(a, b) for a in range(len(states)) for b in range(a + 1, len(states))]
    times = [0.0]
    series = {pair: [l1_from_values(states[pair[0]], states[pair[1]], dom)] for pair in pairs}
    applied: list[int] = []

    t = 0.0
    for r, u in zip(rows, inputs):
        prop = unique[r]
        applied.append(int(r))
        for s in range(window_steps):
            states = [prop.propagate_values(v, 1, report) for v in states]
            t += cfg.dt
            if record_fine_steps or s == window_steps - 1:
                times.append(t)
                for pair in pairs:
                    series[pair].append(l1_from_values(states[pair[0]], states[pair[1]], dom))

    rep = ContractionReport(
        labels=labels,
        times=np.asarray(times),
        distances={pair: np.asarray(vals) for pair, vals in series.items()},
        applied_rows=applied,
    )
    for pair, vals in rep.distances.items():
        inc = np.diff(vals)
        bad = inc > 1e-8
        rep.violations += int(bad.sum())
        if inc.size:
            rep.max_violation = max(rep.max_violation, float(inc.max()))
        if vals.size >= 5:
            rep.fits[pair] = fit_decay_rate(rep.times, vals)
    return rep


def l1_from_values(a: np.ndarray, b: np.ndarray, dom: DomainSpec) -> float:
    return float(np.abs(a - b).sum()) * dom.cell_volume


# ---------------------------------------------------------------------------
# stochastic simulation oracle

@dataclass(frozen=True)
class SsaConfig:
    """Trajectory count, horizon and seeding of the simulation oracle."""

    n_cells: int
    horizon: float
    seed: int
    chunk: int = 4096
    initial_state: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.n_cells < 1:
            raise ValueError("n_cells must be positive")
        if self.horizon <= 0.0:
            raise ValueError("horizon must be positive")


def ssa_simulate(params: GrnParams, profile, ssa: SsaConfig, domain: DomainSpec) -> DensityGrid:
    """Histogram density of trajectory endpoints under an inducer profile.

    `profile` is either a single inducer vector (held for the whole horizon)
    or a list of (duration, inducer vector) segments. Trajectories run in
    fixed-size chunks with per-chunk seeds and integer count merging, so the
    result is independent of how chunks are scheduled. States decaying past
    the domain edge are clamped into the boundary cell and counted.
    """
    if domain.ndim != params.n_genes:
        raise ValueError("domain dimension must match the gene count")
    segments = profile
    if not isinstance(profile, list):
        segments = [(ssa.horizon, profile)]
    durations = np.array([float(d) for d, _ in segments])
    if durations.sum() <= 0.0:
        raise ValueError("profile must span a positive horizon")
    scalings = np.array([
        [gene_scaling(params, i, np.asarray(u, dtype=np.float64)) for i in range(params.n_genes)]
        for _, u in segments
    ])
    n = params.n_genes
    regulator = np.array([-1 if g.regulator is None else g.regulator for g in params.genes],
                         dtype=np.int64)
    hill_k = np.array([1.0 if g.hill_k is None else g.hill_k for g in params.genes])
    hill_h = np.array([1.0 if g.hill_h is None else g.hill_h for g in params.genes])
    leakage = np.array([g.epsilon for g in params.genes])
    x0 = np.array(ssa.initial_state if ssa.initial_state is not None else [0.0] * n)

    counts = np.zeros(domain.shape, dtype=np.int64)
    clamped = 0
    spacing = np.asarray(domain.spacing)
    done = 0
    chunk_idx = 0
    while done < ssa.n_cells:
        m = min(ssa.chunk, ssa.n_cells - done)
        states = kernels.ssa_final_states(
            ssa.seed + chunk_idx, m, x0, durations, scalings,
            params.gamma_x, params.k_m, params.burst_sizes,
            regulator, hill_k, hill_h, leakage,
        )
        idx = np.floor(states / spacing[None, :]).astype(np.int64)
        over = (idx < 0) | (idx >= np.asarray(domain.cells)[None, :])
        clamped += int(over.any(axis=1).sum())
        idx = np.clip(idx, 0, np.asarray(domain.cells)[None, :] - 1)
        flat = np.ravel_multi_index([idx[:, k] for k in range(n)], domain.cells)
        counts += np.bincount(flat, minlength=domain.total_cells).reshape(domain.shape)
        done += m
        chunk_idx += 1

    if clamped:
        logging.getLogger(__name__).info("ssa: %d/%d endpoints clamped at the domain edge",
                                         clamped, ssa.n_cells)
    vals = counts.astype(np.float64) / (ssa.n_cells * domain.cell_volume)
    grid = DensityGrid(domain, vals, time=float(durations.sum()))
    return grid, clamped
