"""Predictive-switching control: admissible input set, per-window candidate
evaluation, greedy configuration selection, and run bookkeeping.

Every actuation window spans a fixed number of fine solver steps. The
exhaustive controller integrates the density once per admissible binary
configuration, scores each predicted density with the cost functional, and
keeps the stored winner as the next window's initial condition (ties break
to the lowest row index, i.e. fewer/earlier-off inducers). The accelerated
variant in `accelerated.py` layers a proposal network on the same session.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .grid import DensityGrid, DomainSpec, box_mask
from .network import GrnParams, modulated_repression
from .solver import FixedInputPropagator, PropagationReport, StepConfig


def build_config_matrix(n_inputs: int) -> np.ndarray:
    """All 2^n binary input patterns in counting order; row r encodes r's bits."""
    if not 1 <= n_inputs <= 3:
        raise ValueError("supported input counts are 1..3")
    rows = 1 << n_inputs
    s = np.zeros((rows, n_inputs), dtype=np.int64)
    for r in range(rows):
        for j in range(n_inputs):
            s[r, j] = (r >> (n_inputs - 1 - j)) & 1
    return s


def compute_saturation(alpha: float, hill_k: float, hill_h: float, x_max: float,
                       theta: float, mu: float) -> float:
    """Smallest inducer level driving the modulated repression factor to
    1 - alpha at the regulator's domain boundary.

    Closed form: the inducer scaling must reach
    F = (alpha / (1 - alpha)) * (K / x_max)^H, hence
    kappa = theta * (1/F - 1)^(1/mu). Returns 0 (already suppressed, flagged
    by the caller) when F >= 1. The result is re-checked by evaluating the
    repression factor at (x_max, kappa).
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    f_target = (alpha / (1.0 - alpha)) * (hill_k / x_max) ** hill_h
    if f_target >= 1.0:
        return 0.0
    kappa = theta * (1.0 / f_target - 1.0) ** (1.0 / mu)
    check = modulated_repression(x_max, hill_k, hill_h, 1.0 / (1.0 + (kappa / theta) ** mu))
    if abs(check - (1.0 - alpha)) > 1e-9:
        raise ValueError(f"saturation solve failed the re-check: {check} vs {1 - alpha}")
    return float(kappa)


@dataclass(frozen=True)
class SwitchingPlan:
    """Two-level time discretization plus the admissible binary input set.

    The control grid is the every-`window_steps`-th point of the fine solver
    grid, so it is a subset by construction. Row r of the configuration
    matrix holds the binary pattern of the inducers listed in
    `controlled_genes`; the physical input is saturation * bits.
    """

    window_steps: int
    n_windows: int
    controlled_genes: tuple[int, ...]
    saturation: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "controlled_genes", tuple(int(g) for g in self.controlled_genes))
        object.__setattr__(self, "saturation", tuple(float(k) for k in self.saturation))
        if self.window_steps < 1:
            raise ValueError("window_steps must be >= 1")
        if self.n_windows < 0:
            raise ValueError("n_windows must be >= 0")
        if not self.controlled_genes:
            raise ValueError("at least one controlled gene is required")
        if len(self.controlled_genes) != len(set(self.controlled_genes)):
            raise ValueError("controlled_genes must be distinct")
        if len(self.saturation) != len(self.controlled_genes):
            raise ValueError("one saturation level per controlled gene")
        for kap in self.saturation:
            if kap <= 0.0:
                raise ValueError("saturation levels must be positive (0 means uncontrollable)")

    @property
    def n_inputs(self) -> int:
        return len(self.controlled_genes)

    @property
    def n_configs(self) -> int:
        return 1 << self.n_inputs

    @property
    def config_matrix(self) -> np.ndarray:
        return build_config_matrix(self.n_inputs)

    def input_vector(self, row: int, n_genes: int) -> np.ndarray:
        """Physical inducer vector (saturation (*) bits) for configuration `row`."""
        bits = self.config_matrix[row]
        u = np.zeros(n_genes)
        for j, gene in enumerate(self.controlled_genes):
            u[gene] = self.saturation[j] * bits[j]
        return u

    def row_bits(self, row: int) -> tuple[int, ...]:
        return tuple(int(b) for b in self.config_matrix[row])

    def bits_to_row(self, bits) -> int:
        r = 0
        for j, b in enumerate(bits):
            r |= int(round(float(b))) << (self.n_inputs - 1 - j)
        return r


def plan_from_params(params: GrnParams, domain: DomainSpec, controlled_genes,
                     alpha: float, window_steps: int, n_windows: int) -> SwitchingPlan:
    """Build a plan with saturation levels solved from the gene parameters."""
    kappas = []
    for gene in controlled_genes:
        if not 0 <= gene < params.n_genes:
            raise ConfigError(f"controlled gene index {gene} out of range")
        g = params.genes[gene]
        if g.regulator is None or g.theta is None or g.mu is None:
            raise ConfigError(f"genes[{gene}] is not inducible (needs regulator and theta/mu)")
        kappas.append(compute_saturation(alpha, g.hill_k, g.hill_h,
                                         domain.upper[g.regulator], g.theta, g.mu))
    return SwitchingPlan(window_steps, n_windows, tuple(controlled_genes), tuple(kappas))


# ---------------------------------------------------------------------------
# cost functionals

Box = tuple[tuple[float, ...], tuple[float, ...]]


@dataclass(frozen=True)
class BimodalRegionsCost:
    """Reward max-normalized mass inside two modal boxes, penalize a central one."""

    region_a: Box
    region_b: Box
    center_region: Box
    penalty_weight: float = 2.0


@dataclass(frozen=True)
class MarginalTargetsCost:
    """Sum of the max-normalized marginals evaluated at per-axis targets."""

    targets: tuple[float, ...]


@dataclass(frozen=True)
class PointTargetCost:
    """Max-normalized density value at a single target state."""

    target: tuple[float, ...]


CostFunctional = BimodalRegionsCost | MarginalTargetsCost | PointTargetCost


class BoundCost:
    """Cost functional resolved against a concrete domain.

    Target points snap to the nearest cell center (snap distances kept for
    the run log); region masks are materialized once.
    """

    def __init__(self, cost: CostFunctional, domain: DomainSpec):
        self.cost = cost
        self.domain = domain
        self.snap_distances: tuple[float, ...] = ()
        if isinstance(cost, PointTargetCost):
            if len(cost.target) != domain.ndim:
                raise ConfigError("cost.target dimension mismatch")
            self._idx = domain.nearest_cell(cost.target)
            snapped = domain.cell_center(self._idx)
            self.snap_distances = (float(np.linalg.norm(np.subtract(snapped, cost.target))),)
            self.resolved_target = snapped
        elif isinstance(cost, MarginalTargetsCost):
            if len(cost.targets) != domain.ndim:
                raise ConfigError("cost.targets must have one entry per axis")
            self._axis_idx = []
            snaps = []
            snapped = []
            for k, t in enumerate(cost.targets):
                j = domain.nearest_cell([0.0] * k + [t] + [0.0] * (domain.ndim - k - 1))[k]
                self._axis_idx.append(j)
                snapped.append(domain.centers(k)[j])
                snaps.append(abs(snapped[-1] - t))
            self.snap_distances = tuple(snaps)
            self.resolved_target = tuple(snapped)
        elif isinstance(cost, BimodalRegionsCost):
            self._mask_ab = box_mask(domain, *cost.region_a) | box_mask(domain, *cost.region_b)
            self._mask_c = box_mask(domain, *cost.center_region)
            ca = np.add(cost.region_a[0], cost.region_a[1]) / 2.0
            cb = np.add(cost.region_b[0], cost.region_b[1]) / 2.0
            self.resolved_target = tuple((ca + cb) / 2.0)
        else:
            raise ConfigError(f"unknown cost functional {type(cost).__name__}")

    def evaluate(self, values: np.ndarray) -> float:
        peak = float(values.max())
        if peak <= 0.0:
            return 0.0
        cost = self.cost
        if isinstance(cost, PointTargetCost):
            return float(values[self._idx]) / peak
        if isinstance(cost, MarginalTargetsCost):
            total = 0.0
            n = self.domain.ndim
            for k, j in enumerate(self._axis_idx):
                others = tuple(a for a in range(n) if a != k)
                marg = values.sum(axis=others)
                total += float(marg[j]) / float(marg.max())
            return total
        norm = values / peak
        dv = self.domain.cell_volume
        gain = float(norm[self._mask_ab].sum()) * dv
        pain = float(norm[self._mask_c].sum()) * dv
        return gain - cost.penalty_weight * pain


def evaluate_cost(cost: CostFunctional, p: DensityGrid) -> float:
    """One-off evaluation; controller sessions bind the cost once instead."""
    return BoundCost(cost, p.domain).evaluate(p.values)


# ---------------------------------------------------------------------------
# traces

@dataclass(frozen=True)
class WindowRecord:
    index: int
    t_end: float
    chosen_row: int
    chosen_bits: tuple[int, ...]
    cost: float
    candidate_costs: tuple[float, ...]
    pide_evals_total: int
    accepted: bool | None
    wall_time: float


@dataclass
class ControlTrace:
    """Per-window decisions, costs and accounting of one control run."""

    n_inputs: int
    window_steps: int
    dt: float
    meta: dict = field(default_factory=dict)
    windows: list[WindowRecord] = field(default_factory=list)
    snapshots: list[tuple[int, DensityGrid]] = field(default_factory=list)
    elapsed_s: float = 0.0

    @property
    def n_windows(self) -> int:
        return len(self.windows)

    @property
    def pide_evaluations(self) -> int:
        return self.windows[-1].pide_evals_total if self.windows else 0

    @property
    def nn_acceptances(self) -> int | None:
        flags = [w.accepted for w in self.windows]
        if any(f is not None for f in flags):
            return sum(1 for f in flags if f)
        return None

    def rows(self) -> list[int]:
        return [w.chosen_row for w in self.windows]

    def bit_matrix(self) -> np.ndarray:
        return np.array([w.chosen_bits for w in self.windows], dtype=np.int64)

    def costs(self) -> np.ndarray:
        return np.array([w.cost for w in self.windows])

    def summary(self) -> dict:
        return {
            "iterations": self.n_windows,
            "elapsed_time_s": self.elapsed_s,
            "nn_acceptances": self.nn_acceptances,
            "pide_evaluations": self.pide_evaluations,
        }

    def canonical_bytes(self) -> bytes:
        """Stable byte form of the numeric decision content (no wall times)."""
        parts = [f"{self.n_inputs},{self.window_steps},{self.dt!r}"]
        for w in self.windows:
            parts.append(
                f"{w.index},{w.t_end!r},{w.chosen_row},{w.chosen_bits},{w.cost!r},"
                f"{tuple(float(c) for c in w.candidate_costs)},{w.pide_evals_total},{w.accepted}"
            )
        return "\n".join(parts).encode()

    def to_csv(self, path) -> None:
        cols = ["m", "t", "r_star"]
        cols += [f"s_{j}" for j in range(self.n_inputs)]
        cols += ["J"]
        cols += [f"J_r{r}" for r in range(1 << self.n_inputs)]
        cols += ["pide_evals", "wall_s"]
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for w in self.windows:
                row = [str(w.index), f"{w.t_end:.10g}", str(w.chosen_row)]
                row += [str(b) for b in w.chosen_bits]
                row += [f"{w.cost:.17g}"]
                row += ["" if np.isnan(c) else f"{c:.17g}" for c in w.candidate_costs]
                row += [str(w.pide_evals_total), f"{w.wall_time:.6g}"]
                fh.write(",".join(row) + "\n")


# ---------------------------------------------------------------------------
# sessions and runners

class PscSession:
    """Cached per-configuration propagators plus the bound cost functional.

    Propagator activation fields are computed once per (configuration, grid)
    pair and shared read-only by every window; candidate propagations may
    run on a thread pool (results are gathered by row index, so worker
    scheduling cannot influence the selected configuration).
    """

    def __init__(self, domain: DomainSpec, params: GrnParams, cfg: StepConfig,
                 plan: SwitchingPlan, cost: CostFunctional, threads: int = 1):
        self.domain = domain
        self.params = params
        self.cfg = cfg
        self.plan = plan
        self.bound_cost = BoundCost(cost, domain)
        self.threads = max(1, int(threads))
        self.propagators = [
            FixedInputPropagator(domain, params, cfg, plan.input_vector(r, params.n_genes))
            for r in range(plan.n_configs)
        ]
        self.report = PropagationReport()
        self.pide_evals = 0

    def propagate_window(self, values: np.ndarray, row: int) -> np.ndarray:
        """One candidate evaluation: `window_steps` fine steps under row's input."""
        out = self.propagators[row].propagate_values(values, self.plan.window_steps, self.report)
        self.pide_evals += 1
        return out

    def evaluate_rows(self, values: np.ndarray, rows: list[int]) -> dict[int, np.ndarray]:
        if self.threads == 1 or len(rows) == 1:
            return {r: self.propagate_window(values, r) for r in rows}
        prop = {}
        parts = {r: PropagationReport() for r in rows}
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            futs = {r: pool.submit(self.propagators[r].propagate_values,
                                   values, self.plan.window_steps, parts[r]) for r in rows}
            for r in rows:
                prop[r] = futs[r].result()
        for r in rows:  # merge diagnostics in row order, not completion order
            self.report.merge(parts[r])
        self.pide_evals += len(rows)
        return prop


def psc_window(session: PscSession, values: np.ndarray):
    """Exhaustive window: evaluate all configurations, keep the greedy winner.

    Returns (chosen row, stored winning density, its cost, all candidate
    costs). The returned density is the stored candidate itself; it is not
    re-integrated.
    """
    rows = list(range(session.plan.n_configs))
    predicted = session.evaluate_rows(values, rows)
    costs = np.array([session.bound_cost.evaluate(predicted[r]) for r in rows])
    best = 0
    for r in rows[1:]:
        if costs[r] > costs[best]:
            best = r
    return best, predicted[best], float(costs[best]), costs


def run_psc(p0: DensityGrid, session: PscSession,
            snapshot_every: int = 10,
            stop_cost: float | None = None,
            window_hook=None) -> tuple[DensityGrid, ControlTrace]:
    """Run the exhaustive controller for the planned number of windows.

    `window_hook(m, values_before, chosen_row)` is called after each
    decision (dataset generation taps this). `stop_cost` ends the run early
    once the realized cost reaches it.
    """
    plan = session.plan
    trace = ControlTrace(plan.n_inputs, plan.window_steps, session.cfg.dt,
                         meta=_trace_meta(session))
    trace.snapshots.append((-1, p0))
    values = p0.values
    t = p0.time
    run_start = time.perf_counter()
    for m in range(plan.n_windows):
        w_start = time.perf_counter()
        values_before = values
        row, values, cost, costs = psc_window(session, values)
        t += plan.window_steps * session.cfg.dt
        if window_hook is not None:
            window_hook(m, values_before, row)
        trace.windows.append(WindowRecord(
            index=m, t_end=t, chosen_row=row, chosen_bits=plan.row_bits(row),
            cost=cost, candidate_costs=tuple(float(c) for c in costs),
            pide_evals_total=session.pide_evals, accepted=None,
            wall_time=time.perf_counter() - w_start,
        ))
        if _want_snapshot(m, plan.n_windows, snapshot_every):
            trace.snapshots.append((m, DensityGrid(session.domain, values, t)))
        if stop_cost is not None and cost >= stop_cost:
            break
    trace.elapsed_s = time.perf_counter() - run_start
    _ensure_final_snapshot(trace, session.domain, values, t)
    return DensityGrid(session.domain, values, t), trace


def run_fixed_input(p0: DensityGrid, session: PscSession, row: int = 0,
                    snapshot_every: int = 10) -> tuple[DensityGrid, ControlTrace]:
    """Propagate under one fixed configuration with window-level bookkeeping.

    Used for uncontrolled runs (row 0, every inducer off); the cost of the
    current density is logged per window for comparison plots.
    """
    plan = session.plan
    trace = ControlTrace(plan.n_inputs, plan.window_steps, session.cfg.dt,
                         meta=_trace_meta(session))
    trace.snapshots.append((-1, p0))
    values = p0.values
    t = p0.time
    run_start = time.perf_counter()
    nan = tuple(float("nan") for _ in range(plan.n_configs))
    for m in range(plan.n_windows):
        w_start = time.perf_counter()
        values = session.propagate_window(values, row)
        t += plan.window_steps * session.cfg.dt
        trace.windows.append(WindowRecord(
            index=m, t_end=t, chosen_row=row, chosen_bits=plan.row_bits(row),
            cost=session.bound_cost.evaluate(values), candidate_costs=nan,
            pide_evals_total=session.pide_evals, accepted=None,
            wall_time=time.perf_counter() - w_start,
        ))
        if _want_snapshot(m, plan.n_windows, snapshot_every):
            trace.snapshots.append((m, DensityGrid(session.domain, values, t)))
    trace.elapsed_s = time.perf_counter() - run_start
    _ensure_final_snapshot(trace, session.domain, values, t)
    return DensityGrid(session.domain, values, t), trace


def _trace_meta(session: PscSession) -> dict:
    plan = session.plan
    meta = {
        "window_steps": plan.window_steps,
        "n_windows": plan.n_windows,
        "controlled_genes": list(plan.controlled_genes),
        "saturation": list(plan.saturation),
        "cost": type(session.bound_cost.cost).__name__,
        "cost_spec": _cost_spec(session.bound_cost.cost),
        "snap_distances": list(session.bound_cost.snap_distances),
    }
    return meta


def _cost_spec(cost: CostFunctional) -> dict:
    if isinstance(cost, PointTargetCost):
        return {"target": list(cost.target)}
    if isinstance(cost, MarginalTargetsCost):
        return {"targets": list(cost.targets)}
    return {
        "region_a": [list(cost.region_a[0]), list(cost.region_a[1])],
        "region_b": [list(cost.region_b[0]), list(cost.region_b[1])],
        "center_region": [list(cost.center_region[0]), list(cost.center_region[1])],
        "penalty_weight": cost.penalty_weight,
    }


def _want_snapshot(m: int, n_windows: int, every: int) -> bool:
    if every <= 0:
        return False
    return m % every == 0 or m == n_windows - 1


def _ensure_final_snapshot(trace: ControlTrace, domain: DomainSpec, values, t) -> None:
    if not trace.windows:
        return
    last_idx = trace.windows[-1].index
    if not trace.snapshots or trace.snapshots[-1][0] != last_idx:
        trace.snapshots.append((last_idx, DensityGrid(domain, values, t)))
