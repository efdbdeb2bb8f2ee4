"""Executes a validated run configuration and writes its artifacts.

One process runs one configuration. Derived quantities (auto targets from
the uncontrolled stationary, relaxed initial conditions) are computed once
and recorded in the manifest together with content hashes of every numeric
artifact, the seed, and library versions, so a rerun with the same config
and seed reproduces the same hashes.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .accelerator import FeatureExtractor, MlpAccelerator, run_accelerated_psc
from .config import build_domain, build_params, build_step, config_hash
from .contraction import ContractionReport, SsaConfig, replay_profile, ssa_simulate
from .controller import (BimodalRegionsCost, ControlTrace, DensityGrid,
                         MarginalTargetsCost, PointTargetCost, PscSession,
                         plan_from_params, run_fixed_input, run_psc)
from .errors import ConfigError
from .grid import (DomainSpec, delta_density, gaussian_density, marginal,
                   mixture_density, uniform_box_density, write_grid_binary,
                   write_grid_csv)
from .network import GrnParams
from .solver import FixedInputPropagator, PropagationReport, StepConfig

OUTPUT_ROOT_ENV = "PIDECTRL_OUTPUT_ROOT"


def build_initial(ic: dict, domain: DomainSpec) -> DensityGrid:
    kind = ic["kind"]
    if kind == "delta":
        return delta_density(domain, ic["point"])
    if kind == "gaussian":
        return gaussian_density(domain, ic["center"], ic["sigma"])
    if kind == "uniform_box":
        return uniform_box_density(domain, ic["lo"], ic["hi"])
    if kind == "mixture":
        comps = [(float(c.get("weight", 1.0)), build_initial(c, domain))
                 for c in ic["components"]]
        return mixture_density(comps)
    raise ConfigError(f"initial kind {kind!r} must be materialized by the runner")


def relax_uncontrolled(cfg: dict, domain: DomainSpec, params: GrnParams,
                       step: StepConfig, report: PropagationReport | None = None
                       ) -> DensityGrid:
    """Propagate the relaxation start under all-off inputs for tau time units."""
    relax = cfg["relaxation"]
    start = build_initial(relax["start"], domain)
    steps = int(round(float(relax["tau"]) / step.dt))
    prop = FixedInputPropagator(domain, params, step, np.zeros(params.n_genes))
    values = prop.propagate_values(start.values, steps, report)
    return DensityGrid(domain, values, float(relax["tau"]))


def marginal_minimum(p: DensityGrid, axis: int) -> float:
    """Interior local minimum of one marginal between its two outer modes,
    located by a 3-point discrete scan."""
    m = marginal(p, axis).values
    n = m.size
    peaks = [j for j in range(1, n - 1)
             if m[j] >= m[j - 1] and m[j] >= m[j + 1] and m[j] > 0.05 * m.max()]
    if len(peaks) < 2:
        raise ConfigError(f"marginal along axis {axis} is not bimodal; "
                          "cannot derive a target automatically")
    lo, hi = peaks[0], peaks[-1]
    mins = [j for j in range(lo + 1, hi) if m[j] < m[j - 1] and m[j] < m[j + 1]]
    if not mins:
        raise ConfigError(f"no interior marginal minimum between modes on axis {axis}")
    return float(p.domain.centers(axis)[mins[0]])


def center_of_mass(p: DensityGrid) -> tuple[float, ...]:
    out = []
    n = p.domain.ndim
    for k in range(n):
        xk = p.domain.centers(k)
        mk = p.values.sum(axis=tuple(a for a in range(n) if a != k))
        out.append(float((mk * xk).sum() / mk.sum()))
    return tuple(out)


def resolve_cost(cfg: dict, domain: DomainSpec, relaxed: DensityGrid | None):
    c = cfg["cost"]
    kind = c["kind"]
    if kind == "bimodal_regions":
        cost = BimodalRegionsCost(
            region_a=(tuple(c["region_a"][0]), tuple(c["region_a"][1])),
            region_b=(tuple(c["region_b"][0]), tuple(c["region_b"][1])),
            center_region=(tuple(c["center_region"][0]), tuple(c["center_region"][1])),
            penalty_weight=float(c.get("penalty_weight", 2.0)),
        )
        return cost, {}
    if kind == "marginal_targets":
        if c["targets"] == "auto":
            targets = tuple(marginal_minimum(relaxed, ax) for ax in range(domain.ndim))
            return MarginalTargetsCost(targets), {"derived_targets": list(targets)}
        return MarginalTargetsCost(tuple(float(t) for t in c["targets"])), {}
    if c["target"] == "auto":
        com = center_of_mass(relaxed)
        target = domain.cell_center(domain.nearest_cell(com))
        return PointTargetCost(target), {"derived_target": list(target),
                                         "center_of_mass": list(com)}
    return PointTargetCost(tuple(float(t) for t in c["target"])), {}


class RunResult:
    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.artifacts: dict[str, str] = {}
        self.info: dict = {}
        self.trace: ControlTrace | None = None
        self.final: DensityGrid | None = None
        self.report: ContractionReport | None = None

    def add_file(self, name: str, digest: str | None = None) -> Path:
        path = self.out_dir / name
        if digest is not None:
            self.artifacts[name] = digest
        return path


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_snapshots(result: RunResult, trace: ControlTrace):
    for idx, grid in trace.snapshots:
        tag = "initial" if idx < 0 else f"w{idx:05d}"
        path = result.add_file(f"density_{tag}.dgrid")
        write_grid_binary(grid, path)
        result.artifacts[path.name] = _sha256(path)
    csv_path = result.add_file("density_final.csv")
    write_grid_csv(trace.snapshots[-1][1], csv_path)
    result.artifacts[csv_path.name] = _sha256(csv_path)


def has_local_max_in_box(values: np.ndarray, domain: DomainSpec, lo, hi,
                         min_rel_height: float = 0.05) -> bool:
    """True when a cell of the box dominates its grid neighborhood and clears
    the relative-height floor (filters round-off ripples).

    Domain-boundary cells use one-sided neighborhoods: modes legitimately sit
    on the axis when the local shape parameter drops below one.
    """
    from .grid import box_mask
    mask = box_mask(domain, lo, hi)
    vmax = float(values.max())
    idxs = np.argwhere(mask)
    shape = values.shape
    for idx in idxs:
        sl = tuple(slice(max(i - 1, 0), min(i + 2, shape[k]))
                   for k, i in enumerate(idx))
        c = values[tuple(idx)]
        if c >= min_rel_height * vmax and c >= values[sl].max():
            return True
    return False


def execute(cfg: dict, out_dir: str | os.PathLike | None = None) -> RunResult:
    """Run one validated configuration; returns artifact paths and live objects."""
    mode = cfg.get("mode", "exhaustive")
    root = Path(out_dir) if out_dir is not None else \
        Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / f"case{cfg.get('case', 'x')}-{mode}"
    root.mkdir(parents=True, exist_ok=True)
    result = RunResult(root)
    started = time.perf_counter()

    if mode == "train-nn":
        _run_training(cfg, result)
        _write_manifest(cfg, result, started)
        return result

    params = build_params(cfg)
    domain = build_domain(cfg)
    step = build_step(cfg, params)
    seed = int(cfg.get("seed", 0))

    mass_report = PropagationReport()
    if mode == "ssa":
        _run_ssa(cfg, result, domain, params, seed)
        _write_manifest(cfg, result, started)
        return result

    relaxed = None
    if cfg.get("initial", {}).get("kind") == "relaxed" or \
            cfg.get("cost", {}).get("targets") == "auto" or \
            cfg.get("cost", {}).get("target") == "auto":
        relaxed = relax_uncontrolled(cfg, domain, params, step, mass_report)

    cost, derived = resolve_cost(cfg, domain, relaxed)
    result.info.update(derived)
    plan = plan_from_params(params, domain,
                            [g - 1 for g in cfg["plan"]["controlled_genes"]],
                            float(cfg["plan"]["alpha"]),
                            int(cfg["plan"]["window_steps"]),
                            int(cfg["plan"]["windows"]))
    result.info["saturation"] = list(plan.saturation)

    initial = relaxed if cfg["initial"]["kind"] == "relaxed" \
        else build_initial(cfg["initial"], domain)

    if mode == "replay":
        _run_replay(cfg, result, domain, params, step, plan, initial, mass_report)
        _write_manifest(cfg, result, started, mass_report)
        return result

    session = PscSession(domain, params, step, plan, cost,
                         threads=int(cfg.get("threads", 1)))
    session.report = mass_report
    snap_every = 1 if cfg.get("snapshots", {}).get("full_rate") \
        else int(cfg.get("snapshots", {}).get("every", 10))
    stop_cost = cfg.get("stop_cost")
    stop_cost = float(stop_cost) if stop_cost is not None else None

    if mode == "uncontrolled":
        final, trace = run_fixed_input(initial, session, row=0, snapshot_every=snap_every)
    elif mode == "exhaustive":
        final, trace = run_psc(initial, session, snapshot_every=snap_every,
                               stop_cost=stop_cost)
    elif mode == "accelerated":
        acc = cfg["accelerated"]
        net = MlpAccelerator.load(acc["model"])
        extractor = FeatureExtractor(domain, session.bound_cost.resolved_target,
                                     plan.n_inputs, acc.get("ref_sigma"))
        result.info["features"] = extractor.metadata()
        final, trace = run_accelerated_psc(initial, session, net, extractor,
                                           snapshot_every=snap_every, stop_cost=stop_cost)
    else:
        raise ConfigError(f"unhandled mode {mode!r}")

    result.trace = trace
    result.final = final
    trace_path = result.add_file("trace.csv")
    trace.to_csv(trace_path)
    result.artifacts["trace.csv"] = hashlib.sha256(trace.canonical_bytes()).hexdigest()
    with open(result.add_file("trace_summary.json"), "w") as fh:
        json.dump(trace.summary() | {"meta": trace.meta}, fh, indent=2, default=float)
    result.artifacts["trace_summary.json"] = hashlib.sha256(
        json.dumps(trace.meta, sort_keys=True, default=float).encode()).hexdigest()
    _write_snapshots(result, trace)
    _write_manifest(cfg, result, started, mass_report)
    return result


def _run_ssa(cfg, result, domain, params, seed):
    s = cfg["ssa"]
    profile = np.asarray(s.get("inducers", [0.0] * params.n_genes), dtype=np.float64)
    ssa = SsaConfig(n_cells=int(s["cells"]), horizon=float(s["horizon"]), seed=seed,
                    chunk=int(s.get("chunk", 4096)),
                    initial_state=tuple(s["initial_state"]) if s.get("initial_state") else None)
    hist, clamped = ssa_simulate(params, profile, ssa, domain)
    result.info["ssa_clamped"] = clamped
    path = result.add_file("ssa_histogram.dgrid")
    write_grid_binary(hist, path)
    result.artifacts[path.name] = _sha256(path)
    csv_path = result.add_file("ssa_histogram.csv")
    write_grid_csv(hist, csv_path)
    result.artifacts[csv_path.name] = _sha256(csv_path)


def _run_replay(cfg, result, domain, params, step, plan, initial, mass_report):
    rp = cfg["replay"]
    rows = _read_trace_rows(rp["trace"], plan.n_inputs)
    inputs = [plan.input_vector(r, params.n_genes) for r in rows]
    initials = [initial] + [build_initial(entry, domain) for entry in rp["initials"]]
    labels = ["base"] + [f"ic{k + 1}" for k in range(len(rp["initials"]))]
    report = replay_profile(initials, rows, inputs, plan.window_steps, step, params,
                            labels=labels,
                            record_fine_steps=bool(rp.get("record_fine_steps", False)),
                            report=mass_report)
    if report.applied_rows != [int(r) for r in rows]:
        raise ConfigError("replay did not apply the recorded configuration stream")
    result.report = report
    csv_path = result.add_file("distances.csv")
    report.to_csv(csv_path)
    result.artifacts[csv_path.name] = _sha256(csv_path)
    json_path = result.add_file("contraction.json")
    report.to_json(json_path)
    result.artifacts[json_path.name] = _sha256(json_path)


def _run_training(cfg, result):
    from .training import Dataset, train
    tn = cfg["train_nn"]
    ds = Dataset.load_csv(tn["dataset"], int(tn["n_bits"]))
    net, rep = train(ds, folds=int(tn.get("folds", 5)), seed=int(cfg.get("seed", 0)),
                     max_iter=int(tn.get("max_iter", 120)),
                     holdout_fraction=float(tn.get("holdout_fraction", 0.15)))
    model_path = result.add_file(tn.get("model_out", "model.bin"))
    net.save(model_path)
    result.artifacts[model_path.name] = _sha256(model_path)
    report_path = result.add_file(tn.get("report_out", "training_report.txt"))
    report_path.write_text(rep.to_text() + "\n")
    result.artifacts[report_path.name] = _sha256(report_path)
    result.info["holdout_bit_accuracy"] = rep.holdout_bit_accuracy
    result.info["holdout_exact_match"] = rep.holdout_exact_match


def _read_trace_rows(path, n_inputs: int) -> list[int]:
    rows = []
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        try:
            col = header.index("r_star")
        except ValueError as exc:
            raise ConfigError(f"{path} is not a control trace (no r_star column)") from exc
        for line in fh:
            if line.strip():
                r = int(line.split(",")[col])
                if not 0 <= r < (1 << n_inputs):
                    raise ConfigError(f"trace row {r} is outside the configured input set")
                rows.append(r)
    return rows


def _write_manifest(cfg, result, started, mass_report: PropagationReport | None = None):
    manifest = {
        "schema": 1,
        "config_sha256": config_hash(cfg),
        "case": cfg.get("case"),
        "mode": cfg.get("mode"),
        "seed": cfg.get("seed"),
        "backend": kernels.ACTIVE_BACKEND,
        "versions": {"pidectrl": __version__, "numpy": np.__version__},
        "artifacts": dict(sorted(result.artifacts.items())),
        "info": result.info,
        "elapsed_s": time.perf_counter() - started,
    }
    if mass_report is not None and mass_report.steps:
        manifest["mass"] = {
            "steps": mass_report.steps,
            "max_abs_step_drift": mass_report.max_abs_drift,
            "max_abs_transport_drift": mass_report.max_abs_transport_drift,
            "total_clamp_deficit": mass_report.total_clamp_deficit,
            "max_kernel_overflow": mass_report.max_kernel_overflow,
        }
    with open(result.out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, default=float)
    return manifest
