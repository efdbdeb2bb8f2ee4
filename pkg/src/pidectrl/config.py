"""Run configuration: YAML schema, validation, case defaults, overrides.

A run is described by one nested-mapping YAML document. Case selectors
populate every field with the corresponding study defaults; explicit keys
override them, and CLI `--set a.b.c=value` overrides single leaves. All
validation errors name the offending field path.
"""

from __future__ import annotations

import copy
import hashlib
import json
from typing import Any

import yaml

from .errors import ConfigError, SizingError, StabilityError
from .grid import DEFAULT_MAX_CELLS, DomainSpec
from .network import GeneParams, GrnParams
from .solver import StepConfig

MODES = ("exhaustive", "accelerated", "uncontrolled", "replay", "ssa", "train-nn")
COST_KINDS = ("bimodal_regions", "marginal_targets", "point_target")
IC_KINDS = ("delta", "gaussian", "uniform_box", "mixture", "relaxed")

_GENE_NUMERIC = ("k_m", "k_x", "gamma_m", "gamma_x", "epsilon")
_GENE_EDGE = ("K", "H", "theta", "mu")


def case_defaults(case: int) -> dict:
    """Full default configuration for one of the three benchmark networks."""
    if case == 1:
        return {
            "case": 1,
            "mode": "exhaustive",
            "seed": 1,
            "threads": 1,
            "domain": {"upper": [300.0, 300.0], "cells": [300, 300]},
            "genes": [
                {"k_m": 11.0, "k_x": 100.0, "gamma_m": 8.4, "gamma_x": 1.0,
                 "epsilon": 0.1, "regulator": 2, "K": 32.0, "H": 4.0},
                {"k_m": 9.0, "k_x": 80.0, "gamma_m": 8.4, "gamma_x": 1.0,
                 "epsilon": 0.1, "regulator": 1, "K": 30.0, "H": 4.0,
                 "theta": 0.1, "mu": 2.0},
            ],
            "step": {"dt": 0.005, "renormalize": True, "burst_truncation_factor": 40.0},
            "plan": {"window_steps": 10, "windows": 400, "alpha": 0.01,
                     "controlled_genes": [2]},
            "cost": {
                "kind": "bimodal_regions",
                "region_a": [[85.0, 0.0], [180.0, 45.0]],
                "region_b": [[0.0, 50.0], [30.0, 115.0]],
                "center_region": [[40.0, 45.0], [85.0, 85.0]],
                "penalty_weight": 2.0,
            },
            "relaxation": {"tau": 10.0,
                           "start": {"kind": "gaussian", "center": [15.0, 90.0],
                                     "sigma": [8.0, 10.0]}},
            "initial": {"kind": "relaxed"},
            "snapshots": {"every": 10, "full_rate": False},
            "stop_cost": None,
        }
    if case == 2:
        return {
            "case": 2,
            "mode": "exhaustive",
            "seed": 2,
            "threads": 1,
            "domain": {"upper": [300.0, 300.0], "cells": [300, 300]},
            "genes": [
                {"k_m": 10.0, "k_x": 100.0, "gamma_m": 10.0, "gamma_x": 1.0,
                 "epsilon": 0.1, "regulator": 2, "K": 40.0, "H": 4.0,
                 "theta": 0.1, "mu": 2.0},
                {"k_m": 10.0, "k_x": 100.0, "gamma_m": 10.0, "gamma_x": 1.0,
                 "epsilon": 0.1, "regulator": 1, "K": 40.0, "H": 4.0,
                 "theta": 0.1, "mu": 2.0},
            ],
            "step": {"dt": 0.005, "renormalize": True, "burst_truncation_factor": 40.0},
            "plan": {"window_steps": 20, "windows": 200, "alpha": 0.01,
                     "controlled_genes": [1, 2]},
            "cost": {"kind": "marginal_targets", "targets": "auto"},
            "relaxation": {"tau": 25.0,
                           "start": {"kind": "mixture", "components": [
                               {"weight": 0.5, "kind": "gaussian",
                                "center": [90.0, 10.0], "sigma": [12.0, 8.0]},
                               {"weight": 0.5, "kind": "gaussian",
                                "center": [10.0, 90.0], "sigma": [8.0, 12.0]},
                           ]}},
            "initial": {"kind": "relaxed"},
            "snapshots": {"every": 10, "full_rate": False},
            "stop_cost": None,
        }
    if case == 3:
        return {
            "case": 3,
            "mode": "exhaustive",
            "seed": 3,
            "threads": 1,
            "domain": {"upper": [1000.0, 1000.0, 1000.0], "cells": [64, 64, 64]},
            "full_scale_cells": [250, 250, 250],
            "genes": [
                {"k_m": 125.0, "k_x": 90.0, "gamma_m": 17.6822, "gamma_x": 1.0,
                 "epsilon": 0.15, "regulator": 2, "K": 200.0, "H": 8.0,
                 "theta": 0.08, "mu": 2.0},
                {"k_m": 100.0, "k_x": 110.0, "gamma_m": 17.6822, "gamma_x": 1.0,
                 "epsilon": 0.15, "regulator": 3, "K": 200.0, "H": 9.0,
                 "theta": 0.06, "mu": 2.0},
                {"k_m": 115.0, "k_x": 100.0, "gamma_m": 17.6822, "gamma_x": 1.0,
                 "epsilon": 0.15, "regulator": 1, "K": 200.0, "H": 7.0,
                 "theta": 0.11, "mu": 2.0},
            ],
            "step": {"dt": 0.005, "renormalize": True, "burst_truncation_factor": 40.0},
            "plan": {"window_steps": 1, "windows": 1000, "alpha": 0.01,
                     "controlled_genes": [1, 2, 3]},
            "cost": {"kind": "point_target", "target": "auto"},
            "relaxation": {"tau": 12.0,
                           "start": {"kind": "gaussian",
                                     "center": [300.0, 300.0, 300.0],
                                     "sigma": [80.0, 80.0, 80.0]}},
            "initial": {"kind": "relaxed"},
            "snapshots": {"every": 50, "full_rate": False},
            "stop_cost": None,
        }
    raise ConfigError(f"case must be 1, 2 or 3, got {case!r}")


def load_config(path=None, case: int | None = None, overrides: dict | None = None,
                full_scale: bool = False) -> dict:
    """Assemble the effective configuration: case defaults <- file <- overrides."""
    raw: dict = {}
    if path is not None:
        with open(path) as fh:
            loaded = yaml.safe_load(fh)
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a mapping at the top level")
        raw = loaded
    case = case if case is not None else raw.get("case")
    cfg = case_defaults(int(case)) if case is not None else {}
    cfg = _deep_merge(cfg, raw)
    for key, value in (overrides or {}).items():
        _set_leaf(cfg, key, value)
    if full_scale:
        if "full_scale_cells" not in cfg:
            raise ConfigError("full_scale requested but config has no full_scale_cells")
        cfg["domain"]["cells"] = list(cfg["full_scale_cells"])
    return cfg


def _deep_merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _set_leaf(cfg: dict, dotted: str, value: Any) -> None:
    parts = dotted.split(".")
    node = cfg
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot override through non-mapping key {p!r} in {dotted!r}")
    node[parts[-1]] = _parse_scalar(value)


def _parse_scalar(v: Any) -> Any:
    if not isinstance(v, str):
        return v
    return yaml.safe_load(v)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, default=float).encode()).hexdigest()


def dump_config(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=True, default_flow_style=None)


# ---------------------------------------------------------------------------
# validation and object construction

def _need(cfg: dict, key: str, where: str = "") -> Any:
    if key not in cfg or cfg[key] is None:
        raise ConfigError(f"missing required field {where}{key}")
    return cfg[key]


def build_domain(cfg: dict) -> DomainSpec:
    dom = _need(cfg, "domain")
    upper = _need(dom, "upper", "domain.")
    cells = _need(dom, "cells", "domain.")
    if len(upper) != len(cells):
        raise ConfigError("domain.upper and domain.cells must have equal length")
    try:
        return DomainSpec(tuple(float(u) for u in upper), tuple(int(c) for c in cells),
                          int(cfg.get("max_cells", DEFAULT_MAX_CELLS)))
    except SizingError:
        raise
    except ValueError as exc:
        raise ConfigError(f"domain: {exc}") from exc


def build_params(cfg: dict) -> GrnParams:
    genes_cfg = _need(cfg, "genes")
    genes = []
    for i, g in enumerate(genes_cfg):
        where = f"genes[{i}]."
        for key in _GENE_NUMERIC:
            _need(g, key, where)
        reg = g.get("regulator")
        kwargs = dict(
            k_m=float(g["k_m"]), k_x=float(g["k_x"]),
            gamma_m=float(g["gamma_m"]), gamma_x=float(g["gamma_x"]),
            epsilon=float(g["epsilon"]),
        )
        if reg is not None:
            if not isinstance(reg, int) or not 1 <= reg <= len(genes_cfg):
                raise ConfigError(f"{where}regulator must be a 1-based gene index")
            kwargs["regulator"] = reg - 1
            kwargs["hill_k"] = float(_need(g, "K", where))
            kwargs["hill_h"] = float(_need(g, "H", where))
            if g.get("theta") is not None:
                kwargs["theta"] = float(g["theta"])
                kwargs["mu"] = float(_need(g, "mu", where))
        genes.append(GeneParams(**kwargs))
    try:
        return GrnParams(tuple(genes))
    except ValueError as exc:
        raise ConfigError(f"genes: {exc}") from exc


def build_step(cfg: dict, params: GrnParams) -> StepConfig:
    s = _need(cfg, "step")
    try:
        step = StepConfig(dt=float(_need(s, "dt", "step.")),
                          renormalize=bool(s.get("renormalize", True)),
                          burst_truncation_factor=float(s.get("burst_truncation_factor", 40.0)))
        step.validate(params)
    except ConfigError:
        raise
    except (ValueError, StabilityError) as exc:
        raise ConfigError(f"step: {exc}") from exc
    return step


def validate_config(cfg: dict) -> dict:
    """Structural validation of the full document; returns the config."""
    mode = cfg.get("mode", "exhaustive")
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    if mode == "train-nn":
        tn = _need(cfg, "train_nn")
        _need(tn, "dataset", "train_nn.")
        _need(tn, "n_bits", "train_nn.")
        return cfg
    params = build_params(cfg)
    domain = build_domain(cfg)
    if domain.ndim != params.n_genes:
        raise ConfigError("domain dimension must equal the number of genes")
    build_step(cfg, params)
    if mode == "ssa":
        s = _need(cfg, "ssa")
        _need(s, "cells", "ssa.")
        _need(s, "horizon", "ssa.")
        return cfg
    plan = _need(cfg, "plan")
    for key in ("window_steps", "windows", "alpha", "controlled_genes"):
        _need(plan, key, "plan.")
    for gidx in plan["controlled_genes"]:
        if not isinstance(gidx, int) or not 1 <= gidx <= params.n_genes:
            raise ConfigError("plan.controlled_genes entries must be 1-based gene indices")
    cost = _need(cfg, "cost")
    kind = _need(cost, "kind", "cost.")
    if kind not in COST_KINDS:
        raise ConfigError(f"cost.kind must be one of {COST_KINDS}, got {kind!r}")
    if kind == "bimodal_regions":
        for key in ("region_a", "region_b", "center_region"):
            _need(cost, key, "cost.")
    elif kind == "marginal_targets":
        t = _need(cost, "targets", "cost.")
        if t != "auto" and len(t) != domain.ndim:
            raise ConfigError("cost.targets must be 'auto' or one value per axis")
    else:
        t = _need(cost, "target", "cost.")
        if t != "auto" and len(t) != domain.ndim:
            raise ConfigError("cost.target must be 'auto' or one value per axis")
    ic = _need(cfg, "initial")
    _validate_ic(ic, "initial.", allow_relaxed=True)
    if _uses_relaxation(cfg):
        relax = _need(cfg, "relaxation")
        _need(relax, "tau", "relaxation.")
        _validate_ic(_need(relax, "start", "relaxation."), "relaxation.start.",
                     allow_relaxed=False)
    if mode == "accelerated":
        acc = _need(cfg, "accelerated")
        _need(acc, "model", "accelerated.")
    if mode == "replay":
        rp = _need(cfg, "replay")
        _need(rp, "trace", "replay.")
        ics = _need(rp, "initials", "replay.")
        if len(ics) < 1:
            raise ConfigError("replay.initials needs at least one extra density")
        for k, entry in enumerate(ics):
            _validate_ic(entry, f"replay.initials[{k}].", allow_relaxed=False)
    return cfg


def _uses_relaxation(cfg: dict) -> bool:
    if cfg.get("initial", {}).get("kind") == "relaxed":
        return True
    cost = cfg.get("cost", {})
    return cost.get("targets") == "auto" or cost.get("target") == "auto"


def _validate_ic(ic: dict, where: str, allow_relaxed: bool) -> None:
    kind = _need(ic, "kind", where)
    kinds = IC_KINDS if allow_relaxed else tuple(k for k in IC_KINDS if k != "relaxed")
    if kind not in kinds:
        raise ConfigError(f"{where}kind must be one of {kinds}, got {kind!r}")
    if kind == "delta":
        _need(ic, "point", where)
    elif kind == "gaussian":
        _need(ic, "center", where)
        _need(ic, "sigma", where)
    elif kind == "uniform_box":
        _need(ic, "lo", where)
        _need(ic, "hi", where)
    elif kind == "mixture":
        comps = _need(ic, "components", where)
        for k, comp in enumerate(comps):
            _validate_ic(comp, f"{where}components[{k}].", allow_relaxed=False)
