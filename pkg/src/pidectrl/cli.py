"""Command-line surface: run, replay, ssa, train-nn, emit-plots, validate-config.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 assertion failure (with --assert), 1 unexpected error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import dump_config, load_config, validate_config
from .errors import ConfigError, NumericalError, PidectrlError, SizingError, StabilityError
from .grid import marginal, read_grid_binary
from .runner import execute, has_local_max_in_box

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_ASSERT = 4


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--case", type=int, choices=(1, 2, 3), help="case-study defaults")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="override one config leaf (dotted path)")
    p.add_argument("--seed", type=int, help="override the run seed")
    p.add_argument("--threads", type=int, help="candidate-evaluation worker cap")
    p.add_argument("--out", help="output directory (default under $PIDECTRL_OUTPUT_ROOT)")
    p.add_argument("--full-scale", action="store_true",
                   help="use the full-resolution grid where the case defines one")


def _parse_overrides(pairs: list[str]) -> dict:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set expects KEY=VALUE, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key] = value
    return out


def _assemble(args, forced_mode: str | None = None) -> dict:
    overrides = _parse_overrides(args.overrides)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.threads is not None:
        overrides["threads"] = args.threads
    if forced_mode is not None:
        overrides["mode"] = forced_mode
    cfg = load_config(args.config, args.case, overrides, full_scale=args.full_scale)
    return validate_config(cfg)


def run_assertions(cfg: dict, result) -> list[str]:
    """Built-in post-run checks behind --assert; returns failure messages."""
    failures: list[str] = []
    mode = cfg.get("mode")
    case = cfg.get("case")
    trace = result.trace

    if trace is not None and trace.n_windows:
        from .solver import STEP_MASS_TOL
        manifest = json.loads((result.out_dir / "manifest.json").read_text())
        drift = manifest.get("mass", {}).get("max_abs_step_drift")
        if drift is not None and drift > STEP_MASS_TOL:
            failures.append(f"per-step mass drift {drift:.3e} exceeds {STEP_MASS_TOL}")

    if mode in ("exhaustive", "accelerated") and trace is not None:
        n_cfg = 1 << trace.n_inputs
        if mode == "exhaustive":
            if trace.pide_evaluations != trace.n_windows * n_cfg:
                failures.append("PIDE evaluation count != windows * 2^n")
        else:
            acc = trace.nn_acceptances or 0
            expect = acc + n_cfg * (trace.n_windows - acc)
            if trace.pide_evaluations != expect:
                failures.append("accelerated evaluation accounting identity violated")
        costs = trace.costs()
        if case == 2:
            tail = costs[int(0.8 * len(costs)):]
            if not (tail >= 1.95).all():
                failures.append(f"case 2 cost tail min {tail.min():.4f} < 1.95")
        if case == 3:
            if costs[-1] <= 0.9:
                failures.append(f"case 3 final cost {costs[-1]:.4f} <= 0.9")
        if case == 1 and result.final is not None:
            c = cfg["cost"]
            v = result.final.values
            dom = result.final.domain
            for name in ("region_a", "region_b"):
                lo, hi = c[name]
                if not has_local_max_in_box(v, dom, lo, hi):
                    failures.append(f"case 1 controlled density has no mode in {name}")

    if mode == "uncontrolled" and case == 2 and result.final is not None:
        m = marginal(result.final, 0).values
        peaks = [j for j in range(1, m.size - 1)
                 if m[j] >= m[j - 1] and m[j] >= m[j + 1] and m[j] > 0.05 * m.max()]
        if len(peaks) < 2:
            failures.append("case 2 uncontrolled marginal is not bimodal")

    if mode == "replay" and result.report is not None:
        if result.report.violations:
            failures.append(f"{result.report.violations} pairwise distance increase(s)")
        for pair, fit in result.report.fits.items():
            if fit.rate <= 0.0:
                failures.append(f"pair {pair} fitted decay rate {fit.rate:.3e} <= 0")
    return failures


def cmd_run(args, forced_mode: str | None = None) -> int:
    cfg = _assemble(args, forced_mode)
    result = execute(cfg, args.out)
    print(f"artifacts in {result.out_dir}")
    if result.trace is not None:
        summary = result.trace.summary()
        print(json.dumps(summary, default=float))
    if getattr(args, "assert_checks", False):
        failures = run_assertions(cfg, result)
        if failures:
            for f in failures:
                print(f"ASSERTION FAILED: {f}", file=sys.stderr)
            return EXIT_ASSERT
        print("assertions passed")
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = _assemble(args)
    if args.dump:
        print(dump_config(cfg), end="")
    else:
        print("config ok")
    return EXIT_OK


def cmd_emit_plots(args) -> int:
    run_dir = Path(args.run_dir)
    trace_path = run_dir / "trace.csv"
    out = Path(args.out) if args.out else run_dir / "plots"
    out.mkdir(parents=True, exist_ok=True)
    wrote = []
    if trace_path.exists():
        with open(trace_path) as fh:
            header = fh.readline().strip().split(",")
            rows = [line.strip().split(",") for line in fh if line.strip()]
        bit_cols = [i for i, h in enumerate(header) if h.startswith("s_")]
        m_col, t_col = header.index("m"), header.index("t")
        j_col = header.index("J")
        with open(out / "signals.csv", "w") as fh:
            fh.write("m,t," + ",".join(header[i] for i in bit_cols) + "\n")
            for r in rows:
                fh.write(f"{r[m_col]},{r[t_col]}," + ",".join(r[i] for i in bit_cols) + "\n")
        with open(out / "cost.csv", "w") as fh:
            fh.write("m,t,J\n")
            for r in rows:
                fh.write(f"{r[m_col]},{r[t_col]},{r[j_col]}\n")
        bits = np.array([[float(r[i]) for i in bit_cols] for r in rows])
        freq = bits.mean(axis=0) if bits.size else np.zeros(len(bit_cols))
        with open(out / "activation_frequency.csv", "w") as fh:
            fh.write(",".join(header[i] for i in bit_cols) + "\n")
            fh.write(",".join(f"{f:.6g}" for f in freq) + "\n")
        wrote += ["signals.csv", "cost.csv", "activation_frequency.csv"]
    from .grid import write_grid_csv
    snaps = sorted(run_dir.glob("density_*.dgrid"))
    for snap in snaps:
        grid = read_grid_binary(snap)
        write_grid_csv(grid, out / (snap.stem + ".csv"))
        wrote.append(snap.stem + ".csv")
    if snaps:
        grid = read_grid_binary(snaps[-1])
        if grid.domain.ndim >= 2:
            with open(out / "marginals_final.csv", "w") as fh:
                fh.write("axis,x,value\n")
                for ax in range(grid.domain.ndim):
                    marg = marginal(grid, ax)
                    for x, val in zip(grid.domain.centers(ax), marg.values):
                        fh.write(f"{ax},{x:.10g},{val:.17g}\n")
            wrote.append("marginals_final.csv")
    dist = run_dir / "distances.csv"
    if dist.exists():
        (out / "distances.csv").write_text(dist.read_text())
        wrote.append("distances.csv")
    if not wrote:
        print(f"no run artifacts found in {run_dir}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"wrote {', '.join(wrote)} to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pidectrl",
                                 description="density-evolution simulation and "
                                             "predictive-switching control")
    sub = ap.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate/control per the configured mode")
    _add_common(p_run)
    p_run.add_argument("--mode", choices=("exhaustive", "accelerated", "uncontrolled"),
                       help="override the configured mode")
    p_run.add_argument("--assert", dest="assert_checks", action="store_true",
                       help="fail (exit 4) when built-in result checks do not hold")

    for name, mode in (("replay", "replay"), ("ssa", "ssa"), ("train-nn", "train-nn")):
        p = sub.add_parser(name, help=f"run in {mode} mode")
        _add_common(p)
        p.add_argument("--assert", dest="assert_checks", action="store_true")

    p_val = sub.add_parser("validate-config", help="validate and optionally dump")
    _add_common(p_val)
    p_val.add_argument("--dump", action="store_true", help="print the normalized config")

    p_plots = sub.add_parser("emit-plots", help="derive per-figure CSV bundles from a run")
    p_plots.add_argument("run_dir")
    p_plots.add_argument("--out")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            forced = args.mode if args.mode else None
            return cmd_run(args, forced)
        if args.command in ("replay", "ssa", "train-nn"):
            return cmd_run(args, args.command)
        if args.command == "validate-config":
            return cmd_validate(args)
        if args.command == "emit-plots":
            return cmd_emit_plots(args)
        raise RuntimeError("unreachable")
    except (ConfigError, SizingError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, StabilityError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except PidectrlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
