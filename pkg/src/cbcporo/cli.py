"""CLI entry point for cbcporo."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from cbcporo.core.config import Experiment, OutputFormat, experiment_config, load_config
from cbcporo.core.errors import CbcPoroError

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 2


def configure_logging(verbose: bool = False) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s [cbcporo] %(levelname)s %(message)s",
        stream=sys.stderr,
        force=True,
    )


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _overrides(args: argparse.Namespace) -> dict:
    return {
        "mode": getattr(args, "mode", None),
        "theta": getattr(args, "theta", None),
        "tol": getattr(args, "tol", None),
        "max_it": getattr(args, "max_it", None),
        "threads": getattr(args, "threads", None),
        "out": getattr(args, "out", None),
        "format": getattr(args, "format", None),
    }


def _run(experiment: Experiment, args: argparse.Namespace) -> int:
    """Shared experiment logic: configure, run, write or print, map failures to the exit code."""
    from cbcporo.core.report import render, write_report
    from cbcporo.experiments.runner import HANDLERS

    config_path = Path(args.config) if getattr(args, "config", None) else None
    cfg = experiment_config(experiment, load_config(config_path, experiment), _overrides(args))
    table = HANDLERS[experiment](cfg)

    if cfg.output_path is not None:
        path = write_report(table, cfg.output_path, cfg.output_format)
        print(f"{experiment.value}: {len(table.rows)} rows written to {path}")
    else:
        sys.stdout.write(render(table, cfg.output_format))

    failures = int(table.meta.get("failures", 0) or 0)
    if failures:
        print(f"{experiment.value}: {failures} cell(s) did not converge", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_convergence(args: argparse.Namespace) -> int:
    """Manufactured-solution convergence study."""
    return _run(Experiment.CONVERGENCE, args)


def cmd_sweep(args: argparse.Namespace) -> int:
    """Iteration counts over the parameter grid."""
    return _run(Experiment.SWEEP, args)


def cmd_naive_sweep(args: argparse.Namespace) -> int:
    """Naive single-domain preconditioner against the robust one."""
    return _run(Experiment.NAIVE_SWEEP, args)


def cmd_qblock_cond(args: argparse.Namespace) -> int:
    """Condition numbers of the AMG-preconditioned pressure block."""
    return _run(Experiment.QBLOCK_COND, args)


def cmd_nondim(args: argparse.Namespace) -> int:
    """Dimensionless groups of the scenario presets."""
    return _run(Experiment.NONDIM, args)


def cmd_swelling_demo(args: argparse.Namespace) -> int:
    """Single-step cell swelling demo."""
    return _run(Experiment.SWELLING_DEMO, args)


def cmd_export_mesh(args: argparse.Namespace) -> int:
    """Write the marked box mesh, and optionally its assembled blocks, to disk."""
    from cbcporo.core.assembly import Params, export_matrix
    from cbcporo.core.discretization import build_spaces
    from cbcporo.core.mesh import BoundaryConfig, build_box_mesh, export_mesh, mark_boundaries
    from cbcporo.core.system import assemble_parts

    mesh = mark_boundaries(build_box_mesh(args.n, args.interface_x), BoundaryConfig.from_regime(args.regime))
    path = export_mesh(mesh, Path(args.out))
    print(f"Mesh saved: {path} ({mesh.num_vertices} vertices, {mesh.num_cells} cells)")

    if args.matrices:
        out_dir = Path(args.matrices)
        out_dir.mkdir(parents=True, exist_ok=True)
        parts = assemble_parts(mesh, build_spaces(mesh), Params(lam=1.0, alpha=1.0, kappa=1.0, c0=1.0, lp=1.0))
        for name in ("E", "B", "M_T", "M_TF", "M_F", "K", "T"):
            export_matrix(getattr(parts, name), out_dir / f"{name}.mtx", comment=f"cbcporo n={args.n} {name}")
        print(f"Matrices saved: {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Main
# ---------------------------------------------------------------------------

def _experiment_parser(sub, name: str, help_text: str) -> argparse.ArgumentParser:
    p = sub.add_parser(name, help=help_text)
    p.add_argument("--config", help="JSON config merged over the defaults")
    p.add_argument("--out", help="Report path (default: print to stdout)")
    p.add_argument("--format", choices=[f.value for f in OutputFormat], help="Report format (default: csv)")
    p.add_argument("--mode", choices=["exact", "amg"], help="Block inverses: exact factorization or AMG")
    p.add_argument("--theta", type=float, help="AMG strong threshold")
    p.add_argument("--tol", type=float, help="Relative residual tolerance")
    p.add_argument("--max-it", dest="max_it", type=int, help="Iteration cap")
    p.add_argument("--threads", type=int, help="Worker threads for sweep cells")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="cbcporo",
        description="Cell-by-cell poroelasticity: block-preconditioned solvers and experiments",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    sub = parser.add_subparsers(dest="command")

    _experiment_parser(sub, "convergence", "Manufactured-solution convergence rates")
    _experiment_parser(sub, "sweep", "MinRes iteration counts over the parameter grid")
    _experiment_parser(sub, "naive-sweep", "Naive preconditioner against the robust one")
    _experiment_parser(sub, "qblock-cond", "Condition numbers of the pressure block")
    _experiment_parser(sub, "nondim", "Dimensionless groups of the scenario presets")
    _experiment_parser(sub, "swelling-demo", "Single-step osmotic swelling demo")

    p_mesh = sub.add_parser("export-mesh", help="Write a marked box mesh as text")
    p_mesh.add_argument("n", type=int, help="Cells per side")
    p_mesh.add_argument("--interface-x", dest="interface_x", type=float, default=0.5, help="Membrane position")
    p_mesh.add_argument("--regime", choices=["mixed", "full_dirichlet"], default="mixed", help="Boundary regime")
    p_mesh.add_argument("--out", default="mesh.txt", help="Output path (default: mesh.txt)")
    p_mesh.add_argument("--matrices", help="Also write the assembled blocks as Matrix Market files here")

    args = parser.parse_args(argv)

    if not args.command:
        parser.print_help()
        return EXIT_OK

    configure_logging(args.verbose)

    commands = {
        "convergence": cmd_convergence,
        "sweep": cmd_sweep,
        "naive-sweep": cmd_naive_sweep,
        "qblock-cond": cmd_qblock_cond,
        "nondim": cmd_nondim,
        "swelling-demo": cmd_swelling_demo,
        "export-mesh": cmd_export_mesh,
    }

    try:
        return commands[args.command](args)
    except CbcPoroError as e:
        print(f"cbcporo: {args.command} error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
