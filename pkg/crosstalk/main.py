"""
Surface-Code Crosstalk - command-line entry point
Solves unit cells of a transmon/coupler layout, extracts Pauli crosstalk,
calibrates couplers, benchmarks iSWAP gates and renders scan reports.
"""

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Sequence

import pandas as pd

from qpu_crosstalk.analysis import (
    PAULI_COLUMNS,
    CellState,
    ScanDataset,
    ScanGrid,
    ScanVariable,
    classify_fidelity,
    fidelity_sweep,
    onoff_overlay_scan,
    pet_scan,
    phase_point,
    phase_scan,
    tomography_scan,
)
from qpu_crosstalk.calibration import CellSolver, calibrate_cell, tune_resonance
from qpu_crosstalk.device import (
    SYCAMORE_COLS,
    SYCAMORE_DEAD_SITES,
    SYCAMORE_ROWS,
    DeviceLayout,
    generate_sycamore_like,
    load_bundled_layout,
    load_layout,
    save_layout,
)
from qpu_crosstalk.effective import pauli_coefficients
from qpu_crosstalk.gate_sim import NoiseModel
from qpu_crosstalk.hilbert import TruncationPolicy, convergence_check
from qpu_crosstalk.perturbation import LevelFrequencies, LevelJTable, perturbative_coefficients
from qpu_crosstalk.reporting import FORMATS, has_svg_view, load_dataset, render_all

logger = logging.getLogger(__name__)

# Configuration
DEFAULT_OUT_DIR = "output"
DEFAULT_CELL = "A"
DEFAULT_TRUNCATION = "4,3,4"
DEFAULT_PET_GRID = "3800,5400,33"
DEFAULT_OVERLAY_GRID = "0.5,30,30"
DEFAULT_PHASE_POINTS = 12
DEFAULT_PHASE_MIN_RATIO = 0.05
LOG_FILE = "crosstalk.log"

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_FLAGGED = 2


def setup_logging(out_dir: Path, verbose: bool = False) -> None:
    """Console plus file logging; only the entry point configures handlers."""
    out_dir.mkdir(parents=True, exist_ok=True)
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=[
            logging.StreamHandler(sys.stdout),
            logging.FileHandler(out_dir / LOG_FILE),
        ],
        force=True,
    )


def parse_floats(text: str) -> List[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def parse_grid(text: str, variable: ScanVariable, log: bool = False) -> ScanGrid:
    """'start,stop,count' -> ScanGrid."""
    parts = parse_floats(text)
    if len(parts) != 3:
        raise ValueError(f"grid must read 'start,stop,count', got {text!r}")
    start, stop, count = parts
    if log:
        return ScanGrid.logarithmic(variable, start, stop, int(count))
    return ScanGrid.linear(variable, start, stop, int(count))


def load_context(args) -> DeviceLayout:
    """Layout from --layout (bundled when omitted) with coupling overrides applied."""
    layout = load_layout(args.layout) if args.layout else load_bundled_layout()
    if args.gside_mhz is not None or args.gradial_mhz is not None:
        layout = layout.with_overrides(gside=args.gside_mhz, gradial=args.gradial_mhz)
    return layout


def emit(dataset: ScanDataset, args) -> int:
    formats = [f for f in args.format.split(",") if f]
    if "svg" in formats and not has_svg_view(dataset.kind):
        logger.warning(f"{dataset.name}: no SVG view for {dataset.kind} datasets, skipping svg")
        formats.remove("svg")
    render_all(dataset, formats, args.out_dir)
    if dataset.flagged:
        logger.warning(f"{dataset.name}: {dataset.flagged} flagged rows")
    return dataset.exit_code


def write_json(payload, path: Path) -> Path:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True, default=str)
        f.write("\n")
    logger.info(f"Wrote {path}")
    return path


# ============================================================================
# Verbs
# ============================================================================


def cmd_layout(args) -> int:
    if args.action == "generate":
        dead = SYCAMORE_DEAD_SITES if args.rows == SYCAMORE_ROWS and args.cols == SYCAMORE_COLS else ()
        layout = generate_sycamore_like(args.rows, args.cols, dead_sites=dead, seed=args.seed)
        target = Path(args.output) if args.output else args.out_dir / "generated.layout"
        save_layout(layout, target)
        return EXIT_OK

    layout = load_context(args)
    layout.validate()
    summary = {
        "qubits": len(layout.qubits),
        "couplers": len(layout.couplers),
        "edges": len(layout.edges),
        "cells": [cell.label for cell in layout.cells],
    }
    logger.info(f"Layout valid: {summary['qubits']} qubits, {summary['couplers']} couplers, {len(summary['cells'])} cells")
    write_json(summary, args.out_dir / "layout_summary.json")
    return EXIT_OK


def cmd_cell(args) -> int:
    layout = load_context(args)
    solver = CellSolver.for_cell(layout, args.cell, policy=args.policy)
    effH = solver.solve()
    write_json(effH.to_dict(), args.out_dir / f"effective_{args.cell}.json")
    if args.convergence:
        policy = args.policy
        levels = policy.coupler_levels or max(c.n_levels for c in solver.layout.couplers)
        larger = replace(policy, coupler_levels=levels + 1)
        frame = convergence_check(solver.layout, [policy, larger])
        return emit(ScanDataset(f"convergence_{args.cell}", "convergence", frame, {"cell": args.cell}), args)
    return EXIT_OK


def cmd_pauli(args) -> int:
    layout = load_context(args)
    solver = CellSolver.for_cell(layout, args.cell, policy=args.policy)
    bias = None
    if args.calibrated:
        bias = calibrate_cell(solver, solver.couplers[1], args.j_target).bias
    effH = solver.solve(bias)
    jt, freqs = LevelJTable.from_effective(effH), LevelFrequencies.from_effective(effH)
    tables = {
        "exact": pauli_coefficients(effH, args.max_weight),
        "pert2": perturbative_coefficients(jt, freqs, order=2, max_weight=args.max_weight),
        "pert3": perturbative_coefficients(jt, freqs, order=3, max_weight=args.max_weight),
    }
    rows = [
        {"string": str(p), "alpha_MHz": coeffs.alpha(p), "path": path}
        for path, coeffs in tables.items()
        for weight in range(args.max_weight + 1)
        for p in coeffs.strings(weight)
    ]
    frame = pd.DataFrame(rows, columns=PAULI_COLUMNS)
    return emit(ScanDataset(f"pauli_{args.cell}", "pauli", frame, {"cell": args.cell}), args)


def cmd_calibrate(args) -> int:
    layout = load_context(args)
    solver = CellSolver.for_cell(layout, args.cell, policy=args.policy)
    gate = solver.couplers[1]
    if args.action == "off":
        result = calibrate_cell(solver, gate, 0.0)
    elif args.action == "on":
        result = calibrate_cell(solver, gate, args.j_target)
    else:
        # Q3 tuned onto Q1, then the gate coupler set to the target
        off = calibrate_cell(solver, gate, 0.0)
        bias = tune_resonance(solver, solver.qubits[2], solver.qubits[0], off.bias)
        result = calibrate_cell(solver, gate, args.j_target, bias)
    result.to_json(args.out_dir / f"calibration_{args.action}_{args.cell}.json")
    logger.info(f"Calibration {args.action} of cell {args.cell}: converged={result.converged}, achieved={result.achieved}")
    return EXIT_OK if result.converged else EXIT_FLAGGED


def cmd_scan(args) -> int:
    layout = load_context(args)
    if args.action == "tomography":
        dataset = tomography_scan(
            layout,
            args.cell,
            j_targets=parse_floats(args.j_targets),
            gsides=parse_floats(args.gsides),
            policy=args.policy,
            workers=args.workers,
        )
    elif args.action == "pet":
        grid = parse_grid(args.grid or DEFAULT_PET_GRID, ScanVariable.COUPLER_FREQ)
        dataset = pet_scan(layout, grid, cells=args.cells, policy=args.policy, workers=args.workers)
    elif args.action == "overlay":
        grid = parse_grid(args.grid or DEFAULT_OVERLAY_GRID, ScanVariable.J13)
        gside = args.gside_mhz if args.gside_mhz is not None else 0.0
        dataset = onoff_overlay_scan(layout, grid, cells=args.cells, gside=gside, policy=args.policy, workers=args.workers)
    else:
        g_radial = args.gradial_mhz if args.gradial_mhz is not None else 4.0
        state = CellState(args.state)
        ratios = parse_grid(
            args.grid or f"{DEFAULT_PHASE_MIN_RATIO},1,{DEFAULT_PHASE_POINTS}", ScanVariable.G_SIDE_RATIO, log=True
        )
        evaluate = _PhaseEvaluator(layout, args.cell, g_radial, state, args.policy, args.j_target)
        result = phase_scan(ratios, evaluate, state=state, g_radial=g_radial, workers=args.workers)
        dataset = result.dataset
        for name, fit in (("l2", result.fit_zz), ("l3", result.fit_zzz)):
            if fit is not None:
                logger.info(f"{name} = {fit.exponent:.3f} (residual {fit.residual:.2e}, {fit.n_points} points)")
        if result.crossover:
            logger.info(f"Hierarchy crossover at G_side/G_radial = {result.crossover.ratio:.4f}")
        else:
            logger.info("No hierarchy crossover in range")
    return emit(dataset, args)


class _PhaseEvaluator:
    """Picklable ratio -> maxima callable for worker processes."""

    def __init__(self, layout, cell, g_radial, state, policy, j_on):
        self.layout, self.cell, self.g_radial = layout, cell, g_radial
        self.state, self.policy, self.j_on = state, policy, j_on

    def __call__(self, ratio: float):
        return phase_point(ratio, self.layout, self.cell, self.g_radial, self.state, self.policy, self.j_on)


def cmd_gate(args) -> int:
    layout = load_context(args)
    gsides = parse_floats(args.gsides)
    cells = args.cells or [args.cell]
    dataset, reports = fidelity_sweep(
        layout, gsides, cells=cells, noise=NoiseModel(), policy=args.policy, workers=args.workers
    )
    g_radial = args.gradial_mhz if args.gradial_mhz is not None else 8.0
    summary = classify_fidelity(dataset, g_radial)
    code = emit(dataset, args)
    emit(ScanDataset("fidelity_classified", "fidelity_summary", summary, {"g_radial_MHz": g_radial}), args)
    write_json([r.to_dict() for r in reports], args.out_dir / "fidelity_reports.json")
    return code


def cmd_report(args) -> int:
    dataset = load_dataset(args.input)
    return emit(dataset, args)


COMMANDS = {
    "layout": cmd_layout,
    "cell": cmd_cell,
    "pauli": cmd_pauli,
    "calibrate": cmd_calibrate,
    "scan": cmd_scan,
    "gate": cmd_gate,
    "report": cmd_report,
}


# ============================================================================
# Argument parsing
# ============================================================================


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Surface-code QPU crosstalk engine",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Check a layout file
  python main.py --layout chip.layout layout validate

  # Exact and perturbative Pauli table of cell B with 4 MHz side coupling
  python main.py --cell B --gside-mhz 4 pauli table

  # Hard-OFF calibration of the default cell
  python main.py calibrate off

  # Processor error tomography over every cell, CSV and SVG
  python main.py --format csv,svg --workers 4 scan pet

  # Phase scan, OFF state, strong radial coupling
  python main.py --gradial-mhz 8 scan phase --state OFF

  # iSWAP benchmark at three side couplings
  python main.py gate bench --gsides 0,2,4
        """,
    )
    parser.add_argument("--layout", help="Layout file (TOML or .json); bundled 53-qubit layout when omitted")
    parser.add_argument("--cell", default=DEFAULT_CELL, help="Cell label (default: A)")
    parser.add_argument("--gside-mhz", type=float, default=None, help="Override every side coupling (MHz)")
    parser.add_argument("--gradial-mhz", type=float, default=None, help="Override every radial coupling (MHz)")
    parser.add_argument("--truncation", default=DEFAULT_TRUNCATION, help="qubit,coupler,cap levels (cap may be 'none')")
    parser.add_argument("--seed", type=int, default=0, help="Seed for layout generation")
    parser.add_argument("--out-dir", default=DEFAULT_OUT_DIR, help="Output directory")
    parser.add_argument("--format", default="csv", help=f"Comma-separated output formats from {', '.join(FORMATS)}")
    parser.add_argument("--workers", type=int, default=1, help="Worker processes for scans")
    parser.add_argument("--verbose", action="store_true", help="Debug logging")

    groups = parser.add_subparsers(dest="command", required=True)

    layout = groups.add_parser("layout", help="Validate or generate layouts")
    layout.add_argument("action", choices=["validate", "generate"])
    layout.add_argument("--rows", type=int, default=SYCAMORE_ROWS)
    layout.add_argument("--cols", type=int, default=SYCAMORE_COLS)
    layout.add_argument("--output", help="Target file for generate")

    cell = groups.add_parser("cell", help="Solve one cell into its effective model")
    cell.add_argument("action", choices=["solve"])
    cell.add_argument("--convergence", action="store_true", help="Compare against one more coupler level")

    pauli = groups.add_parser("pauli", help="Pauli coefficient table (exact, pert2, pert3)")
    pauli.add_argument("action", choices=["table"])
    pauli.add_argument("--max-weight", type=int, default=3)
    pauli.add_argument("--calibrated", action="store_true", help="Calibrate the cell before extracting")
    pauli.add_argument("--j-target", type=float, default=0.0, help="Gate-coupler target when calibrated (MHz)")

    calibrate = groups.add_parser("calibrate", help="Coupler calibration")
    calibrate.add_argument("action", choices=["off", "on", "resonance"])
    calibrate.add_argument("--j-target", type=float, default=8.0, help="|J13| target for on / resonance (MHz)")

    scan = groups.add_parser("scan", help="Parameter scans")
    scan.add_argument("action", choices=["tomography", "pet", "overlay", "phase"])
    scan.add_argument("--cells", nargs="*", help="Cell labels (all cells when omitted)")
    scan.add_argument("--grid", help="start,stop,count for the swept variable")
    scan.add_argument("--j-targets", default="0,8", help="J13 targets for tomography (MHz)")
    scan.add_argument("--gsides", default="0,4", help="G_side values for tomography (MHz)")
    scan.add_argument("--state", choices=[s.value for s in CellState], default=CellState.OFF.value)
    scan.add_argument("--j-target", type=float, default=8.0, help="|J13| in the ON state (MHz)")

    gate = groups.add_parser("gate", help="iSWAP benchmark")
    gate.add_argument("action", choices=["bench"])
    gate.add_argument("--cells", nargs="*", help="Cell labels (the --cell value when omitted)")
    gate.add_argument("--gsides", default="0", help="G_side values (MHz)")

    report = groups.add_parser("report", help="Re-render a saved dataset")
    report.add_argument("action", choices=["render"])
    report.add_argument("--input", required=True, help="Dataset written earlier (csv or json)")

    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments, configure logging and dispatch; returns the exit code."""
    args = build_parser().parse_args(argv)
    args.out_dir = Path(args.out_dir)
    setup_logging(args.out_dir, args.verbose)
    for fmt in args.format.split(","):
        if fmt and fmt not in FORMATS:
            raise ValueError(f"unknown format {fmt!r}")
    args.policy = TruncationPolicy.parse(args.truncation)
    logger.info(f"Running {args.command} {args.action} (truncation {args.policy.describe()})")
    return COMMANDS[args.command](args)


def main():
    """Main entry point."""
    try:
        code = run()
    except Exception as e:
        logger.error(f"Fatal error: {e}", exc_info=True)
        sys.exit(EXIT_FAILURE)
    sys.exit(code)


if __name__ == "__main__":
    main()
