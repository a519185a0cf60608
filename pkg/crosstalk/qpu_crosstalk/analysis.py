"""
Analysis - scan drivers over cells and control parameters.
Hamiltonian tomography, processor error tomography, ON/OFF overlays, phase
scans with power-law fits, and per-cell fidelity sweeps.
"""

import concurrent.futures
import itertools
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import partial
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.optimize

from .calibration import CalibrationError, CellSolver, calibrate_cell, rebias_neighbors, tune_resonance
from .device import DeviceLayout
from .effective import PauliCoefficients, pauli_coefficients
from .gate_sim import FidelityReport, NoiseLevel, NoiseModel, optimize_gate, stray_terms_from
from .hilbert import TruncationPolicy
from .perturbation import LevelFrequencies, LevelJTable, perturbative_coefficients

logger = logging.getLogger(__name__)

# Configuration
GATE_COUPLER_INDEX = 1  # C13 in C12..C15 order
CENTRAL_INDEX = 0
PARTNER_INDEX = 2
FIT_FLOOR_MHZ = 1e-4
MIN_FIT_POINTS = 5
MIN_PHASE_POINTS = 8
CROSSOVER_XTOL = 1e-3
OUTLIER_RATIO = 1.5
SECTORS = (0.0, 0.25, 0.5)
DEFAULT_TOMOGRAPHY_TARGETS_MHZ = (0.0, 8.0)
DEFAULT_PHASE_J_ON_MHZ = 8.0

TOMOGRAPHY_COLUMNS = ["state", "j13_target_MHz", "gside_MHz", "string", "alpha_MHz", "path", "flag"]
PET_COLUMNS = ["cell", "x_value", "j13_MHz", "zz_max_MHz", "zzz_max_MHz", "ratio", "flag"]
OVERLAY_COLUMNS = ["cell", "gside_MHz", "j13_target_MHz", "j13_MHz", "Z1Z3", "Z1Z2Z3", "Z1Z3Z4", "Z1Z3Z5", "flag"]
PHASE_COLUMNS = ["ratio", "zz_max_MHz", "zzz_max_MHz", "dominant_zz_string", "dominant_zzz_string", "flag"]
FIDELITY_COLUMNS = ["cell", "gside_MHz", "noise_level", "j_on_MHz", "error", "flag"]
FIDELITY_SUMMARY_COLUMNS = ["cell", "gside_MHz", "decoherence_only", "with_zz", "with_zzz", "sector", "outlier"]
PAULI_COLUMNS = ["string", "alpha_MHz", "path"]


class ScanVariable(Enum):
    """Control parameter swept by a scan."""

    COUPLER_FREQ = "coupler_freq"
    J13 = "J13"
    G_SIDE_RATIO = "G_side_ratio"


class CellState(Enum):
    """Gate coupler configuration during a scan."""

    ON = "ON"
    OFF = "OFF"


@dataclass(frozen=True)
class ScanGrid:
    """Strictly increasing sweep points for one control variable."""

    variable: ScanVariable
    points: Tuple[float, ...]

    def __post_init__(self):
        points = tuple(float(p) for p in self.points)
        if any(b <= a for a, b in zip(points, points[1:])):
            raise ValueError(f"{self.variable.value} grid must be strictly increasing")
        object.__setattr__(self, "points", points)

    @classmethod
    def linear(cls, variable: ScanVariable, start: float, stop: float, count: int) -> "ScanGrid":
        return cls(variable, tuple(np.linspace(start, stop, count)))

    @classmethod
    def logarithmic(cls, variable: ScanVariable, start: float, stop: float, count: int) -> "ScanGrid":
        return cls(variable, tuple(np.geomspace(start, stop, count)))


@dataclass
class ScanDataset:
    """Tabular scan output plus run metadata."""

    name: str
    kind: str
    frame: pd.DataFrame
    meta: Dict = field(default_factory=dict)

    @property
    def flagged(self) -> int:
        if "flag" not in self.frame.columns or self.frame.empty:
            return 0
        return int((self.frame["flag"].fillna("") != "").sum())

    @property
    def exit_code(self) -> int:
        return 2 if self.flagged else 0


@dataclass(frozen=True)
class PetRow:
    """One cell of a processor error tomography scan."""

    cell: str
    x_values: Tuple[float, ...]
    ratios: Tuple[float, ...]
    zz_max: Tuple[float, ...]


@dataclass(frozen=True)
class PowerLawFit:
    """log|y| = log(prefactor) + exponent * log(x) over the admitted points."""

    exponent: float
    prefactor: float
    fit_range: Tuple[float, float]
    residual: float
    n_points: int
    dominant_trace: Tuple[Tuple[float, str], ...] = ()


@dataclass(frozen=True)
class CrossoverPoint:
    """Ratio at which |ZZZ|_max first overtakes |ZZ|_max."""

    ratio: float
    bracket: Tuple[float, float]
    state: str
    g_radial: float


@dataclass
class PhaseScanResult:
    dataset: ScanDataset
    fit_zz: Optional[PowerLawFit]
    fit_zzz: Optional[PowerLawFit]
    crossover: Optional[CrossoverPoint]


# ============================================================================
# Shared helpers
# ============================================================================


def _fan_out(func: Callable, tasks: Sequence, workers: int = 1) -> List:
    """Apply func to every task, in input order; a process pool when workers > 1."""
    if workers <= 1 or len(tasks) <= 1:
        return [func(task) for task in tasks]
    results: List = [None] * len(tasks)
    with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as executor:
        future_to_index = {executor.submit(func, task): k for k, task in enumerate(tasks)}
        for future in concurrent.futures.as_completed(future_to_index):
            results[future_to_index[future]] = future.result()
    return results


def _cells(layout: DeviceLayout, cells: Optional[Sequence[str]]) -> List[str]:
    return list(cells) if cells else [c.label for c in layout.cells]


def cell_maxima(coeffs: PauliCoefficients, weight: int) -> Tuple[str, float]:
    """Dominant string of a weight within the cell and its |alpha|."""
    _, value = coeffs.maxima(weight)
    return coeffs.dominant(weight), value


def fit_power_law(
    x: Sequence[float],
    y: Sequence[float],
    floor: float = FIT_FLOOR_MHZ,
    trace: Sequence[Tuple[float, str]] = (),
) -> PowerLawFit:
    """
    Least-squares line through (log x, log |y|), dropping points below the floor.

    Args:
        x: Positive abscissae
        y: Values (sign ignored)
        floor: Points with |y| below this are excluded (MHz)
        trace: Optional (x, dominant string) pairs kept with the fit

    Returns:
        PowerLawFit
    """
    x, y = np.asarray(x, dtype=float), np.abs(np.asarray(y, dtype=float))
    keep = (x > 0) & (y >= floor) & np.isfinite(y)
    if keep.sum() < MIN_FIT_POINTS:
        raise ValueError(f"power-law fit needs {MIN_FIT_POINTS} points above {floor} MHz, got {int(keep.sum())}")
    lx, ly = np.log(x[keep]), np.log(y[keep])
    slope, intercept = np.polyfit(lx, ly, 1)
    residual = float(np.sqrt(np.mean((ly - (slope * lx + intercept)) ** 2)))
    return PowerLawFit(
        exponent=float(slope),
        prefactor=float(np.exp(intercept)),
        fit_range=(float(x[keep].min()), float(x[keep].max())),
        residual=residual,
        n_points=int(keep.sum()),
        dominant_trace=tuple(trace),
    )


def locate_crossover(
    ratios: Sequence[float],
    differences: Sequence[float],
    evaluate: Optional[Callable[[float], float]] = None,
    xtol: float = CROSSOVER_XTOL,
) -> Optional[Tuple[float, Tuple[float, float]]]:
    """
    First ratio where |ZZZ|_max - |ZZ|_max turns non-negative.

    Args:
        ratios: Increasing grid
        differences: |ZZZ|_max - |ZZ|_max on the grid
        evaluate: Difference at an arbitrary ratio, used for bisection
        xtol: Bisection tolerance in ratio

    Returns:
        (ratio, bracket) or None when no sign change exists
    """
    for k in range(len(ratios) - 1):
        a, b = differences[k], differences[k + 1]
        if a < 0 <= b:
            bracket = (float(ratios[k]), float(ratios[k + 1]))
            if evaluate is None:
                # Linear interpolation on the grid
                root = bracket[0] + (bracket[1] - bracket[0]) * (-a) / (b - a)
            else:
                root = scipy.optimize.bisect(evaluate, bracket[0], bracket[1], xtol=xtol)
            return float(root), bracket
    return None


def classify_sector(gside: float, gradial: float) -> float:
    """Nearest of the G_side / G_radial sectors {0, 1/4, 1/2}."""
    ratio = gside / gradial if gradial else 0.0
    return min(SECTORS, key=lambda s: abs(s - ratio))


def _solver(layout: DeviceLayout, cell: str, policy: TruncationPolicy) -> Tuple[CellSolver, str]:
    solver = CellSolver.for_cell(layout, cell, policy=policy)
    return solver, solver.couplers[GATE_COUPLER_INDEX]


# ============================================================================
# Hamiltonian tomography
# ============================================================================


def _tomography_point(task: Tuple, layout: DeviceLayout, cell: str, policy: TruncationPolicy) -> List[Dict]:
    j_target, gside = task
    state = CellState.OFF.value if j_target == 0 else CellState.ON.value
    base = {"state": state, "j13_target_MHz": j_target, "gside_MHz": gside}
    try:
        solver, gate = _solver(layout.with_overrides(gside=gside), cell, policy)
        result = calibrate_cell(solver, gate, j_target)
        effH = solver.solve(result.bias)
        tables = {
            "exact": pauli_coefficients(effH),
            "pert2": perturbative_coefficients(
                LevelJTable.from_effective(effH), LevelFrequencies.from_effective(effH), order=2
            ),
            "pert3": perturbative_coefficients(
                LevelJTable.from_effective(effH), LevelFrequencies.from_effective(effH), order=3
            ),
        }
        flag = "" if result.converged else "not_converged"
    except Exception as e:
        logger.warning(f"Tomography point J={j_target} G_side={gside} failed: {e}")
        return [{**base, "string": "", "alpha_MHz": math.nan, "path": "", "flag": str(e)}]

    rows = []
    for path, coeffs in tables.items():
        for weight in (2, 3):
            for p in coeffs.strings(weight):
                rows.append({**base, "string": str(p), "alpha_MHz": coeffs.alpha(p), "path": path, "flag": flag})
    return rows


def tomography_scan(
    layout: DeviceLayout,
    cell: str,
    j_targets: Sequence[float] = DEFAULT_TOMOGRAPHY_TARGETS_MHZ,
    gsides: Sequence[float] = (0.0,),
    policy: TruncationPolicy = TruncationPolicy(),
    workers: int = 1,
) -> ScanDataset:
    """
    Weight-2 and weight-3 coefficients per (J13 target, G_side): exact, pert2, pert3.

    Args:
        layout: Device layout
        cell: Cell label
        j_targets: Gate-coupler targets in MHz (0 = OFF)
        gsides: Side couplings in MHz
        policy: Truncation policy
        workers: Worker processes

    Returns:
        Long-format ScanDataset
    """
    tasks = list(itertools.product(j_targets, gsides))
    chunks = _fan_out(partial(_tomography_point, layout=layout, cell=cell, policy=policy), tasks, workers)
    frame = pd.DataFrame([row for chunk in chunks for row in chunk], columns=TOMOGRAPHY_COLUMNS)
    logger.info(f"Tomography of cell {cell}: {len(tasks)} points, {len(frame)} rows")
    return ScanDataset(f"tomography_{cell}", "tomography", frame, {"cell": cell, "policy": policy.describe()})


# ============================================================================
# Processor error tomography and overlays
# ============================================================================


def _pet_cell(cell: str, layout: DeviceLayout, grid: Tuple[float, ...], policy: TruncationPolicy, rebias: bool) -> List[Dict]:
    try:
        solver, gate = _solver(layout, cell, policy)
        base = calibrate_cell(solver, gate, 0.0).bias
    except Exception as e:
        logger.warning(f"PET cell {cell}: calibration failed: {e}")
        return [
            {"cell": cell, "x_value": x, "j13_MHz": math.nan, "zz_max_MHz": math.nan,
             "zzz_max_MHz": math.nan, "ratio": math.nan, "flag": str(e)}
            for x in grid
        ]

    rows = []
    low, high = solver.layout.coupler(gate).band
    for x in grid:
        row = {"cell": cell, "x_value": x}
        try:
            if not low <= x <= high:
                raise CalibrationError(f"{gate}: {x} MHz outside band")
            bias = base.with_coupler(gate, x)
            flag = ""
            if rebias:
                result = rebias_neighbors(solver, gate, bias)
                bias = result.bias
                flag = "" if result.converged else "not_converged"
            coeffs = solver.coefficients(bias)
            _, zz = cell_maxima(coeffs, 2)
            _, zzz = cell_maxima(coeffs, 3)
            row.update(
                j13_MHz=solver.coupler_exchange(bias, gate),
                zz_max_MHz=zz,
                zzz_max_MHz=zzz,
                ratio=zzz / zz if zz > 0 else math.inf,
                flag=flag,
            )
        except Exception as e:
            logger.warning(f"PET cell {cell} at {x} MHz: {e}")
            row.update(j13_MHz=math.nan, zz_max_MHz=math.nan, zzz_max_MHz=math.nan, ratio=math.nan, flag=str(e))
        rows.append(row)
    return rows


def pet_scan(
    layout: DeviceLayout,
    grid: ScanGrid,
    cells: Optional[Sequence[str]] = None,
    policy: TruncationPolicy = TruncationPolicy(),
    rebias: bool = True,
    workers: int = 1,
) -> ScanDataset:
    """
    |ZZZ|_max / |ZZ|_max per cell across a sweep of the gate-coupler frequency.

    Args:
        layout: Device layout (G_side already applied)
        grid: Coupler-frequency grid (MHz)
        cells: Cell labels, all when None
        policy: Truncation policy
        rebias: Re-root the other couplers at every point
        workers: Worker processes (one task per cell)

    Returns:
        ScanDataset with one row per (cell, grid point)
    """
    if grid.variable is not ScanVariable.COUPLER_FREQ:
        raise ValueError("pet_scan sweeps the gate-coupler frequency")
    labels = _cells(layout, cells)
    chunks = _fan_out(
        partial(_pet_cell, layout=layout, grid=grid.points, policy=policy, rebias=rebias), labels, workers
    )
    frame = pd.DataFrame([row for chunk in chunks for row in chunk], columns=PET_COLUMNS)
    return ScanDataset("pet", "pet", frame, {"cells": labels, "rebias": rebias})


def pet_rows(dataset: ScanDataset) -> List[PetRow]:
    rows = []
    for cell, group in dataset.frame.groupby("cell", sort=False):
        rows.append(
            PetRow(
                cell=str(cell),
                x_values=tuple(group["x_value"]),
                ratios=tuple(group["ratio"]),
                zz_max=tuple(group["zz_max_MHz"]),
            )
        )
    return rows


def _overlay_cell(cell: str, layout: DeviceLayout, j_grid: Tuple[float, ...], policy: TruncationPolicy, gside: float) -> List[Dict]:
    rows = []
    try:
        solver, gate = _solver(layout, cell, policy)
        off = calibrate_cell(solver, gate, 0.0)
        q1, q3 = solver.qubits[CENTRAL_INDEX], solver.qubits[PARTNER_INDEX]
        resonant = tune_resonance(solver, q3, q1, off.bias)
    except Exception as e:
        logger.warning(f"Overlay cell {cell}: resonance setup failed: {e}")
        return [
            {"cell": cell, "gside_MHz": gside, "j13_target_MHz": j, "j13_MHz": math.nan, "Z1Z3": math.nan,
             "Z1Z2Z3": math.nan, "Z1Z3Z4": math.nan, "Z1Z3Z5": math.nan, "flag": str(e)}
            for j in j_grid
        ]
    for j_target in j_grid:
        row = {"cell": cell, "gside_MHz": gside, "j13_target_MHz": j_target}
        try:
            result = calibrate_cell(solver, gate, j_target, resonant)
            stray = stray_terms_from(solver.coefficients(result.bias), CENTRAL_INDEX, PARTNER_INDEX)
            row.update(
                j13_MHz=solver.coupler_exchange(result.bias, gate),
                Z1Z3=stray.z1z3,
                Z1Z2Z3=stray.z1z2z3,
                Z1Z3Z4=stray.z1z3z4,
                Z1Z3Z5=stray.z1z3z5,
                flag="" if result.converged else "not_converged",
            )
        except Exception as e:
            logger.warning(f"Overlay cell {cell} at J13={j_target} MHz: {e}")
            row.update(j13_MHz=math.nan, Z1Z3=math.nan, Z1Z2Z3=math.nan, Z1Z3Z4=math.nan, Z1Z3Z5=math.nan, flag=str(e))
        rows.append(row)
    return rows


def onoff_overlay_scan(
    layout: DeviceLayout,
    j_grid: ScanGrid,
    cells: Optional[Sequence[str]] = None,
    gside: float = 0.0,
    policy: TruncationPolicy = TruncationPolicy(),
    workers: int = 1,
) -> ScanDataset:
    """Z1Z3 and the three spectator-conditioned ZZZ curves vs J13 for every cell, Q3 tuned onto Q1."""
    if j_grid.variable is not ScanVariable.J13:
        raise ValueError("onoff_overlay_scan sweeps J13")
    labels = _cells(layout, cells)
    chunks = _fan_out(
        partial(_overlay_cell, layout=layout.with_overrides(gside=gside), j_grid=j_grid.points, policy=policy, gside=gside),
        labels,
        workers,
    )
    frame = pd.DataFrame([row for chunk in chunks for row in chunk], columns=OVERLAY_COLUMNS)
    return ScanDataset(f"overlay_gside_{gside:g}", "overlay", frame, {"cells": labels, "gside_MHz": gside})


# ============================================================================
# Phase scans
# ============================================================================


def phase_point(
    ratio: float,
    layout: DeviceLayout,
    cell: str,
    g_radial: float,
    state: CellState,
    policy: TruncationPolicy,
    j_on: float = DEFAULT_PHASE_J_ON_MHZ,
) -> Tuple[float, float, str, str]:
    """(|ZZ|_max, |ZZZ|_max, dominant ZZ, dominant ZZZ) at G_side = ratio * G_radial."""
    solver, gate = _solver(layout.with_overrides(gside=ratio * g_radial, gradial=g_radial), cell, policy)
    result = calibrate_cell(solver, gate, j_on if state is CellState.ON else 0.0)
    coeffs = solver.coefficients(result.bias)
    zz_string, zz = cell_maxima(coeffs, 2)
    zzz_string, zzz = cell_maxima(coeffs, 3)
    return zz, zzz, zz_string, zzz_string


def _safe_point(ratio: float, evaluate: Callable) -> Dict:
    try:
        zz, zzz, zz_string, zzz_string = evaluate(ratio)
        flag = ""
    except Exception as e:
        logger.warning(f"Phase point {ratio:.4g} failed: {e}")
        zz = zzz = math.nan
        zz_string = zzz_string = ""
        flag = str(e)
    return {
        "ratio": ratio,
        "zz_max_MHz": zz,
        "zzz_max_MHz": zzz,
        "dominant_zz_string": zz_string,
        "dominant_zzz_string": zzz_string,
        "flag": flag,
    }


def phase_scan(
    ratios: ScanGrid,
    evaluate: Callable[[float], Tuple[float, float, str, str]],
    state: CellState = CellState.OFF,
    g_radial: float = 4.0,
    workers: int = 1,
    floor: float = FIT_FLOOR_MHZ,
) -> PhaseScanResult:
    """
    Power-law fits of |ZZ|_max and |ZZZ|_max vs G_side / G_radial and the
    hierarchy crossover.

    Args:
        ratios: Log-spaced G_side_ratio grid (at least 8 points, up to 1)
        evaluate: ratio -> (|ZZ|_max, |ZZZ|_max, ZZ string, ZZZ string);
            phase_point bound with partial for the exact path
        state: ON or OFF (recorded)
        g_radial: Radial coupling in MHz (recorded)
        workers: Worker processes over grid points
        floor: Smallest |alpha| (MHz) admitted into the fits

    Returns:
        PhaseScanResult; fits are None when too few points clear the floor
    """
    if ratios.variable is not ScanVariable.G_SIDE_RATIO:
        raise ValueError("phase_scan sweeps G_side_ratio")
    if len(ratios.points) < MIN_PHASE_POINTS:
        raise ValueError(f"phase_scan needs at least {MIN_PHASE_POINTS} ratios")
    rows = _fan_out(partial(_safe_point, evaluate=evaluate), list(ratios.points), workers)
    frame = pd.DataFrame(rows, columns=PHASE_COLUMNS)
    clean = frame[frame["flag"] == ""]

    fits = {}
    for column, strings in (("zz_max_MHz", "dominant_zz_string"), ("zzz_max_MHz", "dominant_zzz_string")):
        trace = list(zip(clean["ratio"], clean[strings]))
        try:
            fits[column] = fit_power_law(clean["ratio"], clean[column], floor=floor, trace=trace)
        except ValueError as e:
            logger.warning(f"No {column} fit: {e}")
            fits[column] = None

    def difference(r: float) -> float:
        zz, zzz, _, _ = evaluate(r)
        return zzz - zz

    found = locate_crossover(
        clean["ratio"].tolist(), (clean["zzz_max_MHz"] - clean["zz_max_MHz"]).tolist(), difference
    )
    crossover = CrossoverPoint(found[0], found[1], state.value, g_radial) if found else None
    meta = {"state": state.value, "g_radial_MHz": g_radial}
    if fits["zz_max_MHz"] is not None:
        meta["l2"] = fits["zz_max_MHz"].exponent
    if fits["zzz_max_MHz"] is not None:
        meta["l3"] = fits["zzz_max_MHz"].exponent
    if crossover:
        meta["crossover_ratio"] = crossover.ratio
    dataset = ScanDataset(f"phase_{state.value}_gradial_{g_radial:g}", "phase", frame, meta)
    return PhaseScanResult(dataset, fits["zz_max_MHz"], fits["zzz_max_MHz"], crossover)


# ============================================================================
# Fidelity sweep
# ============================================================================


def _fidelity_cell(
    task: Tuple[str, float],
    layout: DeviceLayout,
    noise: NoiseModel,
    policy: TruncationPolicy,
    j_range: Tuple[float, float],
    grid_points: int,
) -> Optional[FidelityReport]:
    cell, gside = task
    try:
        solver, gate = _solver(layout.with_overrides(gside=gside), cell, policy)
        off = calibrate_cell(solver, gate, 0.0)
        resonant = tune_resonance(solver, solver.qubits[PARTNER_INDEX], solver.qubits[CENTRAL_INDEX], off.bias)

        def stray_provider(j_on: float):
            result = calibrate_cell(solver, gate, j_on, resonant)
            return stray_terms_from(solver.coefficients(result.bias), CENTRAL_INDEX, PARTNER_INDEX)

        return optimize_gate(stray_provider, noise, j_range, grid_points, cell=cell, gside=gside)
    except Exception as e:
        logger.warning(f"Fidelity cell {cell} G_side={gside}: {e}")
        return None


def fidelity_sweep(
    layout: DeviceLayout,
    gsides: Sequence[float],
    cells: Optional[Sequence[str]] = None,
    noise: NoiseModel = NoiseModel(),
    policy: TruncationPolicy = TruncationPolicy(),
    j_range: Tuple[float, float] = (10.0, 30.0),
    grid_points: int = 11,
    workers: int = 1,
) -> Tuple[ScanDataset, List[FidelityReport]]:
    """
    Per-cell gate errors of all three noise models at the model-(ii) optimum.

    Returns:
        (dataset with one row per cell, G_side and noise level, reports)
    """
    labels = _cells(layout, cells)
    tasks = list(itertools.product(labels, gsides))
    reports = _fan_out(
        partial(_fidelity_cell, layout=layout, noise=noise, policy=policy, j_range=j_range, grid_points=grid_points),
        tasks,
        workers,
    )
    rows = []
    for (cell, gside), report in zip(tasks, reports):
        if report is None:
            rows += [
                {"cell": cell, "gside_MHz": gside, "noise_level": level.value, "j_on_MHz": math.nan,
                 "error": math.nan, "flag": "failed"}
                for level in NoiseLevel
            ]
            continue
        rows += report.to_rows()
    frame = pd.DataFrame(rows, columns=FIDELITY_COLUMNS)
    return ScanDataset("fidelity", "fidelity", frame, {"noise": noise.to_dict()}), [r for r in reports if r]


def classify_fidelity(dataset: ScanDataset, g_radial: float) -> pd.DataFrame:
    """
    Wide per-cell table with the G_side sector and an outlier flag
    (model-iii error above OUTLIER_RATIO times model ii).
    """
    frame = dataset.frame
    if frame.empty:
        return pd.DataFrame(columns=FIDELITY_SUMMARY_COLUMNS)
    wide = frame.pivot_table(index=["cell", "gside_MHz"], columns="noise_level", values="error", sort=False).reset_index()
    wide.columns.name = None
    wide["sector"] = [classify_sector(g, g_radial) for g in wide["gside_MHz"]]
    ii, iii = NoiseLevel.WITH_ZZ.value, NoiseLevel.WITH_ZZZ.value
    if ii in wide.columns and iii in wide.columns:
        wide["outlier"] = wide[iii] > OUTLIER_RATIO * wide[ii]
    else:
        wide["outlier"] = False
    return wide.reindex(columns=FIDELITY_SUMMARY_COLUMNS)
