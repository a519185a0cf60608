"""
Calibration - coupler and qubit biasing on the exact per-cell pipeline.
Finds hard- and soft-OFF coupler points, sets ON exchange targets, re-biases
neighbouring couplers and tunes qubit pairs into dressed resonance.
"""

import json
import logging
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.optimize

from .device import COUPLER_GUARD_MHZ, QUBIT_TUNING_RANGE_MHZ, DeviceLayout, cell_ordered
from .effective import (
    EffectiveQubitH,
    PauliCoefficients,
    PauliString,
    block_diagonalize,
    label_states,
    pauli_coefficients,
)
from .hilbert import TruncationPolicy, build_basis, build_hamiltonian, eigensolve

logger = logging.getLogger(__name__)

# Configuration
TOL_OFF_MHZ = 1e-3
TOL_ON_RELATIVE = 0.01
TOL_RESONANCE_MHZ = 1e-2
ROOT_XTOL_MHZ = 1e-7
OFF_SCAN_POINTS = 12
# Relative tolerance of the golden-section soft-OFF refinement
SOFT_OFF_XTOL = 1e-9
MAX_REBIAS_SWEEPS = 20
RESONANCE_WINDOW_MHZ = 150.0
SOLVE_CACHE_SIZE = 256
BIAS_KEY_DECIMALS = 9


class CalibrationError(RuntimeError):
    """Raised when a bias target cannot be met inside the allowed bands."""


@dataclass(frozen=True)
class BiasPoint:
    """Coupler and (tunable) qubit frequencies in MHz."""

    couplers: Dict[str, float] = field(default_factory=dict)
    qubits: Dict[str, float] = field(default_factory=dict)

    def key(self) -> Tuple:
        return (
            tuple(sorted((k, round(v, BIAS_KEY_DECIMALS)) for k, v in self.couplers.items())),
            tuple(sorted((k, round(v, BIAS_KEY_DECIMALS)) for k, v in self.qubits.items())),
        )

    def with_coupler(self, coupler_id: str, freq: float) -> "BiasPoint":
        return replace(self, couplers={**self.couplers, coupler_id: float(freq)})

    def with_qubit(self, qubit_id: str, freq: float) -> "BiasPoint":
        return replace(self, qubits={**self.qubits, qubit_id: float(freq)})

    def validate(self, layout: DeviceLayout) -> None:
        for cid, freq in self.couplers.items():
            low, high = layout.coupler(cid).band
            if not low <= freq <= high:
                raise CalibrationError(f"coupler {cid}: {freq:.3f} MHz outside band [{low}, {high}]")
        for qid, freq in self.qubits.items():
            if not layout.qubit(qid).in_band(freq):
                raise CalibrationError(f"qubit {qid}: {freq:.3f} MHz outside its band")

    def apply(self, layout: DeviceLayout) -> DeviceLayout:
        return layout.with_overrides(coupler_freqs=self.couplers, qubit_freqs=self.qubits)

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> "BiasPoint":
        return cls(
            couplers={k: float(v) for k, v in data.get("couplers", {}).items()},
            qubits={k: float(v) for k, v in data.get("qubits", {}).items()},
        )


@dataclass
class RootSolution:
    """Outcome of one one-dimensional bias search."""

    frequency: float
    value: float
    iterations: int
    flag: str = "converged"
    history: List[Tuple[float, float]] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return {
            "frequency_MHz": self.frequency,
            "value_MHz": self.value,
            "iterations": self.iterations,
            "flag": self.flag,
        }


@dataclass
class CalibrationResult:
    """Bias plus the achieved constraint values."""

    bias: BiasPoint
    achieved: Dict[str, float]
    iterations: int
    converged: bool
    metadata: Dict = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return {
            "bias": self.bias.to_dict(),
            "achieved": dict(self.achieved),
            "iterations": self.iterations,
            "converged": self.converged,
            "metadata": dict(self.metadata),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "CalibrationResult":
        return cls(
            bias=BiasPoint.from_dict(data["bias"]),
            achieved={k: float(v) for k, v in data["achieved"].items()},
            iterations=int(data["iterations"]),
            converged=bool(data["converged"]),
            metadata=data.get("metadata", {}),
        )

    def to_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
        return path


# ============================================================================
# Exact per-cell pipeline
# ============================================================================


class CellSolver:
    """
    Layout -> Hamiltonian -> spectrum -> labels -> effective model, cached by bias.

    One instance per cell; not shared between worker processes.
    """

    def __init__(
        self,
        layout: DeviceLayout,
        policy: TruncationPolicy = TruncationPolicy(),
        rwa: bool = True,
        effective_levels: int = 3,
        label: Optional[str] = None,
    ):
        self.layout = layout
        self.policy = policy
        self.rwa = rwa
        self.effective_levels = effective_levels
        self.label = label or (layout.cells[0].label if layout.cells else "custom")
        self._basis = build_basis(layout, policy) if policy.bare_energy_cutoff is None else None
        self._cache: "OrderedDict[Tuple, EffectiveQubitH]" = OrderedDict()
        self._idle = self.idle_bias()
        self.solves = 0

    @classmethod
    def for_cell(cls, layout: DeviceLayout, label: str, **kwargs) -> "CellSolver":
        """Solver on a cell with qubits ordered Q1..Q5 and couplers C12..C15."""
        return cls(cell_ordered(layout, label), label=label, **kwargs)

    @property
    def qubits(self) -> List[str]:
        return self.layout.qubit_ids

    @property
    def couplers(self) -> List[str]:
        return self.layout.coupler_ids

    def idle_bias(self) -> BiasPoint:
        return BiasPoint(
            couplers={c.id: c.freq for c in self.layout.couplers},
            qubits={q.id: q.freq_idle for q in self.layout.qubits if q.tunable},
        )

    def solve(self, bias: Optional[BiasPoint] = None) -> EffectiveQubitH:
        """Effective model at a bias point (idle frequencies when None)."""
        if bias is not None:
            bias = BiasPoint({**self._idle.couplers, **bias.couplers}, {**self._idle.qubits, **bias.qubits})
        bias = bias or self._idle
        key = bias.key()
        if key in self._cache:
            self._cache.move_to_end(key)
            return self._cache[key]

        layout = bias.apply(self.layout)
        basis = self._basis if self._basis is not None else build_basis(layout, self.policy)
        H = build_hamiltonian(layout, basis, self.rwa)
        spectrum = eigensolve(H)
        labeling = label_states(spectrum, basis)
        effH = block_diagonalize(H, spectrum, labeling, effective_levels=self.effective_levels)
        self.solves += 1
        logger.debug(f"Cell {self.label}: solved bias {key} ({basis.size} states)")

        self._cache[key] = effH
        if len(self._cache) > SOLVE_CACHE_SIZE:
            self._cache.popitem(last=False)
        return effH

    def exchange(self, bias: Optional[BiasPoint], a: str, b: str, m: int = 0, n: int = 0) -> float:
        effH = self.solve(bias)
        return effH.exchange(effH.index(a), effH.index(b), m, n)

    def coupler_exchange(self, bias: Optional[BiasPoint], coupler_id: str) -> float:
        a, b = self.layout.coupler_pair(coupler_id)
        return self.exchange(bias, a, b)

    def dressed_frequency(self, bias: Optional[BiasPoint], qubit_id: str) -> float:
        effH = self.solve(bias)
        return effH.dressed_frequency(effH.index(qubit_id))

    def coefficients(self, bias: Optional[BiasPoint] = None, max_weight: int = 3) -> PauliCoefficients:
        return pauli_coefficients(self.solve(bias), max_weight)


# ============================================================================
# Root searches
# ============================================================================


def _recorder(func: Callable[[float], float], history: List[Tuple[float, float]]) -> Callable[[float], float]:
    def wrapped(x: float) -> float:
        value = func(x)
        history.append((float(x), float(value)))
        return value

    return wrapped


def _off_window(solver: CellSolver, coupler_id: str, bias: BiasPoint) -> Tuple[float, float]:
    """Coupler band below both linked qubits, kept a guard distance away."""
    spec = solver.layout.coupler(coupler_id)
    a, b = solver.layout.coupler_pair(coupler_id)
    lowest = min(bias.qubits.get(q, solver.layout.qubit(q).freq_idle) for q in (a, b))
    high = min(spec.band[1], lowest - COUPLER_GUARD_MHZ)
    if not spec.band[0] < high:
        raise CalibrationError(f"coupler {coupler_id}: no band left below its qubits")
    return spec.band[0], high


def find_off_bias(
    solver: CellSolver,
    coupler_id: str,
    bias: Optional[BiasPoint] = None,
    tol: float = TOL_OFF_MHZ,
    scan_points: int = OFF_SCAN_POINTS,
) -> RootSolution:
    """
    Hard-OFF point of one coupler: exact J between its qubits crosses zero.

    Args:
        solver: Cell pipeline
        coupler_id: Coupler to move
        bias: Bias of every other element (idle when None)
        tol: Required |J| at the root (MHz)
        scan_points: Coarse grid size used to bracket the root

    Returns:
        RootSolution; flag "band_edge" when the pair has no direct coupling
        and no sign change exists
    """
    bias = bias or solver.idle_bias()
    a, b = solver.layout.coupler_pair(coupler_id)
    history: List[Tuple[float, float]] = []

    def j_of(freq: float) -> float:
        return solver.exchange(bias.with_coupler(coupler_id, freq), a, b)

    low, high = _off_window(solver, coupler_id, bias)
    grid = np.linspace(low, high, scan_points)
    values = np.array([j_of(f) for f in grid])
    history.extend(zip(grid.tolist(), values.tolist()))
    changes = np.nonzero(np.sign(values[:-1]) * np.sign(values[1:]) <= 0)[0]

    if len(changes) == 0:
        if solver.layout.strength(a, b) == 0.0:
            best = int(np.argmin(np.abs(values)))
            logger.warning(f"{coupler_id}: no sign change for uncoupled pair {a}-{b}, using band edge")
            return RootSolution(float(grid[best]), float(values[best]), 0, "band_edge", history)
        raise CalibrationError(f"{coupler_id}: no hard-OFF point in band [{low:.1f}, {high:.1f}] MHz")

    # Closest crossing to the qubits
    k = int(changes[-1])
    if values[k] == 0.0:
        root, iterations = float(grid[k]), 0
    elif values[k + 1] == 0.0:
        root, iterations = float(grid[k + 1]), 0
    else:
        root, info = scipy.optimize.brentq(
            _recorder(j_of, history), grid[k], grid[k + 1], xtol=ROOT_XTOL_MHZ, full_output=True
        )
        iterations = info.iterations
    value = j_of(root)
    if abs(value) >= tol:
        raise CalibrationError(f"{coupler_id}: OFF root {root:.6f} MHz leaves |J| = {abs(value):.3g} MHz")
    logger.info(f"{coupler_id}: hard-OFF at {root:.4f} MHz (|J| = {abs(value) * 1e3:.3g} kHz)")
    return RootSolution(float(root), float(value), iterations, "converged", history)


def set_on_bias(
    solver: CellSolver,
    coupler_id: str,
    j_target: float,
    bias: Optional[BiasPoint] = None,
    tol_relative: float = TOL_ON_RELATIVE,
) -> RootSolution:
    """
    Coupler frequency between the OFF point and the qubits where |J| = j_target.

    Args:
        solver: Cell pipeline
        coupler_id: Coupler to move
        j_target: Target exchange magnitude (MHz); 0 means hard-OFF
        bias: Bias of every other element
        tol_relative: Allowed relative deviation from the target

    Returns:
        RootSolution whose value is the achieved signed J
    """
    if j_target == 0:
        return find_off_bias(solver, coupler_id, bias)
    bias = bias or solver.idle_bias()
    target = abs(j_target)
    a, b = solver.layout.coupler_pair(coupler_id)
    off = find_off_bias(solver, coupler_id, bias)
    _, high = _off_window(solver, coupler_id, bias)
    history: List[Tuple[float, float]] = []

    def excess(freq: float) -> float:
        return abs(solver.exchange(bias.with_coupler(coupler_id, freq), a, b)) - target

    reach = excess(high) + target
    if reach < target:
        raise CalibrationError(
            f"{coupler_id}: unreachable target {target:.3f} MHz (|J| at most {reach:.3f} MHz in band)"
        )
    root, info = scipy.optimize.brentq(
        _recorder(excess, history), off.frequency, high, xtol=ROOT_XTOL_MHZ, full_output=True
    )
    value = solver.exchange(bias.with_coupler(coupler_id, root), a, b)
    if abs(abs(value) - target) > tol_relative * target:
        raise CalibrationError(f"{coupler_id}: reached |J| = {abs(value):.4f} MHz for target {target:.4f} MHz")
    logger.info(f"{coupler_id}: |J| = {abs(value):.4f} MHz at {root:.4f} MHz")
    return RootSolution(float(root), float(value), info.iterations, "converged", history)


def _residuals(solver: CellSolver, bias: BiasPoint, couplers: Sequence[str]) -> Dict[str, float]:
    return {c: solver.coupler_exchange(bias, c) for c in couplers}


def rebias_neighbors(
    solver: CellSolver,
    active: Optional[str],
    bias: BiasPoint,
    tol: float = TOL_OFF_MHZ,
    max_sweeps: int = MAX_REBIAS_SWEEPS,
) -> CalibrationResult:
    """
    Coordinate sweeps re-rooting every non-active coupler to hard-OFF.

    Args:
        solver: Cell pipeline
        active: Coupler carrying the target exchange (None re-roots all)
        bias: Starting bias (active coupler already placed)
        tol: Residual |J| tolerance per non-active coupler
        max_sweeps: Sweep budget

    Returns:
        CalibrationResult with per-coupler residuals; converged False when
        the budget runs out
    """
    others = [c for c in solver.couplers if c != active]
    target_before = solver.coupler_exchange(bias, active) if active else 0.0
    residuals = _residuals(solver, bias, others)
    sweeps = 0
    while any(abs(r) >= tol for r in residuals.values()) and sweeps < max_sweeps:
        sweeps += 1
        for c in others:
            if abs(solver.coupler_exchange(bias, c)) >= tol:
                bias = bias.with_coupler(c, find_off_bias(solver, c, bias, tol).frequency)
        residuals = _residuals(solver, bias, others)
        logger.debug(f"Sweep {sweeps}: max residual {max(abs(r) for r in residuals.values()) * 1e3:.3g} kHz")

    converged = all(abs(r) < tol for r in residuals.values())
    target_after = solver.coupler_exchange(bias, active) if active else 0.0
    if not converged:
        logger.warning(f"Re-biasing around {active} did not converge in {max_sweeps} sweeps")
    achieved = {f"J_{active}": target_after} if active else {}
    achieved.update({f"residual_{c}": r for c, r in residuals.items()})
    drift = abs(target_after - target_before) / abs(target_before) if target_before else 0.0
    return CalibrationResult(
        bias=bias,
        achieved=achieved,
        iterations=sweeps,
        converged=converged,
        metadata={"active": active, "tol_off_MHz": tol, "target_drift_relative": drift, "optimizer": "brentq"},
    )


def tune_resonance(
    solver: CellSolver,
    mover: str,
    anchor: str,
    bias: Optional[BiasPoint] = None,
    tol: float = TOL_RESONANCE_MHZ,
    window: float = RESONANCE_WINDOW_MHZ,
) -> BiasPoint:
    """
    Move one tunable qubit until its dressed frequency equals the anchor's.

    Args:
        solver: Cell pipeline
        mover: Tunable qubit to move
        anchor: Qubit whose dressed frequency is matched
        bias: Starting bias
        tol: Allowed dressed mismatch (MHz)
        window: Search half-width around the anchor's bare frequency

    Returns:
        BiasPoint with the mover placed at dressed resonance
    """
    qubits = solver.qubits
    if anchor not in qubits:
        raise CalibrationError(f"anchor {anchor} is not in cell {solver.label}")
    if mover not in qubits:
        raise CalibrationError(f"mover {mover} is not in cell {solver.label}")
    spec = solver.layout.qubit(mover)
    if not spec.tunable:
        raise CalibrationError(f"qubit {mover} is not tunable")
    bias = bias or solver.idle_bias()

    def mismatch(freq: float) -> float:
        trial = bias.with_qubit(mover, freq)
        return solver.dressed_frequency(trial, mover) - solver.dressed_frequency(trial, anchor)

    current = bias.qubits.get(mover, spec.freq_idle)
    if abs(mismatch(current)) < tol:
        return bias

    centre = bias.qubits.get(anchor, solver.layout.qubit(anchor).freq_idle)
    band = spec.band or (spec.freq_idle - QUBIT_TUNING_RANGE_MHZ, spec.freq_idle + QUBIT_TUNING_RANGE_MHZ)
    low, high = max(centre - window, band[0]), min(centre + window, band[1])
    if not low < high or mismatch(low) * mismatch(high) > 0:
        raise CalibrationError(f"resonance of {mover} with {anchor} unachievable in band")
    root = scipy.optimize.brentq(mismatch, low, high, xtol=ROOT_XTOL_MHZ)
    residual = mismatch(root)
    if abs(residual) >= tol:
        raise CalibrationError(f"resonance residual {residual * 1e3:.3g} kHz above {tol * 1e3:.3g} kHz")
    logger.info(f"{mover} resonant with {anchor} at bare {root:.4f} MHz (bare detuning {root - centre:.4f} MHz)")
    return bias.with_qubit(mover, root)


# ============================================================================
# Soft-OFF and ramps
# ============================================================================


def _pair_parasitics(coeffs: PauliCoefficients, i: int, j: int) -> float:
    n = coeffs.n_qubits
    worst = abs(coeffs.zeta(PauliString(n, (i, j))))
    for k in range(n):
        if k not in (i, j):
            worst = max(worst, abs(coeffs.zeta(PauliString(n, (i, j, k)))))
    return worst


def find_soft_off_bias(
    solver: CellSolver, coupler_id: str, bias: Optional[BiasPoint] = None, scan_points: int = OFF_SCAN_POINTS
) -> RootSolution:
    """
    Coupler point minimizing max(|ZZ|, |ZZZ|) over strings containing its pair.

    A coarse grid over the OFF window brackets the minimum; golden-section
    search then refines it inside that bracket, so the result never leaves
    the window. A minimum on the window edge is returned unrefined.
    """
    bias = bias or solver.idle_bias()
    a, b = solver.layout.coupler_pair(coupler_id)
    i, j = solver.qubits.index(a), solver.qubits.index(b)
    history: List[Tuple[float, float]] = []

    def objective(freq: float) -> float:
        return _pair_parasitics(solver.coefficients(bias.with_coupler(coupler_id, freq)), i, j)

    low, high = _off_window(solver, coupler_id, bias)
    grid = np.linspace(low, high, scan_points)
    values = np.array([objective(f) for f in grid])
    history.extend(zip(grid.tolist(), values.tolist()))
    k = int(np.argmin(values))
    if k == 0 or k == scan_points - 1 or not values[k] < min(values[k - 1], values[k + 1]):
        logger.warning(f"{coupler_id}: soft-OFF minimum not bracketed, keeping grid point {grid[k]:.4f} MHz")
        return RootSolution(float(grid[k]), float(values[k]), 0, "soft_off", history)

    result = scipy.optimize.minimize_scalar(
        _recorder(objective, history),
        bracket=(grid[k - 1], grid[k], grid[k + 1]),
        method="golden",
        options={"xtol": SOFT_OFF_XTOL},
    )
    flag = "soft_off" if result.success else "not_converged"
    logger.info(f"{coupler_id}: soft-OFF at {result.x:.4f} MHz (max parasitic {result.fun * 1e3:.3g} kHz)")
    return RootSolution(float(result.x), float(result.fun), int(result.nfev), flag, history)


def adiabatic_ramp(
    solver: CellSolver, coupler_id: str, targets: Sequence[float], bias: Optional[BiasPoint] = None
) -> List[CalibrationResult]:
    """Quasi-static ON ramp: place the coupler per target, then re-bias the rest."""
    bias = bias or solver.idle_bias()
    results = []
    for target in targets:
        on = set_on_bias(solver, coupler_id, target, bias)
        result = rebias_neighbors(solver, coupler_id, bias.with_coupler(coupler_id, on.frequency))
        result.metadata["j_target_MHz"] = float(target)
        results.append(result)
        bias = result.bias
    return results


def calibrate_cell(
    solver: CellSolver, active: str, j_target: float = 0.0, bias: Optional[BiasPoint] = None
) -> CalibrationResult:
    """
    Full cell protocol: every coupler hard-OFF, then the active coupler ramped
    to |J| = j_target with the others re-biased.

    Args:
        solver: Cell pipeline
        active: Coupler carrying the gate exchange (C13 on a cell)
        j_target: Target |J| in MHz; 0 leaves the whole cell OFF
        bias: Starting bias (idle when None)

    Returns:
        CalibrationResult at the final bias
    """
    result = rebias_neighbors(solver, None, bias or solver.idle_bias())
    if j_target:
        on = set_on_bias(solver, active, j_target, result.bias)
        result = rebias_neighbors(solver, active, result.bias.with_coupler(active, on.frequency))
    result.metadata["j_target_MHz"] = float(j_target)
    result.metadata["cell"] = solver.label
    return result
