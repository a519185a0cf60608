"""
QPU Crosstalk - layout-to-Hamiltonian engine for surface-code processors.

This package provides:
- Device layouts of transmon qubits and tunable couplers (TOML/JSON)
- Truncated Fock-space Hamiltonians and sparse eigensolves
- Least-action block diagonalization into effective qubit models and
  Pauli Z-string coefficients via the parity rule
- Perturbative closed forms and a diagram engine for cross-checks
- Coupler calibration (OFF, ON, resonance) with neighbour re-biasing
- iSWAP simulation under decoherence and stray ZZ / ZZZ phases
- Scan drivers and CSV / JSON / SVG reporting
"""

from .analysis import ScanDataset, ScanGrid, ScanVariable, CellState
from .calibration import BiasPoint, CalibrationError, CellSolver, calibrate_cell
from .device import DeviceLayout, LayoutError, load_bundled_layout, load_layout
from .effective import EffectiveQubitH, PauliCoefficients, PauliString, pauli_coefficients
from .gate_sim import NoiseLevel, NoiseModel, PulseShape, process_fidelity
from .hilbert import TruncationPolicy
from .perturbation import LevelFrequencies, LevelJTable, generic_pauli_order
from .reporting import report_render

__all__ = [
    "BiasPoint",
    "CalibrationError",
    "CellSolver",
    "CellState",
    "DeviceLayout",
    "EffectiveQubitH",
    "LayoutError",
    "LevelFrequencies",
    "LevelJTable",
    "NoiseLevel",
    "NoiseModel",
    "PauliCoefficients",
    "PauliString",
    "PulseShape",
    "ScanDataset",
    "ScanGrid",
    "ScanVariable",
    "TruncationPolicy",
    "calibrate_cell",
    "generic_pauli_order",
    "load_bundled_layout",
    "load_layout",
    "pauli_coefficients",
    "process_fidelity",
    "report_render",
]
