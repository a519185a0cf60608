"""
Pytest test suite for coupler and qubit calibration.

Tests cover:
- Bias points (validation, overrides, serialization)
- Hard-OFF, soft-OFF and ON coupler searches on a two-qubit circuit
- Neighbour re-biasing and the full cell protocol
- Dressed resonance tuning
"""

import json
import shutil
import tempfile
from pathlib import Path

import pytest

from qpu_crosstalk.calibration import (
    BiasPoint,
    CalibrationError,
    CalibrationResult,
    CellSolver,
    adiabatic_ramp,
    calibrate_cell,
    find_off_bias,
    find_soft_off_bias,
    rebias_neighbors,
    set_on_bias,
    tune_resonance,
)
from qpu_crosstalk.device import CouplerSpec, CouplingEdge, DeviceLayout, EdgeKind, TransmonSpec, exchange_off_estimate
from qpu_crosstalk.hilbert import TruncationPolicy


SMALL_POLICY = TruncationPolicy(qubit_levels=3, coupler_levels=2, total_excitation_cap=3)


def toy_layout(direct: float = 8.0, coupler_band=(3000.0, 4850.0)) -> DeviceLayout:
    """Fixed Q1 at 5000 MHz, tunable Q2 at 5200 MHz, one coupler below both."""
    return DeviceLayout(
        qubits=(
            TransmonSpec("Q1", 5000.0),
            TransmonSpec("Q2", 5200.0, tunable=True, band=(4600.0, 5800.0)),
        ),
        couplers=(CouplerSpec("C12", 4000.0, coupler_band),),
        edges=(
            CouplingEdge(("Q1", "C12"), 100.0, EdgeKind.QUBIT_COUPLER),
            CouplingEdge(("Q2", "C12"), 100.0, EdgeKind.QUBIT_COUPLER),
            CouplingEdge(("Q1", "Q2"), direct, EdgeKind.RADIAL),
        ),
    )


# ============================================================================
# Fixtures
# ============================================================================


@pytest.fixture
def temp_dir():
    """Create a temporary directory for test files."""
    temp_path = tempfile.mkdtemp()
    yield Path(temp_path)
    # Cleanup
    shutil.rmtree(temp_path, ignore_errors=True)


@pytest.fixture
def solver():
    """Cell pipeline on the toy circuit."""
    return CellSolver(toy_layout(), SMALL_POLICY)


# ============================================================================
# Bias Point Tests
# ============================================================================


class TestBiasPoint:
    """Test suite for BiasPoint."""

    def test_overrides_are_copies(self):
        """Test with_coupler/with_qubit leave the original untouched."""
        base = BiasPoint(couplers={"C12": 4000.0})
        moved = base.with_coupler("C12", 3900.0).with_qubit("Q2", 5100.0)
        assert base.couplers == {"C12": 4000.0}
        assert moved.couplers == {"C12": 3900.0}
        assert moved.qubits == {"Q2": 5100.0}

    def test_key_rounds(self):
        """Test tiny float noise maps to the same cache key."""
        a = BiasPoint(couplers={"C12": 3900.0})
        b = BiasPoint(couplers={"C12": 3900.0 + 1e-12})
        assert a.key() == b.key()

    def test_validate_coupler_band(self):
        """Test a coupler bias outside its band is rejected."""
        with pytest.raises(CalibrationError, match="C12"):
            BiasPoint(couplers={"C12": 4900.0}).validate(toy_layout())

    def test_validate_fixed_qubit(self):
        """Test a fixed qubit cannot be moved."""
        with pytest.raises(CalibrationError, match="Q1"):
            BiasPoint(qubits={"Q1": 5010.0}).validate(toy_layout())
        BiasPoint(qubits={"Q2": 5010.0}).validate(toy_layout())

    def test_apply(self):
        """Test applying a bias rewrites element frequencies."""
        layout = BiasPoint(couplers={"C12": 3900.0}, qubits={"Q2": 5100.0}).apply(toy_layout())
        assert layout.coupler("C12").freq == 3900.0
        assert layout.qubit("Q2").freq_idle == 5100.0

    def test_dict_round_trip(self):
        """Test to_dict/from_dict restore the bias."""
        bias = BiasPoint(couplers={"C12": 3900.0}, qubits={"Q2": 5100.0})
        assert BiasPoint.from_dict(bias.to_dict()) == bias


class TestCalibrationResult:
    """Test suite for CalibrationResult persistence."""

    def test_to_json(self, temp_dir):
        """Test results are written as sorted JSON and reload."""
        result = CalibrationResult(
            bias=BiasPoint(couplers={"C12": 3850.0}),
            achieved={"residual_C12": 1e-5},
            iterations=2,
            converged=True,
            metadata={"cell": "A"},
        )
        path = result.to_json(temp_dir / "bias.json")
        data = json.loads(path.read_text())
        assert data["bias"]["couplers"]["C12"] == 3850.0
        assert CalibrationResult.from_dict(data) == result


# ============================================================================
# Solver Tests
# ============================================================================


class TestCellSolver:
    """Test suite for CellSolver."""

    def test_label_defaults(self, solver):
        """Test a layout without cells is labelled custom."""
        assert solver.label == "custom"

    def test_idle_bias(self, solver):
        """Test the idle bias holds couplers and tunable qubits only."""
        idle = solver.idle_bias()
        assert idle.couplers == {"C12": 4000.0}
        assert idle.qubits == {"Q2": 5200.0}

    def test_solves_are_cached(self, solver):
        """Test repeated biases hit the cache."""
        solver.exchange(None, "Q1", "Q2")
        solver.exchange(BiasPoint(), "Q1", "Q2")
        solver.coupler_exchange(None, "C12")
        assert solver.solves == 1
        solver.exchange(BiasPoint(couplers={"C12": 3900.0}), "Q1", "Q2")
        assert solver.solves == 2

    def test_exchange_is_symmetric(self, solver):
        """Test J does not depend on argument order."""
        assert solver.exchange(None, "Q1", "Q2") == solver.exchange(None, "Q2", "Q1")


# ============================================================================
# Coupler Search Tests
# ============================================================================


class TestCouplerSearches:
    """Test suite for OFF and ON coupler searches."""

    def test_hard_off(self, solver):
        """Test the OFF root nulls J near the second-order estimate."""
        off = find_off_bias(solver, "C12")
        assert off.flag == "converged"
        assert abs(off.value) < 1e-3
        assert 3000.0 < off.frequency < 4850.0
        estimate = exchange_off_estimate(5000.0, 5200.0, 100.0, 8.0)
        assert off.frequency == pytest.approx(estimate, abs=100.0)
        assert abs(solver.exchange(BiasPoint(couplers={"C12": off.frequency}), "Q1", "Q2")) < 1e-3

    def test_band_edge_without_direct_coupling(self):
        """Test an uncapacitively coupled pair falls back to the weakest band point."""
        solver = CellSolver(toy_layout(direct=0.0), SMALL_POLICY)
        off = find_off_bias(solver, "C12")
        assert off.flag == "band_edge"
        assert off.frequency == pytest.approx(3000.0)

    def test_no_root_with_direct_coupling(self):
        """Test a same-sign direct coupling leaves no OFF point."""
        solver = CellSolver(toy_layout(direct=-8.0), SMALL_POLICY)
        with pytest.raises(CalibrationError, match="hard-OFF"):
            find_off_bias(solver, "C12")

    def test_empty_window(self):
        """Test a band entirely above the guard window is rejected."""
        layout = toy_layout(coupler_band=(4900.0, 6000.0)).with_overrides(coupler_freqs={"C12": 5500.0})
        solver = CellSolver(layout, SMALL_POLICY)
        with pytest.raises(CalibrationError, match="no band"):
            find_off_bias(solver, "C12")

    def test_on_target(self, solver):
        """Test the ON search reaches |J| = 5 MHz within 1%."""
        on = set_on_bias(solver, "C12", 5.0)
        assert abs(on.value) == pytest.approx(5.0, rel=0.01)
        off = find_off_bias(solver, "C12")
        assert off.frequency < on.frequency <= 4850.0

    def test_zero_target_is_off(self, solver):
        """Test j_target = 0 delegates to the OFF search."""
        assert set_on_bias(solver, "C12", 0.0).frequency == find_off_bias(solver, "C12").frequency

    def test_unreachable_target(self, solver):
        """Test a target above the band's reach raises."""
        with pytest.raises(CalibrationError, match="unreachable"):
            set_on_bias(solver, "C12", 500.0)

    def test_soft_off_stays_in_window(self, solver):
        """Test the soft-OFF search reports a point inside the OFF window."""
        soft = find_soft_off_bias(solver, "C12")
        assert soft.flag == "soft_off"
        assert 3000.0 <= soft.frequency <= 4850.0
        assert soft.value >= 0.0
        assert soft.history

    def test_soft_off_golden_refinement(self, solver, monkeypatch):
        """Test the golden-section refinement lands on an interior minimum without leaving the window."""
        monkeypatch.setattr(solver, "coefficients", lambda bias: bias.couplers["C12"])
        monkeypatch.setattr("qpu_crosstalk.calibration._pair_parasitics", lambda freq, i, j: abs(freq - 4321.0))
        soft = find_soft_off_bias(solver, "C12")
        assert soft.flag == "soft_off"
        assert soft.frequency == pytest.approx(4321.0, abs=1e-3)
        assert soft.iterations > 0
        assert all(3000.0 <= x <= 4850.0 for x, _ in soft.history)

    def test_soft_off_edge_minimum(self, solver, monkeypatch):
        """Test a minimum on the window edge is kept as the grid point."""
        monkeypatch.setattr(solver, "coefficients", lambda bias: bias.couplers["C12"])
        monkeypatch.setattr("qpu_crosstalk.calibration._pair_parasitics", lambda freq, i, j: freq - 2000.0)
        soft = find_soft_off_bias(solver, "C12")
        assert soft.frequency == pytest.approx(3000.0)
        assert soft.iterations == 0


# ============================================================================
# Protocol Tests
# ============================================================================


class TestProtocols:
    """Test suite for multi-step calibration protocols."""

    def test_rebias_all_off(self, solver):
        """Test re-biasing with no active coupler nulls every residual."""
        result = rebias_neighbors(solver, None, solver.idle_bias())
        assert result.converged
        assert abs(result.achieved["residual_C12"]) < 1e-3
        assert "J_None" not in result.achieved

    def test_calibrate_cell_on(self, solver):
        """Test the full protocol places the active coupler at its target."""
        result = calibrate_cell(solver, "C12", j_target=5.0)
        assert result.converged
        assert abs(result.achieved["J_C12"]) == pytest.approx(5.0, rel=0.01)
        assert result.metadata["j_target_MHz"] == 5.0
        assert result.metadata["cell"] == "custom"

    def test_calibrate_cell_off(self, solver):
        """Test a zero target leaves the cell OFF."""
        result = calibrate_cell(solver, "C12")
        assert result.converged
        assert abs(result.achieved["residual_C12"]) < 1e-3

    def test_adiabatic_ramp(self, solver):
        """Test each ramp step hits its own target."""
        results = adiabatic_ramp(solver, "C12", [2.0, 5.0])
        assert [r.metadata["j_target_MHz"] for r in results] == [2.0, 5.0]
        assert abs(results[0].achieved["J_C12"]) == pytest.approx(2.0, rel=0.01)
        assert abs(results[1].achieved["J_C12"]) == pytest.approx(5.0, rel=0.01)


# ============================================================================
# Resonance Tests
# ============================================================================


class TestResonance:
    """Test suite for tune_resonance."""

    def test_dressed_resonance(self, solver):
        """Test the tunable qubit lands on the anchor's dressed frequency."""
        off = find_off_bias(solver, "C12")
        bias = tune_resonance(solver, "Q2", "Q1", BiasPoint(couplers={"C12": off.frequency}))
        mismatch = solver.dressed_frequency(bias, "Q2") - solver.dressed_frequency(bias, "Q1")
        assert abs(mismatch) < 1e-2
        assert 4850.0 <= bias.qubits["Q2"] <= 5150.0

    def test_fixed_mover(self, solver):
        """Test a fixed-frequency qubit cannot be tuned."""
        with pytest.raises(CalibrationError, match="not tunable"):
            tune_resonance(solver, "Q1", "Q2")

    def test_unknown_qubit(self, solver):
        """Test qubits outside the cell are rejected."""
        with pytest.raises(CalibrationError):
            tune_resonance(solver, "Q7", "Q1")
