"""
Pytest test suite for the device model.

Tests cover:
- Layout loading (TOML and JSON), validation errors and round trips
- Coupling graph queries (strengths, neighbours, pair classes)
- Lattice generation and cell labelling
- Cell sub-layouts and coupling overrides
"""

import json
import shutil
import tempfile
from pathlib import Path

import pytest

from qpu_crosstalk.device import (
    SYCAMORE_COLS,
    SYCAMORE_DEAD_SITES,
    SYCAMORE_ROWS,
    CouplerSpec,
    CouplingEdge,
    DeviceLayout,
    EdgeKind,
    LayoutError,
    TransmonSpec,
    cell_label,
    cell_ordered,
    cell_subcircuit,
    exchange_off_estimate,
    generate_sycamore_like,
    load_bundled_layout,
    load_layout,
    save_layout,
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
def pair_layout():
    """Two fixed qubits joined by one coupler and a direct capacitance."""
    return DeviceLayout(
        qubits=(TransmonSpec("Q1", 5000.0), TransmonSpec("Q2", 5200.0)),
        couplers=(CouplerSpec("C12", 4000.0, (3000.0, 4850.0)),),
        edges=(
            CouplingEdge(("Q1", "C12"), 100.0, EdgeKind.QUBIT_COUPLER),
            CouplingEdge(("Q2", "C12"), 100.0, EdgeKind.QUBIT_COUPLER),
            CouplingEdge(("Q1", "Q2"), 8.0, EdgeKind.RADIAL),
        ),
    )


@pytest.fixture
def small_lattice():
    """3 x 3 checkerboard: one cell, five qubits, four couplers."""
    return generate_sycamore_like(2, 2, seed=1)


LAYOUT_TOML = """
[[qubit]]
id = "Q1"
freq_idle = 5000.0

[[qubit]]
id = "Q2"
freq_idle = 5200.0
anharmonicity = -210.0
t1 = 15000.0

[[coupler]]
id = "C12"
freq = 4000.0
band = [3000.0, 4850.0]

[[edge]]
endpoints = ["Q1", "C12"]
strength = 100.0
kind = "qubit_coupler"

[[edge]]
endpoints = ["Q2", "C12"]
strength = 100.0
kind = "qubit_coupler"
"""


# ============================================================================
# Loading Tests
# ============================================================================


class TestLoading:
    """Test suite for layout file I/O."""

    def test_load_toml(self, temp_dir):
        """Test a minimal TOML layout loads with defaults filled in."""
        path = temp_dir / "pair.layout"
        path.write_text(LAYOUT_TOML)

        layout = load_layout(path)

        assert layout.qubit_ids == ["Q1", "Q2"]
        assert layout.coupler_ids == ["C12"]
        assert layout.qubit("Q1").anharmonicity == -200.0
        assert layout.qubit("Q2").t1 == 15000.0

    def test_missing_t1_uses_placeholder(self, temp_dir, caplog):
        """Test a qubit without t1 gets the placeholder and a warning."""
        path = temp_dir / "pair.layout"
        path.write_text(LAYOUT_TOML)

        layout = load_layout(path)

        assert layout.qubit("Q1").t1 == 20000.0
        assert "placeholder" in caplog.text

    def test_save_and_reload_toml(self, temp_dir, pair_layout):
        """Test saving then loading keeps every element."""
        path = save_layout(pair_layout, temp_dir / "saved.layout")
        loaded = load_layout(path)
        assert loaded == pair_layout

    def test_save_and_reload_json(self, temp_dir, pair_layout):
        """Test the JSON variant is chosen by extension."""
        path = save_layout(pair_layout, temp_dir / "saved.json")
        assert json.loads(path.read_text())["coupler"][0]["id"] == "C12"
        assert load_layout(path) == pair_layout

    def test_unparseable_file(self, temp_dir):
        """Test a broken document raises LayoutError."""
        path = temp_dir / "broken.layout"
        path.write_text("[[qubit]\nid = ")
        with pytest.raises(LayoutError):
            load_layout(path)

    def test_non_numeric_value(self, temp_dir):
        """Test a frequency that is not a number raises LayoutError."""
        path = temp_dir / "bad_freq.layout"
        path.write_text(LAYOUT_TOML.replace("freq_idle = 5000.0", 'freq_idle = "abc"'))
        with pytest.raises(LayoutError, match="malformed"):
            load_layout(path)

    def test_unknown_edge_kind_keeps_message(self, temp_dir):
        """Test a layout error raised while parsing passes through unchanged."""
        path = temp_dir / "bad_kind.layout"
        path.write_text(LAYOUT_TOML.replace('kind = "qubit_coupler"', 'kind = "wire"', 1))
        with pytest.raises(LayoutError, match="unknown kind"):
            load_layout(path)

    def test_bundled_layout(self):
        """Test the bundled lattice has 53 qubits and 33 cells."""
        layout = load_bundled_layout()
        assert len(layout.qubits) == 53
        assert len(layout.cells) == 33
        assert layout.cells[0].label == "A"


# ============================================================================
# Validation Tests
# ============================================================================


class TestValidation:
    """Test suite for layout invariants."""

    def test_valid_layout(self, pair_layout):
        """Test a well-formed layout passes."""
        pair_layout.validate()

    def test_positive_anharmonicity_rejected(self, pair_layout):
        """Test a transmon must have negative anharmonicity."""
        bad = DeviceLayout(
            (TransmonSpec("Q1", 5000.0, anharmonicity=50.0), pair_layout.qubits[1]),
            pair_layout.couplers,
            pair_layout.edges,
        )
        with pytest.raises(LayoutError, match="anharmonicity"):
            bad.validate()

    def test_coupler_outside_band(self, pair_layout):
        """Test a coupler parked outside its band is rejected."""
        bad = DeviceLayout(
            pair_layout.qubits,
            (CouplerSpec("C12", 5000.0, (3000.0, 4850.0)),),
            pair_layout.edges,
        )
        with pytest.raises(LayoutError, match="band"):
            bad.validate()

    def test_duplicate_edge(self, pair_layout):
        """Test (a, b) and (b, a) count as the same edge."""
        bad = DeviceLayout(
            pair_layout.qubits,
            pair_layout.couplers,
            pair_layout.edges + (CouplingEdge(("Q2", "Q1"), 3.0, EdgeKind.SIDE),),
        )
        with pytest.raises(LayoutError, match="duplicate edge"):
            bad.validate()

    def test_unknown_endpoint(self, pair_layout):
        """Test an edge to a missing element names it."""
        bad = DeviceLayout(
            pair_layout.qubits,
            pair_layout.couplers,
            pair_layout.edges + (CouplingEdge(("Q1", "Q9"), 3.0, EdgeKind.SIDE),),
        )
        with pytest.raises(LayoutError, match="Q9"):
            bad.validate()

    def test_qubit_coupler_edge_kind(self, pair_layout):
        """Test a qubit_coupler edge between two qubits is rejected."""
        bad = DeviceLayout(
            pair_layout.qubits,
            pair_layout.couplers,
            pair_layout.edges[:2] + (CouplingEdge(("Q1", "Q2"), 8.0, EdgeKind.QUBIT_COUPLER),),
        )
        with pytest.raises(LayoutError):
            bad.validate()


# ============================================================================
# Graph Tests
# ============================================================================


class TestGraph:
    """Test suite for coupling graph queries."""

    def test_strength_is_symmetric(self, pair_layout):
        """Test strength ignores endpoint order and defaults to 0."""
        assert pair_layout.strength("Q1", "Q2") == 8.0
        assert pair_layout.strength("Q2", "Q1") == 8.0
        assert pair_layout.strength("Q1", "Q1") == 0.0

    def test_coupler_pair(self, pair_layout):
        """Test a coupler reports the qubits it links."""
        assert pair_layout.coupler_pair("C12") == ("Q1", "Q2")

    def test_neighbours_and_classes(self, small_lattice):
        """Test radial pairs are nearest and side pairs next-nearest."""
        cell = small_lattice.cells[0]
        assert set(small_lattice.neighbours(cell.central)) == set(cell.sides)
        assert small_lattice.classify_pair(cell.central, cell.sides[0]) == "nearest"
        assert small_lattice.classify_pair(cell.sides[0], cell.sides[1]) == "next_nearest"
        assert small_lattice.classify_pair(cell.sides[0], cell.sides[2]) == "none"

    def test_with_overrides(self, small_lattice):
        """Test side/radial overrides touch only their edge kind."""
        changed = small_lattice.with_overrides(gside=4.0, gradial=6.0)
        for edge in changed.edges:
            if edge.kind is EdgeKind.SIDE:
                assert edge.strength == 4.0
            elif edge.kind is EdgeKind.RADIAL:
                assert edge.strength == 6.0
            else:
                assert edge.strength == 100.0
        # Original untouched
        assert all(e.strength == 0.0 for e in small_lattice.edges if e.kind is EdgeKind.SIDE)

    def test_frequency_overrides(self, pair_layout):
        """Test element frequencies can be replaced."""
        changed = pair_layout.with_overrides(coupler_freqs={"C12": 4100.0}, qubit_freqs={"Q2": 5250.0})
        assert changed.coupler("C12").freq == 4100.0
        assert changed.qubit("Q2").freq_idle == 5250.0


# ============================================================================
# Generation Tests
# ============================================================================


class TestGeneration:
    """Test suite for lattice generation."""

    def test_sycamore_counts(self):
        """Test the default lattice reproduces 53 qubits and 33 cells."""
        layout = generate_sycamore_like(SYCAMORE_ROWS, SYCAMORE_COLS, SYCAMORE_DEAD_SITES, seed=0)
        assert len(layout.qubits) == 53
        assert len(layout.cells) == 33

    def test_seed_is_deterministic(self):
        """Test the same seed gives the same layout."""
        a = generate_sycamore_like(4, 4, seed=7)
        b = generate_sycamore_like(4, 4, seed=7)
        assert a == b

    def test_coupled_pairs_detuned(self):
        """Test every coupler-linked pair stays well detuned."""
        layout = generate_sycamore_like(4, 6, seed=3)
        for cid in layout.coupler_ids:
            a, b = layout.coupler_pair(cid)
            detuning = abs(layout.qubit(a).freq_idle - layout.qubit(b).freq_idle)
            assert 50.0 <= detuning <= 550.0

    def test_cell_sides_distinct_without_jitter(self):
        """Test the four sides of every cell sit at distinct frequencies without jitter."""
        layout = generate_sycamore_like(SYCAMORE_ROWS, SYCAMORE_COLS, SYCAMORE_DEAD_SITES, jitter_mhz=0.0)
        for cell in layout.cells:
            freqs = [layout.qubit(side).freq_idle for side in cell.sides]
            assert len(set(freqs)) == 4
            assert abs(freqs[0] - freqs[2]) >= 40.0
            assert abs(freqs[1] - freqs[3]) >= 40.0

    def test_bundled_layout_matches_generator(self):
        """Test the bundled lattice is the jitter-free generated lattice."""
        generated = generate_sycamore_like(SYCAMORE_ROWS, SYCAMORE_COLS, SYCAMORE_DEAD_SITES, jitter_mhz=0.0)
        bundled = load_bundled_layout()
        for qubit in generated.qubits:
            assert bundled.qubit(qubit.id).freq_idle == qubit.freq_idle
        for coupler in generated.couplers:
            assert bundled.coupler(coupler.id).freq == pytest.approx(coupler.freq, abs=2e-3)
            assert bundled.coupler(coupler.id).band == pytest.approx(coupler.band)

    def test_too_small_grid(self):
        """Test grids below 2 x 2 are rejected."""
        with pytest.raises(ValueError):
            generate_sycamore_like(1, 4)

    def test_cell_labels(self):
        """Test labels run A..Z then A1.."""
        assert cell_label(0) == "A"
        assert cell_label(25) == "Z"
        assert cell_label(26) == "A1"
        assert cell_label(53) == "B2"

    def test_off_estimate_nulls_second_order_exchange(self):
        """Test the OFF estimate cancels the direct term at second order."""
        f_a, f_b, g, direct = 5000.0, 5200.0, 100.0, 8.0
        w = exchange_off_estimate(f_a, f_b, g, direct)
        assert w < min(f_a, f_b)
        j = direct + 0.5 * g * g * (1.0 / (w - f_a) + 1.0 / (w - f_b))
        assert j == pytest.approx(0.0, abs=1e-6)

    def test_off_estimate_without_direct_coupling(self):
        """Test no OFF point exists without a direct capacitance."""
        assert exchange_off_estimate(5000.0, 5200.0, 100.0, 0.0) is None


# ============================================================================
# Cell Tests
# ============================================================================


class TestCells:
    """Test suite for cell sub-layouts."""

    def test_subcircuit_contents(self, small_lattice):
        """Test the sub-layout holds the cell's 5 qubits and 4 couplers."""
        sub = cell_subcircuit(small_lattice, "A")
        assert len(sub.qubits) == 5
        assert len(sub.couplers) == 4
        sub.validate()

    def test_ordered_roles(self, small_lattice):
        """Test the ordered sub-layout puts Q1 first and C12..C15 in side order."""
        cell = small_lattice.cell("A")
        ordered = cell_ordered(small_lattice, "A")
        assert ordered.qubit_ids == list(cell.qubits)
        assert ordered.coupler_ids == list(cell.couplers)
        assert ordered.coupler_pair(ordered.coupler_ids[1]) == (cell.central, cell.sides[1])

    def test_unknown_cell(self, small_lattice):
        """Test an unknown label raises LayoutError."""
        with pytest.raises(LayoutError):
            cell_subcircuit(small_lattice, "ZZ")
