"""
Pytest test suite for the command-line entry point.

Tests cover:
- Grid and list parsing
- layout validate / generate
- Exit codes for clean, flagged and failing runs
- Re-rendering saved datasets
"""

import json
import shutil
import tempfile
from pathlib import Path
from types import SimpleNamespace
from unittest.mock import patch

import pandas as pd
import pytest

import main as cli
from main import EXIT_FAILURE, EXIT_FLAGGED, EXIT_OK, emit, parse_floats, parse_grid, run
from qpu_crosstalk.analysis import PET_COLUMNS, ScanDataset, ScanVariable
from qpu_crosstalk.device import load_layout
from qpu_crosstalk.reporting import report_render


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


@pytest.fixture(autouse=True)
def quiet_logging(monkeypatch):
    """Keep pytest's log capture in place of the CLI handlers."""
    monkeypatch.setattr(cli, "setup_logging", lambda out_dir, verbose=False: out_dir.mkdir(parents=True, exist_ok=True))


def flagged_pet():
    frame = pd.DataFrame(
        [
            {"cell": "A", "x_value": 3800.0, "j13_MHz": 0.0, "zz_max_MHz": 0.01, "zzz_max_MHz": 0.001, "ratio": 0.1, "flag": ""},
            {"cell": "A", "x_value": 4000.0, "j13_MHz": None, "zz_max_MHz": None, "zzz_max_MHz": None, "ratio": None,
             "flag": "no hard-OFF point"},
        ],
        columns=PET_COLUMNS,
    )
    return ScanDataset("pet", "pet", frame)


# ============================================================================
# Parsing Tests
# ============================================================================


class TestParsing:
    """Test suite for argument helpers."""

    def test_parse_floats(self):
        """Test comma lists skip blanks."""
        assert parse_floats("0, 2,4,") == [0.0, 2.0, 4.0]

    def test_parse_grid_linear(self):
        """Test start,stop,count builds a linear grid."""
        grid = parse_grid("3800,5400,33", ScanVariable.COUPLER_FREQ)
        assert grid.variable is ScanVariable.COUPLER_FREQ
        assert len(grid.points) == 33

    def test_parse_grid_log(self):
        """Test log grids end exactly on their bounds."""
        grid = parse_grid("0.05,1,12", ScanVariable.G_SIDE_RATIO, log=True)
        assert grid.points[0] == pytest.approx(0.05)
        assert grid.points[-1] == pytest.approx(1.0)

    def test_parse_grid_arity(self):
        """Test grids need exactly three numbers."""
        with pytest.raises(ValueError, match="start,stop,count"):
            parse_grid("1,2", ScanVariable.J13)


# ============================================================================
# Verb Tests
# ============================================================================


class TestLayoutVerb:
    """Test suite for the layout verb."""

    def test_validate_bundled(self, temp_dir):
        """Test the bundled layout validates and is summarized."""
        assert run(["--out-dir", str(temp_dir), "layout", "validate"]) == EXIT_OK
        summary = json.loads((temp_dir / "layout_summary.json").read_text())
        assert summary["qubits"] == 53
        assert len(summary["cells"]) == 33

    def test_generate(self, temp_dir):
        """Test generate writes a loadable layout."""
        target = temp_dir / "small.layout"
        code = run(["--out-dir", str(temp_dir), "layout", "generate", "--rows", "2", "--cols", "2", "--output", str(target)])
        assert code == EXIT_OK
        assert len(load_layout(target).qubits) == 5


class TestExitCodes:
    """Test suite for exit codes."""

    def test_flagged_scan_exits_2(self, temp_dir):
        """Test a scan with flagged rows still writes output and exits 2."""
        with patch.object(cli, "pet_scan", return_value=flagged_pet()) as scan:
            code = run(["--out-dir", str(temp_dir), "scan", "pet", "--grid", "3800,4000,2"])
        assert code == EXIT_FLAGGED
        assert (temp_dir / "pet.csv").exists()
        assert scan.call_args.args[1].points == (3800.0, 4000.0)

    def test_unknown_format(self, temp_dir):
        """Test an unknown output format is an error."""
        with pytest.raises(ValueError):
            run(["--out-dir", str(temp_dir), "--format", "xlsx", "layout", "validate"])

    def test_main_exits_1_on_error(self, caplog):
        """Test an uncaught failure is logged and exits 1."""
        with patch.object(cli, "run", side_effect=RuntimeError("boom")):
            with pytest.raises(SystemExit) as exc:
                cli.main()
        assert exc.value.code == EXIT_FAILURE
        assert "Fatal error: boom" in caplog.text

    def test_main_passes_exit_code(self):
        """Test the run exit code becomes the process exit code."""
        with patch.object(cli, "run", return_value=EXIT_FLAGGED):
            with pytest.raises(SystemExit) as exc:
                cli.main()
        assert exc.value.code == EXIT_FLAGGED


class TestReportVerb:
    """Test suite for report rendering through the CLI."""

    def test_render_saved_dataset(self, temp_dir):
        """Test a saved CSV is re-rendered as CSV and SVG."""
        saved = report_render(flagged_pet(), "csv", temp_dir / "saved")
        out = temp_dir / "out"
        code = run(["--out-dir", str(out), "--format", "csv,svg", "report", "render", "--input", str(saved)])
        assert code == EXIT_FLAGGED
        assert (out / "pet.csv").read_bytes() == saved.read_bytes()
        assert (out / "pet.svg").exists()

    def test_svg_skipped_without_view(self, temp_dir, caplog):
        """Test datasets without an SVG view only write the other formats."""
        dataset = ScanDataset("pauli_A", "pauli", pd.DataFrame({"string": ["ZZ"], "alpha_MHz": [0.1], "path": ["exact"]}))
        args = SimpleNamespace(format="csv,svg", out_dir=temp_dir)
        assert emit(dataset, args) == EXIT_OK
        assert (temp_dir / "pauli_A.csv").exists()
        assert not (temp_dir / "pauli_A.svg").exists()
        assert "no SVG view" in caplog.text
