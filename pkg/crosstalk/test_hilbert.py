"""
Pytest test suite for the truncated Hilbert space and eigensolver.

Tests cover:
- Truncation policy parsing and per-mode level resolution
- Basis enumeration, caps, lookup and the hard size limit
- Hamiltonian assembly (bare diagonal, exchange elements, RWA blocks)
- Dense and iterative eigensolves
- Truncation convergence table
"""

import shutil
import tempfile
from pathlib import Path

import numpy as np
import pytest

import qpu_crosstalk.hilbert as hilbert
from qpu_crosstalk.device import CouplerSpec, CouplingEdge, DeviceLayout, EdgeKind, TransmonSpec
from qpu_crosstalk.hilbert import (
    BasisSizeError,
    TruncationPolicy,
    build_basis,
    build_hamiltonian,
    convergence_check,
    eigensolve,
)


# ============================================================================
# Fixtures
# ============================================================================


@pytest.fixture
def temp_dir():
    """Create a temporary directory for test files."""
    temp_path = tempfile.mkdtemp()
    yield Path(temp_path)
    shutil.rmtree(temp_path, ignore_errors=True)


@pytest.fixture
def pair_layout():
    """Q1 - C12 - Q2 with a direct capacitance."""
    return DeviceLayout(
        qubits=(TransmonSpec("Q1", 5000.0, t1=20000.0), TransmonSpec("Q2", 5200.0, t1=20000.0)),
        couplers=(CouplerSpec("C12", 4000.0, (3000.0, 4850.0)),),
        edges=(
            CouplingEdge(("Q1", "C12"), 100.0, EdgeKind.QUBIT_COUPLER),
            CouplingEdge(("Q2", "C12"), 100.0, EdgeKind.QUBIT_COUPLER),
            CouplingEdge(("Q1", "Q2"), 8.0, EdgeKind.RADIAL),
        ),
    )


@pytest.fixture
def full_policy():
    """Three levels everywhere, no excitation cap."""
    return TruncationPolicy(qubit_levels=3, coupler_levels=3, total_excitation_cap=None)


# ============================================================================
# Policy Tests
# ============================================================================


class TestTruncationPolicy:
    """Test suite for TruncationPolicy."""

    def test_parse(self):
        """Test the 'q,c,cap' shorthand."""
        policy = TruncationPolicy.parse("4, 3, 5")
        assert (policy.qubit_levels, policy.coupler_levels, policy.total_excitation_cap) == (4, 3, 5)
        assert TruncationPolicy.parse("3,2,none").total_excitation_cap is None

    def test_parse_rejects_wrong_arity(self):
        """Test a malformed shorthand raises ValueError."""
        with pytest.raises(ValueError):
            TruncationPolicy.parse("4,3")

    def test_levels_below_two_rejected(self):
        """Test a single-level mode is not a valid truncation."""
        with pytest.raises(ValueError):
            TruncationPolicy(qubit_levels=1)

    def test_levels_for_resolution(self):
        """Test explicit mode entries beat defaults, which beat the element's own count."""
        policy = TruncationPolicy(qubit_levels=None, coupler_levels=2, mode_levels=(("Q1", 5),))
        assert policy.levels_for("Q1", True, 4) == 5
        assert policy.levels_for("Q2", True, 4) == 4
        assert policy.levels_for("C12", False, 3) == 2

    def test_describe(self):
        """Test the policy label used in reports."""
        assert TruncationPolicy().describe() == "q4-c3-cap4"


# ============================================================================
# Basis Tests
# ============================================================================


class TestBasis:
    """Test suite for basis enumeration."""

    def test_uncapped_size_is_product(self, pair_layout, full_policy):
        """Test the uncapped basis is the full tensor product."""
        assert build_basis(pair_layout, full_policy).size == 27

    @pytest.mark.parametrize("cap,expected", [(0, 1), (1, 4), (2, 10)])
    def test_excitation_cap(self, pair_layout, cap, expected):
        """Test the cap keeps only states with total excitation <= cap."""
        policy = TruncationPolicy(qubit_levels=3, coupler_levels=3, total_excitation_cap=cap)
        basis = build_basis(pair_layout, policy)
        assert basis.size == expected
        assert basis.states.sum(axis=1).max() <= cap

    def test_lexicographic_order(self, pair_layout, full_policy):
        """Test states are ordered with the first mode most significant."""
        basis = build_basis(pair_layout, full_policy)
        assert basis.label(0) == (0, 0, 0)
        assert basis.label(1) == (0, 0, 1)
        assert basis.label(3) == (0, 1, 0)
        assert basis.label(26) == (2, 2, 2)

    def test_lookup_missing_state(self, pair_layout):
        """Test lookup returns -1 for excluded or out-of-range occupations."""
        basis = build_basis(pair_layout, TruncationPolicy(qubit_levels=3, coupler_levels=3, total_excitation_cap=2))
        found = basis.lookup(np.array([[1, 1, 0], [1, 1, 1], [3, 0, 0], [-1, 0, 0]]))
        assert found[0] >= 0
        assert list(found[1:]) == [-1, -1, -1]
        with pytest.raises(KeyError):
            basis.index((1, 1, 1))

    def test_bare_energy_cutoff(self, pair_layout):
        """Test states above the bare energy cutoff are dropped."""
        policy = TruncationPolicy(qubit_levels=3, coupler_levels=3, total_excitation_cap=None, bare_energy_cutoff=5100.0)
        basis = build_basis(pair_layout, policy)
        assert {basis.label(i) for i in range(basis.size)} == {(0, 0, 0), (0, 0, 1), (1, 0, 0)}

    def test_hard_limit(self, pair_layout):
        """Test a basis above the hard limit raises before allocating."""
        policy = TruncationPolicy(qubit_levels=4, coupler_levels=3, total_excitation_cap=None, hard_limit=10)
        with pytest.raises(BasisSizeError):
            build_basis(pair_layout, policy)

    def test_coupler_ground_mask(self, pair_layout, full_policy):
        """Test the mask picks states with every coupler in its ground level."""
        basis = build_basis(pair_layout, full_policy)
        mask = basis.coupler_ground_mask()
        assert mask.sum() == 9
        assert all(basis.label(i)[2] == 0 for i in np.nonzero(mask)[0])


# ============================================================================
# Hamiltonian Tests
# ============================================================================


class TestHamiltonian:
    """Test suite for Hamiltonian assembly."""

    def test_bare_diagonal(self, pair_layout, full_policy):
        """Test diagonal entries are Duffing energies."""
        basis = build_basis(pair_layout, full_policy)
        H = build_hamiltonian(pair_layout, basis).to_dense()
        assert H[basis.index((1, 1, 0)), basis.index((1, 1, 0))] == pytest.approx(10200.0)
        assert H[basis.index((2, 0, 0)), basis.index((2, 0, 0))] == pytest.approx(9800.0)
        assert H[basis.index((0, 0, 2)), basis.index((0, 0, 2))] == pytest.approx(8000.0)

    def test_exchange_elements(self, pair_layout, full_policy):
        """Test hopping amplitudes carry -G sqrt(n) factors."""
        basis = build_basis(pair_layout, full_policy)
        H = build_hamiltonian(pair_layout, basis).to_dense()
        assert H[basis.index((0, 0, 1)), basis.index((1, 0, 0))] == pytest.approx(-100.0)
        assert H[basis.index((1, 0, 1)), basis.index((2, 0, 0))] == pytest.approx(-100.0 * np.sqrt(2))
        assert H[basis.index((0, 1, 0)), basis.index((1, 0, 0))] == pytest.approx(-8.0)

    def test_hermitian(self, pair_layout, full_policy):
        """Test both assemblies are Hermitian."""
        basis = build_basis(pair_layout, full_policy)
        assert build_hamiltonian(pair_layout, basis, rwa=True).is_hermitian()
        assert build_hamiltonian(pair_layout, basis, rwa=False).is_hermitian()

    def test_rwa_conserves_excitations(self, pair_layout, full_policy):
        """Test RWA assembly is block diagonal in total excitation number."""
        basis = build_basis(pair_layout, full_policy)
        assert build_hamiltonian(pair_layout, basis, rwa=True).excitation_blocks()
        assert not build_hamiltonian(pair_layout, basis, rwa=False).excitation_blocks()

    def test_zero_strength_edges_skipped(self, pair_layout, full_policy):
        """Test an uncoupled layout yields a diagonal matrix."""
        bare = DeviceLayout(
            pair_layout.qubits, pair_layout.couplers, (CouplingEdge(("Q1", "Q2"), 0.0, EdgeKind.RADIAL),)
        )
        H = build_hamiltonian(bare, build_basis(bare, full_policy))
        assert H.matrix.nnz == 26  # ground state energy is zero and eliminated

    def test_dump_coo(self, pair_layout, temp_dir):
        """Test the triple dump has one line per stored entry."""
        basis = build_basis(pair_layout, TruncationPolicy(qubit_levels=2, coupler_levels=2, total_excitation_cap=1))
        H = build_hamiltonian(pair_layout, basis)
        path = H.dump_coo(temp_dir / "h.coo")
        lines = path.read_text().splitlines()
        assert lines[0].startswith("# dimension 4")
        assert len(lines) == 1 + H.matrix.nnz


# ============================================================================
# Eigensolver Tests
# ============================================================================


class TestEigensolve:
    """Test suite for the eigensolver."""

    def test_dense_matches_numpy(self, pair_layout, full_policy):
        """Test the full spectrum equals numpy's eigvalsh."""
        H = build_hamiltonian(pair_layout, build_basis(pair_layout, full_policy))
        spectrum = eigensolve(H)
        np.testing.assert_allclose(spectrum.eigenvalues, np.linalg.eigvalsh(H.to_dense()), atol=1e-8)
        assert spectrum.residual < 1e-8

    def test_sign_convention(self, pair_layout, full_policy):
        """Test each eigenvector's largest component is positive."""
        spectrum = eigensolve(build_hamiltonian(pair_layout, build_basis(pair_layout, full_policy)))
        vectors = spectrum.eigenvectors
        pivots = np.argmax(np.abs(vectors), axis=0)
        assert np.all(vectors[pivots, np.arange(vectors.shape[1])] > 0)

    def test_iterative_path(self, pair_layout, full_policy, monkeypatch):
        """Test the sparse solver agrees with the dense one on the lowest states."""
        H = build_hamiltonian(pair_layout, build_basis(pair_layout, full_policy))
        dense = eigensolve(H)
        monkeypatch.setattr(hilbert, "DENSE_DIMENSION_LIMIT", 10)
        sparse = eigensolve(H, k=5)
        assert sparse.count == 5
        np.testing.assert_allclose(sparse.eigenvalues, dense.eigenvalues[:5], atol=1e-6)

    def test_iterative_path_keeps_vacuum(self, pair_layout, full_policy, monkeypatch):
        """Test the isolated vacuum state is returned first by the block solver."""
        H = build_hamiltonian(pair_layout, build_basis(pair_layout, full_policy))
        monkeypatch.setattr(hilbert, "DENSE_DIMENSION_LIMIT", 4)
        sparse = eigensolve(H, k=5)
        assert sparse.eigenvalues[0] == pytest.approx(0.0, abs=1e-8)
        assert abs(sparse.eigenvectors[H.basis.index((0, 0, 0)), 0]) == pytest.approx(1.0)

    def test_iterative_path_without_rwa(self, pair_layout, full_policy, monkeypatch):
        """Test shift-invert on a single block matches the dense solve."""
        H = build_hamiltonian(pair_layout, build_basis(pair_layout, full_policy), rwa=False)
        assert not H.excitation_blocks()
        dense = eigensolve(H)
        monkeypatch.setattr(hilbert, "DENSE_DIMENSION_LIMIT", 10)
        sparse = eigensolve(H, k=5)
        np.testing.assert_allclose(sparse.eigenvalues, dense.eigenvalues[:5], atol=1e-6)

    def test_iterative_path_repeatable(self, pair_layout, full_policy, monkeypatch):
        """Test two iterative solves return identical spectra."""
        H = build_hamiltonian(pair_layout, build_basis(pair_layout, full_policy), rwa=False)
        monkeypatch.setattr(hilbert, "DENSE_DIMENSION_LIMIT", 10)
        first, second = eigensolve(H, k=4), eigensolve(H, k=4)
        np.testing.assert_array_equal(first.eigenvalues, second.eigenvalues)
        np.testing.assert_allclose(first.eigenvectors, second.eigenvectors, atol=1e-10)

    def test_k_at_dimension_falls_back_to_full(self, pair_layout):
        """Test requesting every state returns the whole spectrum."""
        basis = build_basis(pair_layout, TruncationPolicy(qubit_levels=2, coupler_levels=2, total_excitation_cap=1))
        spectrum = eigensolve(build_hamiltonian(pair_layout, basis), k=basis.size)
        assert spectrum.count == basis.size


# ============================================================================
# Convergence Tests
# ============================================================================


class TestConvergence:
    """Test suite for convergence_check."""

    def test_table_shape(self, pair_layout):
        """Test one row per policy and tracked state."""
        policies = [
            TruncationPolicy(qubit_levels=3, coupler_levels=2, total_excitation_cap=2),
            TruncationPolicy(qubit_levels=3, coupler_levels=3, total_excitation_cap=3),
        ]
        frame = convergence_check(pair_layout, policies)
        assert list(frame.columns) == ["policy", "state", "energy_MHz", "drift_MHz"]
        assert len(frame) == 2 * 4
        assert frame["drift_MHz"].iloc[:4].isna().all()

    def test_cap_above_manifold_does_not_move_rwa_energies(self, pair_layout):
        """Test raising the cap leaves RWA energies of lower blocks unchanged."""
        policies = [
            TruncationPolicy(qubit_levels=3, coupler_levels=3, total_excitation_cap=2),
            TruncationPolicy(qubit_levels=3, coupler_levels=3, total_excitation_cap=3),
        ]
        frame = convergence_check(pair_layout, policies)
        assert frame["drift_MHz"].iloc[4:].max() < 1e-6

    def test_needs_two_policies(self, pair_layout):
        """Test a single policy is rejected."""
        with pytest.raises(ValueError):
            convergence_check(pair_layout, [TruncationPolicy()])
