"""
Hilbert Space - truncated multi-mode bosonic basis, circuit Hamiltonian and eigensolver.
Frequencies are linear (X/2pi) in MHz throughout; hbar = 1.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .device import DeviceLayout

logger = logging.getLogger(__name__)

# Configuration
DEFAULT_QUBIT_LEVELS = 4
DEFAULT_COUPLER_LEVELS = 3
DEFAULT_EXCITATION_CAP = 4
BASIS_HARD_LIMIT = 200_000
DENSE_DIMENSION_LIMIT = 4096
EIGSH_MAX_ITERATIONS = 10_000
EIGSH_SEED = 1234
RESIDUAL_TOLERANCE = 1e-9
HERMITICITY_TOLERANCE = 1e-12
CONVERGENCE_COLUMNS = ["policy", "state", "energy_MHz", "drift_MHz"]


class BasisSizeError(ValueError):
    """Raised when a truncation admits more states than the hard limit."""


class EigensolverError(RuntimeError):
    """Raised when the iterative eigensolver fails to converge."""


@dataclass(frozen=True)
class TruncationPolicy:
    """
    Which occupation vectors enter the basis.

    Level caps resolve per mode as: explicit mode_levels entry, then the
    qubit/coupler default, then the element's own n_levels.
    """

    qubit_levels: Optional[int] = DEFAULT_QUBIT_LEVELS
    coupler_levels: Optional[int] = DEFAULT_COUPLER_LEVELS
    mode_levels: Tuple[Tuple[str, int], ...] = ()
    total_excitation_cap: Optional[int] = DEFAULT_EXCITATION_CAP
    bare_energy_cutoff: Optional[float] = None
    hard_limit: int = BASIS_HARD_LIMIT

    def __post_init__(self):
        caps = [self.qubit_levels, self.coupler_levels] + [n for _, n in self.mode_levels]
        if any(c is not None and c < 2 for c in caps):
            raise ValueError("level caps must be >= 2")
        if self.total_excitation_cap is not None and self.total_excitation_cap < 0:
            raise ValueError("total_excitation_cap must be non-negative")

    @classmethod
    def uncapped(cls, qubit_levels=None, coupler_levels=None) -> "TruncationPolicy":
        return cls(qubit_levels=qubit_levels, coupler_levels=coupler_levels, total_excitation_cap=None)

    @classmethod
    def parse(cls, text: str) -> "TruncationPolicy":
        """Parse 'qubit,coupler,cap' (cap may be 'none')."""
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 3:
            raise ValueError(f"truncation must read 'qubit,coupler,cap', got {text!r}")
        cap = None if parts[2].lower() == "none" else int(parts[2])
        return cls(qubit_levels=int(parts[0]), coupler_levels=int(parts[1]), total_excitation_cap=cap)

    def levels_for(self, element_id: str, is_qubit: bool, own_levels: int) -> int:
        explicit = dict(self.mode_levels)
        if element_id in explicit:
            return explicit[element_id]
        default = self.qubit_levels if is_qubit else self.coupler_levels
        return default if default is not None else own_levels

    def describe(self) -> str:
        return f"q{self.qubit_levels}-c{self.coupler_levels}-cap{self.total_excitation_cap}"


@dataclass
class ModeBasis:
    """Lexicographically ordered occupation vectors over an ordered mode list."""

    modes: Tuple[Tuple[str, int], ...]
    states: np.ndarray
    is_qubit: Tuple[bool, ...] = ()
    codes: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.int64).reshape(-1, len(self.modes))
        if not self.is_qubit:
            self.is_qubit = tuple(True for _ in self.modes)
        self.codes = self.encode(self.states)

    @property
    def size(self) -> int:
        return len(self.states)

    @property
    def mode_ids(self) -> List[str]:
        return [m for m, _ in self.modes]

    @property
    def radix(self) -> np.ndarray:
        levels = np.array([n for _, n in self.modes], dtype=np.int64)
        # First mode most significant, so lexicographic order == code order
        weights = np.ones(len(levels), dtype=np.int64)
        for k in range(len(levels) - 2, -1, -1):
            weights[k] = weights[k + 1] * levels[k + 1]
        return weights

    def encode(self, occupations: np.ndarray) -> np.ndarray:
        return np.asarray(occupations, dtype=np.int64) @ self.radix

    def lookup(self, occupations: np.ndarray) -> np.ndarray:
        """Ordinal of each occupation row, -1 when not admitted."""
        occupations = np.atleast_2d(occupations)
        levels = np.array([n for _, n in self.modes])
        valid = np.all((occupations >= 0) & (occupations < levels), axis=1)
        codes = self.encode(np.where(valid[:, None], occupations, 0))
        pos = np.clip(np.searchsorted(self.codes, codes), 0, max(self.size - 1, 0))
        found = valid & (self.codes[pos] == codes)
        return np.where(found, pos, -1)

    def index(self, occupation: Sequence[int]) -> int:
        idx = int(self.lookup(np.array(occupation))[0])
        if idx < 0:
            raise KeyError(f"occupation {tuple(occupation)} not in basis")
        return idx

    def label(self, idx: int) -> Tuple[int, ...]:
        return tuple(int(n) for n in self.states[idx])

    def coupler_ground_mask(self) -> np.ndarray:
        coupler_cols = [k for k, q in enumerate(self.is_qubit) if not q]
        if not coupler_cols:
            return np.ones(self.size, dtype=bool)
        return np.all(self.states[:, coupler_cols] == 0, axis=1)


@dataclass
class OperatorMatrix:
    """Real symmetric sparse matrix in MHz over a ModeBasis."""

    matrix: scipy.sparse.csr_matrix
    basis: ModeBasis
    rwa: bool = True

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def trace(self) -> float:
        return float(self.matrix.diagonal().sum())

    def is_hermitian(self, tol: float = HERMITICITY_TOLERANCE) -> bool:
        diff = self.matrix - self.matrix.conj().T
        scale = max(abs(self.matrix).max(), 1.0) if self.matrix.nnz else 1.0
        return diff.nnz == 0 or abs(diff).max() <= tol * scale

    def excitation_blocks(self) -> bool:
        """True when no element connects different total excitation numbers."""
        totals = self.basis.states.sum(axis=1)
        coo = self.matrix.tocoo()
        return bool(np.all(totals[coo.row] == totals[coo.col]))

    def dump_coo(self, path) -> Path:
        """Write (row, col, value) triples, one per line."""
        path = Path(path)
        coo = self.matrix.tocoo()
        with open(path, "w", encoding="utf-8") as f:
            f.write(f"# dimension {self.dimension}; modes {' '.join(self.basis.mode_ids)}\n")
            for r, c, v in zip(coo.row, coo.col, coo.data):
                f.write(f"{r} {c} {v:.12g}\n")
        logger.info(f"Wrote {coo.nnz} entries to {path}")
        return path


@dataclass
class Spectrum:
    """Ascending eigenvalues (MHz) with eigenvectors as columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    residual: float = 0.0

    @property
    def count(self) -> int:
        return len(self.eigenvalues)


# ============================================================================
# Basis
# ============================================================================


def _mode_table(layout: DeviceLayout, policy: TruncationPolicy) -> List[Tuple[str, int, bool, np.ndarray]]:
    table = []
    for q in layout.qubits:
        n = policy.levels_for(q.id, True, q.n_levels)
        table.append((q.id, n, True, np.array([q.energy(k) for k in range(n)])))
    for c in layout.couplers:
        n = policy.levels_for(c.id, False, c.n_levels)
        table.append((c.id, n, False, np.array([c.energy(k) for k in range(n)])))
    return table


def build_basis(layout: DeviceLayout, policy: TruncationPolicy = TruncationPolicy()) -> ModeBasis:
    """
    Enumerate the admitted occupation vectors in lexicographic order.

    Args:
        layout: Validated layout (qubits first, then couplers)
        policy: Truncation policy

    Returns:
        ModeBasis over the layout's modes
    """
    table = _mode_table(layout, policy)
    cap = policy.total_excitation_cap
    cutoff = policy.bare_energy_cutoff

    if cap is None and cutoff is None:
        size = int(np.prod([n for _, n, _, _ in table], dtype=np.int64))
        if size > policy.hard_limit:
            raise BasisSizeError(f"basis of {size} states exceeds hard limit {policy.hard_limit}")

    states = np.zeros((1, 0), dtype=np.int64)
    totals = np.zeros(1, dtype=np.int64)
    energies = np.zeros(1)
    for _, n, _, ladder in table:
        digits = np.arange(n)
        states = np.hstack([np.repeat(states, n, axis=0), np.tile(digits, len(states))[:, None]])
        totals = np.repeat(totals, n) + np.tile(digits, len(totals))
        energies = np.repeat(energies, n) + np.tile(ladder, len(energies))
        keep = np.ones(len(states), dtype=bool)
        if cap is not None:
            keep &= totals <= cap
        if cutoff is not None:
            keep &= energies <= cutoff
        states, totals, energies = states[keep], totals[keep], energies[keep]
        # Appending a ground mode keeps every partial state, so this bounds the final size
        if len(states) > policy.hard_limit:
            raise BasisSizeError(f"basis exceeds hard limit {policy.hard_limit} states")

    basis = ModeBasis(
        modes=tuple((mid, n) for mid, n, _, _ in table),
        states=states,
        is_qubit=tuple(is_q for _, _, is_q, _ in table),
    )
    logger.debug(f"Built basis of {basis.size} states over {len(table)} modes ({policy.describe()})")
    return basis


# ============================================================================
# Hamiltonian
# ============================================================================


def _bare_diagonal(layout: DeviceLayout, basis: ModeBasis) -> np.ndarray:
    ladders = {}
    for q in layout.qubits:
        ladders[q.id] = q.energy
    for c in layout.couplers:
        ladders[c.id] = c.energy
    diag = np.zeros(basis.size)
    for k, (mid, n) in enumerate(basis.modes):
        table = np.array([ladders[mid](m) for m in range(n)])
        diag += table[basis.states[:, k]]
    return diag


def build_hamiltonian(layout: DeviceLayout, basis: ModeBasis, rwa: bool = True) -> OperatorMatrix:
    """
    Assemble the circuit Hamiltonian in MHz.

    Each edge contributes G (b - b^dag)(a - a^dag); with rwa the pair
    creation/annihilation terms are dropped so excitation number is conserved.

    Args:
        layout: Layout the basis was built from
        basis: Occupation basis
        rwa: Drop counter-rotating terms

    Returns:
        Sparse OperatorMatrix
    """
    mode_index = {mid: k for k, mid in enumerate(basis.mode_ids)}
    states = basis.states
    rows = [np.arange(basis.size)]
    cols = [np.arange(basis.size)]
    data = [_bare_diagonal(layout, basis)]

    # (du, dv, sign): b_u b_v, b_u b_v^dag, b_u^dag b_v, b_u^dag b_v^dag
    terms = [(-1, +1, -1.0), (+1, -1, -1.0)]
    if not rwa:
        terms += [(-1, -1, +1.0), (+1, +1, +1.0)]

    for edge in layout.edges:
        if edge.strength == 0.0:
            continue
        u, v = (mode_index[end] for end in edge.endpoints)
        for du, dv, sign in terms:
            target = states.copy()
            target[:, u] += du
            target[:, v] += dv
            idx = basis.lookup(target)
            ok = idx >= 0
            if not np.any(ok):
                continue
            # <n-1|b|n> = sqrt(n), <n+1|b^dag|n> = sqrt(n+1)
            amp_u = np.sqrt(np.where(du < 0, states[ok, u], states[ok, u] + 1))
            amp_v = np.sqrt(np.where(dv < 0, states[ok, v], states[ok, v] + 1))
            rows.append(idx[ok])
            cols.append(np.nonzero(ok)[0])
            data.append(sign * edge.strength * amp_u * amp_v)

    matrix = scipy.sparse.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(basis.size, basis.size)
    ).tocsr()
    matrix.sum_duplicates()
    matrix.eliminate_zeros()
    return OperatorMatrix(matrix=matrix, basis=basis, rwa=rwa)


# ============================================================================
# Eigensolver
# ============================================================================


def _canonicalize(eigenvalues: np.ndarray, eigenvectors: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Deterministic order (eigenvalue, first nonzero index) and sign."""
    first_nonzero = np.argmax(np.abs(eigenvectors) > 1e-12, axis=0)
    order = np.lexsort((first_nonzero, np.round(eigenvalues, 9)))
    eigenvalues = eigenvalues[order]
    eigenvectors = eigenvectors[:, order]
    pivots = np.argmax(np.abs(eigenvectors), axis=0)
    phases = eigenvectors[pivots, np.arange(eigenvectors.shape[1])]
    eigenvectors = eigenvectors * (np.abs(phases) / phases)
    return eigenvalues, np.real_if_close(eigenvectors)


def _residual(matrix, eigenvalues: np.ndarray, eigenvectors: np.ndarray) -> float:
    if len(eigenvalues) == 0:
        return 0.0
    r = matrix @ eigenvectors - eigenvectors * eigenvalues
    return float(np.max(np.linalg.norm(r, axis=0)))


def _lowest_block(matrix, k: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    k lowest eigenpairs of a Hermitian block: dense when small, shift-invert
    Lanczos below the Gershgorin bound otherwise.
    """
    n = matrix.shape[0]
    if n <= DENSE_DIMENSION_LIMIT or k >= n - 1:
        values, vectors = scipy.linalg.eigh(matrix.toarray())
        return values[:k], vectors[:, :k]

    diagonal = matrix.diagonal().real
    radius = np.asarray(abs(matrix).sum(axis=1)).ravel() - np.abs(diagonal)
    sigma = float(np.min(diagonal - radius)) - 1.0
    v0 = np.random.default_rng(EIGSH_SEED).standard_normal(n)
    try:
        values, vectors = scipy.sparse.linalg.eigsh(
            matrix.tocsc(), k=k, sigma=sigma, which="LM", v0=v0, maxiter=EIGSH_MAX_ITERATIONS, tol=1e-12
        )
    except scipy.sparse.linalg.ArpackNoConvergence as e:
        achieved = _residual(matrix, e.eigenvalues, e.eigenvectors) if len(e.eigenvalues) else float("inf")
        raise EigensolverError(f"eigsh did not converge for k={k}, dim={n}; achieved residual {achieved:.3e}") from e
    order = np.argsort(values)
    return values[order], vectors[:, order]


def eigensolve(H: OperatorMatrix, k: Optional[int] = None) -> Spectrum:
    """
    Diagonalize H: dense below the dimension limit (or when all states are
    requested), iterative for the k lowest states above it.

    Excitation-conserving matrices are split into their excitation-number
    blocks before the iterative solve; each block contributes its own lowest
    states.

    Args:
        H: Hermitian operator
        k: Number of lowest eigenpairs, None for all

    Returns:
        Spectrum with residual recorded
    """
    dim = H.dimension
    norm = max(scipy.sparse.linalg.norm(H.matrix, ord=1), 1.0) if H.matrix.nnz else 1.0
    if k is not None and k >= dim:
        k = None

    if k is None or dim < DENSE_DIMENSION_LIMIT:
        if dim >= DENSE_DIMENSION_LIMIT:
            logger.warning(f"Dense diagonalization of a {dim}-dimensional matrix")
        values, vectors = scipy.linalg.eigh(H.to_dense())
        if k is not None:
            values, vectors = values[:k], vectors[:, :k]
    else:
        matrix = H.matrix.tocsr()
        if H.excitation_blocks():
            totals = H.basis.states.sum(axis=1)
            blocks = [np.flatnonzero(totals == t) for t in np.unique(totals)]
        else:
            blocks = [np.arange(dim)]
        all_values, all_vectors = [], []
        for rows in blocks:
            values, vectors = _lowest_block(matrix[rows][:, rows], min(k, len(rows)))
            embedded = np.zeros((dim, len(values)), dtype=vectors.dtype)
            embedded[rows, :] = vectors
            all_values.append(values)
            all_vectors.append(embedded)
        values = np.concatenate(all_values)
        vectors = np.hstack(all_vectors)
        order = np.argsort(values, kind="stable")[:k]
        values, vectors = values[order], vectors[:, order]
        logger.debug(f"Iterative solve over {len(blocks)} block(s) of a {dim}-dimensional matrix")
        residual = _residual(H.matrix, values, vectors)
        if residual > RESIDUAL_TOLERANCE * norm:
            raise EigensolverError(f"eigsh residual {residual:.3e} above {RESIDUAL_TOLERANCE * norm:.3e}")

    values, vectors = _canonicalize(values, vectors)
    return Spectrum(eigenvalues=values, eigenvectors=vectors, residual=_residual(H.matrix, values, vectors))


# ============================================================================
# Convergence
# ============================================================================


def _dominant_energy(spectrum: Spectrum, basis: ModeBasis, occupation: Sequence[int]) -> float:
    idx = basis.index(occupation)
    weights = np.abs(spectrum.eigenvectors[idx, :]) ** 2
    return float(spectrum.eigenvalues[int(np.argmax(weights))])


def convergence_check(
    layout: DeviceLayout,
    policies: Sequence[TruncationPolicy],
    rwa: bool = True,
    targets: Optional[List[Tuple[int, ...]]] = None,
) -> pd.DataFrame:
    """
    Track computational-manifold energies across successively larger policies.

    Args:
        layout: Layout to solve
        policies: At least two policies of increasing size
        rwa: Rotating-wave assembly
        targets: Qubit occupations to follow (couplers at ground); defaults to
            every qubit state with at most two excitations in {0, 1}

    Returns:
        DataFrame with columns policy, state, energy_MHz, drift_MHz
    """
    if len(policies) < 2:
        raise ValueError("convergence_check needs at least two policies")
    n_qubits = len(layout.qubits)
    n_couplers = len(layout.couplers)
    if targets is None:
        targets = [tuple(int(b) for b in np.binary_repr(s, n_qubits)) for s in range(2**n_qubits)]
        targets = [t for t in targets if sum(t) <= 2]

    rows = []
    previous: Dict[Tuple[int, ...], float] = {}
    for policy in policies:
        basis = build_basis(layout, policy)
        spectrum = eigensolve(build_hamiltonian(layout, basis, rwa=rwa))
        for target in targets:
            energy = _dominant_energy(spectrum, basis, tuple(target) + (0,) * n_couplers)
            drift = abs(energy - previous[target]) if target in previous else float("nan")
            previous[target] = energy
            rows.append(
                {
                    "policy": policy.describe(),
                    "state": "".join(str(n) for n in target),
                    "energy_MHz": energy,
                    "drift_MHz": drift,
                }
            )
        logger.info(f"Convergence step {policy.describe()}: {basis.size} states")
    return pd.DataFrame(rows, columns=CONVERGENCE_COLUMNS)
