"""
Effective Hamiltonian - couplers eliminated by least-action block diagonalization.
Labels dressed states, extracts level-dependent exchange rates and Pauli-string
coefficients through the parity rule.
"""

import itertools
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.linalg
import scipy.sparse

from .hilbert import ModeBasis, OperatorMatrix, Spectrum, eigensolve

logger = logging.getLogger(__name__)

# Configuration
HYBRIDIZATION_FLOOR = 0.5
UNASSIGNABLE_OVERLAP = 1e-6
DEFAULT_EFFECTIVE_LEVELS = 3
DEFAULT_MAX_WEIGHT = 3
# Sign of a single-excitation transfer element relative to the quoted J:
# G (b - b^dag)(a - a^dag) leaves -G (b a^dag + b^dag a) after the RWA
HOP_SIGN = -1.0


class LabelingError(RuntimeError):
    """Raised when an eigenstate has no usable bare-state overlap."""


class BlockSeparationError(RuntimeError):
    """Raised when a hybridized state straddles the coupler-ground partition."""


class MissingEnergyError(KeyError):
    """Raised when a computational state has no dressed energy."""


@dataclass
class StateLabeling:
    """Bijective eigenstate <-> bare-label assignment with overlaps."""

    bare_of_eig: np.ndarray
    eig_of_bare: np.ndarray
    overlap: np.ndarray
    floor: float = HYBRIDIZATION_FLOOR

    @property
    def hybridized(self) -> np.ndarray:
        return self.overlap < self.floor + 1e-9

    def energy_of(self, spectrum: Spectrum, bare_index: int) -> float:
        eig = int(self.eig_of_bare[bare_index])
        if eig < 0:
            raise MissingEnergyError(f"bare state {bare_index} carries no eigenstate label")
        return float(spectrum.eigenvalues[eig])


def label_states(spectrum: Spectrum, basis: ModeBasis, floor: float = HYBRIDIZATION_FLOOR) -> StateLabeling:
    """
    Greedy global assignment in descending overlap order.

    Ties break on bare index, then eigen index, so the result is deterministic.

    Args:
        spectrum: Eigenpairs over the basis
        basis: Bare occupation basis
        floor: Overlap below which an assignment is flagged hybridized

    Returns:
        StateLabeling covering every eigenstate in the spectrum
    """
    overlaps = np.abs(spectrum.eigenvectors) ** 2
    bare, eig = np.nonzero(overlaps >= UNASSIGNABLE_OVERLAP)
    values = overlaps[bare, eig]
    order = np.lexsort((eig, bare, -values))

    n_eig = spectrum.count
    bare_of_eig = np.full(n_eig, -1, dtype=np.int64)
    eig_of_bare = np.full(basis.size, -1, dtype=np.int64)
    assigned = 0
    for k in order:
        b, e = bare[k], eig[k]
        if bare_of_eig[e] >= 0 or eig_of_bare[b] >= 0:
            continue
        bare_of_eig[e] = b
        eig_of_bare[b] = e
        assigned += 1
        if assigned == n_eig:
            break

    missing = np.nonzero(bare_of_eig < 0)[0]
    if len(missing):
        e = int(missing[0])
        raise LabelingError(
            f"eigenstate {e} (E = {spectrum.eigenvalues[e]:.6f} MHz) has no free bare state "
            f"with overlap above {UNASSIGNABLE_OVERLAP}"
        )

    labeling = StateLabeling(
        bare_of_eig=bare_of_eig,
        eig_of_bare=eig_of_bare,
        overlap=overlaps[bare_of_eig, np.arange(n_eig)],
        floor=floor,
    )
    n_hybrid = int(labeling.hybridized.sum())
    if n_hybrid:
        logger.warning(f"{n_hybrid} of {n_eig} dressed states are hybridized (overlap < {floor})")
    return labeling


# ============================================================================
# Pauli strings
# ============================================================================


@dataclass(frozen=True, order=True)
class PauliString:
    """Z/I string over n_qubits; mask holds the Z-carrying qubit indices."""

    n_qubits: int
    mask: Tuple[int, ...]

    def __post_init__(self):
        mask = tuple(sorted(set(int(i) for i in self.mask)))
        if any(i < 0 or i >= self.n_qubits for i in mask):
            raise ValueError(f"mask {mask} out of range for {self.n_qubits} qubits")
        object.__setattr__(self, "mask", mask)

    @classmethod
    def from_label(cls, label: str) -> "PauliString":
        label = label.strip().upper()
        if set(label) - {"Z", "I"}:
            raise ValueError(f"Pauli string {label!r} may only contain Z and I")
        return cls(len(label), tuple(i for i, ch in enumerate(label) if ch == "Z"))

    @property
    def weight(self) -> int:
        return len(self.mask)

    @property
    def bits(self) -> int:
        """Mask as an integer, qubit 0 in the most significant position."""
        return sum(1 << (self.n_qubits - 1 - i) for i in self.mask)

    def sign(self, occupation: Sequence[int]) -> int:
        return -1 if sum(occupation[i] for i in self.mask) % 2 else 1

    def __str__(self) -> str:
        return "".join("Z" if i in self.mask else "I" for i in range(self.n_qubits))


def computational_states(n_qubits: int) -> List[Tuple[int, ...]]:
    """All {0,1}^N occupations in binary order (qubit 0 most significant)."""
    return [tuple(bits) for bits in itertools.product((0, 1), repeat=n_qubits)]


def parity_transform(energies: np.ndarray) -> np.ndarray:
    """alpha[mask] = 2^-N sum_s (-1)^popcount(s & mask) E[s]."""
    size = len(energies)
    return scipy.linalg.hadamard(size) @ np.asarray(energies, dtype=float) / size


@dataclass
class PauliCoefficients:
    """
    Normalized coefficients: H = sum_P alpha_P P reproduces the computational
    spectrum. zeta_P = 2^weight alpha_P is the spectroscopic parity sum.
    """

    qubits: Tuple[str, ...]
    coeffs: Dict[PauliString, float]
    convention: str = "normalized"

    @property
    def n_qubits(self) -> int:
        return len(self.qubits)

    def alpha(self, string) -> float:
        if isinstance(string, str):
            string = PauliString.from_label(string)
        return self.coeffs[string]

    def zeta(self, string) -> float:
        if isinstance(string, str):
            string = PauliString.from_label(string)
        return (2**string.weight) * self.coeffs[string]

    def strings(self, weight: int, within: Optional[Iterable[int]] = None) -> List[PauliString]:
        allowed = set(range(self.n_qubits)) if within is None else set(within)
        return sorted(p for p in self.coeffs if p.weight == weight and set(p.mask) <= allowed)

    def maxima(self, weight: int, within: Optional[Iterable[int]] = None) -> Tuple[Optional[PauliString], float]:
        """Dominant string of a given weight and its |alpha|."""
        best, value = None, 0.0
        for p in self.strings(weight, within):
            if best is None or abs(self.coeffs[p]) > value:
                best, value = p, abs(self.coeffs[p])
        return best, value

    def dominant(self, weight: int) -> str:
        best, _ = self.maxima(weight)
        return str(best) if best is not None else ""

    def reconstruct(self) -> Dict[Tuple[int, ...], float]:
        """E_s = sum_P sign_P(s) alpha_P (needs every string present)."""
        n = self.n_qubits
        alphas = np.zeros(2**n)
        for p, a in self.coeffs.items():
            alphas[p.bits] = a
        energies = scipy.linalg.hadamard(2**n) @ alphas
        return dict(zip(computational_states(n), energies))

    def to_frame(self) -> pd.DataFrame:
        rows = [
            {
                "string": str(p),
                "z_mask": ";".join(str(i) for i in p.mask),
                "alpha_MHz": a,
                "zeta_MHz": (2**p.weight) * a,
                "convention": self.convention,
            }
            for p, a in sorted(self.coeffs.items(), key=lambda kv: (kv[0].weight, kv[0].mask))
        ]
        return pd.DataFrame(rows, columns=["string", "z_mask", "alpha_MHz", "zeta_MHz", "convention"])

    def export_csv(self, path) -> Path:
        path = Path(path)
        self.to_frame()[["string", "z_mask", "alpha_MHz", "convention"]].to_csv(
            path, index=False, float_format="%.10g"
        )
        return path


# ============================================================================
# Effective model
# ============================================================================


@dataclass
class EffectiveQubitH:
    """
    Coupler-free multilevel qubit model.

    level_energies[i][n] is the dressed energy of qubit i at level n with all
    other modes at ground, relative to the dressed vacuum. j_table holds bare
    exchange J keyed (i, j, m, n) with i < j: qubit i steps m+1 -> m while
    qubit j steps n -> n+1; ladder factors are applied on use.
    """

    qubits: Tuple[str, ...]
    n_levels: int
    vacuum_energy: float
    level_energies: Tuple[Tuple[float, ...], ...]
    j_table: Dict[Tuple[int, int, int, int], float]
    dressed_energies: Dict[Tuple[int, ...], float] = field(default_factory=dict)
    source: str = "exact"

    @property
    def n_qubits(self) -> int:
        return len(self.qubits)

    def exchange(self, i: int, j: int, m: int = 0, n: int = 0) -> float:
        if i > j:
            i, j, m, n = j, i, n, m
        return self.j_table.get((i, j, m, n), 0.0)

    def dressed_frequency(self, i: int) -> float:
        return self.level_energies[i][1] - self.level_energies[i][0]

    def index(self, qubit_id: str) -> int:
        return self.qubits.index(qubit_id)

    @classmethod
    def from_bare(
        cls,
        freqs: Sequence[float],
        anharmonicities: Sequence[float],
        j_table: Mapping[Tuple[int, int, int, int], float],
        n_levels: int = DEFAULT_EFFECTIVE_LEVELS,
        qubits: Optional[Sequence[str]] = None,
    ) -> "EffectiveQubitH":
        """Duffing ladders plus a given exchange table (toy and prior models)."""
        qubits = tuple(qubits) if qubits is not None else tuple(f"Q{k + 1}" for k in range(len(freqs)))
        levels = tuple(
            tuple(n * f + 0.5 * d * n * (n - 1) for n in range(n_levels)) for f, d in zip(freqs, anharmonicities)
        )
        table = {}
        for (i, j, m, n), value in j_table.items():
            if i > j:
                i, j, m, n = j, i, n, m
            table[(i, j, m, n)] = float(value)
        return cls(qubits, n_levels, 0.0, levels, table, source="bare")

    def to_dict(self) -> Dict:
        return {
            "qubits": list(self.qubits),
            "n_levels": self.n_levels,
            "vacuum_energy_MHz": self.vacuum_energy,
            "level_energies_MHz": [list(row) for row in self.level_energies],
            "dressed_frequencies_MHz": {q: self.dressed_frequency(k) for k, q in enumerate(self.qubits)},
            "j_table_MHz": [
                {"i": self.qubits[i], "j": self.qubits[j], "m": m, "n": n, "J": value}
                for (i, j, m, n), value in sorted(self.j_table.items())
            ],
            "source": self.source,
        }


def _partition_indices(basis: ModeBasis, partition: Optional[np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    mask = basis.coupler_ground_mask() if partition is None else np.asarray(partition, dtype=bool)
    return np.nonzero(mask)[0], np.nonzero(~mask)[0]


def _check_separation(spectrum: Spectrum, labeling: StateLabeling, block: np.ndarray, floor: float) -> None:
    eigs = labeling.eig_of_bare[block]
    weights = np.sum(np.abs(spectrum.eigenvectors[np.ix_(block, eigs)]) ** 2, axis=0)
    bad = labeling.hybridized[eigs] & (weights < floor)
    if np.any(bad):
        k = int(np.nonzero(bad)[0][0])
        raise BlockSeparationError(
            f"hybridized eigenstate {int(eigs[k])} keeps only {weights[k]:.3f} of its weight in its block"
        )


def decoupling_unitary(
    spectrum: Spectrum, labeling: StateLabeling, basis: ModeBasis, partition: Optional[np.ndarray] = None
) -> np.ndarray:
    """
    Least-action decoupling unitary U = T blockdiag(W_P, W_Q)^dag, where T
    holds eigenvectors ordered by label and W_B is the unitary polar factor
    of the diagonal block T_BB.
    """
    if np.any(labeling.eig_of_bare < 0):
        raise LabelingError("decoupling needs a label for every bare state")
    ordered = spectrum.eigenvectors[:, labeling.eig_of_bare]
    unitary = ordered.copy()
    for block in _partition_indices(basis, partition):
        if len(block) == 0:
            continue
        w, _ = scipy.linalg.polar(ordered[np.ix_(block, block)])
        unitary[:, block] = ordered[:, block] @ w.conj().T
    return unitary


def block_diagonalize(
    H: OperatorMatrix,
    spectrum: Spectrum,
    labeling: StateLabeling,
    partition: Optional[np.ndarray] = None,
    effective_levels: int = DEFAULT_EFFECTIVE_LEVELS,
) -> EffectiveQubitH:
    """
    Effective Hamiltonian on the coupler-ground block by the least-action rule.

    H_eff = W diag(lambda_P) W^dag with W the polar factor of the
    eigenvector block T_PP; this is the block of U^dag H U for the unitary
    closest to identity that decouples the partition.

    Args:
        H: Full circuit Hamiltonian
        spectrum: Complete spectrum of H
        labeling: Labels for every state
        partition: Boolean mask of the kept block (default: couplers at ground)
        effective_levels: Qubit levels kept in the effective model

    Returns:
        EffectiveQubitH with dressed energies and level-dependent J
    """
    basis = H.basis
    if spectrum.count != basis.size:
        raise ValueError("block_diagonalize needs the complete spectrum")
    p_idx, q_idx = _partition_indices(basis, partition)
    eig_p = labeling.eig_of_bare[p_idx]
    if np.any(eig_p < 0):
        raise LabelingError("every coupler-ground state needs a dressed label")
    _check_separation(spectrum, labeling, p_idx, labeling.floor)
    if len(q_idx):
        _check_separation(spectrum, labeling, q_idx, labeling.floor)

    w, _ = scipy.linalg.polar(spectrum.eigenvectors[np.ix_(p_idx, eig_p)])
    h_eff = (w * spectrum.eigenvalues[eig_p]) @ w.conj().T
    h_eff = np.real_if_close(0.5 * (h_eff + h_eff.conj().T))

    qubit_cols = [k for k, is_q in enumerate(basis.is_qubit) if is_q]
    qubit_ids = tuple(basis.mode_ids[k] for k in qubit_cols)
    occupations = [tuple(int(n) for n in row) for row in basis.states[np.ix_(p_idx, qubit_cols)]]
    position = {occ: k for k, occ in enumerate(occupations)}
    dressed = {occ: float(h_eff[k, k]) for occ, k in position.items()}

    n_qubits = len(qubit_ids)
    vacuum = (0,) * n_qubits
    if vacuum not in position:
        raise MissingEnergyError("vacuum state missing from the coupler-ground block")
    levels = min([effective_levels] + [basis.modes[k][1] for k in qubit_cols])

    def single(i: int, n: int) -> Tuple[int, ...]:
        occ = [0] * n_qubits
        occ[i] = n
        return tuple(occ)

    level_energies = []
    for i in range(n_qubits):
        row = []
        for n in range(levels):
            occ = single(i, n)
            if occ not in position:
                raise MissingEnergyError(f"level {n} of {qubit_ids[i]} is outside the basis")
            row.append(dressed[occ] - dressed[vacuum])
        level_energies.append(tuple(row))

    j_table = {}
    for i, j in itertools.combinations(range(n_qubits), 2):
        for m in range(levels - 1):
            for n in range(levels - 1):
                upper = [0] * n_qubits
                upper[i], upper[j] = m + 1, n
                lower = [0] * n_qubits
                lower[i], lower[j] = m, n + 1
                a, b = position.get(tuple(upper)), position.get(tuple(lower))
                if a is None or b is None:
                    continue
                j_table[(i, j, m, n)] = float(h_eff[a, b]) / (HOP_SIGN * np.sqrt((m + 1) * (n + 1)))

    logger.debug(f"Block-diagonalized {len(p_idx)} coupler-ground states of {basis.size}")
    return EffectiveQubitH(
        qubits=qubit_ids,
        n_levels=levels,
        vacuum_energy=dressed[vacuum],
        level_energies=tuple(level_energies),
        j_table=j_table,
        dressed_energies=dressed,
        source="exact",
    )


# ============================================================================
# Multilevel qubit Hamiltonian and parity rule
# ============================================================================


def qubit_hamiltonian(effH: EffectiveQubitH) -> OperatorMatrix:
    """Multilevel qubit Hamiltonian: dressed ladders plus level-dependent hops."""
    n, levels = effH.n_qubits, effH.n_levels
    states = np.array(list(itertools.product(range(levels), repeat=n)), dtype=np.int64).reshape(-1, n)
    basis = ModeBasis(modes=tuple((q, levels) for q in effH.qubits), states=states)
    ladders = np.array(effH.level_energies)
    diag = effH.vacuum_energy + sum(ladders[i][states[:, i]] for i in range(n))

    rows, cols, data = [np.arange(basis.size)], [np.arange(basis.size)], [diag]
    for (i, j, m, nn), value in effH.j_table.items():
        if value == 0.0 or m + 1 >= levels or nn + 1 >= levels:
            continue
        src = np.nonzero((states[:, i] == m + 1) & (states[:, j] == nn))[0]
        target = states[src].copy()
        target[:, i] = m
        target[:, j] = nn + 1
        dst = basis.lookup(target)
        element = HOP_SIGN * np.sqrt((m + 1) * (nn + 1)) * value
        rows += [dst, src]
        cols += [src, dst]
        data += [np.full(len(src), element), np.full(len(src), element)]
    matrix = scipy.sparse.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(basis.size, basis.size)
    ).tocsr()
    return OperatorMatrix(matrix=matrix, basis=basis, rwa=True)


def computational_energies(effH: EffectiveQubitH) -> Dict[Tuple[int, ...], float]:
    """Diagonalize the multilevel model and read the labeled {0,1}^N energies."""
    H = qubit_hamiltonian(effH)
    spectrum = eigensolve(H)
    labeling = label_states(spectrum, H.basis)
    energies = {}
    for state in computational_states(effH.n_qubits):
        energies[state] = labeling.energy_of(spectrum, H.basis.index(state))
    return energies


def pauli_from_energies(
    energies: Mapping[Tuple[int, ...], float],
    qubits: Sequence[str],
    max_weight: int = DEFAULT_MAX_WEIGHT,
) -> PauliCoefficients:
    """Parity-rule coefficients for every string up to max_weight."""
    n = len(qubits)
    vector = np.zeros(2**n)
    for state in computational_states(n):
        if state not in energies:
            raise MissingEnergyError(f"no dressed energy for computational state {state}")
        vector[int("".join(map(str, state)), 2) if n else 0] = energies[state]
    alphas = parity_transform(vector)
    coeffs = {}
    for bits in range(2**n):
        mask = tuple(i for i in range(n) if bits >> (n - 1 - i) & 1)
        if len(mask) <= max_weight:
            coeffs[PauliString(n, mask)] = float(alphas[bits])
    return PauliCoefficients(qubits=tuple(qubits), coeffs=coeffs)


def pauli_coefficients(effH: EffectiveQubitH, max_weight: int = DEFAULT_MAX_WEIGHT) -> PauliCoefficients:
    """
    Pauli-string coefficients of the effective model via the parity rule.

    Args:
        effH: Effective multilevel qubit Hamiltonian
        max_weight: Largest Z-weight reported

    Returns:
        PauliCoefficients in the normalized convention
    """
    return pauli_from_energies(computational_energies(effH), effH.qubits, max_weight)


def coefficient(effH: EffectiveQubitH, p: PauliString) -> float:
    """Single-string coefficient by a direct parity sum."""
    if p.n_qubits != effH.n_qubits:
        raise ValueError(f"string {p} does not match {effH.n_qubits} qubits")
    energies = computational_energies(effH)
    total = sum(p.sign(s) * e for s, e in energies.items())
    return total / 2**effH.n_qubits
