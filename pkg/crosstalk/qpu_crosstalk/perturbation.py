"""
Perturbation - closed-form and diagrammatic estimates of Pauli-string crosstalk.
Level-dependent exchange tables, squeezed detunings, ZZ/ZZZ closed forms and a
generic order-p evaluator that walks closed single-excitation hop paths.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

from .device import DeviceLayout
from .effective import (
    HOP_SIGN,
    EffectiveQubitH,
    PauliCoefficients,
    PauliString,
    computational_states,
    pauli_from_energies,
)

logger = logging.getLogger(__name__)

# Configuration
RESONANCE_FLOOR_MHZ = 1.0
NON_PERTURBATIVE_RATIO = 0.5
MAX_NATIVE_ORDER = 3
DEFAULT_DIAGRAM_LEVELS = 3
THIRD_ORDER_READING = "zeta3_ZZ = 4 * sum_k [four triplets + three doubly-overlined terms, unit weight]"

Occupation = Tuple[int, ...]
HopKey = Tuple[int, int, int, int]


class ResonanceError(ZeroDivisionError):
    """Raised when an energy denominator vanishes (or falls below the floor in strict mode)."""


def _guard(delta: float, label: str, floor: float = RESONANCE_FLOOR_MHZ, strict: bool = False) -> float:
    if delta == 0.0:
        raise ResonanceError(f"{label}: zero detuning, resonant coupler: use exact path")
    if abs(delta) < floor:
        if strict:
            raise ResonanceError(f"{label}: |delta| = {abs(delta):.3g} MHz below {floor} MHz")
        logger.warning(f"{label}: |delta| = {abs(delta):.3g} MHz below {floor} MHz, non-perturbative")
    return delta


def perturbative_J(g_pq: float, g_pc: float, g_qc: float, omega_c: float, f_p: float, f_q: float) -> float:
    """
    Second-order coupler-mediated exchange plus the direct capacitance.

    Args:
        g_pq: Direct qubit-qubit coupling (MHz)
        g_pc: Qubit p to coupler coupling (MHz)
        g_qc: Qubit q to coupler coupling (MHz)
        omega_c: Coupler frequency (MHz)
        f_p: Transition frequency of qubit p (MHz)
        f_q: Transition frequency of qubit q (MHz)

    Returns:
        J in MHz, J = G_pq + (G_pC G_qC / 2)(1/Delta_p + 1/Delta_q)
    """
    if g_pc == 0.0 or g_qc == 0.0:
        return g_pq
    delta_p, delta_q = omega_c - f_p, omega_c - f_q
    if delta_p == 0.0 or delta_q == 0.0:
        raise ResonanceError("resonant coupler: use exact path")
    return g_pq + 0.5 * g_pc * g_qc * (1.0 / delta_p + 1.0 / delta_q)


# ============================================================================
# Frequency and exchange tables
# ============================================================================


@dataclass(frozen=True)
class LevelFrequencies:
    """Per-qubit level ladders used for every energy denominator."""

    qubits: Tuple[str, ...]
    levels: Tuple[Tuple[float, ...], ...]
    source: str = "bare"

    @property
    def n_qubits(self) -> int:
        return len(self.qubits)

    @property
    def n_levels(self) -> int:
        return min(len(row) for row in self.levels)

    def energy(self, occupation: Sequence[int]) -> float:
        return sum(self.levels[i][n] for i, n in enumerate(occupation))

    def transition(self, i: int, m: int) -> float:
        """f_i^(m) = E_i(m+1) - E_i(m)."""
        return self.levels[i][m + 1] - self.levels[i][m]

    @classmethod
    def bare(
        cls,
        freqs: Sequence[float],
        anharmonicities: Sequence[float],
        n_levels: int = DEFAULT_DIAGRAM_LEVELS,
        qubits: Optional[Sequence[str]] = None,
    ) -> "LevelFrequencies":
        qubits = tuple(qubits) if qubits is not None else tuple(f"Q{k + 1}" for k in range(len(freqs)))
        levels = tuple(
            tuple(n * f + 0.5 * d * n * (n - 1) for n in range(n_levels)) for f, d in zip(freqs, anharmonicities)
        )
        return cls(qubits, levels, "bare")

    @classmethod
    def from_layout(
        cls, layout: DeviceLayout, qubits: Optional[Sequence[str]] = None, n_levels: int = DEFAULT_DIAGRAM_LEVELS
    ) -> "LevelFrequencies":
        ids = tuple(qubits) if qubits is not None else tuple(layout.qubit_ids)
        specs = [layout.qubit(q) for q in ids]
        return cls(ids, tuple(tuple(q.energy(n) for n in range(n_levels)) for q in specs), "bare")

    @classmethod
    def from_effective(cls, effH: EffectiveQubitH) -> "LevelFrequencies":
        return cls(tuple(effH.qubits), tuple(tuple(row) for row in effH.level_energies), "dressed")


@dataclass(frozen=True)
class SqueezedDelta:
    """Delta between the m-th transition of qubit i and the n-th of qubit j."""

    i: int
    m: int
    j: int
    n: int
    value: float

    @classmethod
    def compute(cls, freqs: LevelFrequencies, i: int, m: int, j: int, n: int) -> "SqueezedDelta":
        return cls(i, m, j, n, freqs.transition(i, m) - freqs.transition(j, n))


def squeezed_delta(freqs: LevelFrequencies, i: int, m: int, j: int, n: int) -> float:
    """Delta_{i^m j^n} = f_i^(m) - f_j^(n); m, n count the overlines."""
    return SqueezedDelta.compute(freqs, i, m, j, n).value


@dataclass
class LevelJTable:
    """
    Bare level-dependent exchange rates.

    Key (i, j, m, n): qubit i steps m+1 -> m while qubit j steps n -> n+1.
    Stored canonically with i < j; get() resolves either orientation.
    """

    qubits: Tuple[str, ...]
    entries: Dict[HopKey, float] = field(default_factory=dict)
    source: str = "given"

    def __post_init__(self):
        canonical = {}
        for (i, j, m, n), value in self.entries.items():
            if i == j:
                raise ValueError(f"exchange entry ({i}, {j}) couples a qubit to itself")
            if not math.isfinite(value):
                raise ValueError(f"exchange entry {(i, j, m, n)} is not finite")
            if i > j:
                i, j, m, n = j, i, n, m
            canonical[(i, j, m, n)] = float(value)
        self.entries = canonical

    @property
    def n_qubits(self) -> int:
        return len(self.qubits)

    def get(self, i: int, j: int, m: int = 0, n: int = 0) -> float:
        if i > j:
            i, j, m, n = j, i, n, m
        return self.entries.get((i, j, m, n), 0.0)

    def hop(self, i: int, j: int, m: int, n: int) -> float:
        """Matrix element for qubit i stepping m+1 -> m and qubit j stepping n -> n+1."""
        return HOP_SIGN * math.sqrt((m + 1) * (n + 1)) * self.get(i, j, m, n)

    def scaled(self, factor: float) -> "LevelJTable":
        return LevelJTable(self.qubits, {k: factor * v for k, v in self.entries.items()}, self.source)

    def max_abs(self) -> float:
        return max((abs(v) for v in self.entries.values()), default=0.0)

    @classmethod
    def from_effective(cls, effH: EffectiveQubitH) -> "LevelJTable":
        return cls(tuple(effH.qubits), dict(effH.j_table), "exact")

    @classmethod
    def from_couplers(
        cls, layout: DeviceLayout, qubits: Optional[Sequence[str]] = None, n_levels: int = DEFAULT_DIAGRAM_LEVELS
    ) -> "LevelJTable":
        """Per-level second-order estimates with level-dependent coupler detunings."""
        ids = tuple(qubits) if qubits is not None else tuple(layout.qubit_ids)
        freqs = LevelFrequencies.from_layout(layout, ids, n_levels)
        entries = {}
        for i, j in itertools.combinations(range(len(ids)), 2):
            a, b = ids[i], ids[j]
            couplers = [
                c
                for c in layout.couplers
                if layout.strength(a, c.id) != 0.0 and layout.strength(b, c.id) != 0.0
            ]
            direct = layout.strength(a, b)
            if direct == 0.0 and not couplers:
                continue
            for m in range(n_levels - 1):
                for n in range(n_levels - 1):
                    f_a, f_b = freqs.transition(i, m), freqs.transition(j, n)
                    value = direct
                    for c in couplers:
                        value += perturbative_J(0.0, layout.strength(a, c.id), layout.strength(b, c.id), c.freq, f_a, f_b)
                    entries[(i, j, m, n)] = value
        return cls(ids, entries, "second_order")

    @classmethod
    def uniform(
        cls, n_qubits: int, pairs: Sequence[Tuple[int, int]], value: float, n_levels: int = DEFAULT_DIAGRAM_LEVELS
    ) -> "LevelJTable":
        entries = {
            (i, j, m, n): value for i, j in pairs for m in range(n_levels - 1) for n in range(n_levels - 1)
        }
        return cls(tuple(f"Q{k + 1}" for k in range(n_qubits)), entries, "uniform")


# ============================================================================
# Closed forms (spectroscopic zeta = 2^weight alpha)
# ============================================================================


def alpha_zz_2nd(
    i: int, j: int, jt: LevelJTable, freqs: LevelFrequencies, floor: float = RESONANCE_FLOOR_MHZ, strict: bool = False
) -> float:
    """2 [J_{i jbar}^2 / Delta_{i jbar} - J_{ibar j}^2 / Delta_{ibar j}]; J bare, ladder factor folded into the 2."""
    total = 0.0
    j_a, j_b = jt.get(i, j, 0, 1), jt.get(i, j, 1, 0)
    if j_a:
        total += j_a**2 / _guard(squeezed_delta(freqs, i, 0, j, 1), f"Delta({i},{j}bar)", floor, strict)
    if j_b:
        total -= j_b**2 / _guard(squeezed_delta(freqs, i, 1, j, 0), f"Delta({i}bar,{j})", floor, strict)
    return 2.0 * total


class _Terms:
    """Accumulates J-triplet / (Delta Delta) terms, skipping zero numerators."""

    def __init__(self, freqs: LevelFrequencies, floor: float, strict: bool):
        self.freqs, self.floor, self.strict = freqs, floor, strict
        self.total = 0.0

    def delta(self, a: int, m: int, b: int, n: int) -> float:
        return _guard(squeezed_delta(self.freqs, a, m, b, n), f"Delta({a}^{m},{b}^{n})", self.floor, self.strict)

    def add(self, weight: float, numerator: float, d1: Tuple[int, int, int, int], d2: Tuple[int, int, int, int]):
        if numerator == 0.0:
            return
        self.total += weight * numerator / (self.delta(*d1) * self.delta(*d2))


def alpha_zz_3rd(
    i: int,
    j: int,
    jt: LevelJTable,
    freqs: LevelFrequencies,
    spectators: Optional[Sequence[int]] = None,
    floor: float = RESONANCE_FLOOR_MHZ,
    strict: bool = False,
) -> float:
    """
    Third-order ZZ between i and j summed over spectators k.

    zeta = 4 s^3 sum_k [ J_ij J_ik J_jk / (D_ik D_jk)
                         + J_ij J_ikbar J_jkbar / (D_ikbar D_jkbar)
                         - J_ibarj J_ibark J_jk / (D_ibark D_jk)
                         - J_ijbar J_ik J_jbark / (D_ik D_jbark)
                         + J_ijbar J_ikbar J_jbarkbar / (D_ijbar D_ikbar)
                         + J_jibar J_jkbar J_ibarkbar / (D_jibar D_jkbar)
                         + J_kibar J_kjbar J_ibarjbar / (D_kibar D_kjbar) ]
    with bare J, s the hop sign, and ladder factors folded into the weights.
    """
    if spectators is None:
        spectators = [k for k in range(jt.n_qubits) if k not in (i, j)]
    g = jt.get
    terms = _Terms(freqs, floor, strict)
    for k in spectators:
        terms.add(1, g(i, j, 0, 0) * g(i, k, 0, 0) * g(j, k, 0, 0), (i, 0, k, 0), (j, 0, k, 0))
        terms.add(1, g(i, j, 0, 0) * g(i, k, 0, 1) * g(j, k, 0, 1), (i, 0, k, 1), (j, 0, k, 1))
        terms.add(-1, g(i, j, 1, 0) * g(i, k, 1, 0) * g(j, k, 0, 0), (i, 1, k, 0), (j, 0, k, 0))
        terms.add(-1, g(i, j, 0, 1) * g(i, k, 0, 0) * g(j, k, 1, 0), (i, 0, k, 0), (j, 1, k, 0))
        terms.add(1, g(i, j, 0, 1) * g(i, k, 0, 1) * g(j, k, 1, 1), (i, 0, j, 1), (i, 0, k, 1))
        terms.add(1, g(j, i, 0, 1) * g(j, k, 0, 1) * g(i, k, 1, 1), (j, 0, i, 1), (j, 0, k, 1))
        terms.add(1, g(k, i, 0, 1) * g(k, j, 0, 1) * g(i, j, 1, 1), (k, 0, i, 1), (k, 0, j, 1))
    return 4.0 * HOP_SIGN**3 * terms.total


def alpha_zzz_3rd(
    i: int,
    j: int,
    k: int,
    jt: LevelJTable,
    freqs: LevelFrequencies,
    floor: float = RESONANCE_FLOOR_MHZ,
    strict: bool = False,
) -> float:
    """
    Third-order ZZZ; spectators do not enter at this order.

    zeta = -8 s^3 [ sum_x J_xbar y J_xbar z J_yz / (D_xbar y D_xbar z)
                    + sum_w J_w ybar J_w zbar J_ybar zbar / (D_w ybar D_w zbar) ]
    where x and w run over {i, j, k} and y, z are the other two.
    """
    g = jt.get
    terms = _Terms(freqs, floor, strict)
    for x, y, z in ((i, j, k), (j, i, k), (k, i, j)):
        terms.add(1, g(x, y, 1, 0) * g(x, z, 1, 0) * g(y, z, 0, 0), (x, 1, y, 0), (x, 1, z, 0))
        terms.add(1, g(x, y, 0, 1) * g(x, z, 0, 1) * g(y, z, 1, 1), (x, 0, y, 1), (x, 0, z, 1))
    return -8.0 * HOP_SIGN**3 * terms.total


# ============================================================================
# Diagram engine
# ============================================================================


@dataclass(frozen=True)
class Diagram:
    """
    A closed hop path from a marked computational level back to itself.

    path includes the marked level at both ends; hops[t] = (a, b, m, n) moves
    one excitation from qubit a (m+1 -> m) to qubit b (n -> n+1).
    """

    marked: Occupation
    path: Tuple[Occupation, ...]
    hops: Tuple[HopKey, ...]
    sign: int
    symmetry_factor: int

    @property
    def order(self) -> int:
        return len(self.hops)

    @property
    def intermediates(self) -> Tuple[Occupation, ...]:
        return self.path[1:-1]

    def describe(self) -> str:
        route = ">".join("".join(map(str, occ)) for occ in self.path)
        return f"marked={''.join(map(str, self.marked))} path={route} sign={self.sign:+d} sym={self.symmetry_factor}"


@dataclass
class PerturbativeResult:
    """Order-p coefficient of one string; value is the sum of the term contributions."""

    string: PauliString
    order: int
    value: float
    terms: List[Tuple[Diagram, float]] = field(default_factory=list)
    flagged: bool = False

    @property
    def zeta(self) -> float:
        return (2**self.string.weight) * self.value


def _moves(occ: Occupation, n_levels: int) -> Iterator[Tuple[HopKey, Occupation]]:
    for a, occ_a in enumerate(occ):
        if occ_a == 0:
            continue
        for b, occ_b in enumerate(occ):
            if b == a or occ_b >= n_levels - 1:
                continue
            new = list(occ)
            new[a] -= 1
            new[b] += 1
            yield (a, b, occ_a - 1, occ_b), tuple(new)


def _closed_walks(marked: Occupation, p: int, n_levels: int) -> Iterator[Tuple[Tuple[Occupation, ...], Tuple[HopKey, ...], int]]:
    """Canonical closed walks of length p avoiding the marked level in between."""

    def extend(path, hops):
        if len(hops) == p - 1:
            for hop, nxt in _moves(path[-1], n_levels):
                if nxt == marked:
                    yield path + (nxt,), hops + (hop,)
            return
        for hop, nxt in _moves(path[-1], n_levels):
            if nxt != marked:
                yield from extend(path + (nxt,), hops + (hop,))

    for path, hops in extend((marked,), ()):
        reverse = path[::-1]
        if path > reverse:
            continue
        yield path, hops, 1 if path == reverse else 2


def _check_order(p: int) -> None:
    if p < 2:
        raise ValueError(f"perturbation order must be >= 2 (first order vanishes), got {p}")
    if p > MAX_NATIVE_ORDER:
        raise ValueError(f"orders above {MAX_NATIVE_ORDER} need renormalization terms and are not supported")


def enumerate_diagrams(string: PauliString, p: int, n_levels: int = DEFAULT_DIAGRAM_LEVELS) -> List[Diagram]:
    """
    Every closed single-excitation hop path of length p for each marked level.

    Args:
        string: Z/I string (weight >= 2)
        p: Perturbation order
        n_levels: Levels admitted per qubit for intermediates

    Returns:
        Diagrams in marked-level order, then path order
    """
    _check_order(p)
    if string.weight < 2:
        raise ValueError(f"diagram enumeration needs a string of weight >= 2, got {string}")
    diagrams = []
    for marked in computational_states(string.n_qubits):
        sign = string.sign(marked)
        for path, hops, sym in _closed_walks(marked, p, n_levels):
            diagrams.append(Diagram(marked, path, hops, sign, sym))
    return diagrams


def _gaps(d: Diagram, freqs: LevelFrequencies) -> List[float]:
    e_marked = freqs.energy(d.marked)
    gaps = []
    for occ in d.intermediates:
        gap = e_marked - freqs.energy(occ)
        if gap == 0.0:
            raise ResonanceError(f"{d.describe()}: vanishing gap to {occ}")
        gaps.append(gap)
    return gaps


def evaluate_diagram(d: Diagram, jt: LevelJTable, freqs: LevelFrequencies) -> float:
    """sign * symmetry_factor * prod(hop elements) / prod(E_marked - E_intermediate)."""
    numerator = 1.0
    for hop in d.hops:
        numerator *= jt.hop(*hop)
    if numerator == 0.0:
        return 0.0
    return d.sign * d.symmetry_factor * numerator / math.prod(_gaps(d, freqs))


def non_dispersive(d: Diagram, jt: LevelJTable, freqs: LevelFrequencies, floor: float = RESONANCE_FLOOR_MHZ) -> bool:
    """True when any hop of the diagram is comparable to the gap it crosses."""
    gaps = _gaps(d, freqs)
    # Hop t lands on intermediate t; the closing hop leaves the last one
    for hop, gap in zip(d.hops, gaps + gaps[-1:]):
        element = jt.hop(*hop)
        if element != 0.0 and (abs(gap) < floor or abs(element / gap) > NON_PERTURBATIVE_RATIO):
            return True
    return False


def generic_pauli_order(
    string: PauliString,
    p: int,
    jt: LevelJTable,
    freqs: LevelFrequencies,
    floor: float = RESONANCE_FLOOR_MHZ,
) -> PerturbativeResult:
    """
    Order-p parity-weighted coefficient of any Z/I string.

    Args:
        string: Target string
        p: Order (2 or 3)
        jt: Exchange table
        freqs: Level ladders for the denominators

    Returns:
        PerturbativeResult in the normalized convention (zeta exposed)
    """
    if string.n_qubits != jt.n_qubits or freqs.n_qubits != jt.n_qubits:
        raise ValueError(f"string {string} does not match a {jt.n_qubits}-qubit table")
    scale = 2.0**-string.n_qubits
    terms, flagged = [], False
    for d in enumerate_diagrams(string, p, freqs.n_levels):
        contribution = evaluate_diagram(d, jt, freqs)
        if contribution == 0.0:
            continue
        if non_dispersive(d, jt, freqs, floor):
            flagged = True
        terms.append((d, scale * contribution))
    if flagged:
        logger.warning(f"{string} order {p}: hops outside the dispersive regime (|J/Delta| > {NON_PERTURBATIVE_RATIO})")
    return PerturbativeResult(string, p, sum(c for _, c in terms), terms, flagged)


def energy_corrections(jt: LevelJTable, freqs: LevelFrequencies, p: int) -> Dict[Occupation, float]:
    """Order-p Rayleigh-Schroedinger correction to every computational level."""
    _check_order(p)
    corrections = {}
    for marked in computational_states(jt.n_qubits):
        total = 0.0
        for path, hops, sym in _closed_walks(marked, p, freqs.n_levels):
            d = Diagram(marked, path, hops, 1, sym)
            total += evaluate_diagram(d, jt, freqs)
        corrections[marked] = total
    return corrections


def perturbative_coefficients(
    jt: LevelJTable, freqs: LevelFrequencies, order: int = MAX_NATIVE_ORDER, max_weight: int = 3
) -> PauliCoefficients:
    """All strings up to max_weight from ladder energies plus corrections through the given order."""
    energies = {s: freqs.energy(s) for s in computational_states(jt.n_qubits)}
    for p in range(2, order + 1):
        for s, delta in energy_corrections(jt, freqs, p).items():
            energies[s] += delta
    coefficients = pauli_from_energies(energies, jt.qubits, max_weight)
    coefficients.convention = f"normalized_pert{order}"
    return coefficients


def dump_terms(result: PerturbativeResult, path) -> Path:
    """One line per diagram: marked level, path, sign, symmetry factor, contribution."""
    path = Path(path)
    lines = [
        f"# string={result.string} order={result.order} alpha_MHz={result.value:.10g} zeta_MHz={result.zeta:.10g}",
        f"# reading: {THIRD_ORDER_READING}",
    ]
    lines += [f"{d.describe()} value_MHz={value:.10g}" for d, value in result.terms]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info(f"Wrote {len(result.terms)} diagram terms to {path}")
    return path
