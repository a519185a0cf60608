"""
Device Model - transmons, tunable couplers and their capacitive coupling graph.
Loads, validates, generates and serializes chip layouts and their unit cells.
"""

import json
import logging
import math

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import tomli_w

logger = logging.getLogger(__name__)

# Configuration
DEFAULT_G_QC_MHZ = 100.0
DEFAULT_G_RADIAL_MHZ = 8.0
DEFAULT_G_SIDE_MHZ = 0.0
DEFAULT_ANHARMONICITY_MHZ = -200.0
DEFAULT_QUBIT_LEVELS = 4
DEFAULT_COUPLER_LEVELS = 3
# Placeholder coherence time (20 us); flagged in reports when used
DEFAULT_T1_NS = 20_000.0
# Four detuned groups; every coupled pair lands 220-500 MHz apart before jitter
FREQUENCY_PALETTE_MHZ = (5700.0, 5800.0, 6100.0, 6200.0)
# Shift of every other row pair; keeps the opposite sides of any cell apart
ROW_STAGGER_MHZ = 40.0
DEFAULT_JITTER_MHZ = 15.0
QUBIT_TUNING_RANGE_MHZ = 600.0
COUPLER_BAND_MIN_MHZ = 3000.0
# Couplers stay at least this far below the upper qubit of their pair
COUPLER_GUARD_MHZ = 150.0
# 53-qubit lattice: 9 x 12 checkerboard with one dead site, 33 interior cells
SYCAMORE_ROWS = 8
SYCAMORE_COLS = 11
SYCAMORE_DEAD_SITES = ((0, 2),)
BUNDLED_LAYOUT = Path(__file__).parent / "layouts" / "sycamore_like.layout"


class LayoutError(ValueError):
    """Raised when a layout file is malformed or violates an invariant."""


class EdgeKind(Enum):
    """Role of a capacitive coupling in the lattice."""

    QUBIT_COUPLER = "qubit_coupler"
    RADIAL = "radial"
    SIDE = "side"


@dataclass(frozen=True)
class TransmonSpec:
    """A Duffing-mode transmon; all frequencies are linear (X/2pi) in MHz."""

    id: str
    freq_idle: float
    anharmonicity: float = DEFAULT_ANHARMONICITY_MHZ
    n_levels: int = DEFAULT_QUBIT_LEVELS
    t1: float = DEFAULT_T1_NS
    tunable: bool = False
    band: Optional[Tuple[float, float]] = None

    def validate(self) -> None:
        if not self.freq_idle > 0:
            raise LayoutError(f"qubit {self.id}: freq_idle must be positive")
        if not self.anharmonicity < 0:
            raise LayoutError(f"qubit {self.id}: anharmonicity must be negative")
        if self.n_levels < 2:
            raise LayoutError(f"qubit {self.id}: n_levels must be >= 2")
        if not self.t1 > 0:
            raise LayoutError(f"qubit {self.id}: t1 must be positive")
        if self.tunable and self.band is not None:
            low, high = self.band
            if not low < high:
                raise LayoutError(f"qubit {self.id}: band min must be below band max")
            if not low <= self.freq_idle <= high:
                raise LayoutError(f"qubit {self.id}: freq_idle outside its band")

    def energy(self, n: int) -> float:
        """Bare Duffing energy E_n = n f + (delta/2) n (n - 1)."""
        return n * self.freq_idle + 0.5 * self.anharmonicity * n * (n - 1)

    def in_band(self, freq: float) -> bool:
        if not self.tunable:
            return math.isclose(freq, self.freq_idle, abs_tol=1e-9)
        if self.band is None:
            return True
        return self.band[0] <= freq <= self.band[1]

    def to_dict(self) -> Dict:
        data = asdict(self)
        if self.band is None:
            data.pop("band")
        else:
            data["band"] = list(self.band)
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> "TransmonSpec":
        if "t1" not in data:
            logger.warning(f"qubit {data.get('id')}: no t1 given, using placeholder {DEFAULT_T1_NS} ns")
        band = data.get("band")
        return cls(
            id=str(data["id"]),
            freq_idle=float(data["freq_idle"]),
            anharmonicity=float(data.get("anharmonicity", DEFAULT_ANHARMONICITY_MHZ)),
            n_levels=int(data.get("n_levels", DEFAULT_QUBIT_LEVELS)),
            t1=float(data.get("t1", DEFAULT_T1_NS)),
            tunable=bool(data.get("tunable", False)),
            band=(float(band[0]), float(band[1])) if band is not None else None,
        )


@dataclass(frozen=True)
class CouplerSpec:
    """A tunable coupler mode; harmonic unless an anharmonicity is given."""

    id: str
    freq: float
    band: Tuple[float, float]
    n_levels: int = DEFAULT_COUPLER_LEVELS
    anharmonicity: float = 0.0

    def validate(self) -> None:
        low, high = self.band
        if not low < self.freq < high:
            raise LayoutError(f"coupler {self.id}: freq must lie strictly inside its band")
        if self.n_levels < 2:
            raise LayoutError(f"coupler {self.id}: n_levels must be >= 2")

    def energy(self, n: int) -> float:
        return n * self.freq + 0.5 * self.anharmonicity * n * (n - 1)

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["band"] = list(self.band)
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> "CouplerSpec":
        band = data["band"]
        return cls(
            id=str(data["id"]),
            freq=float(data["freq"]),
            band=(float(band[0]), float(band[1])),
            n_levels=int(data.get("n_levels", DEFAULT_COUPLER_LEVELS)),
            anharmonicity=float(data.get("anharmonicity", 0.0)),
        )


@dataclass(frozen=True)
class CouplingEdge:
    """Unordered capacitive coupling G/2pi (MHz) between two elements."""

    endpoints: Tuple[str, str]
    strength: float
    kind: EdgeKind

    def __post_init__(self):
        # Stored in canonical order so (a, b) and (b, a) compare equal
        a, b = self.endpoints
        object.__setattr__(self, "endpoints", (a, b) if a <= b else (b, a))

    @property
    def key(self) -> Tuple[str, str]:
        return self.endpoints

    def other(self, element_id: str) -> str:
        a, b = self.endpoints
        return b if element_id == a else a

    def to_dict(self) -> Dict:
        return {"endpoints": list(self.endpoints), "strength": self.strength, "kind": self.kind.value}

    @classmethod
    def from_dict(cls, data: Dict) -> "CouplingEdge":
        endpoints = data["endpoints"]
        if len(endpoints) != 2:
            raise LayoutError(f"edge {endpoints}: needs exactly two endpoints")
        try:
            kind = EdgeKind(data["kind"])
        except ValueError:
            raise LayoutError(f"edge {endpoints}: unknown kind {data['kind']!r}")
        return cls((str(endpoints[0]), str(endpoints[1])), float(data["strength"]), kind)


@dataclass(frozen=True)
class UnitCellView:
    """One central qubit (Q1) with four side qubits (Q2..Q5, counterclockwise)."""

    label: str
    central: str
    sides: Tuple[str, str, str, str]
    couplers: Tuple[str, str, str, str]

    @property
    def qubits(self) -> Tuple[str, ...]:
        return (self.central,) + tuple(self.sides)

    def role(self, qubit_id: str) -> int:
        """1-based cell role of a qubit (1 = central)."""
        return self.qubits.index(qubit_id) + 1

    def coupler_to(self, side: str) -> str:
        return self.couplers[self.sides.index(side)]

    def to_dict(self) -> Dict:
        return {
            "label": self.label,
            "central": self.central,
            "sides": list(self.sides),
            "couplers": list(self.couplers),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "UnitCellView":
        sides, couplers = data["sides"], data["couplers"]
        if len(sides) != 4 or len(couplers) != 4:
            raise LayoutError(f"cell {data.get('label')}: needs 4 sides and 4 couplers")
        return cls(str(data["label"]), str(data["central"]), tuple(sides), tuple(couplers))


@dataclass(frozen=True)
class DeviceLayout:
    """Immutable chip description; safe to share across workers."""

    qubits: Tuple[TransmonSpec, ...]
    couplers: Tuple[CouplerSpec, ...]
    edges: Tuple[CouplingEdge, ...]
    cells: Tuple[UnitCellView, ...] = ()
    _strengths: Dict[Tuple[str, str], float] = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_strengths", {edge.key: edge.strength for edge in self.edges})

    @property
    def qubit_ids(self) -> List[str]:
        return [q.id for q in self.qubits]

    @property
    def coupler_ids(self) -> List[str]:
        return [c.id for c in self.couplers]

    def qubit(self, qubit_id: str) -> TransmonSpec:
        for q in self.qubits:
            if q.id == qubit_id:
                return q
        raise KeyError(f"unknown qubit {qubit_id!r}")

    def coupler(self, coupler_id: str) -> CouplerSpec:
        for c in self.couplers:
            if c.id == coupler_id:
                return c
        raise KeyError(f"unknown coupler {coupler_id!r}")

    def cell(self, label: str) -> UnitCellView:
        for cell in self.cells:
            if cell.label == label:
                return cell
        raise KeyError(f"unknown cell {label!r}")

    def strength(self, a: str, b: str) -> float:
        """Coupling G/2pi between two elements (0 when not connected)."""
        key = (a, b) if a <= b else (b, a)
        return self._strengths.get(key, 0.0)

    def edges_of(self, element_id: str) -> List[CouplingEdge]:
        return [e for e in self.edges if element_id in e.endpoints]

    def coupler_pair(self, coupler_id: str) -> Tuple[str, str]:
        """The two qubits a coupler links, in layout order."""
        linked = [e.other(coupler_id) for e in self.edges_of(coupler_id) if e.kind is EdgeKind.QUBIT_COUPLER]
        if len(linked) != 2:
            raise LayoutError(f"coupler {coupler_id} must link exactly two qubits, found {linked}")
        order = self.qubit_ids
        return tuple(sorted(linked, key=order.index))

    def neighbours(self, qubit_id: str) -> List[str]:
        """Qubits joined to this one through a coupler."""
        found = []
        for edge in self.edges_of(qubit_id):
            if edge.kind is EdgeKind.QUBIT_COUPLER:
                pair = self.coupler_pair(edge.other(qubit_id))
                found.append(pair[0] if pair[1] == qubit_id else pair[1])
        return found

    def classify_pair(self, a: str, b: str) -> str:
        """'nearest' for coupler-linked pairs, 'next_nearest' for direct-only pairs, else 'none'."""
        if b in self.neighbours(a):
            return "nearest"
        key = (a, b) if a <= b else (b, a)
        if key in self._strengths:
            return "next_nearest"
        return "none"

    def validate(self) -> None:
        """Raise LayoutError naming the first violated invariant."""
        ids = set()
        for element in list(self.qubits) + list(self.couplers):
            if element.id in ids:
                raise LayoutError(f"duplicate element id {element.id}")
            ids.add(element.id)
            element.validate()
        qubit_ids = set(self.qubit_ids)
        seen = set()
        for edge in self.edges:
            a, b = edge.endpoints
            if a == b:
                raise LayoutError(f"edge ({a}, {b}): endpoints must be distinct")
            for end in edge.endpoints:
                if end not in ids:
                    raise LayoutError(f"edge ({a}, {b}): unknown element {end}")
            if edge.key in seen:
                raise LayoutError(f"duplicate edge ({a}, {b})")
            seen.add(edge.key)
            if not math.isfinite(edge.strength):
                raise LayoutError(f"edge ({a}, {b}): strength must be finite")
            n_qubits = sum(end in qubit_ids for end in edge.endpoints)
            if edge.kind is EdgeKind.QUBIT_COUPLER and n_qubits != 1:
                raise LayoutError(f"edge ({a}, {b}): qubit_coupler edge must join a qubit and a coupler")
            if edge.kind is not EdgeKind.QUBIT_COUPLER and n_qubits != 2:
                raise LayoutError(f"edge ({a}, {b}): {edge.kind.value} edge must join two qubits")
        labels = set()
        coupler_ids = set(self.coupler_ids)
        for cell in self.cells:
            if cell.label in labels:
                raise LayoutError(f"duplicate cell label {cell.label}")
            labels.add(cell.label)
            if len(set(cell.qubits)) != 5:
                raise LayoutError(f"cell {cell.label}: qubit ids must be distinct")
            for q in cell.qubits:
                if q not in qubit_ids:
                    raise LayoutError(f"cell {cell.label}: unknown qubit {q}")
            for side, coupler in zip(cell.sides, cell.couplers):
                if coupler not in coupler_ids:
                    raise LayoutError(f"cell {cell.label}: unknown coupler {coupler}")
                for q in (cell.central, side):
                    key = (q, coupler) if q <= coupler else (coupler, q)
                    if key not in seen:
                        raise LayoutError(f"cell {cell.label}: missing qubit_coupler edge {q}-{coupler}")

    def with_overrides(
        self,
        gside: Optional[float] = None,
        gradial: Optional[float] = None,
        coupler_freqs: Optional[Dict[str, float]] = None,
        qubit_freqs: Optional[Dict[str, float]] = None,
    ) -> "DeviceLayout":
        """Return a copy with side/radial strengths or element frequencies replaced."""
        edges = []
        for edge in self.edges:
            if gside is not None and edge.kind is EdgeKind.SIDE:
                edge = replace(edge, strength=float(gside))
            elif gradial is not None and edge.kind is EdgeKind.RADIAL:
                edge = replace(edge, strength=float(gradial))
            edges.append(edge)
        couplers = tuple(
            replace(c, freq=float(coupler_freqs[c.id])) if coupler_freqs and c.id in coupler_freqs else c
            for c in self.couplers
        )
        qubits = tuple(
            replace(q, freq_idle=float(qubit_freqs[q.id])) if qubit_freqs and q.id in qubit_freqs else q
            for q in self.qubits
        )
        return DeviceLayout(qubits, couplers, tuple(edges), self.cells)

    def to_dict(self) -> Dict:
        return {
            "qubit": [q.to_dict() for q in self.qubits],
            "coupler": [c.to_dict() for c in self.couplers],
            "edge": [e.to_dict() for e in self.edges],
            "cell": [c.to_dict() for c in self.cells],
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "DeviceLayout":
        try:
            return cls(
                qubits=tuple(TransmonSpec.from_dict(q) for q in data.get("qubit", [])),
                couplers=tuple(CouplerSpec.from_dict(c) for c in data.get("coupler", [])),
                edges=tuple(CouplingEdge.from_dict(e) for e in data.get("edge", [])),
                cells=tuple(UnitCellView.from_dict(c) for c in data.get("cell", [])),
            )
        except LayoutError:
            raise
        except (KeyError, TypeError, IndexError, ValueError) as e:
            # Bad numbers such as float("abc") surface as layout errors
            raise LayoutError(f"malformed layout entry: {e}") from e


# ============================================================================
# File I/O
# ============================================================================


def load_layout(path) -> DeviceLayout:
    """
    Load and validate a layout file (TOML, or JSON when the extension is .json).

    Args:
        path: Path to the layout document

    Returns:
        Validated DeviceLayout
    """
    path = Path(path)
    try:
        if path.suffix == ".json":
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        else:
            with open(path, "rb") as f:
                data = tomllib.load(f)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as e:
        raise LayoutError(f"cannot parse {path}: {e}") from e

    layout = DeviceLayout.from_dict(data)
    layout.validate()
    logger.info(
        f"Loaded layout {path.name}: {len(layout.qubits)} qubits, "
        f"{len(layout.couplers)} couplers, {len(layout.cells)} cells"
    )
    return layout


def save_layout(layout: DeviceLayout, path) -> Path:
    """Write a layout as TOML, or JSON when the extension is .json."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = layout.to_dict()
    if path.suffix == ".json":
        with open(path, "w", encoding="utf-8") as f:
            json.dump(data, f, indent=2)
    else:
        with open(path, "wb") as f:
            tomli_w.dump(data, f)
    logger.info(f"Saved layout to {path}")
    return path


def load_bundled_layout() -> DeviceLayout:
    return load_layout(BUNDLED_LAYOUT)


# ============================================================================
# Generation
# ============================================================================


def cell_label(index: int) -> str:
    """A..Z, then A1..Z1, A2..."""
    letter = chr(ord("A") + index % 26)
    cycle = index // 26
    return letter if cycle == 0 else f"{letter}{cycle}"


def palette_group(row: int, col: int) -> int:
    # Centre and sides differ in row parity; adjacent sides differ in the low bit
    return (row % 2) * 2 + ((col // 2 + row // 2) % 2)


def palette_frequency(row: int, col: int) -> float:
    """Jitter-free idle frequency of a lattice site."""
    base = FREQUENCY_PALETTE_MHZ[palette_group(row, col)]
    if (row // 2) % 2 == 0:
        return base
    # Low groups move up, high groups down: coupled pairs only draw closer
    return base - ROW_STAGGER_MHZ if row % 2 else base + ROW_STAGGER_MHZ


def exchange_off_estimate(f_a: float, f_b: float, g_qc: float, g_direct: float) -> Optional[float]:
    """Coupler frequency below both qubits where the second-order exchange vanishes."""
    if g_direct == 0:
        return None
    # g_direct (w - a)(w - b) + (g^2 / 2)(2w - a - b) = 0
    coeffs = [g_direct, g_qc**2 - g_direct * (f_a + f_b), g_direct * f_a * f_b - 0.5 * g_qc**2 * (f_a + f_b)]
    roots = [r.real for r in np.roots(coeffs) if abs(r.imag) < 1e-9 and r.real < min(f_a, f_b)]
    return max(roots) if roots else None


def generate_sycamore_like(
    rows: int,
    cols: int,
    dead_sites: Sequence[Tuple[int, int]] = (),
    seed: Optional[int] = 0,
    g_qc: float = DEFAULT_G_QC_MHZ,
    g_radial: float = DEFAULT_G_RADIAL_MHZ,
    g_side: float = DEFAULT_G_SIDE_MHZ,
    jitter_mhz: float = DEFAULT_JITTER_MHZ,
    anharmonicity: float = DEFAULT_ANHARMONICITY_MHZ,
    qubit_levels: int = DEFAULT_QUBIT_LEVELS,
    coupler_levels: int = DEFAULT_COUPLER_LEVELS,
    t1: float = DEFAULT_T1_NS,
) -> DeviceLayout:
    """
    Build a diamond lattice of coupler-linked transmons.

    Sites sit on the even checkerboard of a (rows+1) x (cols+1) grid; each
    site couples diagonally to up to four neighbours, and every site with
    all four neighbours present is the centre of a unit cell.

    Args:
        rows: Grid height in diagonal steps (>= 2)
        cols: Grid width in diagonal steps (>= 2)
        dead_sites: (row, col) sites left empty
        seed: Seed for the frequency jitter
        g_qc, g_radial, g_side: Coupling strengths in MHz
        jitter_mhz: Half-width of the uniform frequency jitter

    Returns:
        Validated DeviceLayout
    """
    if rows < 2 or cols < 2:
        raise ValueError("rows and cols must be >= 2")
    rng = np.random.default_rng(seed)
    dead = {tuple(site) for site in dead_sites}
    sites = [
        (r, c) for r in range(rows + 1) for c in range(cols + 1) if (r + c) % 2 == 0 and (r, c) not in dead
    ]
    present = set(sites)

    def qid(site):
        return f"Q{site[0]}_{site[1]}"

    freqs = {}
    qubits = []
    for site in sites:
        jitter = rng.uniform(-jitter_mhz, jitter_mhz) if jitter_mhz > 0 else 0.0
        f = round(palette_frequency(*site) + jitter, 3)
        freqs[site] = f
        qubits.append(
            TransmonSpec(
                id=qid(site),
                freq_idle=f,
                anharmonicity=anharmonicity,
                n_levels=qubit_levels,
                t1=t1,
                tunable=True,
                band=(f - QUBIT_TUNING_RANGE_MHZ, f + QUBIT_TUNING_RANGE_MHZ),
            )
        )

    couplers, edges = [], []
    coupler_of = {}
    for site in sites:
        r, c = site
        for other in ((r + 1, c - 1), (r + 1, c + 1)):
            if other not in present:
                continue
            cid = f"C{r}_{c}-{other[0]}_{other[1]}"
            f_a, f_b = freqs[site], freqs[other]
            band = (COUPLER_BAND_MIN_MHZ, max(f_a, f_b) - COUPLER_GUARD_MHZ)
            idle = exchange_off_estimate(f_a, f_b, g_qc, g_radial)
            if idle is None or not band[0] < idle < band[1]:
                idle = 0.5 * (band[0] + band[1])
            couplers.append(CouplerSpec(cid, round(idle, 3), band, coupler_levels))
            coupler_of[frozenset((site, other))] = cid
            edges.append(CouplingEdge((qid(site), cid), g_qc, EdgeKind.QUBIT_COUPLER))
            edges.append(CouplingEdge((qid(other), cid), g_qc, EdgeKind.QUBIT_COUPLER))
            edges.append(CouplingEdge((qid(site), qid(other)), g_radial, EdgeKind.RADIAL))

    cells = []
    side_keys = set()
    for site in sites:
        r, c = site
        # Counterclockwise on screen (rows grow downward): UL, LL, LR, UR
        ring = [(r - 1, c - 1), (r + 1, c - 1), (r + 1, c + 1), (r - 1, c + 1)]
        if not all(s in present for s in ring):
            continue
        cells.append(
            UnitCellView(
                label=cell_label(len(cells)),
                central=qid(site),
                sides=tuple(qid(s) for s in ring),
                couplers=tuple(coupler_of[frozenset((site, s))] for s in ring),
            )
        )
        for k in range(4):
            a, b = ring[k], ring[(k + 1) % 4]
            key = frozenset((a, b))
            if key not in side_keys:
                side_keys.add(key)
                edges.append(CouplingEdge((qid(a), qid(b)), g_side, EdgeKind.SIDE))

    layout = DeviceLayout(tuple(qubits), tuple(couplers), tuple(edges), tuple(cells))
    layout.validate()
    logger.info(f"Generated lattice {rows}x{cols}: {len(qubits)} qubits, {len(cells)} cells (seed={seed})")
    return layout


def cell_subcircuit(layout: DeviceLayout, label: str) -> DeviceLayout:
    """
    Induced sub-layout on one cell's 5 qubits and 4 couplers.

    Args:
        layout: Full device layout
        label: Cell label

    Returns:
        DeviceLayout holding only the cell, in the parent's element order
    """
    try:
        cell = layout.cell(label)
    except KeyError:
        raise LayoutError(f"unknown cell label {label!r}")
    keep = set(cell.qubits) | set(cell.couplers)
    return DeviceLayout(
        qubits=tuple(q for q in layout.qubits if q.id in keep),
        couplers=tuple(c for c in layout.couplers if c.id in keep),
        edges=tuple(e for e in layout.edges if set(e.endpoints) <= keep),
        cells=(cell,),
    )


def cell_ordered(layout: DeviceLayout, label: str) -> DeviceLayout:
    """Cell sub-layout with qubits ordered Q1..Q5 and couplers C12..C15."""
    sub = cell_subcircuit(layout, label)
    cell = sub.cells[0]
    return DeviceLayout(
        qubits=tuple(sub.qubit(q) for q in cell.qubits),
        couplers=tuple(sub.coupler(c) for c in cell.couplers),
        edges=sub.edges,
        cells=sub.cells,
    )
