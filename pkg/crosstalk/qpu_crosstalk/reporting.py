"""
Reporting - deterministic CSV, JSON and SVG output for scan datasets.
"""

import json
import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from lxml import etree

from .analysis import (
    FIDELITY_COLUMNS,
    FIDELITY_SUMMARY_COLUMNS,
    OVERLAY_COLUMNS,
    PAULI_COLUMNS,
    PET_COLUMNS,
    PHASE_COLUMNS,
    TOMOGRAPHY_COLUMNS,
    ScanDataset,
)
from .hilbert import CONVERGENCE_COLUMNS

logger = logging.getLogger(__name__)

# Configuration
FORMATS = ("csv", "json", "svg")
CSV_FLOAT_FORMAT = "%.10g"
SVG_NS = "http://www.w3.org/2000/svg"
SVG_WIDTH = 800
SVG_MARGIN = 60
BAND_HEIGHT = 28
PLOT_HEIGHT = 360
RATIO_CEILING = 2.0  # ratio axis inside a PET band
SERIES_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f")

SCHEMAS = {
    "tomography": TOMOGRAPHY_COLUMNS,
    "pet": PET_COLUMNS,
    "overlay": OVERLAY_COLUMNS,
    "phase": PHASE_COLUMNS,
    "fidelity": FIDELITY_COLUMNS,
    "fidelity_summary": FIDELITY_SUMMARY_COLUMNS,
    "pauli": PAULI_COLUMNS,
    "convergence": CONVERGENCE_COLUMNS,
}

# (x column, y columns, grouping columns, log x, log y)
LINE_VIEWS = {
    "overlay": ("j13_target_MHz", ["Z1Z3", "Z1Z2Z3", "Z1Z3Z4", "Z1Z3Z5"], ["cell"], False, False),
    "phase": ("ratio", ["zz_max_MHz", "zzz_max_MHz"], [], True, True),
    "fidelity": ("gside_MHz", ["error"], ["cell", "noise_level"], False, True),
    "tomography": ("j13_target_MHz", ["alpha_MHz"], ["path", "gside_MHz", "string"], False, False),
}


# ============================================================================
# CSV / JSON
# ============================================================================


def _records(frame: pd.DataFrame) -> List[Dict]:
    cleaned = frame.astype(object).where(frame.notna(), None)
    records = cleaned.to_dict(orient="records")
    for row in records:
        for key, value in row.items():
            if isinstance(value, float) and not math.isfinite(value):
                row[key] = None
            elif isinstance(value, np.generic):
                row[key] = value.item()
    return records


def write_csv(dataset: ScanDataset, path: Path) -> Path:
    dataset.frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    return path


def write_json(dataset: ScanDataset, path: Path) -> Path:
    payload = {
        "name": dataset.name,
        "kind": dataset.kind,
        "meta": dataset.meta,
        "flagged": dataset.flagged,
        "rows": _records(dataset.frame),
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True, default=str)
        f.write("\n")
    return path


# ============================================================================
# SVG
# ============================================================================


def _el(parent, tag: str, text: Optional[str] = None, **attrs):
    element = etree.SubElement(parent, f"{{{SVG_NS}}}{tag}", {k.rstrip("_").replace("_", "-"): str(v) for k, v in attrs.items()})
    if text is not None:
        element.text = text
    return element


def _svg_root(height: float, title: str):
    root = etree.Element(
        f"{{{SVG_NS}}}svg",
        nsmap={None: SVG_NS},
        width=str(SVG_WIDTH),
        height=f"{height:g}",
        viewBox=f"0 0 {SVG_WIDTH} {height:g}",
    )
    _el(root, "title", title)
    return root


def _heat(value: float, vmax: float) -> str:
    """White to red; grey for missing points."""
    if not math.isfinite(value) or vmax <= 0:
        return "#cccccc"
    level = min(max(value / vmax, 0.0), 1.0)
    other = int(round(255 * (1.0 - level)))
    return f"#ff{other:02x}{other:02x}"


def _pet_svg(dataset: ScanDataset):
    frame = dataset.frame
    cells = list(dict.fromkeys(frame["cell"]))
    height = 2 * SVG_MARGIN + BAND_HEIGHT * max(len(cells), 1)
    root = _svg_root(height, f"{dataset.name}: |ZZ|_max heatmap with |ZZZ|_max / |ZZ|_max")
    if frame.empty:
        return root

    xs = sorted(frame["x_value"].unique())
    zz = frame["zz_max_MHz"].to_numpy(dtype=float)
    vmax = float(np.nanmax(zz)) if np.isfinite(zz).any() else 0.0
    width = (SVG_WIDTH - 2 * SVG_MARGIN) / len(xs)
    column = {x: k for k, x in enumerate(xs)}

    for row_index, cell in enumerate(cells):
        top = SVG_MARGIN + row_index * BAND_HEIGHT
        band = _el(root, "g", class_="band", data_cell=str(cell))
        _el(band, "text", str(cell), x=SVG_MARGIN - 8, y=f"{top + BAND_HEIGHT * 0.65:.2f}", text_anchor="end", font_size=11)
        group = frame[frame["cell"] == cell]
        points = []
        for x, zz_value, ratio in zip(group["x_value"], group["zz_max_MHz"], group["ratio"]):
            left = SVG_MARGIN + column[x] * width
            _el(band, "rect", x=f"{left:.2f}", y=f"{top:.2f}", width=f"{width:.2f}", height=BAND_HEIGHT, fill=_heat(float(zz_value), vmax))
            if math.isfinite(ratio):
                level = min(float(ratio), RATIO_CEILING) / RATIO_CEILING
                points.append(f"{left + width / 2:.2f},{top + BAND_HEIGHT * (1.0 - level):.2f}")
        if points:
            _el(band, "polyline", class_="ratio", points=" ".join(points), fill="none", stroke="black", stroke_width=1)
        # ratio = 1 guide
        guide = top + BAND_HEIGHT * (1.0 - 1.0 / RATIO_CEILING)
        _el(band, "line", x1=SVG_MARGIN, x2=SVG_WIDTH - SVG_MARGIN, y1=f"{guide:.2f}", y2=f"{guide:.2f}", stroke="#555555", stroke_dasharray="2,2")

    axis_y = SVG_MARGIN + BAND_HEIGHT * len(cells) + 16
    for x in (xs[0], xs[-1]):
        _el(root, "text", f"{x:g}", x=f"{SVG_MARGIN + column[x] * width + width / 2:.2f}", y=axis_y, text_anchor="middle", font_size=10)
    _el(root, "text", f"|ZZ|_max up to {vmax:.4g} MHz", x=SVG_MARGIN, y=SVG_MARGIN - 16, font_size=11)
    return root


def _scale(values: np.ndarray, log: bool) -> Tuple[np.ndarray, float, float]:
    values = np.abs(values) if log else values
    with np.errstate(divide="ignore", invalid="ignore"):
        mapped = np.log10(values) if log else values.astype(float)
    finite = mapped[np.isfinite(mapped)]
    if finite.size == 0:
        return mapped, 0.0, 1.0
    low, high = float(finite.min()), float(finite.max())
    if high == low:
        high = low + 1.0
    return mapped, low, high


def _line_svg(dataset: ScanDataset):
    x_col, y_cols, groups, log_x, log_y = LINE_VIEWS[dataset.kind]
    frame = dataset.frame
    if dataset.kind == "tomography" and not frame.empty:
        frame = frame[frame["path"] == "exact"]
    height = PLOT_HEIGHT + 2 * SVG_MARGIN
    root = _svg_root(height, f"{dataset.name}: {', '.join(y_cols)} vs {x_col}")
    if frame.empty:
        return root

    x_all, x_low, x_high = _scale(frame[x_col].to_numpy(dtype=float), log_x)
    stacked = np.concatenate([frame[c].to_numpy(dtype=float) for c in y_cols])
    _, y_low, y_high = _scale(stacked, log_y)
    plot_width = SVG_WIDTH - 2 * SVG_MARGIN

    def px(value: float) -> float:
        return SVG_MARGIN + plot_width * (value - x_low) / (x_high - x_low)

    def py(value: float) -> float:
        return SVG_MARGIN + PLOT_HEIGHT * (1.0 - (value - y_low) / (y_high - y_low))

    _el(root, "rect", x=SVG_MARGIN, y=SVG_MARGIN, width=plot_width, height=PLOT_HEIGHT, fill="none", stroke="#999999")
    series = frame.groupby(groups, sort=False) if groups else [((), frame)]
    k = 0
    for key, group in series:
        key = key if isinstance(key, tuple) else (key,)
        xs, _, _ = _scale(group[x_col].to_numpy(dtype=float), log_x)
        for y_col in y_cols:
            ys, _, _ = _scale(group[y_col].to_numpy(dtype=float), log_y)
            keep = np.isfinite(xs) & np.isfinite(ys)
            if not keep.any():
                continue
            order = np.argsort(xs[keep], kind="stable")
            points = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(xs[keep][order], ys[keep][order]))
            label = "/".join([str(v) for v in key] + [y_col])
            _el(
                root,
                "polyline",
                class_="series",
                data_label=label,
                points=points,
                fill="none",
                stroke=SERIES_COLORS[k % len(SERIES_COLORS)],
                stroke_width=1.5,
            )
            k += 1

    axis = "log10 " if log_x else ""
    _el(root, "text", f"{axis}{x_col}: {x_low:.4g} .. {x_high:.4g}", x=SVG_MARGIN, y=height - 20, font_size=11)
    axis = "log10 |y| " if log_y else ""
    _el(root, "text", f"{axis}{y_low:.4g} .. {y_high:.4g}", x=SVG_MARGIN, y=SVG_MARGIN - 12, font_size=11)
    return root


def has_svg_view(kind: str) -> bool:
    return kind == "pet" or kind in LINE_VIEWS


def write_svg(dataset: ScanDataset, path: Path) -> Path:
    if dataset.kind == "pet":
        root = _pet_svg(dataset)
    elif dataset.kind in LINE_VIEWS:
        root = _line_svg(dataset)
    else:
        raise ValueError(f"no SVG view for dataset kind {dataset.kind!r}")
    etree.ElementTree(root).write(str(path), pretty_print=True, xml_declaration=True, encoding="utf-8")
    return path


# ============================================================================
# Entry points
# ============================================================================


def report_render(dataset: ScanDataset, fmt: str, out_dir) -> Path:
    """
    Write a dataset in one format under out_dir as <name>.<fmt>.

    Args:
        dataset: Scan output
        fmt: csv, json or svg
        out_dir: Target directory (created when missing)

    Returns:
        Path of the written file
    """
    if fmt not in FORMATS:
        raise ValueError(f"unknown format {fmt!r}; expected one of {FORMATS}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{dataset.name}.{fmt}"
    writer = {"csv": write_csv, "json": write_json, "svg": write_svg}[fmt]
    writer(dataset, path)
    logger.info(f"Wrote {path} ({len(dataset.frame)} rows, {dataset.flagged} flagged)")
    return path


def render_all(dataset: ScanDataset, formats: Sequence[str], out_dir) -> List[Path]:
    return [report_render(dataset, fmt, out_dir) for fmt in formats]


def infer_kind(columns: Sequence[str]) -> str:
    for kind, schema in SCHEMAS.items():
        if list(columns) == list(schema):
            return kind
    raise ValueError(f"columns {list(columns)} match no known scan schema")


def load_dataset(path) -> ScanDataset:
    """Read a dataset written by report_render (csv or json)."""
    path = Path(path)
    if path.suffix == ".json":
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
        columns = SCHEMAS.get(data["kind"])
        frame = pd.DataFrame(data["rows"], columns=columns)
        return ScanDataset(data["name"], data["kind"], frame, data.get("meta", {}))
    frame = pd.read_csv(path, keep_default_na=True)
    if "flag" in frame.columns:
        frame["flag"] = frame["flag"].fillna("")
    return ScanDataset(path.stem, infer_kind(frame.columns), frame)
