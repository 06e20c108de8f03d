"""SVG output: choropleth panels per boundary era and chain traces.

Prevalence fills use the viridis colormap on the fixed range [0, 1], so maps
from different models and eras are directly comparable.
"""
import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union
from xml.sax.saxutils import escape

import numpy as np
import pandas as pd
from matplotlib import colormaps
from matplotlib.colors import Normalize, to_hex

from .errors import DimensionMismatch
from .geometry import PolygonSet
from .inference import ChainSet

logger = logging.getLogger(__name__)

PANEL = 320
MARGIN = 24
LEGEND = 16
MISSING = "#d9d9d9"


def colour(value: float, cmap: str = "viridis", vmin: float = 0.0, vmax: float = 1.0) -> str:
    if value is None or not np.isfinite(value):
        return MISSING
    norm = Normalize(vmin=vmin, vmax=vmax, clip=True)
    return to_hex(colormaps[cmap](norm(value)))


def _transform(bounds, left: float, top: float, size: float):
    x0, y0, x1, y1 = bounds
    scale = size / max(x1 - x0, y1 - y0)

    def to_px(x: float, y: float) -> Tuple[float, float]:
        # SVG y grows downwards
        return left + (x - x0) * scale, top + (y1 - y) * scale

    return to_px


def svg_path(ring: np.ndarray, to_px, fill: str, title: str = "") -> str:
    points = [to_px(x, y) for x, y in ring[:-1]]
    d = f"M{points[0][0]:.2f},{points[0][1]:.2f}"
    d += "".join(f"L{x:.2f},{y:.2f}" for x, y in points[1:])
    d += "z"
    tooltip = f"<title>{escape(title)}</title>" if title else ""
    return f'<path fill="{fill}" stroke="#ffffff" stroke-width="0.8" d="{d}">{tooltip}</path>'


def _panel(
    polygons: PolygonSet,
    values: Sequence[float],
    left: float,
    caption: str,
    cmap: str = "viridis",
    vmin: float = 0.0,
    vmax: float = 1.0,
) -> List[str]:
    to_px = _transform(polygons.bounds, left, MARGIN + LEGEND, PANEL)
    parts = [f'<text x="{left}" y="{MARGIN}" font-size="13">{escape(caption)}</text>']
    for label, ring, value in zip(polygons.labels, polygons.polygons, values):
        fill = colour(value, cmap, vmin, vmax)
        parts.append(svg_path(ring, to_px, fill, f"{label}: {value:.4f}"))
    return parts


def _legend(left: float, top: float, cmap: str, vmin: float, vmax: float) -> List[str]:
    parts = []
    steps = 50
    width = PANEL / steps
    for i in range(steps):
        value = vmin + (vmax - vmin) * (i + 0.5) / steps
        parts.append(
            f'<rect x="{left + i * width:.2f}" y="{top}" width="{width + 0.1:.2f}" height="10" '
            f'fill="{colour(value, cmap, vmin, vmax)}"/>'
        )
    parts.append(f'<text x="{left}" y="{top + 24}" font-size="11">{vmin:g}</text>')
    parts.append(f'<text x="{left + PANEL}" y="{top + 24}" font-size="11" text-anchor="end">{vmax:g}</text>')
    return parts


def _document(width: float, height: float, body: List[str], provenance: Optional[Dict]) -> str:
    metadata = ""
    if provenance:
        metadata = f"<metadata>{escape(json.dumps(provenance, sort_keys=True))}</metadata>"
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{height:.0f}" '
        f'viewBox="0 0 {width:.0f} {height:.0f}">'
        f"{metadata}"
        f'<rect width="100%" height="100%" fill="#ffffff"/>'
        + "".join(body)
        + "</svg>\n"
    )


def render_choropleth(
    polygons: PolygonSet,
    estimate: Sequence[float],
    crude: Sequence[float],
    path: Union[str, Path],
    title: str,
    truth: Optional[Sequence[float]] = None,
    provenance: Optional[Dict] = None,
) -> Path:
    """Posterior-mean panel, crude-estimate panel and, with ``truth``, a residual panel."""
    for name, values in (("estimate", estimate), ("crude", crude)):
        if len(values) != polygons.K:
            raise DimensionMismatch(f"{name} has {len(values)} values for {polygons.K} polygons.")

    body = [f'<text x="{MARGIN}" y="14" font-size="15" font-weight="bold">{escape(title)}</text>']
    body += _panel(polygons, estimate, MARGIN, "posterior mean prevalence")
    body += _panel(polygons, crude, 2 * MARGIN + PANEL, "crude n_pos / n_tests")
    panels = 2

    if truth is not None:
        if len(truth) != polygons.K:
            raise DimensionMismatch(f"truth has {len(truth)} values for {polygons.K} polygons.")
        residual = np.asarray(estimate, dtype=float) - np.asarray(truth, dtype=float)
        bound = max(float(np.nanmax(np.abs(residual))), 1e-6)
        left = 3 * MARGIN + 2 * PANEL
        body += _panel(polygons, residual, left, "estimate - truth", "RdBu_r", -bound, bound)
        body += _legend(left, 2 * MARGIN + LEGEND + PANEL, "RdBu_r", -bound, bound)
        panels = 3

    body += _legend(MARGIN, 2 * MARGIN + LEGEND + PANEL, "viridis", 0.0, 1.0)
    width = panels * (PANEL + MARGIN) + MARGIN
    height = PANEL + LEGEND + 3 * MARGIN + 30

    path = Path(path)
    path.write_text(_document(width, height, body, provenance), encoding="utf-8")
    logger.debug("Wrote %s", path)
    return path


def write_scatter(frame: pd.DataFrame, path: Union[str, Path], provenance: Optional[Dict] = None) -> Path:
    """Estimate-versus-crude table, one row per unit of both eras."""
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for key, value in sorted((provenance or {}).items()):
            fh.write(f"# {key} = {value}\n")
        frame.to_csv(fh, index=False)
    return path


def render_trace(
    chains: ChainSet, names: Sequence[str], path: Union[str, Path], provenance: Optional[Dict] = None
) -> Path:
    """One panel per scalar parameter with a polyline per chain."""
    palette = [to_hex(colormaps["tab10"](i % 10)) for i in range(chains.chains)]
    height = 120
    width = PANEL * 2
    body = []
    for row, name in enumerate(names):
        ary = chains.column(name)
        top = MARGIN + row * (height + MARGIN)
        low, high = float(ary.min()), float(ary.max())
        span = high - low or 1.0
        body.append(f'<text x="{MARGIN}" y="{top - 6}" font-size="12">{escape(name)}</text>')
        body.append(
            f'<rect x="{MARGIN}" y="{top}" width="{width}" height="{height}" fill="none" stroke="#999999"/>'
        )
        xs = MARGIN + np.linspace(0.0, width, ary.shape[1])
        for c in range(chains.chains):
            ys = top + height - (ary[c] - low) / span * height
            points = " ".join(f"{x:.1f},{y:.1f}" for x, y in zip(xs, ys))
            body.append(
                f'<polyline fill="none" stroke="{palette[c]}" stroke-width="0.7" stroke-opacity="0.8" points="{points}"/>'
            )

    path = Path(path)
    total_height = MARGIN + len(names) * (height + MARGIN)
    path.write_text(_document(width + 2 * MARGIN, total_height, body, provenance), encoding="utf-8")
    return path
