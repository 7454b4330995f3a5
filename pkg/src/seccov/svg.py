"""Static SVG snapshots of a coverage state.

Hand-rolled writer so output is byte-stable: fixed float formatting, fixed
element order, no timestamps.
"""

import numpy as np

from .conformal import MappingAtlas
from .coverage import DensityField, PartitionState
from .mesh import TriMesh

_FMT = "%.6f"
_PALETTE_LOW = np.array([247, 251, 255], dtype=float)
_PALETTE_HIGH = np.array([8, 48, 107], dtype=float)


def _f(x: float) -> str:
    s = _FMT % x
    return "0.000000" if s == "-0.000000" else s


def _face_color(frac: float) -> str:
    rgb = _PALETTE_LOW + frac * (_PALETTE_HIGH - _PALETTE_LOW)
    return "#%02x%02x%02x" % tuple(int(round(c)) for c in rgb)


def _bar_polyline(atlas: MappingAtlas, psi: float, space: str,
                  samples: int = 24) -> np.ndarray:
    """The partition bar at angle psi: a radial segment on the chart, its
    preimage when drawn in the original region."""
    direction = np.array([np.cos(psi), np.sin(psi)])
    lo = (atlas.R - atlas.r) * direction
    hi = (atlas.R + atlas.r) * direction
    if space == "chart":
        t = np.linspace(0, 1, samples)
        return lo + t[:, None] * (hi - lo)
    # clip the ray to the polygonal chart so every sample has a preimage
    from shapely.geometry import LineString
    seg = atlas.chart_mesh.domain_polygon().intersection(
        LineString([0.5 * lo, 1.5 * hi]))
    if seg.geom_type == "MultiLineString":
        seg = max(seg.geoms, key=lambda g: g.length)
    eps = 1e-6 * seg.length
    t = np.linspace(eps, seg.length - eps, samples)
    pts = np.array([[seg.interpolate(s).x, seg.interpolate(s).y] for s in t])
    return atlas.inverse(pts)


def emit_svg(state: PartitionState | None, atlas: MappingAtlas, path,
             density: DensityField | None = None, space: str = "chart",
             centroids: np.ndarray | None = None, size: int = 640):
    """Write one snapshot: mesh with optional density shading, one polyline
    per partition bar, one marker per agent, optional centroid markers.

    A None state gives a mesh-only picture.  space selects the annulus
    chart or the original region; agent markers use the matching
    coordinates and bars are mapped through the inverse chart map.
    """
    if space not in ("chart", "original"):
        raise ValueError(f"space must be 'chart' or 'original', not {space!r}")
    mesh = atlas.chart_mesh if space == "chart" else atlas.source
    v = mesh.vertices
    lo = v.min(axis=0)
    hi = v.max(axis=0)
    span = float(max(hi - lo))
    pad = 0.04 * span
    scale = size / (span + 2 * pad)

    def xy(p):
        # flip y so the picture is not mirrored
        return ((p[0] - lo[0] + pad) * scale,
                (hi[1] - p[1] + pad) * scale)

    parts = []
    parts.append('<?xml version="1.0" encoding="UTF-8"?>')
    parts.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" '
        f'height="{size}" viewBox="0 0 {size} {size}">')
    parts.append(f'<rect width="{size}" height="{size}" fill="#ffffff"/>')

    if density is not None:
        fv = density.face_values()
        lo_v, hi_v = float(fv.min()), float(fv.max())
        rng = hi_v - lo_v if hi_v > lo_v else 1.0
    parts.append('<g stroke="#b0b0b0" stroke-width="0.5">')
    for fi, face in enumerate(mesh.faces):
        pts = " ".join("%s,%s" % tuple(map(_f, xy(v[j]))) for j in face)
        if density is not None:
            fill = _face_color((fv[fi] - lo_v) / rng)
        else:
            fill = "#eeeeee"
        parts.append(f'<polygon points="{pts}" fill="{fill}"/>')
    parts.append("</g>")

    if state is not None and state.n > 0:
        agents = state.agents_xi if space == "chart" else state.agents_orig
        parts.append('<g class="bars" stroke="#1f4fd8" stroke-width="2.5" '
                     'fill="none">')
        for psi in state.psi:
            line = _bar_polyline(atlas, float(psi), space)
            pts = " ".join("%s,%s" % tuple(map(_f, xy(p))) for p in line)
            parts.append(f'<polyline points="{pts}"/>')
        parts.append("</g>")
        parts.append('<g class="agents" fill="#d62728" stroke="#000000" '
                     'stroke-width="0.8">')
        for p in agents:
            x, y = xy(p)
            parts.append(f'<circle cx="{_f(x)}" cy="{_f(y)}" r="5"/>')
        parts.append("</g>")
    if centroids is not None and len(centroids):
        parts.append('<g class="centroids" fill="none" stroke="#2ca02c" '
                     'stroke-width="1.6">')
        for p in np.atleast_2d(centroids):
            x, y = xy(p)
            parts.append(f'<circle cx="{_f(x)}" cy="{_f(y)}" r="4"/>')
        parts.append("</g>")
    parts.append("</svg>")
    data = "\n".join(parts) + "\n"
    with open(path, "w") as fh:
        fh.write(data)
    return data
