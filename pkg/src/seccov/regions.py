"""Built-in region generators: meshed planar domains with one hole.

Three parametric families: a perfect annulus, a square with a square hole,
and a wobbly blob with a serpentine hole.  Each returns a TriMesh whose
boundary loops are tagged outer-first.
"""

import numpy as np
from shapely.geometry import LineString, Point, Polygon

from .mesh import GeometryError, TriMesh, build_delaunay


def _resample_closed(coords: np.ndarray, spacing: float) -> np.ndarray:
    """Resample a closed polyline to roughly uniform arc-length spacing."""
    coords = np.asarray(coords, dtype=float)
    closed = np.vstack([coords, coords[:1]])
    seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    total = float(np.sum(seg))
    n = max(8, int(round(total / spacing)))
    s = np.concatenate([[0.0], np.cumsum(seg)])
    t = np.linspace(0.0, total, n, endpoint=False)
    out = np.column_stack([np.interp(t, s, closed[:, 0]),
                           np.interp(t, s, closed[:, 1])])
    return out


def _interior_fill(poly: Polygon, spacing: float, margin: float) -> np.ndarray:
    """Staggered grid of points inside the polygon, away from its boundary."""
    minx, miny, maxx, maxy = poly.bounds
    rows = []
    y = miny + spacing / 2
    row = 0
    boundary = poly.boundary
    while y < maxy:
        x0 = minx + spacing / 2 + (spacing / 2 if row % 2 else 0.0)
        xs = np.arange(x0, maxx, spacing)
        for x in xs:
            pt = Point(x, y)
            if poly.contains(pt) and boundary.distance(pt) > margin:
                rows.append((x, y))
        y += spacing * np.sqrt(3) / 2
        row += 1
    return np.asarray(rows, dtype=float).reshape(-1, 2)


def _assemble(outer: np.ndarray, inner: np.ndarray,
              interior: np.ndarray) -> TriMesh:
    n_out, n_in = len(outer), len(inner)
    for _ in range(4):
        points = np.vstack([outer, inner, interior]) if len(interior) else \
            np.vstack([outer, inner])
        mesh = build_delaunay(points, np.arange(n_out),
                              np.arange(n_out, n_out + n_in))
        # a face with all three corners on one boundary loop flattens to a
        # segment under any boundary-following parameterization; split it
        on_outer = mesh.faces < n_out
        on_inner = (mesh.faces >= n_out) & (mesh.faces < n_out + n_in)
        ears = np.where(on_outer.all(axis=1) | on_inner.all(axis=1))[0]
        if len(ears) == 0:
            return mesh
        cents = mesh.vertices[mesh.faces[ears]].mean(axis=1)
        interior = np.vstack([interior, cents]) if len(interior) else cents
    raise GeometryError("could not remove boundary-only faces; refine the "
                        "boundary sampling")


def _circle(radius: float, n: int, phase: float = 0.0) -> np.ndarray:
    t = np.linspace(0, 2 * np.pi, n, endpoint=False) + phase
    return np.column_stack([radius * np.cos(t), radius * np.sin(t)])


def annulus_region(outer_radius: float = 1.0, inner_radius: float = 0.5,
                   target_edge: float = 0.07,
                   ring_count: int | None = None) -> TriMesh:
    """Concentric-ring annulus mesh.

    ring_count forces every ring to the same vertex count with no phase
    offset, which makes the mesh rotationally structured (useful when an
    exactly symmetric workload profile is wanted).
    """
    if not 0 < inner_radius < outer_radius:
        raise GeometryError("need 0 < inner_radius < outer_radius")
    n_rings = max(3, int(round((outer_radius - inner_radius) / target_edge)) + 1)
    radii = np.linspace(inner_radius, outer_radius, n_rings)
    rings = []
    for i, r in enumerate(radii):
        if ring_count is not None:
            n, phase = ring_count, 0.0
        else:
            n = max(8, int(round(2 * np.pi * r / target_edge)))
            phase = 0.31 * i
        rings.append(_circle(r, n, phase))
    outer = rings[-1]
    inner = rings[0]
    interior = np.vstack(rings[1:-1]) if n_rings > 2 else np.empty((0, 2))
    return _assemble(outer, inner, interior)


def square_region(half_width: float = 1.0, hole_half_width: float = 0.4,
                  target_edge: float = 0.08) -> TriMesh:
    """Axis-aligned square with a centered square hole."""
    if not 0 < hole_half_width < half_width:
        raise GeometryError("need 0 < hole_half_width < half_width")

    def square_loop(h):
        corners = np.array([[h, h], [-h, h], [-h, -h], [h, -h]], dtype=float)
        return _resample_closed(corners, target_edge)

    outer = square_loop(half_width)
    inner = square_loop(hole_half_width)
    poly = Polygon(outer, [inner])
    interior = _interior_fill(poly, target_edge, 0.45 * target_edge)
    return _assemble(outer, inner, interior)


def blob_region(base_radius: float = 1.0, wobble: float = 0.15, waves: int = 3,
                hole_amplitude: float = 0.2, hole_width: float = 0.09,
                hole_span: float = 0.9,
                target_edge: float = 0.06) -> TriMesh:
    """Wobbly blob with a serpentine slot-shaped hole.

    The outer boundary is a radially perturbed circle; the hole is a
    sine-wave centerline thickened by hole_width.
    """
    t = np.linspace(0, 2 * np.pi, 720, endpoint=False)
    r = base_radius * (1 + wobble * np.cos(waves * t))
    outer = _resample_closed(np.column_stack([r * np.cos(t), r * np.sin(t)]),
                             target_edge)

    s = np.linspace(0, 1, 200)
    cx = hole_span * (s - 0.5) * base_radius
    cy = hole_amplitude * np.sin(3 * np.pi * s) * base_radius
    slot = LineString(np.column_stack([cx, cy])).buffer(
        hole_width * base_radius, quad_segs=16)
    inner = _resample_closed(np.asarray(slot.exterior.coords)[:-1], target_edge)

    poly = Polygon(outer, [inner])
    if not poly.is_valid or Polygon(inner).distance(
            LineString(np.vstack([outer, outer[:1]]))) < 2 * target_edge:
        raise GeometryError("hole too close to the outer boundary; shrink "
                            "hole_amplitude / hole_width or the wobble")
    interior = _interior_fill(poly, target_edge, 0.45 * target_edge)
    return _assemble(outer, inner, interior)


REGION_GENERATORS = {
    "annulus": annulus_region,
    "square_with_hole": square_region,
    "blob_with_slot": blob_region,
}


def make_region(name: str, params: dict | None = None) -> TriMesh:
    if name not in REGION_GENERATORS:
        raise GeometryError(f"unknown region generator '{name}'; "
                            f"choose from {sorted(REGION_GENERATORS)}")
    return REGION_GENERATORS[name](**(params or {}))
