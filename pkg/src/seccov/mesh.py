"""Triangulated planar regions with one hole: construction, queries, surgery.

A region is represented as an indexed triangle mesh (``TriMesh``) whose
boundary consists of an outer loop and, before slicing, one inner loop
around the hole.  Slicing along an edge path between the two loops turns
the annular mesh into a topological disk.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import shapely
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import Delaunay
from shapely.geometry import LineString, Polygon

# vertex tags
INTERIOR = 0
OUTER_BOUNDARY = 1
INNER_BOUNDARY = 2
CUT = 3

DEGENERATE_REL_AREA = 1e-12


class GeometryError(ValueError):
    """Degenerate or self-intersecting input geometry."""


class ContainmentError(ValueError):
    """Hole loop is not strictly inside the outer loop."""


class TopologyError(ValueError):
    """Operation would break the required mesh topology."""


class ConnectivityError(ValueError):
    """Mesh edge graph is not connected between the requested vertices."""


def signed_areas(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Signed area of every face (positive = counter-clockwise)."""
    p0 = vertices[faces[:, 0]]
    p1 = vertices[faces[:, 1]]
    p2 = vertices[faces[:, 2]]
    u = p1 - p0
    w = p2 - p0
    return 0.5 * (u[..., 0] * w[..., 1] - u[..., 1] * w[..., 0])


def count_flipped_faces(mesh: "TriMesh", images: np.ndarray) -> int:
    """Number of faces whose image under per-vertex ``images`` has signed area <= 0."""
    images = np.asarray(images, dtype=float)
    if images.shape[0] != len(mesh.vertices):
        raise ValueError("images length must equal vertex count")
    return int(np.count_nonzero(signed_areas(images, mesh.faces) <= 0.0))


def _edge_key(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a < b else (b, a)


@dataclass
class TriMesh:
    """Immutable triangle mesh of a planar region with 1 or 2 boundary loops.

    Attributes
    ----------
    vertices : (V, 2) float array
    faces : (F, 3) int array, counter-clockwise orientation
    boundary_loops : ordered vertex-id cycles, outer loop first
    vertex_tags : per-vertex tag in {INTERIOR, OUTER_BOUNDARY, INNER_BOUNDARY, CUT}
    cut_provenance : map new vertex id -> original id for vertices duplicated
        by slicing (empty before slicing)
    """

    vertices: np.ndarray
    faces: np.ndarray
    boundary_loops: list[list[int]]
    vertex_tags: np.ndarray
    cut_provenance: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64)
        self.vertex_tags = np.asarray(self.vertex_tags, dtype=np.int8)
        self._validate()
        self.vertices.setflags(write=False)
        self.faces.setflags(write=False)

    # -- invariants ---------------------------------------------------------

    def _validate(self):
        areas = signed_areas(self.vertices, self.faces)
        if len(areas) == 0:
            raise GeometryError("mesh has no faces")
        thresh = DEGENERATE_REL_AREA * float(np.mean(np.abs(areas)))
        bad = np.nonzero(areas <= thresh)[0]
        if bad.size:
            raise GeometryError(
                f"degenerate or flipped faces: {bad[:8].tolist()}"
            )
        counts = self.edge_face_count()
        if np.any(counts > 2):
            raise TopologyError("non-manifold edge (shared by >2 faces)")
        n_loops = len(self.boundary_loops)
        if n_loops not in (1, 2):
            raise TopologyError(f"expected 1 or 2 boundary loops, got {n_loops}")

    # -- connectivity queries -----------------------------------------------

    def edges(self) -> np.ndarray:
        """Unique undirected edges as an (E, 2) array, sorted pairs."""
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    def edge_face_count(self) -> np.ndarray:
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e.sort(axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return counts

    def directed_edge_to_face(self) -> dict[tuple[int, int], int]:
        """Map (a, b) -> face id for the face containing directed edge a->b."""
        out: dict[tuple[int, int], int] = {}
        for fi, (a, b, c) in enumerate(self.faces):
            out[(int(a), int(b))] = fi
            out[(int(b), int(c))] = fi
            out[(int(c), int(a))] = fi
        return out

    def vertex_faces(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(len(self.vertices))]
        for fi, tri in enumerate(self.faces):
            for v in tri:
                out[int(v)].append(fi)
        return out

    def face_adjacency(self) -> np.ndarray:
        """(F, 3) neighbor face ids across each edge (opposite vertex k), -1 on boundary."""
        d2f = self.directed_edge_to_face()
        adj = np.full((len(self.faces), 3), -1, dtype=np.int64)
        for fi, (a, b, c) in enumerate(self.faces):
            # edge opposite vertex 0 is (b, c) etc.; neighbor holds the reversed edge
            for k, (u, v) in enumerate(((b, c), (c, a), (a, b))):
                adj[fi, k] = d2f.get((int(v), int(u)), -1)
        return adj

    def boundary_edges(self) -> set[tuple[int, int]]:
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e.sort(axis=1)
        uniq, counts = np.unique(e, axis=0, return_counts=True)
        return {tuple(map(int, edge)) for edge in uniq[counts == 1]}

    def total_area(self) -> float:
        return float(np.sum(signed_areas(self.vertices, self.faces)))

    def euler_characteristic(self) -> int:
        return len(self.vertices) - len(self.edges()) + len(self.faces)

    def mean_edge_length(self) -> float:
        e = self.edges()
        return float(np.mean(np.linalg.norm(
            self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1)))

    def domain_polygon(self) -> Polygon:
        """Shapely polygon of the region (with hole if two loops)."""
        shell = self.vertices[self.boundary_loops[0]]
        holes = [self.vertices[lp] for lp in self.boundary_loops[1:]]
        return Polygon(shell, holes)

    # -- point location -----------------------------------------------------

    def barycentric(self, face_id: int, q: np.ndarray) -> np.ndarray:
        a, b, c = self.vertices[self.faces[face_id]]
        m = np.column_stack([b - a, c - a])
        uv = np.linalg.solve(m, np.asarray(q, dtype=float) - a)
        return np.array([1.0 - uv[0] - uv[1], uv[0], uv[1]])

    def locate_point(self, q, hint: int | None = None, tol: float = 1e-9):
        """Find the face containing ``q``.

        Returns ``(face_id, barycentric_triple)``, or ``(-1, None)`` when the
        point is outside.  Straight-walk from ``hint`` with a brute-force
        fallback.
        """
        q = np.asarray(q, dtype=float)
        if hint is not None:
            found = self._walk_locate(q, hint, tol)
            if found is not None:
                return found
        found = self._brute_locate(q, tol)
        return found if found is not None else (-1, None)

    def _walk_locate(self, q, start: int, tol: float, max_steps: int = 2000):
        adj = self._cached_adjacency()
        fi = start
        for _ in range(max_steps):
            bary = self.barycentric(fi, q)
            k = int(np.argmin(bary))
            if bary[k] >= -tol:
                return fi, np.clip(bary, 0.0, None) / np.sum(np.clip(bary, 0.0, None))
            nxt = adj[fi, k]
            if nxt < 0:
                return None  # walked off the mesh; caller falls back
            fi = nxt
        return None

    def _cached_adjacency(self) -> np.ndarray:
        if not hasattr(self, "_adj"):
            self._adj = self.face_adjacency()
        return self._adj

    def _brute_locate(self, q, tol: float):
        a = self.vertices[self.faces[:, 0]]
        b = self.vertices[self.faces[:, 1]]
        c = self.vertices[self.faces[:, 2]]
        d = q - a
        e1 = b - a
        e2 = c - a
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        u = (d[:, 0] * e2[:, 1] - d[:, 1] * e2[:, 0]) / det
        v = (e1[:, 0] * d[:, 1] - e1[:, 1] * d[:, 0]) / det
        w = 1.0 - u - v
        worst = np.minimum(np.minimum(u, v), w)
        fi = int(np.argmax(worst))
        if worst[fi] < -tol:
            return None
        bary = np.clip(np.array([w[fi], u[fi], v[fi]]), 0.0, None)
        return fi, bary / np.sum(bary)

    def point_from_barycentric(self, face_id: int, bary: np.ndarray) -> np.ndarray:
        tri = self.vertices[self.faces[face_id]]
        return np.asarray(bary, dtype=float) @ tri

    # -- file I/O ------------------------------------------------------------

    def save(self, off_path, sidecar_path=None):
        """Write OFF-style text plus a JSON sidecar with the boundary loops."""
        lines = ["OFF", f"{len(self.vertices)} {len(self.faces)} 0"]
        for x, y in self.vertices:
            lines.append(f"{float(x)!r} {float(y)!r} 0.0")
        for a, b, c in self.faces:
            lines.append(f"3 {a} {b} {c}")
        off_path = str(off_path)
        with open(off_path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
        side = sidecar_path or off_path + ".json"
        meta = {
            "boundary_loops": [list(map(int, lp)) for lp in self.boundary_loops],
            "vertex_tags": self.vertex_tags.tolist(),
            "cut_provenance": {str(k): int(v) for k, v in self.cut_provenance.items()},
        }
        with open(side, "w") as fh:
            json.dump(meta, fh)

    @classmethod
    def load(cls, off_path, sidecar_path=None) -> "TriMesh":
        off_path = str(off_path)
        with open(off_path) as fh:
            tokens = fh.read().split()
        if tokens[0] != "OFF":
            raise ValueError("not an OFF file")
        nv, nf = int(tokens[1]), int(tokens[2])
        body = tokens[4:]
        verts = np.array(body[: 3 * nv], dtype=float).reshape(nv, 3)[:, :2]
        rest = body[3 * nv:]
        faces = np.array(rest[: 4 * nf], dtype=np.int64).reshape(nf, 4)[:, 1:]
        with open(sidecar_path or off_path + ".json") as fh:
            meta = json.load(fh)
        mesh = cls(verts, faces, meta["boundary_loops"],
                   np.array(meta["vertex_tags"], dtype=np.int8))
        mesh.cut_provenance = {int(k): v for k, v in
                               meta.get("cut_provenance", {}).items()}
        return mesh


@dataclass(frozen=True)
class CutPath:
    """Edge path from an inner-boundary vertex to an outer-boundary vertex."""

    vertex_ids: tuple[int, ...]

    def __post_init__(self):
        if len(set(self.vertex_ids)) != len(self.vertex_ids):
            raise TopologyError("cut path repeats a vertex")


# -- construction -------------------------------------------------------------


def _loop_polygon(points: np.ndarray, loop) -> Polygon:
    poly = Polygon(points[list(loop)])
    if not poly.is_valid or poly.area <= 0:
        raise GeometryError("boundary loop is self-intersecting or degenerate")
    return poly


def build_delaunay(points, outer_loop, inner_loop=None) -> TriMesh:
    """Constrained Delaunay triangulation of a point set with loop constraints.

    ``outer_loop`` / ``inner_loop`` are index cycles into ``points``.  Loop
    edges are forced into the triangulation; faces inside the hole or outside
    the outer loop are dropped.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != 2:
        raise GeometryError("points must be an (N, 2) array")
    outer_loop = [int(i) for i in outer_loop]
    if len(outer_loop) < 3:
        raise GeometryError("outer loop needs at least 3 points")
    outer_poly = _loop_polygon(points, outer_loop)
    hole_poly = None
    if inner_loop is not None:
        inner_loop = [int(i) for i in inner_loop]
        if len(inner_loop) < 3:
            raise GeometryError("inner loop needs at least 3 points")
        hole_poly = _loop_polygon(points, inner_loop)
        if not outer_poly.contains(hole_poly):
            raise ContainmentError("hole is not strictly inside the outer loop")
        domain = Polygon(points[outer_loop], [points[inner_loop]])
    else:
        domain = outer_poly

    try:
        tri = Delaunay(points)
    except Exception as exc:  # qhull rejects degenerate inputs
        raise GeometryError(f"Delaunay triangulation failed: {exc}") from exc
    if len(np.unique(tri.simplices)) < len(points):
        raise GeometryError("collinear/duplicate input points dropped by Delaunay")
    faces = tri.simplices.astype(np.int64)
    # orient CCW
    flip = signed_areas(points, faces) < 0
    faces[flip] = faces[flip][:, ::-1]

    segments = _loop_segments(outer_loop)
    if inner_loop is not None:
        segments += _loop_segments(inner_loop)
    faces = _recover_segments(points, faces, segments)

    # drop faces outside the domain (hole interior, concave pockets)
    cen = points[faces].mean(axis=1)
    keep = shapely.contains_xy(domain, cen[:, 0], cen[:, 1])
    faces = faces[keep]
    if len(faces) == 0:
        raise GeometryError("no faces remain inside the domain")

    used = np.unique(faces)
    if len(used) < len(points):
        # renumber, dropping unused points (e.g. hole interior samples)
        remap = -np.ones(len(points), dtype=np.int64)
        remap[used] = np.arange(len(used))
        points = points[used]
        faces = remap[faces]
        outer_loop = [int(remap[i]) for i in outer_loop]
        if inner_loop is not None:
            inner_loop = [int(remap[i]) for i in inner_loop]

    loops = _trace_boundary_loops(points, faces)
    expected = 2 if inner_loop is not None else 1
    if len(loops) != expected:
        raise TopologyError(
            f"expected {expected} boundary loops, traced {len(loops)}")

    tags = np.full(len(points), INTERIOR, dtype=np.int8)
    tags[outer_loop] = OUTER_BOUNDARY
    if inner_loop is not None:
        tags[inner_loop] = INNER_BOUNDARY
    return TriMesh(points, faces, loops, tags)


def _loop_segments(loop) -> list[tuple[int, int]]:
    return [(loop[i], loop[(i + 1) % len(loop)]) for i in range(len(loop))]


def _recover_segments(points, faces, segments):
    """Force constraint segments into the triangulation by cavity re-triangulation."""
    for a, b in segments:
        faces = _recover_one(points, faces, int(a), int(b))
    return faces


def _recover_one(points, faces, a, b):
    present = {(min(u, v), max(u, v))
               for tri in faces for u, v in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0]))}
    if (min(a, b), max(a, b)) in present:
        return faces
    seg = LineString([points[a], points[b]])
    tol = 1e-12 * seg.length
    crossed = []
    for fi, tri in enumerate(faces):
        poly = Polygon(points[tri])
        inter_len = poly.intersection(seg).length
        along_edges = poly.exterior.intersection(seg).length
        if inter_len - along_edges > tol:  # segment passes through the interior
            crossed.append(fi)
    if not crossed:
        raise GeometryError(f"cannot recover constraint edge ({a}, {b})")
    cavity = shapely.unary_union([Polygon(points[faces[fi]]) for fi in crossed])
    if cavity.geom_type != "Polygon":
        raise GeometryError(f"constraint edge ({a}, {b}) crosses a disconnected cavity")
    new_tris = _retriangulate_cavity(points, cavity, a, b)
    keep = np.ones(len(faces), dtype=bool)
    keep[crossed] = False
    return np.vstack([faces[keep], new_tris]) if len(new_tris) else faces[keep]


def _retriangulate_cavity(points, cavity, a, b):
    """CDT of the cavity polygon; all cavity corners are existing mesh points."""
    pieces = shapely.get_parts(shapely.constrained_delaunay_triangles(cavity))
    out = []
    for piece in pieces:
        coords = np.asarray(piece.exterior.coords)[:3]
        ids = [_nearest_point_id(points, c) for c in coords]
        tri = np.array(ids, dtype=np.int64)
        u = points[tri[1]] - points[tri[0]]
        w = points[tri[2]] - points[tri[0]]
        if u[0] * w[1] - u[1] * w[0] < 0:
            tri = tri[::-1]
        out.append(tri)
    tris = np.array(out, dtype=np.int64)
    edges = {(min(u, v), max(u, v))
             for t in tris for u, v in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0]))}
    if (min(a, b), max(a, b)) not in edges:
        raise GeometryError(f"cavity re-triangulation missed edge ({a}, {b})")
    return tris


def _nearest_point_id(points, coord) -> int:
    d = np.linalg.norm(points - np.asarray(coord), axis=1)
    i = int(np.argmin(d))
    if d[i] > 1e-9 * (1.0 + np.abs(points).max()):
        raise GeometryError("cavity corner is not an existing mesh point")
    return i


def _trace_boundary_loops(points, faces) -> list[list[int]]:
    f = faces
    e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    keys = np.sort(e, axis=1)
    uniq, inv, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    boundary_directed = e[counts[inv] == 1]
    nxt = {int(u): int(v) for u, v in boundary_directed}
    loops = []
    seen = set()
    for start in sorted(nxt):
        if start in seen:
            continue
        loop = [start]
        seen.add(start)
        cur = nxt[start]
        while cur != start:
            loop.append(cur)
            seen.add(cur)
            cur = nxt[cur]
        loops.append(loop)
    # outer loop first: largest absolute polygon area
    loops.sort(key=lambda lp: -abs(Polygon(points[lp]).area))
    return loops


# -- cut-path surgery ----------------------------------------------------------


def shortest_edge_path(mesh: TriMesh, start: int, goal: int) -> CutPath:
    """Shortest (Euclidean edge-length) path from inner to outer boundary."""
    if mesh.vertex_tags[start] != INNER_BOUNDARY:
        raise ValueError("start vertex must lie on the inner boundary")
    if mesh.vertex_tags[goal] != OUTER_BOUNDARY:
        raise ValueError("goal vertex must lie on the outer boundary")
    e = mesh.edges()
    w = np.linalg.norm(mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]], axis=1)
    n = len(mesh.vertices)
    g = coo_matrix((np.concatenate([w, w]),
                    (np.concatenate([e[:, 0], e[:, 1]]),
                     np.concatenate([e[:, 1], e[:, 0]]))), shape=(n, n)).tocsr()
    dist, pred = dijkstra(g, indices=start, return_predecessors=True)
    if not np.isfinite(dist[goal]):
        raise ConnectivityError("no edge path between the requested vertices")
    path = [goal]
    while path[-1] != start:
        path.append(int(pred[path[-1]]))
    return CutPath(tuple(reversed(path)))


def path_cost(mesh: TriMesh, path: CutPath) -> float:
    ids = np.array(path.vertex_ids)
    return float(np.sum(np.linalg.norm(
        mesh.vertices[ids[1:]] - mesh.vertices[ids[:-1]], axis=1)))


def slice_along_path(mesh: TriMesh, path: CutPath) -> TriMesh:
    """Duplicate the path vertices and open the mesh into a topological disk.

    Faces on the left of the directed path (inner -> outer) are re-attached to
    the duplicates.  The result has a single boundary loop and records the
    duplicate -> original map in ``cut_provenance``.
    """
    ids = list(path.vertex_ids)
    if len(mesh.boundary_loops) != 2:
        raise TopologyError("mesh has no inner loop to slice open")
    if mesh.vertex_tags[ids[0]] != INNER_BOUNDARY or mesh.vertex_tags[ids[-1]] != OUTER_BOUNDARY:
        raise TopologyError("cut path must run from inner to outer boundary")
    edges = {(_edge_key(a, b)) for a, b in zip(ids[:-1], ids[1:])}
    mesh_edges = {tuple(map(int, e)) for e in mesh.edges()}
    if not edges <= mesh_edges:
        raise TopologyError("cut path does not follow mesh edges")

    d2f = mesh.directed_edge_to_face()
    left_faces: set[int] = set()
    path_set = set(ids)
    for i, v in enumerate(ids):
        nxt_v = ids[i + 1] if i + 1 < len(ids) else None
        prv_v = ids[i - 1] if i > 0 else None
        left_faces |= _left_fan(mesh, d2f, v, prv_v, nxt_v)

    new_vertices = list(mesh.vertices)
    new_faces = mesh.faces.copy()
    tags = list(mesh.vertex_tags)
    prov = dict(mesh.cut_provenance)
    dup_of: dict[int, int] = {}
    for v in ids:
        new_id = len(new_vertices)
        new_vertices.append(mesh.vertices[v].copy())
        tags.append(CUT)
        prov[new_id] = int(v)
        dup_of[v] = new_id
    for fi in left_faces:
        for k in range(3):
            v = int(new_faces[fi, k])
            if v in dup_of:
                new_faces[fi, k] = dup_of[v]

    new_vertices = np.array(new_vertices)
    loops = _trace_boundary_loops(new_vertices, new_faces)
    if len(loops) != 1:
        raise TopologyError(f"slice produced {len(loops)} boundary loops")
    out = TriMesh(new_vertices, new_faces, loops, np.array(tags, dtype=np.int8),
                  cut_provenance=prov)
    if out.euler_characteristic() != 1:
        raise TopologyError("sliced mesh is not a topological disk")
    # rectangle corners for the conformal stage: (v1, v2, v1', v2') with the
    # duplicate copy first so the CCW boundary loop runs v1 -> v2 along y = 0
    out.corners = (dup_of[ids[0]], dup_of[ids[-1]], ids[0], ids[-1])
    return out


def _fan_corners(mesh: TriMesh, fi: int, v: int) -> tuple[int, int]:
    """For CCW face ``fi`` at vertex ``v`` return (w, u): the face spans the
    angular sector from direction v->w counter-clockwise to direction v->u."""
    tri = [int(x) for x in mesh.faces[fi]]
    k = tri.index(v)
    return tri[(k + 1) % 3], tri[(k + 2) % 3]


def _left_fan(mesh: TriMesh, d2f, v, prv, nxt) -> set[int]:
    """Faces incident to path vertex ``v`` strictly on the left of the
    directed path (prv -> v -> nxt, inner boundary toward outer)."""
    fan: set[int] = set()
    if nxt is not None:
        # sweep CCW from the edge v->nxt; at an interior path vertex stop
        # once the sector reaches the edge v->prv, at the inner endpoint
        # continue until the boundary interrupts the walk
        fi = d2f.get((v, nxt))
        guard = 0
        while fi is not None:
            fan.add(fi)
            _, u = _fan_corners(mesh, fi, v)
            if prv is not None and u == prv:
                break
            fi = d2f.get((v, u))
            guard += 1
            if guard > len(mesh.faces):
                raise TopologyError("fan walk did not terminate")
    else:
        # outer endpoint: sweep clockwise from the face left of prv->v
        # until the boundary interrupts the walk
        fi = d2f.get((prv, v))
        guard = 0
        while fi is not None:
            fan.add(fi)
            w, _ = _fan_corners(mesh, fi, v)
            fi = d2f.get((w, v))
            guard += 1
            if guard > len(mesh.faces):
                raise TopologyError("fan walk did not terminate")
    return fan
