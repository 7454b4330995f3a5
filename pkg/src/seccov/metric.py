"""Riemannian metric on the circular annulus, its pullback, and graph
geodesics on triangle meshes.

The annulus metric in (theta, phi) chart coordinates is
diag((R + r cos phi)^2, r^2 sin^2 phi).  Expressed in the Cartesian
coordinates of the annulus this tensor is exactly the identity: with
rho = R + r cos phi the chart is theta = atan2(y, x), rho = |q|, and
eta_11 dtheta^2 + eta_22 dphi^2 = rho^2 dtheta^2 + drho^2 = dx^2 + dy^2.
Geodesics under it are therefore Euclidean shortest paths that avoid the
hole, and the pullback to the original region is J^T J of the chart map.

Graph distances are exact metrics by construction: all virtual attachment
segments terminate in per-face candidate cliques whose internal edges are
straight segments inside the domain, so every concatenation argument needed
for the triangle inequality goes through path by path.
"""

from dataclasses import dataclass, field
import threading

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra
import shapely
from shapely.geometry import LineString, Polygon

from .mesh import TriMesh, ConnectivityError
from .conformal import MappingAtlas, DomainError


class MetricError(ValueError):
    """Undefined direction or degenerate metric query."""


# -- tensor evaluations ---------------------------------------------------------


def torus_metric(phi: float, R: float, r: float) -> np.ndarray:
    """Annulus metric tensor in (theta, phi) chart coordinates."""
    return np.array([[(R + r * np.cos(phi)) ** 2, 0.0],
                     [0.0, r ** 2 * np.sin(phi) ** 2]])


def annulus_to_torus(q: np.ndarray, R: float, r: float) -> np.ndarray:
    """Cartesian annulus point(s) -> (theta, phi) chart coordinates."""
    q = np.asarray(q, dtype=float)
    single = q.ndim == 1
    pts = q[None, :] if single else q
    theta = np.arctan2(pts[:, 1], pts[:, 0]) % (2 * np.pi)
    rho = np.linalg.norm(pts, axis=1)
    phi = np.arccos(np.clip((rho - R) / r, -1.0, 1.0))
    out = np.column_stack([theta, phi])
    return out[0] if single else out


def torus_to_annulus(tp: np.ndarray, R: float, r: float) -> np.ndarray:
    """(theta, phi) chart coordinates -> Cartesian annulus point(s)."""
    tp = np.asarray(tp, dtype=float)
    single = tp.ndim == 1
    pts = tp[None, :] if single else tp
    rho = R + r * np.cos(pts[:, 1])
    out = np.column_stack([rho * np.cos(pts[:, 0]), rho * np.sin(pts[:, 0])])
    return out[0] if single else out


@dataclass(frozen=True)
class MetricField:
    """Evaluator of the annulus metric, parameterized by the tube radii."""

    R: float
    r: float

    def chart_tensor(self, phi: float) -> np.ndarray:
        return torus_metric(phi, self.R, self.r)

    def cartesian_tensor(self, q=None) -> np.ndarray:
        # identity by the change-of-variables identity in the module docstring
        return np.eye(2)


def pullback_metric(atlas: MappingAtlas, q: np.ndarray) -> np.ndarray:
    """Metric tensor induced on the original region at q: J^T J of the
    region -> annulus map, symmetric positive definite away from folds."""
    q = np.asarray(q, dtype=float)
    fi, _ = atlas.source.locate_point(q)
    if fi < 0:
        raise DomainError(f"point {q} outside the mapped region")
    J = atlas.jacobians[fi]
    g = J.T @ J
    return 0.5 * (g + g.T)


def atlas_metric_fn(atlas: MappingAtlas):
    """Per-point metric evaluator on the original region for graph builds.

    Uses the face located at the query point; constant per face, matching
    the piecewise-affine chart map.
    """
    def fn(q):
        return pullback_metric(atlas, q)
    return fn


# -- geodesic graph -------------------------------------------------------------


def _metric_seg_length(metric_fn, a, b):
    d = b - a
    if metric_fn is None:
        return float(np.linalg.norm(d))
    M = metric_fn(0.5 * (a + b))
    return float(np.sqrt(max(d @ M @ d, 0.0)))


class GeodesicGraph:
    """Shortest-path distances on a mesh under a (possibly pulled-back) metric.

    Edge weights are metric lengths (midpoint rule).  Each face carries a
    clique of candidate vertices reachable by straight in-domain segments;
    arbitrary points attach to their face's candidates by virtual segments.
    Distances are symmetric and satisfy the triangle inequality up to float
    rounding when the metric is constant (the annulus case).
    """

    def __init__(self, mesh: TriMesh, metric_fn=None, eps_w_scale: float = 1e-9):
        self.mesh = mesh
        self.metric_fn = metric_fn
        self.eps_w = eps_w_scale * mesh.mean_edge_length()
        self._rows: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        # prepared-geometry predicates are not safe under concurrent calls
        self._vis_lock = threading.Lock()
        self._build()

    # -- construction ----------------------------------------------------------

    def _build(self):
        mesh = self.mesh
        v = mesh.vertices
        poly = mesh.domain_polygon()
        convex = poly.equals(poly.convex_hull)
        if not convex:
            shapely.prepare(poly)
        self._poly = poly
        self._convex = convex

        def segment_inside(a_id, b_id):
            if convex:
                return True
            return poly.covers(LineString([v[a_id], v[b_id]]))

        def hull_inside(face, cand):
            if convex:
                return True
            hull = Polygon(v[list(mesh.faces[face]) + [cand]]).convex_hull
            return poly.covers(hull)

        vfaces = mesh.vertex_faces()
        seg_cache: dict[tuple[int, int], bool] = {}

        def visible(a_id, b_id):
            key = (a_id, b_id) if a_id < b_id else (b_id, a_id)
            if key not in seg_cache:
                seg_cache[key] = segment_inside(a_id, b_id)
            return seg_cache[key]

        self.face_candidates: list[np.ndarray] = []
        extra_edges: set[tuple[int, int]] = set()
        for fi, tri in enumerate(mesh.faces):
            corners = [int(x) for x in tri]
            # two-ring neighborhood of the face
            ring = set()
            for c in corners:
                for fj in vfaces[c]:
                    ring.update(int(x) for x in mesh.faces[fj])
            second = set()
            for u in ring:
                for fj in vfaces[u]:
                    second.update(int(x) for x in mesh.faces[fj])
            pool = sorted((ring | second) - set(corners))
            kept = list(corners)
            for cand in pool:
                if not hull_inside(fi, cand):
                    continue
                if all(visible(cand, k) for k in kept):
                    kept.append(cand)
            self.face_candidates.append(np.array(kept, dtype=int))
            for a in range(len(kept)):
                for b in range(a + 1, len(kept)):
                    key = (min(kept[a], kept[b]), max(kept[a], kept[b]))
                    extra_edges.add(key)

        base = {(int(a), int(b)) for a, b in mesh.edges()}
        all_edges = np.array(sorted(base | extra_edges))
        w = np.array([_metric_seg_length(self.metric_fn, v[a], v[b])
                      for a, b in all_edges])
        w = np.maximum(w, self.eps_w)
        n = len(v)
        self._adj = sp.coo_matrix(
            (np.concatenate([w, w]),
             (np.concatenate([all_edges[:, 0], all_edges[:, 1]]),
              np.concatenate([all_edges[:, 1], all_edges[:, 0]]))),
            shape=(n, n)).tocsr()
        self.n_vertices = n

    # -- cached per-source shortest paths --------------------------------------

    def row(self, source: int):
        """(distances, predecessors) of the shortest-path tree from a vertex."""
        if source not in self._rows:
            dist, pred = dijkstra(self._adj, indices=source,
                                  return_predecessors=True)
            if not np.all(np.isfinite(dist)):
                raise ConnectivityError(f"graph disconnected from vertex {source}")
            self._rows[source] = (dist, pred)
        return self._rows[source]

    def vertex_distance(self, i: int, j: int) -> float:
        return float(self.row(i)[0][j])

    # -- point attachment ------------------------------------------------------

    def _attach(self, p, hint=None):
        p = np.asarray(p, dtype=float)
        fi, _ = self.mesh.locate_point(p, hint=hint)
        if fi < 0:
            raise DomainError(f"point {p} outside the mesh")
        cand = self.face_candidates[fi]
        segs = np.array([_metric_seg_length(self.metric_fn, p,
                                            self.mesh.vertices[c])
                         for c in cand])
        segs = np.maximum(segs, 0.0)
        return fi, cand, segs

    def _resolve(self, p):
        """Accept a vertex id or a coordinate point."""
        if np.isscalar(p) or (isinstance(p, np.ndarray) and p.ndim == 0):
            return int(p), None
        return None, np.asarray(p, dtype=float)

    def distance(self, p, q) -> float:
        return self.distance_with_leg(p, q)[0]

    def distance_with_leg(self, p, q):
        """Distance plus the last-leg direction vector into q (unnormalized).

        Vertex ids and coordinate points are both accepted.
        """
        pi, pp = self._resolve(p)
        qi, qq = self._resolve(q)
        v = self.mesh.vertices
        if pi is not None and qi is not None:
            dist, pred = self.row(pi)
            d = float(dist[qi])
            prev = pred[qi]
            leg = v[qi] - v[prev] if prev >= 0 else np.zeros(2)
            return d, leg
        if pi is not None:
            pp = v[pi]
            fa, ca, sa = self._attach(pp)
            sa = np.where(ca == pi, 0.0, sa)
        else:
            fa, ca, sa = self._attach(pp)
        if qi is not None:
            qq = v[qi]
            fb, cb, sb = self._attach(qq)
            sb = np.where(cb == qi, 0.0, sb)
        else:
            fb, cb, sb = self._attach(qq)

        best = np.inf
        best_leg = np.zeros(2)
        for a, ca_cost in zip(ca, sa):
            dist_a, _ = self.row(int(a))
            tot = ca_cost + dist_a[cb] + sb
            k = int(np.argmin(tot))
            if tot[k] < best:
                best = float(tot[k])
                bvert = int(cb[k])
                if sb[k] > 1e-300:
                    best_leg = qq - v[bvert]
                else:
                    prev = self.row(int(a))[1][bvert]
                    best_leg = v[bvert] - v[prev] if prev >= 0 else np.zeros(2)
        # direct segment inside the shared convex face
        if fa == fb:
            direct = _metric_seg_length(self.metric_fn, pp, qq)
            if direct < best:
                best = direct
                best_leg = qq - pp
        return best, best_leg

    def visible_mask(self, p, points: np.ndarray) -> np.ndarray:
        """Which straight segments from p to the points stay inside the domain."""
        if self._convex:
            return np.ones(len(points), dtype=bool)
        p = np.asarray(p, dtype=float)
        coords = np.stack([np.broadcast_to(p, points.shape), points], axis=1)
        segs = shapely.linestrings(coords)
        with self._vis_lock:
            return shapely.covers(self._poly, segs)

    def distances_from(self, p, targets, direct_visible: bool = False):
        """Vectorized distances from one point to many attachment-precomputed
        targets; ``targets`` is an AttachmentSet.

        With ``direct_visible`` (identity metric only) any target reachable by
        a straight in-domain segment uses the exact segment length, which is
        never longer than a graph route and keeps the cost field smooth in p.
        """
        fa, ca, sa = self._attach(np.asarray(p, dtype=float))
        m = targets.n
        best = np.full(m, np.inf)
        arg_a = np.full(m, -1)
        for k, (a, ca_cost) in enumerate(zip(ca, sa)):
            dist_a = self.row(int(a))[0]
            tot = ca_cost + np.min(
                dist_a[targets.cand_idx] + targets.seg_costs, axis=1)
            upd = tot < best
            best[upd] = tot[upd]
            arg_a[upd] = k
        # direct segments for targets in the same face
        same = targets.faces == fa
        if np.any(same):
            p = np.asarray(p, dtype=float)
            if self.metric_fn is None:
                direct = np.linalg.norm(targets.points[same] - p, axis=1)
            else:
                direct = np.array([
                    _metric_seg_length(self.metric_fn, p, t)
                    for t in targets.points[same]])
            idx = np.where(same)[0]
            upd = direct < best[idx]
            best[idx[upd]] = direct[upd]
            arg_a[idx[upd]] = -2
        if direct_visible and self.metric_fn is None:
            p = np.asarray(p, dtype=float)
            vis = self.visible_mask(p, targets.points)
            if np.any(vis):
                direct = np.linalg.norm(targets.points[vis] - p, axis=1)
                idx = np.where(vis)[0]
                upd = direct < best[idx]
                best[idx[upd]] = direct[upd]
                arg_a[idx[upd]] = -2
        return best, (fa, ca, sa, arg_a)

    def directions_at(self, p, targets, attach_info):
        """Unit (in the metric) direction at p pointing away from each target
        along the shortest path; used for distance gradients at p."""
        fa, ca, sa, arg_a = attach_info
        p = np.asarray(p, dtype=float)
        v = self.mesh.vertices
        legs = np.zeros((targets.n, 2))
        for k in range(targets.n):
            if arg_a[k] == -2:
                legs[k] = p - targets.points[k]
            else:
                a = int(ca[arg_a[k]])
                if sa[arg_a[k]] > 1e-300:
                    legs[k] = p - v[a]
                else:
                    # p sits on the vertex; step back along the tree toward q
                    dist_a, pred_a = self.row(a)
                    b = int(np.argmin(
                        dist_a[targets.cand_idx[k]] + targets.seg_costs[k]))
                    b = int(targets.cand_idx[k][b])
                    node = b
                    while pred_a[node] >= 0 and pred_a[node] != a:
                        node = int(pred_a[node])
                    legs[k] = p - v[node] if node != a else p - targets.points[k]
        norms = np.linalg.norm(legs, axis=1)
        norms = np.maximum(norms, 1e-300)
        return legs / norms[:, None]

    def attachment_set(self, points) -> "AttachmentSet":
        return AttachmentSet(self, np.asarray(points, dtype=float))


class AttachmentSet:
    """Precomputed attachments of fixed query points (padded arrays)."""

    def __init__(self, graph: GeodesicGraph, points: np.ndarray):
        self.points = points
        self.n = len(points)
        faces, cands, segs = [], [], []
        hint = None
        for p in points:
            fi, ca, sa = graph._attach(p, hint=hint)
            hint = fi
            faces.append(fi)
            cands.append(ca)
            segs.append(sa)
        self.faces = np.array(faces)
        width = max(len(c) for c in cands)
        self.cand_idx = np.zeros((self.n, width), dtype=int)
        self.seg_costs = np.full((self.n, width), np.inf)
        for k, (ca, sa) in enumerate(zip(cands, segs)):
            self.cand_idx[k, :len(ca)] = ca
            self.seg_costs[k, :len(ca)] = sa


# -- public operations ----------------------------------------------------------


def geodesic_distance(graph: GeodesicGraph, p, q) -> float:
    """Length of the shortest graph path between p and q (vertex ids or
    coordinate points)."""
    return graph.distance(p, q)


def distance_tangent(graph: GeodesicGraph, p, q) -> np.ndarray:
    """Unit coefficient vector at q tangent to the shortest path from p,
    normalized so the metric quadratic form equals one."""
    d, leg = graph.distance_with_leg(p, q)
    if d <= 0 or not np.any(leg):
        raise MetricError("direction undefined for coincident points")
    if graph.metric_fn is None:
        return leg / np.linalg.norm(leg)
    _, qq = graph._resolve(q)
    if qq is None:
        qq = graph.mesh.vertices[int(q)]
    M = graph.metric_fn(qq)
    return leg / np.sqrt(max(leg @ M @ leg, 1e-300))
