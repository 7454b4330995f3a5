"""Quasi-conformal flattening of an annular mesh onto a circular annulus.

The pipeline maps a sliced (disk-topology) mesh onto a rectangle
[0, L] x [0, 1] with an optimized length L, rolls the rectangle onto an
annulus with the exponential map, and removes the residual distortion with
a seam-correcting solve.  The composite map and its piecewise-affine
inverse are packaged in a MappingAtlas.
"""

from dataclasses import dataclass, field
from functools import cached_property
import hashlib
import json

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import dijkstra

from .mesh import (TriMesh, CutPath, GeometryError, TopologyError,
                   count_flipped_faces, signed_areas, slice_along_path,
                   INNER_BOUNDARY, OUTER_BOUNDARY)


class ConformalityError(ValueError):
    """A face's affine map has a vanishing complex derivative."""


class EllipticityError(ValueError):
    """Beltrami coefficient magnitude >= 1; the PDE is no longer elliptic."""


class SeamError(ValueError):
    """Duplicated seam vertices map to inconsistent annulus positions."""


class BijectivityError(ValueError):
    """The candidate map flips faces and cannot be inverted."""


class DomainError(ValueError):
    """Query point lies outside the mapped region."""


# -- Beltrami machinery ---------------------------------------------------------


@dataclass(frozen=True)
class BeltramiField:
    """Per-face complex distortion coefficients of a piecewise-affine map."""

    values: np.ndarray
    face_areas: np.ndarray | None = None

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    @property
    def l2_norm(self) -> float:
        m2 = np.abs(self.values) ** 2
        if self.face_areas is None:
            return float(np.sqrt(np.mean(m2)))
        w = self.face_areas / np.sum(self.face_areas)
        return float(np.sqrt(np.sum(w * m2)))


def _derivative_matrices(vertices, faces):
    """Sparse per-face d/dx and d/dy operators on vertex scalars."""
    nf = faces.shape[0]
    i = np.repeat(np.arange(nf), 3)
    j = faces.ravel()
    e1 = vertices[faces[:, 2]] - vertices[faces[:, 1]]
    e2 = vertices[faces[:, 0]] - vertices[faces[:, 2]]
    e3 = vertices[faces[:, 1]] - vertices[faces[:, 0]]
    area = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    if np.any(np.abs(area) < 1e-300):
        bad = int(np.argmin(np.abs(area)))
        raise GeometryError(f"degenerate face {bad} in derivative assembly")
    mx = (np.column_stack([e1[:, 1], e2[:, 1], e3[:, 1]]) / (2 * area[:, None])).ravel()
    my = -(np.column_stack([e1[:, 0], e2[:, 0], e3[:, 0]]) / (2 * area[:, None])).ravel()
    dx = sp.coo_matrix((mx, (i, j)), shape=(nf, vertices.shape[0])).tocsr()
    dy = sp.coo_matrix((my, (i, j)), shape=(nf, vertices.shape[0])).tocsr()
    return dx, dy


def complex_derivatives(vertices, faces, images):
    """Per-face (df/dz, df/dzbar) of the piecewise-affine map vertices -> images."""
    dx, dy = _derivative_matrices(vertices, faces)
    z = images[:, 0] + 1j * images[:, 1]
    fz = (dx.dot(z) - 1j * dy.dot(z)) / 2
    fzbar = (dx.dot(z) + 1j * dy.dot(z)) / 2
    return fz, fzbar


def _face_areas(vertices, faces):
    return np.abs(signed_areas(vertices, faces))


def _beltrami(vertices, faces, images) -> np.ndarray:
    fz, fzbar = complex_derivatives(vertices, faces, images)
    if np.any(fz == 0):
        bad = int(np.argmin(np.abs(fz)))
        raise ConformalityError(f"face {bad} has zero holomorphic derivative")
    return fzbar / fz


def _beltrami_lenient(vertices, faces, images) -> np.ndarray:
    """Beltrami coefficient with collapsed or folded source faces zeroed.

    Intermediate iterates may contain degenerate triangles; treating those
    faces as locally conformal lets the next corrective solve repair them
    instead of aborting the whole search."""
    e1 = vertices[faces[:, 2]] - vertices[faces[:, 1]]
    e2 = vertices[faces[:, 0]] - vertices[faces[:, 2]]
    e3 = vertices[faces[:, 1]] - vertices[faces[:, 0]]
    area2 = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    good = np.abs(area2) > 1e-12 * np.mean(np.abs(area2))
    a2 = np.where(good, area2, 1.0)
    z = (images[:, 0] + 1j * images[:, 1])[faces]
    gx = (e1[:, 1] * z[:, 0] + e2[:, 1] * z[:, 1] + e3[:, 1] * z[:, 2]) / a2
    gy = -(e1[:, 0] * z[:, 0] + e2[:, 0] * z[:, 1] + e3[:, 0] * z[:, 2]) / a2
    fz = (gx - 1j * gy) / 2
    fzbar = (gx + 1j * gy) / 2
    ok = good & (fz != 0)
    return np.where(ok, fzbar / np.where(fz == 0, 1.0, fz), 0.0)


def beltrami_coefficient(mesh: TriMesh, images: np.ndarray) -> BeltramiField:
    """Distortion field of the map sending mesh vertices to ``images``."""
    mu = _beltrami(mesh.vertices, mesh.faces, images)
    return BeltramiField(mu, _face_areas(mesh.vertices, mesh.faces))


# -- generalized Laplace operator -----------------------------------------------


def cotangent_laplacian(mesh: TriMesh) -> sp.csr_matrix:
    """Cotangent-weight Laplacian; row sums zero, symmetric, PSD."""
    v, f = mesh.vertices, mesh.faces
    n = v.shape[0]
    rows, cols, vals = [], [], []
    for a, b, c in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
        # cotangent at vertex c, opposite edge (a, b)
        u = v[f[:, a]] - v[f[:, c]]
        w = v[f[:, b]] - v[f[:, c]]
        cross = u[:, 0] * w[:, 1] - u[:, 1] * w[:, 0]
        if np.any(np.abs(cross) < 1e-300):
            bad = int(np.argmin(np.abs(cross)))
            raise GeometryError(f"degenerate face {bad} in cotangent assembly")
        cot = np.einsum("ij,ij->i", u, w) / np.abs(cross)
        half = 0.5 * cot
        rows += [f[:, a], f[:, b], f[:, a], f[:, b]]
        cols += [f[:, b], f[:, a], f[:, a], f[:, b]]
        vals += [-half, -half, half, half]
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


def _check_ellipticity(mu: np.ndarray):
    m = np.max(np.abs(mu))
    if m >= 1:
        raise EllipticityError(f"Beltrami magnitude {m:.4g} >= 1")


def _clamp_mu(mu: np.ndarray, cap: float = 0.99) -> np.ndarray:
    """Shrink over-unit coefficients radially; keeps the solve elliptic when an
    intermediate map folds over."""
    mag = np.abs(mu)
    out = mu.copy()
    over = mag > cap
    out[over] *= cap / mag[over]
    return out


def lbs_operator(vertices, faces, mu) -> sp.csr_matrix:
    """Stiffness matrix of the divergence-form operator with coefficient mu.

    For mu = 0 this reduces to the cotangent Laplacian up to sign.
    """
    _check_ellipticity(mu)
    lam, gam = np.real(mu), np.imag(mu)
    den = 1 - lam ** 2 - gam ** 2
    a = ((lam - 1) ** 2 + gam ** 2) / den
    b = -2 * gam / den
    g = ((lam + 1) ** 2 + gam ** 2) / den

    f0, f1, f2 = faces[:, 0], faces[:, 1], faces[:, 2]
    ux0 = vertices[f1, 1] - vertices[f2, 1]
    uy0 = vertices[f2, 0] - vertices[f1, 0]
    ux1 = vertices[f2, 1] - vertices[f0, 1]
    uy1 = vertices[f0, 0] - vertices[f2, 0]
    ux2 = vertices[f0, 1] - vertices[f1, 1]
    uy2 = vertices[f1, 0] - vertices[f0, 0]
    area = np.abs(0.5 * (uy2 * ux1 - uy1 * ux2))
    # relative floor: a collapsed face must not blow up the stiffness entries
    area = np.maximum(area, 1e-8 * np.mean(area))

    v00 = (a * ux0 * ux0 + 2 * b * ux0 * uy0 + g * uy0 * uy0) / area
    v11 = (a * ux1 * ux1 + 2 * b * ux1 * uy1 + g * uy1 * uy1) / area
    v22 = (a * ux2 * ux2 + 2 * b * ux2 * uy2 + g * uy2 * uy2) / area
    v01 = (a * ux1 * ux0 + b * (ux1 * uy0 + ux0 * uy1) + g * uy1 * uy0) / area
    v12 = (a * ux2 * ux1 + b * (ux2 * uy1 + ux1 * uy2) + g * uy2 * uy1) / area
    v20 = (a * ux0 * ux2 + b * (ux0 * uy2 + ux2 * uy0) + g * uy0 * uy2) / area

    i = np.concatenate([f0, f1, f2, f0, f1, f1, f2, f2, f0])
    j = np.concatenate([f0, f1, f2, f1, f0, f2, f1, f0, f2])
    v = -np.concatenate([v00, v11, v22, v01, v01, v12, v12, v20, v20]) / 2
    return sp.coo_matrix((v, (i, j)), shape=(vertices.shape[0],) * 2).tocsr()


def _dirichlet_solve(A, fixed_idx, fixed_vals):
    """Solve A u = 0 with u[fixed_idx] = fixed_vals (real or complex)."""
    fixed_idx = np.asarray(fixed_idx, dtype=int)
    fixed_vals = np.asarray(fixed_vals)
    rhs = -A[:, fixed_idx].dot(fixed_vals)
    rhs[fixed_idx] = fixed_vals
    mask = np.ones(A.shape[0], dtype=bool)
    mask[fixed_idx] = False
    B = A.multiply(mask.reshape(-1, 1)).multiply(mask.reshape(1, -1))
    B = B + sp.csr_matrix((np.ones(len(fixed_idx)), (fixed_idx, fixed_idx)),
                          shape=A.shape)
    return spla.spsolve(B.tocsc(), rhs)


@dataclass(frozen=True)
class SlidingConstraints:
    """Per-coordinate Dirichlet data; vertices absent from a dict slide freely."""

    x: dict[int, float]
    y: dict[int, float]


def lbs_solve(mesh: TriMesh, mu: BeltramiField, boundary_spec) -> np.ndarray:
    """Map with prescribed Beltrami coefficient under boundary constraints.

    ``boundary_spec`` is either a dict {vertex: (x, y)} of pinned positions or
    a SlidingConstraints with independent per-coordinate Dirichlet data.
    """
    A = lbs_operator(mesh.vertices, mesh.faces, mu.values)
    if isinstance(boundary_spec, SlidingConstraints):
        xi = sorted(boundary_spec.x)
        yi = sorted(boundary_spec.y)
        x = _dirichlet_solve(A, xi, [boundary_spec.x[k] for k in xi])
        y = _dirichlet_solve(A, yi, [boundary_spec.y[k] for k in yi])
        return np.column_stack([x, y])
    idx = sorted(boundary_spec)
    vals = np.array([complex(*boundary_spec[k]) for k in idx])
    sol = _dirichlet_solve(A, idx, vals)
    return np.column_stack([sol.real, sol.imag])


# -- harmonic disk map ----------------------------------------------------------


def harmonic_disk_map(mesh: TriMesh) -> np.ndarray:
    """Harmonic map to the unit disk with arc-length boundary correspondence."""
    if len(mesh.boundary_loops) != 1:
        raise TopologyError("harmonic disk map needs a single boundary loop")
    loop = np.asarray(mesh.boundary_loops[0], dtype=int)
    pts = mesh.vertices[loop]
    seg = np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)[:-1]])
    theta = 2 * np.pi * s / np.sum(seg)
    spec = {int(v): (np.cos(t), np.sin(t)) for v, t in zip(loop, theta)}
    mu = BeltramiField(np.zeros(mesh.faces.shape[0], dtype=complex))
    return lbs_solve(mesh, mu, spec)


# -- rectangle map with length optimization -------------------------------------


def _boundary_sides(mesh: TriMesh, corners):
    """Split the single boundary loop into bottom/top/left/right vertex sets."""
    v1, v2, v1p, v2p = corners
    if len(mesh.boundary_loops) != 1:
        raise TopologyError("rectangle map needs a disk-topology mesh")
    loop = [int(v) for v in mesh.boundary_loops[0]]
    pos = {c: loop.index(c) for c in corners}
    order = sorted(corners, key=lambda c: pos[c])
    arcs = {}
    for k in range(4):
        a, b = order[k], order[(k + 1) % 4]
        i, j = pos[a], pos[b]
        arc = loop[i:j + 1] if i < j else loop[i:] + loop[:j + 1]
        arcs[frozenset((a, b))] = arc
    try:
        bottom = arcs[frozenset((v1, v2))]
        top = arcs[frozenset((v1p, v2p))]
        left = arcs[frozenset((v1, v1p))]
        right = arcs[frozenset((v2, v2p))]
    except KeyError:
        raise TopologyError("corner vertices do not split the boundary into "
                            "bottom/top/left/right sides") from None
    return bottom, top, left, right


def optimize_length(candidates) -> float:
    """Pick the length with minimal distortion norm; ties go to the smaller L."""
    cand = list(candidates)
    if not cand:
        raise ValueError("empty candidate list")
    if not all(np.isfinite(n) for _, n in cand):
        raise ValueError("non-finite distortion norm in candidates")
    return float(min(cand, key=lambda ln: (ln[1], ln[0]))[0])


def rectangular_map(mesh: TriMesh, corners=None, search_interval=(0.05, 5.0),
                    tol=1e-3, polish_iters=2):
    """Quasi-conformal map of a disk-topology mesh onto [0, L] x [0, 1].

    Corners (v1, v2, v1', v2') go to (0,0), (L,0), (0,1), (L,1); the remaining
    boundary vertices slide along their rectangle side.  L is chosen by
    scaling the x coordinate and minimizing the distortion norm of the
    resulting map.  Returns (images, L, BeltramiField of the final map).
    """
    if corners is None:
        corners = getattr(mesh, "corners", None)
    if corners is None:
        raise ValueError("mesh has no recorded corners; pass them explicitly")
    bottom, top, left, right = _boundary_sides(mesh, corners)
    areas = _face_areas(mesh.vertices, mesh.faces)

    A0 = lbs_operator(mesh.vertices, mesh.faces,
                      np.zeros(mesh.faces.shape[0], dtype=complex))
    xi = sorted(set(left) | set(right))
    yi = sorted(set(bottom) | set(top))
    right_set, top_set = set(right), set(top)
    x1 = _dirichlet_solve(A0, xi, [1.0 if k in right_set else 0.0 for k in xi])
    y0 = _dirichlet_solve(A0, yi, [1.0 if k in top_set else 0.0 for k in yi])

    def solve_at(length):
        h = np.column_stack([length * x1, y0])
        mu_inv = _clamp_mu(_beltrami_lenient(h, mesh.faces, mesh.vertices))
        A = lbs_operator(h, mesh.faces, mu_inv)
        x = _dirichlet_solve(A, xi,
                             [length if k in right_set else 0.0 for k in xi])
        y = _dirichlet_solve(A, yi,
                             [1.0 if k in top_set else 0.0 for k in yi])
        images = np.column_stack([x, y])
        mu_fwd = _beltrami(mesh.vertices, mesh.faces, images)
        return images, BeltramiField(mu_fwd, areas)

    cache = {}

    def norm_at(length):
        if length not in cache:
            cache[length] = solve_at(length)
        return cache[length][1].l2_norm

    # golden-section search for the length of least distortion
    lo, hi = search_interval
    phi = (np.sqrt(5) - 1) / 2
    a, b = lo, hi
    c = b - phi * (b - a)
    d = a + phi * (b - a)
    while b - a > tol:
        if norm_at(c) <= norm_at(d):
            b, d = d, c
            c = b - phi * (b - a)
        else:
            a, c = c, d
            d = a + phi * (b - a)
    length = optimize_length([(l, f.l2_norm) for l, (_, f) in cache.items()])

    images, mu = cache[length]
    for _ in range(polish_iters):
        # recompute the inverse coefficient from the current images and re-solve
        mu_inv = _clamp_mu(_beltrami_lenient(images, mesh.faces, mesh.vertices))
        A = lbs_operator(images, mesh.faces, mu_inv)
        x = _dirichlet_solve(A, xi,
                             [length if k in right_set else 0.0 for k in xi])
        y = _dirichlet_solve(A, yi, [1.0 if k in top_set else 0.0 for k in yi])
        nxt = np.column_stack([x, y])
        mu_nxt = BeltramiField(_beltrami(mesh.vertices, mesh.faces, nxt), areas)
        if mu_nxt.sup_norm >= mu.sup_norm:
            break
        images, mu = nxt, mu_nxt
    return images, length, mu


# -- exponential map and seam correction ----------------------------------------


def exponential_annulus_map(rect_images: np.ndarray, length: float) -> np.ndarray:
    """Roll [0, L] x [0, 1] onto the annulus e^{-2 pi L} <= |w| <= 1."""
    z = rect_images[:, 0] + 1j * rect_images[:, 1]
    w = np.exp(2 * np.pi * (z - length))
    return np.column_stack([w.real, w.imag])


def _circle_sliding_solve(A, current, loop_sets, pin):
    """One corrective solve with boundary vertices sliding on their circles.

    The circle constraint is linearized about the current positions: each
    boundary vertex keeps its radial coordinate and gains one tangential
    degree of freedom; ``pin`` stays fully fixed so the rotational null
    direction of the energy is removed.  Boundary vertices are reprojected
    onto their circles afterwards.
    """
    n = A.shape[0]
    boundary = {}
    for idx, rho in loop_sets:
        for b in idx:
            boundary[int(b)] = rho
    offset = np.zeros(2 * n)
    rows, cols, vals = [], [], []
    col = 0
    for i in range(n):
        rho = boundary.get(i)
        if rho is None:
            rows += [i, n + i]
            cols += [col, col + 1]
            vals += [1.0, 1.0]
            col += 2
            continue
        u = current[i] / np.linalg.norm(current[i])
        offset[i] = rho * u[0]
        offset[n + i] = rho * u[1]
        if i == pin:
            continue
        rows += [i, n + i]
        cols += [col, col]
        vals += [-u[1], u[0]]
        col += 1
    P = sp.coo_matrix((vals, (rows, cols)), shape=(2 * n, col)).tocsr()
    K = sp.block_diag((A, A), format="csr")
    M = (P.T @ K @ P).tocsc()
    q = spla.spsolve(M, -P.T @ (K @ offset))
    p = P @ q + offset
    out = np.column_stack([p[:n], p[n:]])
    for idx, rho in loop_sets:
        out[idx] *= (rho / np.linalg.norm(out[idx], axis=1))[:, None]
    return out


def quasiconformal_correction(mesh: TriMesh, annulus_images: np.ndarray,
                              seam_tol=5e-2, max_iters=5,
                              radii=None) -> np.ndarray:
    """Merge the seam duplicates and reduce the residual distortion.

    ``mesh`` is the sliced mesh whose cut_provenance identifies the seam
    pairs; the returned images are indexed by the pre-slice vertex ids.
    ``radii`` optionally gives the exact (outer, inner) target circle radii;
    by default each loop keeps its current mean radius.
    """
    pairs = mesh.cut_provenance
    if not pairs:
        raise SeamError("mesh has no seam duplicates to merge")
    n_orig = mesh.vertices.shape[0] - len(pairs)
    scale = np.max(np.linalg.norm(annulus_images, axis=1))
    for dup, orig in pairs.items():
        gap = np.linalg.norm(annulus_images[dup] - annulus_images[orig])
        if gap > seam_tol * scale:
            raise SeamError(f"seam pair ({orig}, {dup}) differs by {gap:.3g}")

    images = annulus_images[:n_orig].copy()
    for dup, orig in pairs.items():
        images[orig] = 0.5 * (annulus_images[orig] + annulus_images[dup])
    remap = np.arange(mesh.vertices.shape[0])
    for dup, orig in pairs.items():
        remap[dup] = orig
    faces = remap[mesh.faces]
    domain = mesh.vertices[:n_orig]
    tags = np.asarray(mesh.vertex_tags[:n_orig])
    outer = np.where(tags == OUTER_BOUNDARY)[0]
    inner = np.where(tags == INNER_BOUNDARY)[0]
    if radii is None:
        radii = (float(np.mean(np.linalg.norm(images[outer], axis=1))),
                 float(np.mean(np.linalg.norm(images[inner], axis=1))))
    loop_sets = [(outer, radii[0]), (inner, radii[1])]
    for idx, rho in loop_sets:
        images[idx] *= (rho / np.linalg.norm(images[idx], axis=1))[:, None]
    pin = int(outer.min())

    def sup(imgs):
        return float(np.max(np.abs(_beltrami(domain, faces, imgs))))

    best = images
    best_sup = sup(images)
    for _ in range(max_iters):
        mu_inv = _clamp_mu(_beltrami_lenient(best, faces, domain))
        A = lbs_operator(best, faces, mu_inv)
        cand = _circle_sliding_solve(A, best, loop_sets, pin)
        if not np.all(np.isfinite(cand)):
            break
        if count_flipped_faces_raw(domain, faces, cand) > 0:
            break
        s = sup(cand)
        if s >= best_sup - 1e-15:
            break
        best, best_sup = cand, s
    return best


def count_flipped_faces_raw(vertices, faces, images) -> int:
    src = signed_areas(vertices, faces)
    dst = signed_areas(images, faces)
    return int(np.sum(np.sign(src) != np.sign(dst)))


# -- composite atlas -------------------------------------------------------------


@dataclass
class MappingAtlas:
    """Piecewise-affine diffeomorphism between a region and a circular annulus."""

    source: TriMesh
    vertex_images: np.ndarray
    jacobians: np.ndarray
    inverse_jacobians: np.ndarray
    seam_pairs: dict[int, int]
    L_star: float
    R: float = field(init=False)
    r: float = field(init=False)

    def __post_init__(self):
        rho = np.exp(-2 * np.pi * self.L_star)
        self.R = (1 + rho) / 2
        self.r = (1 - rho) / 2

    @cached_property
    def chart_mesh(self) -> TriMesh:
        return TriMesh(self.vertex_images, self.source.faces,
                       self.source.boundary_loops, self.source.vertex_tags)

    def forward(self, q: np.ndarray) -> np.ndarray:
        return _affine_eval(self.source, self.vertex_images, q)

    def inverse(self, q: np.ndarray) -> np.ndarray:
        return _affine_eval(self.chart_mesh, self.source.vertices, q)

    def face_of_chart_point(self, q) -> int:
        fi, _ = self.chart_mesh.locate_point(np.asarray(q, dtype=float))
        if fi < 0:
            raise DomainError(f"point {q} outside the annulus chart")
        return fi

    def export_json(self, path):
        payload = {
            "L_star": self.L_star,
            "R": self.R,
            "r": self.r,
            "seam_pairs": {str(k): int(v) for k, v in self.seam_pairs.items()},
            "vertex_images": self.vertex_images.tolist(),
        }
        blob = json.dumps(payload, sort_keys=True).encode()
        payload["checksum"] = hashlib.sha256(blob).hexdigest()
        with open(path, "w") as fh:
            json.dump(payload, fh)


def _affine_eval(domain: TriMesh, images: np.ndarray, q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    single = q.ndim == 1
    pts = q[None, :] if single else q
    out = np.empty_like(pts)
    hint = None
    for k, p in enumerate(pts):
        fi, bary = domain.locate_point(p, hint=hint)
        if fi < 0:
            raise DomainError(f"point {p} outside the mapped region")
        hint = fi
        out[k] = bary @ images[domain.faces[fi]]
    return out[0] if single else out


def tau_forward(atlas: MappingAtlas, q) -> np.ndarray:
    """Evaluate the region -> annulus map at q (a point or an array of points)."""
    return atlas.forward(q)


def tau_inverse(atlas: MappingAtlas, q) -> np.ndarray:
    """Evaluate the annulus -> region map at q."""
    return atlas.inverse(q)


def compose_tau(mesh: TriMesh, final_images: np.ndarray, L_star: float,
                seam_pairs: dict[int, int] | None = None) -> MappingAtlas:
    """Package the composite map into an atlas with per-face affine Jacobians."""
    src = signed_areas(mesh.vertices, mesh.faces)
    dst = signed_areas(final_images, mesh.faces)
    flipped = np.where(np.sign(src) != np.sign(dst))[0]
    if flipped.size:
        raise BijectivityError(f"flipped faces: {flipped.tolist()}")
    f = mesh.faces
    dp = np.stack([mesh.vertices[f[:, 1]] - mesh.vertices[f[:, 0]],
                   mesh.vertices[f[:, 2]] - mesh.vertices[f[:, 0]]], axis=2)
    dq = np.stack([final_images[f[:, 1]] - final_images[f[:, 0]],
                   final_images[f[:, 2]] - final_images[f[:, 0]]], axis=2)
    jac = dq @ np.linalg.inv(dp)
    return MappingAtlas(mesh, np.asarray(final_images, dtype=float), jac,
                        np.linalg.inv(jac), seam_pairs or {}, float(L_star))


# -- end-to-end pipeline ---------------------------------------------------------


def cheapest_cut(mesh: TriMesh) -> CutPath:
    """Shortest edge path from the inner boundary to the outer boundary."""
    e = mesh.edges()
    w = np.linalg.norm(mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]], axis=1)
    n = len(mesh.vertices)
    g = sp.coo_matrix((np.concatenate([w, w]),
                       (np.concatenate([e[:, 0], e[:, 1]]),
                        np.concatenate([e[:, 1], e[:, 0]]))), shape=(n, n)).tocsr()
    inner = np.where(np.asarray(mesh.vertex_tags) == INNER_BOUNDARY)[0]
    outer = np.where(np.asarray(mesh.vertex_tags) == OUTER_BOUNDARY)[0]
    dist, pred, src = dijkstra(g, indices=inner, return_predecessors=True,
                               min_only=True)
    goal = int(outer[np.argmin(dist[outer])])
    path = [goal]
    while pred[path[-1]] >= 0:
        path.append(int(pred[path[-1]]))
    return CutPath(tuple(reversed(path)))


def build_annulus_atlas(mesh: TriMesh, search_interval=(0.05, 5.0),
                        tol=1e-3) -> MappingAtlas:
    """Full pipeline: cut, flatten to a rectangle, roll up, correct the seam."""
    sliced = slice_along_path(mesh, cheapest_cut(mesh))
    rect, length, _ = rectangular_map(sliced, search_interval=search_interval,
                                      tol=tol)
    ann = exponential_annulus_map(rect, length)
    corrected = quasiconformal_correction(
        sliced, ann, radii=(1.0, float(np.exp(-2 * np.pi * length))))
    seam = {orig: orig for orig in sliced.cut_provenance.values()}
    return compose_tau(mesh, corrected, length, seam_pairs=seam)
