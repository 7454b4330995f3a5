"""Sectorial partition dynamics and coverage control on the annulus chart.

Partition bars are phase angles splitting the annulus into angular sectors;
they evolve to equalize per-sector workload while each agent descends its
sector's coverage cost under the geodesic distance.
"""

from dataclasses import dataclass, replace

import numpy as np

from .mesh import TriMesh
from .conformal import MappingAtlas
from .metric import GeodesicGraph, AttachmentSet

TWO_PI = 2 * np.pi


class IntegrationError(RuntimeError):
    """A dynamics step could not preserve the partition invariants."""


class ConvergenceError(RuntimeError):
    """An iterative solve ran out of iterations without progress."""


# -- density -------------------------------------------------------------------


@dataclass
class DensityField:
    """Per-vertex positive workload density on the annulus-chart mesh."""

    mesh: TriMesh
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if np.any(self.values <= 0):
            raise ValueError("density samples must be strictly positive")

    @classmethod
    def from_function(cls, mesh: TriMesh, fn) -> "DensityField":
        return cls(mesh, np.asarray([fn(p) for p in mesh.vertices], dtype=float))

    def __call__(self, q: np.ndarray) -> float:
        fi, bary = self.mesh.locate_point(np.asarray(q, dtype=float))
        if fi < 0:
            raise ValueError(f"density query {q} outside the mesh")
        return float(bary @ self.values[self.mesh.faces[fi]])

    def pullback(self, atlas: MappingAtlas, q: np.ndarray) -> float:
        """Density seen from the original region: rho o tau."""
        return self(atlas.forward(q))

    def face_values(self) -> np.ndarray:
        """Density at face centroids (mean of corner samples)."""
        return self.values[self.mesh.faces].mean(axis=1)

    def normalized(self, total_mass: float) -> "DensityField":
        areas = np.abs(_areas(self.mesh))
        current = float(np.sum(self.face_values() * areas))
        return DensityField(self.mesh, self.values * (total_mass / current))


def _areas(mesh: TriMesh) -> np.ndarray:
    v, f = mesh.vertices, mesh.faces
    e1 = v[f[:, 1]] - v[f[:, 0]]
    e2 = v[f[:, 2]] - v[f[:, 0]]
    return 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


# -- quadrature ----------------------------------------------------------------


@dataclass(frozen=True)
class Quadrature:
    """Fixed point set with workload weights w = rho * area."""

    points: np.ndarray
    weights: np.ndarray
    attachments: AttachmentSet | None = None

    def with_attachments(self, graph: GeodesicGraph) -> "Quadrature":
        return Quadrature(self.points, self.weights,
                          graph.attachment_set(self.points))


def _split4(mesh, fi):
    """Midpoint 4-way refinement of one face: (sub-centroids, sub-areas)."""
    a, b, c = mesh.vertices[mesh.faces[fi]]
    ab, bc, ca = 0.5 * (a + b), 0.5 * (b + c), 0.5 * (c + a)
    tris = [(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)]
    cents = np.array([(p + q + r) / 3 for p, q, r in tris])
    areas = np.array([
        0.5 * abs((q - p)[0] * (r - p)[1] - (q - p)[1] * (r - p)[0])
        for p, q, r in tris])
    return cents, areas


def build_quadrature(density: DensityField, refine_faces=()) -> Quadrature:
    """Centroid-rule quadrature with one 4-way refinement level on the
    requested faces."""
    mesh = density.mesh
    areas = _areas(mesh)
    cents = mesh.vertices[mesh.faces].mean(axis=1)
    refine = set(int(f) for f in refine_faces)
    pts, wts = [], []
    for fi in range(len(mesh.faces)):
        if fi in refine:
            c4, a4 = _split4(mesh, fi)
            pts.append(c4)
            wts.append(a4 * [density(c) for c in c4])
        else:
            pts.append(cents[fi][None, :])
            wts.append(np.array([areas[fi] * density(cents[fi])]))
    return Quadrature(np.vstack(pts), np.concatenate(wts))


def faces_near(mesh: TriMesh, points: np.ndarray, radius: float) -> np.ndarray:
    """Faces whose centroid lies within radius of any of the points."""
    cents = mesh.vertices[mesh.faces].mean(axis=1)
    pts = np.atleast_2d(points)
    d = np.min(np.linalg.norm(cents[:, None, :] - pts[None, :, :], axis=2), axis=1)
    return np.where(d < radius)[0]


# -- angular workload profile ---------------------------------------------------


@dataclass(frozen=True)
class WorkloadProfile:
    """Binned angular workload: bin_mass[b] integrates rho over the wedge."""

    bin_mass: np.ndarray

    @property
    def n_bins(self) -> int:
        return len(self.bin_mass)

    @property
    def total(self) -> float:
        return float(np.sum(self.bin_mass))


def angular_workload_profile(density: DensityField, n_bins: int,
                             warn=None) -> WorkloadProfile:
    """Bin per-face workload by centroid angle; faces straddling a bin edge
    are split once (4-way) before assignment, so the total is conserved."""
    mesh = density.mesh
    areas = _areas(mesh)
    cents = mesh.vertices[mesh.faces].mean(axis=1)
    rho = density.face_values()
    width = TWO_PI / n_bins
    bins = np.zeros(n_bins)
    vert_angles = np.arctan2(mesh.vertices[:, 1], mesh.vertices[:, 0]) % TWO_PI
    for fi in range(len(mesh.faces)):
        angs = vert_angles[mesh.faces[fi]]
        spread = np.ptp(angs)
        spread = min(spread, TWO_PI - spread)  # wrap-aware angular extent
        same_bin = np.all(np.floor(angs / width) == np.floor(angs[0] / width))
        if same_bin and spread < width:
            theta = np.arctan2(cents[fi][1], cents[fi][0]) % TWO_PI
            bins[int(theta / width) % n_bins] += rho[fi] * areas[fi]
        else:
            c4, a4 = _split4(mesh, fi)
            mass_parent = rho[fi] * areas[fi]
            mass_children = np.array([density(c) for c in c4]) * a4
            # rescale children so refinement never changes the total
            mass_children *= mass_parent / np.sum(mass_children)
            for c, mc in zip(c4, mass_children):
                theta = np.arctan2(c[1], c[0]) % TWO_PI
                bins[int(theta / width) % n_bins] += mc
    if warn is not None:
        for b in np.where(bins == 0)[0]:
            warn(f"empty angular bin {b}")
    return WorkloadProfile(bins)


def sector_mass(profile: WorkloadProfile, psi_i: float, psi_next: float) -> float:
    """Workload between two bar angles, wrapping through 0 when needed.

    Equal angles mean an empty sector (mass 0), not the full circle.
    """
    a = psi_i % TWO_PI
    b = psi_next % TWO_PI
    if a == b:
        return 0.0
    width = TWO_PI / profile.n_bins
    cum = np.concatenate([[0.0], np.cumsum(profile.bin_mass)])

    def integral_to(theta):
        # piecewise-linear in theta within each bin
        t = theta / width
        k = min(int(t), profile.n_bins - 1)
        return cum[k] + (t - k) * profile.bin_mass[k]

    if a < b:
        return float(integral_to(b) - integral_to(a))
    return float(profile.total - integral_to(a) + integral_to(b))


# -- partition state and dynamics ----------------------------------------------


@dataclass(frozen=True)
class Gains:
    k_psi: float
    k_p: float
    dt: float

    def __post_init__(self):
        if self.k_psi <= 0 or self.k_p <= 0 or self.dt <= 0:
            raise ValueError("gains and step size must be strictly positive")


@dataclass(frozen=True)
class PartitionState:
    psi: np.ndarray
    agents_xi: np.ndarray
    agents_orig: np.ndarray
    masses: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "psi", np.asarray(self.psi, dtype=float))
        object.__setattr__(self, "agents_xi",
                          np.asarray(self.agents_xi, dtype=float))
        object.__setattr__(self, "agents_orig",
                          np.asarray(self.agents_orig, dtype=float))
        object.__setattr__(self, "masses", np.asarray(self.masses, dtype=float))
        if not _cyclically_ordered(self.psi):
            raise ValueError("partition bars are not cyclically ordered")

    @property
    def n(self) -> int:
        return len(self.psi)


def _cyclically_ordered(psi: np.ndarray) -> bool:
    d = np.diff(np.concatenate([psi, psi[:1]]))
    return int(np.sum(d < 0)) <= 1 and len(set(psi.tolist())) == len(psi)


def sector_masses(profile: WorkloadProfile, psi: np.ndarray) -> np.ndarray:
    nxt = np.roll(psi, -1)
    return np.array([sector_mass(profile, a, b) for a, b in zip(psi, nxt)])


def partition_step(state: PartitionState, profile: WorkloadProfile,
                   gains: Gains, frozen=()):
    """One Euler step of the bar dynamics psi_i += dt*k*(m_i - m_{i-1}).

    If a full step would break the cyclic order the step is halved until it
    does not (bars must never cross).  Returns the updated angles.
    """
    total = profile.total
    if gains.dt * gains.k_psi * total >= 0.5:
        raise IntegrationError(
            "unstable step: dt * k_psi * total mass must stay below 0.5")
    psi = state.psi.copy()
    masses = sector_masses(profile, psi)
    vel = gains.k_psi * (masses - np.roll(masses, 1))
    for i in frozen:
        vel[i] = 0.0
    dt = gains.dt
    for _ in range(64):
        cand = (psi + dt * vel) % TWO_PI
        if _cyclically_ordered(cand):
            return cand
        dt *= 0.5
    raise IntegrationError("bar ordering violated even after maximal halving")


def lyapunov_value(masses: np.ndarray) -> float:
    masses = np.asarray(masses, dtype=float)
    mbar = np.sum(masses) / len(masses)
    return float(0.5 * np.sum((masses - mbar) ** 2))


# -- coverage cost, gradient, control ------------------------------------------


def sector_labels(psi: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Index of the sector [psi_i, psi_{i+1}) containing each point's angle."""
    theta = np.arctan2(points[:, 1], points[:, 0]) % TWO_PI
    psi = np.asarray(psi)
    n = len(psi)
    labels = np.empty(len(points), dtype=int)
    nxt = np.roll(psi, -1)
    assigned = np.zeros(len(points), dtype=bool)
    for i in range(n):
        a, b = psi[i] % TWO_PI, nxt[i] % TWO_PI
        inside = ((theta >= a) & (theta < b)) if a < b else \
                 ((theta >= a) | (theta < b))
        labels[inside & ~assigned] = i
        assigned |= inside
    labels[~assigned] = 0
    return labels


def sector_costs(state: PartitionState, graph: GeodesicGraph,
                 quad: Quadrature) -> np.ndarray:
    """Per-agent integral of squared geodesic distance times workload."""
    if quad.attachments is None:
        quad = quad.with_attachments(graph)
    labels = sector_labels(state.psi, quad.points)
    out = np.zeros(state.n)
    for i in range(state.n):
        sel = labels == i
        if not np.any(sel):
            continue
        sub = _sub_attachments(quad, sel)
        d, _ = graph.distances_from(state.agents_xi[i], sub,
                                    direct_visible=True)
        out[i] = float(np.sum(d ** 2 * quad.weights[sel]))
    return out


def coverage_cost(state: PartitionState, graph: GeodesicGraph,
                  quad: Quadrature) -> float:
    return float(np.sum(sector_costs(state, graph, quad)))


class _SubSet:
    pass


def _sub_attachments(quad: Quadrature, mask: np.ndarray):
    att = quad.attachments
    sub = _SubSet()
    sub.points = quad.points[mask]
    sub.n = int(np.sum(mask))
    sub.faces = att.faces[mask]
    sub.cand_idx = att.cand_idx[mask]
    sub.seg_costs = att.seg_costs[mask]
    return sub


def cost_gradient(state: PartitionState, i: int, graph: GeodesicGraph,
                  quad: Quadrature) -> np.ndarray:
    """Gradient of the coverage cost with respect to agent i's position:
    2 * sum over the sector of d * (unit tangent away from q) * weight."""
    if quad.attachments is None:
        quad = quad.with_attachments(graph)
    labels = sector_labels(state.psi, quad.points)
    sel = labels == i
    if not np.any(sel):
        return np.zeros(2)
    p = state.agents_xi[i].copy()
    sub = _sub_attachments(quad, sel)
    d, info = graph.distances_from(p, sub, direct_visible=True)
    z = graph.directions_at(p, sub, info)
    w = quad.weights[sel]
    return 2.0 * np.sum((d * w)[:, None] * z, axis=0)


def control_input(state: PartitionState, i: int, gains: Gains,
                  graph: GeodesicGraph, quad: Quadrature) -> np.ndarray:
    """Velocity command: negative metric-raised cost gradient.  In annulus
    Cartesian coordinates the metric is the identity, so the raise is a
    no-op; for pulled-back metrics the inverse tensor is applied."""
    grad = cost_gradient(state, i, graph, quad)
    if graph.metric_fn is None:
        return -gains.k_p * grad
    M = graph.metric_fn(state.agents_xi[i])
    return -gains.k_p * np.linalg.solve(M, grad)


def agent_step(state: PartitionState, gains: Gains, graph: GeodesicGraph,
               quad: Quadrature, atlas: MappingAtlas | None = None):
    """Explicit Euler update of all agent positions; keeps the original-space
    positions consistent through the inverse chart map."""
    new_xi = state.agents_xi.copy()
    for i in range(state.n):
        u = control_input(state, i, gains, graph, quad)
        step = gains.dt * u
        cand = new_xi[i] + step
        ok = False
        for _ in range(10):
            fi, _ = graph.mesh.locate_point(cand, hint=None)
            if fi >= 0:
                ok = True
                break
            step *= 0.5
            cand = new_xi[i] + step
        if not ok:
            raise IntegrationError(
                f"agent {i} stuck outside the domain after 10 halvings")
        new_xi[i] = cand
    new_orig = state.agents_orig
    if atlas is not None:
        new_orig = atlas.inverse(new_xi)
    return replace(state, agents_xi=new_xi, agents_orig=new_orig,
                   time=state.time + gains.dt)


def centroid_solve(agent_start: np.ndarray, graph: GeodesicGraph,
                   quad: Quadrature, mask: np.ndarray | None = None,
                   tol: float = 1e-6, max_iters: int = 10_000,
                   strict: bool = True) -> np.ndarray:
    """Geodesic centroid of a weighted point set: gradient descent with
    backtracking from the given start until the gradient norm drops below
    tol.

    With strict=False a stalled search returns the best point found instead
    of raising, which is what iterated relocation schemes want."""
    if quad.attachments is None:
        quad = quad.with_attachments(graph)
    if mask is None:
        mask = np.ones(len(quad.points), dtype=bool)
    sub = _sub_attachments(quad, mask)
    w = quad.weights[mask]
    if np.sum(w) <= 0:
        raise ValueError("sector carries no workload")

    def cost_and_grad(p):
        d, info = graph.distances_from(p, sub, direct_visible=True)
        z = graph.directions_at(p, sub, info)
        J = float(np.sum(d ** 2 * w))
        g = 2.0 * np.sum((d * w)[:, None] * z, axis=0)
        return J, g

    p = np.asarray(agent_start, dtype=float).copy()
    fi, _ = graph.mesh.locate_point(p)
    if fi < 0:
        # fall back to the heaviest quadrature point, which is in the domain
        p = sub.points[int(np.argmax(w))].copy()
    J, g = cost_and_grad(p)
    step0 = graph.mesh.mean_edge_length()
    boundary = graph.mesh.domain_polygon().boundary

    def descend(direction, gn):
        nonlocal p, J, g
        alpha = step0
        hit_boundary = False
        for _ in range(40):
            cand = p + alpha * direction
            fi, _ = graph.mesh.locate_point(cand)
            if fi >= 0:
                Jc, gc = cost_and_grad(cand)
                if Jc < J - 0.25 * alpha * gn:
                    p, J, g = cand, Jc, gc
                    return True, hit_boundary
            else:
                hit_boundary = True
            alpha *= 0.5
        return False, hit_boundary

    for it in range(max_iters):
        gn = float(np.linalg.norm(g))
        if gn < tol:
            return p
        improved, hit = descend(-g / gn, gn)
        if improved:
            continue
        from shapely.geometry import Point
        gap = boundary.distance(Point(p))
        if hit and gap < 1e-3 * step0:
            # slide along the boundary: drop the outward gradient component
            near = boundary.interpolate(boundary.project(Point(p)))
            outward = p - np.array([near.x, near.y])
            nn = np.linalg.norm(outward)
            if nn > 0:
                outward = -outward / nn  # from p toward the boundary
                tang = -g - max(0.0, -g @ outward) * outward
                tn = float(np.linalg.norm(tang))
                if tn < tol * max(gn, 1.0):
                    return p  # boundary-constrained optimum
                improved, _ = descend(tang / tn, tn)
                if improved:
                    continue
                return p  # no tangential descent left; pinned to the boundary
        if not strict:
            return p
        raise ConvergenceError(
            f"centroid search stalled at iteration {it}, |grad| = {gn:.3g}")
    raise ConvergenceError("centroid search exceeded the iteration budget")


def mass_weighted_mean(quad: Quadrature, mask: np.ndarray) -> np.ndarray:
    w = quad.weights[mask]
    return np.sum(quad.points[mask] * w[:, None], axis=0) / np.sum(w)
