"""End-to-end orchestration: mesh -> mapping -> coverage -> anchor sweep.

Everything a scenario run produces lands in the output directory:
time-series CSV, sweep CSV, atlas JSON, SVG snapshots, and a JSON summary.
Runs are deterministic given the scenario seed.
"""

from dataclasses import dataclass, field, replace
import csv
import json
from pathlib import Path
import time

import numpy as np

from .mesh import TriMesh, count_flipped_faces
from .conformal import MappingAtlas, build_annulus_atlas
from .metric import GeodesicGraph, atlas_metric_fn
from .coverage import (DensityField, Gains, PartitionState, Quadrature,
                       WorkloadProfile, _areas, angular_workload_profile,
                       build_quadrature, centroid_solve, lyapunov_value,
                       mass_weighted_mean, partition_step, sector_costs,
                       sector_labels, sector_masses, agent_step,
                       _sub_attachments)
from .search import (SweepContext, make_anchor_plan, original_sector_costs,
                     run_sweep, select_best)
from .scenario import Scenario
from .regions import make_region
from .density import make_density
from .svg import emit_svg

TWO_PI = 2 * np.pi


class StageError(RuntimeError):
    """A pipeline stage failed; the stage name travels with the message."""

    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")


def _stage(name):
    """Decorator re-raising anything as a stage-tagged error."""
    def wrap(fn):
        def inner(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except StageError:
                raise
            except Exception as exc:
                raise StageError(name, str(exc)) from exc
        return inner
    return wrap


@dataclass
class RunSummary:
    L_star: float
    final_V: float
    final_J: float
    final_J_orig: float
    imbalance: float
    wall_time: float
    fit_c1: float
    fit_c2: float
    fit_r2: float
    flipped_faces: int
    k_star: int | None = None

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("L_star", "final_V", "final_J", "final_J_orig", "imbalance",
                 "wall_time", "fit_c1", "fit_c2", "fit_r2", "flipped_faces",
                 "k_star")}


@dataclass
class Problem:
    """Everything built from a scenario before any dynamics run."""

    mesh: TriMesh
    atlas: MappingAtlas
    chart: TriMesh
    graph: GeodesicGraph
    density: DensityField
    profile: WorkloadProfile
    quad: Quadrature
    ctx: SweepContext
    state: PartitionState
    gains: Gains
    flipped_faces: int


@_stage("mesh")
def _build_mesh(scenario: Scenario) -> TriMesh:
    return make_region(scenario.region["name"], scenario.region["params"])


@_stage("mapping")
def _build_atlas(mesh: TriMesh) -> tuple[MappingAtlas, int]:
    atlas = build_annulus_atlas(mesh)
    flipped = count_flipped_faces(mesh, atlas.vertex_images)
    if flipped:
        raise StageError("mapping", f"{flipped} flipped faces in the chart")
    return atlas, flipped


def _initial_state(scenario: Scenario, profile, quad, chart, atlas,
                   graph) -> PartitionState:
    n = scenario.agents["n"]
    rng = np.random.default_rng(scenario.seed)
    psi0 = scenario.agents["initial_psi"]
    if psi0 is None:
        offset = rng.uniform(0, TWO_PI / n)
        psi = (TWO_PI * np.arange(n) / n + offset) % TWO_PI
    else:
        psi = np.asarray(psi0, dtype=float) % TWO_PI
    if quad.attachments is None:
        quad = quad.with_attachments(graph)
    labels = sector_labels(psi, quad.points)
    init = np.empty((n, 2))
    for i in range(n):
        sel = labels == i
        if not np.any(sel):
            sel = np.ones(len(quad.points), dtype=bool)
        p = mass_weighted_mean(quad, sel)
        if chart.locate_point(p)[0] < 0:
            idx = np.where(sel)[0]
            p = quad.points[idx[np.argmax(quad.weights[idx])]]
        init[i] = p
    orig = atlas.inverse(init)
    return PartitionState(psi, init, orig, sector_masses(profile, psi))


@_stage("coverage-setup")
def build_problem(scenario: Scenario, with_original: bool = True) -> Problem:
    mesh = _build_mesh(scenario)
    atlas, flipped = _build_atlas(mesh)
    chart = atlas.chart_mesh
    graph = GeodesicGraph(chart)
    density = make_density(scenario.density["name"], chart,
                           scenario.density["params"],
                           scenario.density["total_mass"])
    profile = angular_workload_profile(density, scenario.sim["profile_bins"])
    quad = build_quadrature(density).with_attachments(graph)
    if with_original:
        graph_orig = GeodesicGraph(mesh, metric_fn=atlas_metric_fn(atlas))
        cents = mesh.vertices[mesh.faces].mean(axis=1)
        w = np.array([density(atlas.forward(c)) for c in cents]) * _areas(mesh)
        quad_orig = Quadrature(cents, w).with_attachments(graph_orig)
        ctx = SweepContext(profile, graph, quad, atlas, graph_orig, quad_orig)
    else:
        ctx = SweepContext(profile, graph, quad, atlas)
    gains = Gains(scenario.gains["k_psi"], scenario.gains["k_p"],
                  scenario.gains["dt"])
    state = _initial_state(scenario, profile, quad, chart, atlas, graph)
    return Problem(mesh, atlas, chart, graph, density, profile, quad, ctx,
                   state, gains, flipped)


def convergence_fit(times, values):
    """Least-squares fit log V = c2 + c1 t over the first 80% of the run.

    Returns (c1, c2, r_squared)."""
    v = np.log(np.maximum(np.asarray(values, dtype=float), 1e-300))
    t = np.asarray(times, dtype=float)
    n = max(2, int(0.8 * len(v)))
    A = np.vstack([t[:n], np.ones(n)]).T
    coef, res, *_ = np.linalg.lstsq(A, v[:n], rcond=None)
    ss = float(np.sum((v[:n] - v[:n].mean()) ** 2))
    r2 = 1.0 - float(res[0]) / ss if len(res) and ss > 0 else 1.0
    return float(coef[0]), float(coef[1]), r2


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for row in rows:
            wr.writerow(["%.17g" % x if isinstance(x, float) else x
                         for x in row])


def _snapshot_times(scenario: Scenario, override=None):
    if override is not None:
        return list(override)
    configured = scenario.sim["snapshot_times"]
    if configured is not None:
        return list(configured)
    T = scenario.sim["duration"]
    return [0.0, T / 3, 2 * T / 3, T]


@_stage("dynamics")
def _integrate(problem: Problem, duration: float, snapshots, out: Path | None,
               density_shading=True):
    """Balance-and-move loop; returns (final state, time-series rows)."""
    state = problem.state
    gains = problem.gains
    steps = int(round(duration / gains.dt))
    snap_left = sorted(snapshots)
    rows = []

    def record(state):
        mbar = np.mean(state.masses)
        imb = float(np.max(np.abs(state.masses - mbar)) / mbar) if mbar else 0.0
        rows.append([state.time, lyapunov_value(state.masses), imb,
                     *state.masses.tolist()])

    def maybe_snapshot(state):
        nonlocal snap_left
        while snap_left and state.time >= snap_left[0] - 1e-9:
            t = snap_left.pop(0)
            if out is not None:
                dens = problem.density if density_shading else None
                emit_svg(state, problem.atlas,
                         out / f"snapshot_chart_t{t:g}.svg", density=dens)
                emit_svg(state, problem.atlas,
                         out / f"snapshot_region_t{t:g}.svg", density=dens,
                         space="original")

    record(state)
    maybe_snapshot(state)
    for _ in range(steps):
        psi = partition_step(state, problem.profile, gains)
        state = replace(state, psi=psi,
                        masses=sector_masses(problem.profile, psi))
        state = agent_step(state, gains, problem.graph, problem.quad,
                           problem.atlas)
        record(state)
        maybe_snapshot(state)
    return state, rows


def _make_plan(scenario: Scenario):
    eps = scenario.search["eps_p"]
    if eps is None:
        eps = TWO_PI / scenario.search["k_star"]
    return make_anchor_plan(eps)


def run(scenario: Scenario, out_dir=None, threads: int = 1,
        snapshot_times=None) -> RunSummary:
    """Full pipeline: build, integrate, sweep, emit artifacts."""
    t0 = time.perf_counter()
    out = Path(out_dir if out_dir is not None else scenario.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    problem = build_problem(scenario)
    problem.atlas.export_json(out / "atlas.json")

    state, rows = _integrate(problem, scenario.sim["duration"],
                             _snapshot_times(scenario, snapshot_times), out)
    n = state.n
    _write_csv(out / "timeseries.csv",
               ["t", "V", "imbalance"] + [f"m{i}" for i in range(n)], rows)

    c1, c2, r2 = convergence_fit([r[0] for r in rows], [r[1] for r in rows])
    mbar = float(np.mean(state.masses))
    imbalance = float(np.max(np.abs(state.masses - mbar)) / mbar)

    plan = _make_plan(scenario)
    t_eps = scenario.search["t_eps"]
    try:
        records = run_sweep(plan, state, t_eps, problem.gains, problem.ctx,
                            threads=threads)
        k_star, best = select_best(records, plan.K_star)
    except Exception as exc:
        raise StageError("search", str(exc)) from exc
    _write_csv(out / "sweep.csv",
               ["k", "J", "J_orig", "V_final", "chosen"],
               [[r.anchor_index, r.total_cost, r.total_cost_orig,
                 lyapunov_value(r.masses), int(r.anchor_index == k_star)]
                for r in records])

    final = replace(state, psi=best.psi, agents_xi=best.agents_xi,
                    agents_orig=best.agents_orig, masses=best.masses)
    summary = RunSummary(
        L_star=problem.atlas.L_star,
        final_V=lyapunov_value(final.masses),
        final_J=best.total_cost,
        final_J_orig=best.total_cost_orig,
        imbalance=imbalance,
        wall_time=time.perf_counter() - t0,
        fit_c1=c1, fit_c2=c2, fit_r2=r2,
        flipped_faces=problem.flipped_faces,
        k_star=k_star)
    with open(out / "summary.json", "w") as fh:
        json.dump(summary.to_dict(), fh, sort_keys=True, indent=2)
    with open(out / "state_final.json", "w") as fh:
        json.dump({"psi": final.psi.tolist(),
                   "agents_xi": final.agents_xi.tolist(),
                   "agents_orig": final.agents_orig.tolist(),
                   "masses": final.masses.tolist()}, fh, sort_keys=True)
    return summary


def voronoi_baseline(scenario: Scenario, out_dir=None, max_rounds: int = 20,
                     tol: float = 1e-4) -> dict:
    """Lloyd relocation under the geodesic Voronoi partition of the chart.

    Uses the same mesh, density, and initial agent positions as the
    sectorial run; reports the per-cell workloads, their variance, and the
    total coverage cost for comparison.
    """
    problem = build_problem(scenario, with_original=False)
    quad = problem.quad
    graph = problem.graph
    positions = problem.state.agents_xi.copy()
    n = len(positions)
    sub_all = _sub_attachments(quad, np.ones(len(quad.points), dtype=bool))

    labels = None
    for _ in range(max_rounds):
        d = np.vstack([graph.distances_from(p, sub_all,
                                            direct_visible=True)[0]
                       for p in positions])
        labels = np.argmin(d, axis=0)
        moved = 0.0
        for i in range(n):
            mask = labels == i
            if not np.any(mask):
                continue
            new_p = centroid_solve(positions[i], graph, quad, mask,
                                   tol=tol, strict=False)
            moved = max(moved, float(np.linalg.norm(new_p - positions[i])))
            positions[i] = new_p
        if moved < tol:
            break

    d = np.vstack([graph.distances_from(p, sub_all, direct_visible=True)[0]
                   for p in positions])
    labels = np.argmin(d, axis=0)
    cell_mass = np.array([float(np.sum(quad.weights[labels == i]))
                          for i in range(n)])
    cost = float(np.sum(np.min(d, axis=0) ** 2 * quad.weights))
    result = {"positions": positions.tolist(),
              "cell_mass": cell_mass.tolist(),
              "mass_variance": float(np.var(cell_mass)),
              "total_cost": cost}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "baseline.json", "w") as fh:
            json.dump(result, fh, sort_keys=True, indent=2)
    return result


def sectorial_mass_variance(summary_state_masses) -> float:
    return float(np.var(np.asarray(summary_state_masses, dtype=float)))
