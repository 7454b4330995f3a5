"""Acceptance gate: ten end-to-end criteria, one pass/fail line each."""

import time
from dataclasses import replace

import numpy as np
import pytest

from seccov import simulate
from seccov.conformal import (build_annulus_atlas, cheapest_cut,
                              exponential_annulus_map, quasiconformal_correction,
                              rectangular_map, _beltrami)
from seccov.coverage import (DensityField, Quadrature, _areas,
                             _sub_attachments, angular_workload_profile,
                             build_quadrature, centroid_solve, coverage_cost,
                             cost_gradient, mass_weighted_mean, partition_step,
                             sector_masses, agent_step)
from seccov.mesh import build_delaunay, count_flipped_faces, slice_along_path
from seccov.metric import GeodesicGraph, atlas_metric_fn
from seccov.regions import make_region
from seccov.registration import AgentMapRecord, ring_consensus_length
from seccov.scenario import validate_scenario
from seccov.search import (SweepContext, make_anchor_plan, original_sector_costs,
                           ring_union_costs, run_sweep, select_best)

TWO_PI = 2 * np.pi

REGION_SPECS = [("annulus", 0.035),
                ("square_with_hole", 0.045),
                ("blob_with_slot", 0.041)]

REFERENCE_DOC = {
    "version": 1,
    "region": {"name": "annulus", "params": {"target_edge": 0.07}},
    "density": {"name": "gaussian_bumps",
                "params": {"centers": [[0.75, 0.1]], "widths": 0.25,
                           "amplitudes": 1.0, "baseline": 0.5},
                "total_mass": 100.0},
    "agents": {"n": 4},
    "gains": {"k_psi": 0.03, "k_p": 0.1, "dt": 0.05},
    "search": {"k_star": 30, "t_eps": 10.0},
    "sim": {"duration": 16.0, "profile_bins": 256},
    "seed": 7,
}


def _report(num, ok, detail):
    print(f"criterion {num}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"criterion {num}: {detail}"


@pytest.fixture(scope="module")
def built_regions():
    out = {}
    for name, edge in REGION_SPECS:
        t0 = time.perf_counter()
        mesh = make_region(name, {"target_edge": edge})
        atlas = build_annulus_atlas(mesh)
        out[name] = (mesh, atlas, time.perf_counter() - t0)
    return out


@pytest.fixture(scope="module")
def reference_run():
    scenario = validate_scenario(dict(REFERENCE_DOC))
    t0 = time.perf_counter()
    problem = simulate.build_problem(scenario)
    state, rows = simulate._integrate(problem, scenario.sim["duration"],
                                      [], None)
    elapsed = time.perf_counter() - t0
    return scenario, problem, state, rows, elapsed


@pytest.fixture(scope="module")
def chart_setup(annulus_atlas, chart_graph):
    chart = annulus_atlas.chart_mesh
    dens = DensityField.from_function(
        chart, lambda p: 1.0 + 0.5 * p[0]).normalized(100.0)
    quad = build_quadrature(dens).with_attachments(chart_graph)
    profile = angular_workload_profile(dens, 256)
    return chart, dens, quad, profile


def test_criterion_01_mapping_bijectivity(built_regions):
    rng = np.random.default_rng(41)
    details = []
    ok = True
    for name, (mesh, atlas, elapsed) in built_regions.items():
        flips = count_flipped_faces(mesh, atlas.vertex_images)
        rad = np.linalg.norm(atlas.vertex_images, axis=1)
        dev = max(
            float(np.max(np.abs(rad[mesh.boundary_loops[0]]
                                - (atlas.R + atlas.r)))),
            float(np.max(np.abs(rad[mesh.boundary_loops[1]]
                                - (atlas.R - atlas.r)))))
        fi = rng.integers(0, len(mesh.faces), 1000)
        w = rng.uniform(0.05, 1.0, (1000, 3))
        w /= w.sum(axis=1)[:, None]
        pts = np.einsum("sk,skd->sd", w, mesh.vertices[mesh.faces[fi]])
        back = atlas.inverse(atlas.forward(pts))
        rt = float(np.max(np.linalg.norm(back - pts, axis=1)))
        details.append(f"{name}: {len(mesh.vertices)}v flips={flips} "
                       f"dev={dev:.1e} rt={rt:.1e} {elapsed:.1f}s")
        ok &= (len(mesh.vertices) >= 2000 and flips == 0 and dev < 1e-6
               and rt < 1e-9 and elapsed < 30.0)
    _report(1, ok, "; ".join(details))


def test_criterion_02_conformality_improvement(built_regions):
    details = []
    ok = True
    for name, (mesh, _, _) in built_regions.items():
        sliced = slice_along_path(mesh, cheapest_cut(mesh))
        rect, length, _ = rectangular_map(sliced)
        ann = exponential_annulus_map(rect, length)
        corrected = quasiconformal_correction(
            sliced, ann, radii=(1.0, float(np.exp(-TWO_PI * length))))
        remap = np.arange(len(sliced.vertices))
        for dup, orig in sliced.cut_provenance.items():
            remap[dup] = orig
        faces = remap[sliced.faces]
        domain = sliced.vertices[:len(corrected)]
        merged = ann[:len(corrected)].copy()
        for dup, orig in sliced.cut_provenance.items():
            merged[orig] = 0.5 * (ann[orig] + ann[dup])
        before = float(np.max(np.abs(_beltrami(domain, faces, merged))))
        after = float(np.max(np.abs(_beltrami(domain, faces, corrected))))
        details.append(f"{name}: sup|mu| {before:.4f}->{after:.4f}")
        ok &= after < before
    _report(2, ok, "; ".join(details))


def _rectangle_mesh(width, height, nx, ny):
    xs = np.linspace(0, width, nx)
    ys = np.linspace(0, height, ny)
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    loop = ([j for j in range(nx)] +
            [i * nx + (nx - 1) for i in range(1, ny)] +
            [(ny - 1) * nx + j for j in range(nx - 2, -1, -1)] +
            [i * nx for i in range(ny - 2, 0, -1)])
    return build_delaunay(pts, loop)


def test_criterion_03_rectangle_length_oracle():
    details = []
    ok = True
    for a, nx, ny in [(0.5, 9, 17), (1.0, 13, 13), (2.0, 25, 13)]:
        m = _rectangle_mesh(a, 1.0, nx, ny)
        corner_pts = [(0, 0), (a, 0), (0, 1), (a, 1)]
        corners = tuple(
            int(np.argmin(np.linalg.norm(m.vertices - np.array(c), axis=1)))
            for c in corner_pts)
        _, L, _ = rectangular_map(m, corners=corners)
        rel = abs(L - a) / a
        details.append(f"a={a}: L={L:.4f} ({100 * rel:.1f}%)")
        ok &= rel < 0.05
    _report(3, ok, "; ".join(details))


def test_criterion_04_workload_equalization(reference_run):
    _, _, state, rows, elapsed = reference_run
    V = np.array([r[1] for r in rows])
    mbar = float(np.mean(state.masses))
    imb = float(np.max(np.abs(state.masses - mbar)) / mbar)
    monotone = bool(np.all(np.diff(V) <= 0))
    c1, _, r2 = simulate.convergence_fit([r[0] for r in rows], V)
    ok = imb < 0.02 and monotone and c1 < 0 and r2 > 0.9 and elapsed < 60.0
    _report(4, ok, f"imbalance={imb:.2e} monotone={monotone} "
                   f"slope={c1:.3f} R2={r2:.4f} {elapsed:.1f}s")


def test_criterion_05_gradient_fidelity(chart_setup, chart_graph):
    chart, _, quad, profile = chart_setup
    psi = np.array([0.3, 1.8, 3.2, 4.9])
    rng = np.random.default_rng(23)
    h = 1e-6
    worst = 0.0
    checked = 0
    while checked < 50:
        t = rng.uniform(0, TWO_PI, 4)
        r = rng.uniform(0.6, 0.9, 4)
        agents = np.column_stack([r * np.cos(t), r * np.sin(t)])
        state = simulate.PartitionState(psi, agents, agents,
                                        sector_masses(profile, psi))
        i = int(rng.integers(0, 4))
        g = cost_gradient(state, i, chart_graph, quad)
        fd = np.empty(2)
        for ax in range(2):
            e = np.zeros(2)
            e[ax] = h
            up = replace(state, agents_xi=agents + np.outer(np.eye(4)[i], e))
            dn = replace(state, agents_xi=agents - np.outer(np.eye(4)[i], e))
            fd[ax] = (coverage_cost(up, chart_graph, quad) -
                      coverage_cost(dn, chart_graph, quad)) / (2 * h)
        worst = max(worst, np.linalg.norm(g - fd)
                    / max(np.linalg.norm(fd), 1e-12))
        checked += 1
    _report(5, worst < 1e-3, f"worst relative error {worst:.2e} on 50 states")


def test_criterion_06_centroid_convergence(annulus_atlas, chart_graph):
    chart = annulus_atlas.chart_mesh
    c0 = np.array([0.75, 0.1])
    dens = DensityField.from_function(
        chart,
        lambda p: 0.01 + np.exp(-10 * np.sum((p - c0) ** 2))).normalized(0.2)
    quad = build_quadrature(dens).with_attachments(chart_graph)
    mask = np.ones(len(quad.points), dtype=bool)
    start = mass_weighted_mean(quad, mask)
    p = centroid_solve(start, chart_graph, quad, mask, tol=1e-4)
    sub = _sub_attachments(quad, mask)
    d, info = chart_graph.distances_from(p, sub, direct_visible=True)
    z = chart_graph.directions_at(p, sub, info)
    grad = 2 * np.sum((d * quad.weights[mask])[:, None] * z, axis=0)
    gnorm = float(np.linalg.norm(grad))

    best, best_cost = None, np.inf
    for r in np.linspace(0.52, 0.98, 40):
        for t in np.linspace(0, TWO_PI, 120, endpoint=False):
            q = np.array([r * np.cos(t), r * np.sin(t)])
            if chart.locate_point(q)[0] < 0:
                continue
            dq, _ = chart_graph.distances_from(q, sub)
            cost = float(np.sum(dq ** 2 * quad.weights[mask]))
            if cost < best_cost:
                best_cost, best = cost, q
    dist = float(np.linalg.norm(best - p))
    two_cells = 2 * chart.mean_edge_length()
    ok = gnorm < 1e-4 and dist <= two_cells
    _report(6, ok, f"|grad|={gnorm:.2e} dist-to-grid-optimum={dist:.4f} "
                   f"(2 cells = {two_cells:.4f})")


def test_criterion_07_sweep_optimality(reference_run):
    scenario, problem, _, _, _ = reference_run
    gains = problem.gains
    t_eps = scenario.search["t_eps"]

    state = problem.state
    for _ in range(int(round(t_eps / gains.dt))):
        psi = partition_step(state, problem.profile, gains)
        state = replace(state, psi=psi,
                        masses=sector_masses(problem.profile, psi))
        state = agent_step(state, gains, problem.graph, problem.quad,
                           problem.atlas)
    plain = float(np.sum(original_sector_costs(state, problem.ctx)))

    plan30 = make_anchor_plan(TWO_PI / 30)
    recs30 = run_sweep(plan30, problem.state, t_eps, gains, problem.ctx)
    k30, best30 = select_best(recs30, plan30.K_star)
    plan60 = make_anchor_plan(TWO_PI / 60)
    recs60 = run_sweep(plan60, problem.state, t_eps, gains, problem.ctx)
    _, best60 = select_best(recs60, plan60.K_star)

    ok = (best30.total_cost_orig <= plain + 1e-9
          and best60.total_cost_orig <= best30.total_cost_orig + 1e-6)
    _report(7, ok, f"J'30={best30.total_cost_orig:.6g} (k*={k30}) <= "
                   f"no-sweep {plain:.6g}; "
                   f"J'60={best60.total_cost_orig:.6g}")


def test_criterion_08_voronoi_comparison(reference_run):
    scenario, _, state, _, _ = reference_run
    sectorial = float(np.var(state.masses))
    baseline = simulate.voronoi_baseline(scenario)
    factor = baseline["mass_variance"] / max(sectorial, 1e-300)
    ok = baseline["mass_variance"] >= 2 * sectorial
    _report(8, ok, f"Lloyd variance {baseline['mass_variance']:.4g} vs "
                   f"sectorial {sectorial:.4g}; factor {factor:.3g}")


def test_criterion_09_protocol_equivalence():
    rng = np.random.default_rng(59)
    cloud = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    consensus_ok = union_ok = True
    for _ in range(1000):
        n = int(rng.integers(1, 17))
        mus = np.round(rng.uniform(0, 0.9, n), 1)  # coarse values force ties
        lengths = rng.uniform(0.05, 5.0, n)
        recs = [AgentMapRecord(i + 1, cloud, float(lengths[i]), float(mus[i]))
                for i in range(n)]
        length, winner = ring_consensus_length(recs)
        best = min(recs, key=lambda rec: (rec.local_mu_norm, rec.agent_id))
        consensus_ok &= (winner == best.agent_id
                         and length == best.local_length)

        pairs = rng.uniform(0, 100, (n, 2))
        partials = [{(i + 1, 0): (float(pairs[i, 0]), float(pairs[i, 1]))}
                    for i in range(n)]
        total = ring_union_costs(partials)
        union_ok &= (abs(total[0] - pairs[:, 0].sum()) < 1e-9
                     and abs(total[1] - pairs[:, 1].sum()) < 1e-9)
    ok = consensus_ok and union_ok
    _report(9, ok, f"1000 consensus instances ok={consensus_ok}, "
                   f"1000 union instances ok={union_ok}")


def _flat_patch(n):
    xs = np.linspace(0, 1, n)
    gx, gy = np.meshgrid(xs, xs)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    loop = ([j for j in range(n)] +
            [i * n + (n - 1) for i in range(1, n)] +
            [(n - 1) * n + j for j in range(n - 2, -1, -1)] +
            [i * n for i in range(n - 2, 0, -1)])
    return build_delaunay(pts, loop)


def test_criterion_10_metric_axioms(chart_graph):
    rng = np.random.default_rng(67)
    pool = rng.choice(len(chart_graph.mesh.vertices), 60, replace=False)
    axioms_ok = True
    for _ in range(1000):
        a, b, c = (int(pool[k]) for k in rng.integers(0, 60, 3))
        dab = chart_graph.vertex_distance(a, b)
        axioms_ok &= dab >= 0
        axioms_ok &= abs(dab - chart_graph.vertex_distance(b, a)) <= 1e-10
        axioms_ok &= dab <= (chart_graph.vertex_distance(a, c)
                             + chart_graph.vertex_distance(c, b) + 1e-10)
        if a == b:
            axioms_ok &= dab == 0.0

    errs = {}
    for n, bound in [(9, 0.05), (33, 0.02)]:
        graph = GeodesicGraph(_flat_patch(n))
        prng = np.random.default_rng(13)
        worst = 0.0
        checked = 0
        while checked < 40:
            p, q = prng.uniform(0.02, 0.98, (2, 2))
            ref = np.linalg.norm(p - q)
            if ref < 0.3 * np.sqrt(2):
                continue
            worst = max(worst, abs(graph.distance(p, q) - ref) / ref)
            checked += 1
        errs[n] = (worst, bound)
    ok = (axioms_ok and errs[9][0] < errs[9][1]
          and errs[33][0] < errs[33][1])
    _report(10, ok, f"1000 triples ok={axioms_ok}; flat patch "
                    f"{100 * errs[9][0]:.2f}% (<5%), 4x refined "
                    f"{100 * errs[33][0]:.2f}% (<2%)")
