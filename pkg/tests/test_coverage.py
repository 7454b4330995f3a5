import numpy as np
import pytest
from dataclasses import replace

from seccov.coverage import (DensityField, Gains, IntegrationError,
                             PartitionState, agent_step,
                             angular_workload_profile, build_quadrature,
                             centroid_solve, cost_gradient, coverage_cost,
                             lyapunov_value, mass_weighted_mean,
                             partition_step, sector_labels, sector_mass,
                             sector_masses)
from seccov.regions import annulus_region
from seccov.conformal import build_annulus_atlas


@pytest.fixture(scope="module")
def chart_setup(annulus_atlas, chart_graph):
    chart = annulus_atlas.chart_mesh
    dens = DensityField.from_function(
        chart, lambda p: 1.0 + 0.5 * p[0]).normalized(100.0)
    quad = build_quadrature(dens).with_attachments(chart_graph)
    profile = angular_workload_profile(dens, 256)
    return chart, dens, quad, profile


def test_density_rejects_nonpositive(annulus_atlas):
    chart = annulus_atlas.chart_mesh
    with pytest.raises(ValueError):
        DensityField(chart, np.zeros(len(chart.vertices)))


def test_density_normalization(chart_setup):
    chart, dens, quad, _ = chart_setup
    assert np.sum(quad.weights) == pytest.approx(100.0, rel=1e-9)


def test_profile_conserves_mass(chart_setup):
    _, dens, quad, profile = chart_setup
    assert profile.total == pytest.approx(np.sum(quad.weights), rel=1e-9)


def test_uniform_profile_on_structured_mesh():
    # rotationally structured mesh: every wedge carries the same workload
    mesh = annulus_region(target_edge=0.1, ring_count=64)
    atlas = build_annulus_atlas(mesh)
    dens = DensityField.from_function(atlas.chart_mesh, lambda p: 1.0)
    profile = angular_workload_profile(dens, 16)
    spread = (profile.bin_mass.max() - profile.bin_mass.min()) \
        / profile.bin_mass.mean()
    assert spread < 0.02


def test_sector_mass_wrap(chart_setup):
    _, _, _, profile = chart_setup
    total = profile.total
    quarter = sector_mass(profile, 0.0, np.pi / 2)
    rest = sector_mass(profile, np.pi / 2, 0.0)
    assert quarter + rest == pytest.approx(total, rel=1e-9)
    assert sector_mass(profile, 1.0, 1.0) == 0.0
    # wrap through zero equals the complement
    a, b = 3 * np.pi / 2, np.pi / 2
    assert sector_mass(profile, a, b) == \
        pytest.approx(total - sector_mass(profile, b, a), rel=1e-9)


def test_sector_masses_sum(chart_setup):
    _, _, _, profile = chart_setup
    psi = np.array([0.3, 1.8, 3.2, 4.9])
    masses = sector_masses(profile, psi)
    assert np.sum(masses) == pytest.approx(profile.total, rel=1e-9)


def test_sector_labels_wrap():
    psi = np.array([5.5, 1.0, 3.0])
    pts = np.array([[np.cos(0.1), np.sin(0.1)],     # inside [5.5, 1.0) wrap
                    [np.cos(2.0), np.sin(2.0)],
                    [np.cos(4.0), np.sin(4.0)]])
    assert sector_labels(psi, pts).tolist() == [0, 1, 2]


def test_partition_step_stability_guard(chart_setup):
    _, _, _, profile = chart_setup
    psi = np.array([0.3, 1.8, 3.2, 4.9])
    state = PartitionState(psi, np.zeros((4, 2)), np.zeros((4, 2)),
                           sector_masses(profile, psi))
    with pytest.raises(IntegrationError):
        partition_step(state, profile, Gains(k_psi=1.0, k_p=0.1, dt=1.0))


def test_partition_step_frozen(chart_setup):
    _, _, _, profile = chart_setup
    psi = np.array([0.3, 1.8, 3.2, 4.9])
    state = PartitionState(psi, np.zeros((4, 2)), np.zeros((4, 2)),
                           sector_masses(profile, psi))
    gains = Gains(k_psi=0.03, k_p=0.1, dt=0.05)
    new_psi = partition_step(state, profile, gains, frozen=(2,))
    assert new_psi[2] == psi[2]
    assert not np.allclose(np.delete(new_psi, 2), np.delete(psi, 2))


def test_gains_validation():
    with pytest.raises(ValueError):
        Gains(k_psi=0.0, k_p=0.1, dt=0.05)


def test_state_rejects_disordered_bars():
    with pytest.raises(ValueError):
        PartitionState(np.array([0.3, 3.2, 1.8]), np.zeros((3, 2)),
                       np.zeros((3, 2)), np.zeros(3))


def test_lyapunov():
    assert lyapunov_value(np.array([2.0, 2.0, 2.0])) == 0.0
    assert lyapunov_value(np.array([1.0, 3.0])) == pytest.approx(1.0)


def test_cost_gradient_matches_fd(chart_setup, chart_graph):
    chart, dens, quad, profile = chart_setup
    psi = np.array([0.3, 1.8, 3.2, 4.9])
    rng = np.random.default_rng(23)
    worst = 0.0
    checked = 0
    while checked < 8:
        t = rng.uniform(0, 2 * np.pi, 4)
        r = rng.uniform(0.6, 0.9, 4)
        agents = np.column_stack([r * np.cos(t), r * np.sin(t)])
        state = PartitionState(psi, agents, agents,
                               sector_masses(profile, psi))
        i = int(rng.integers(0, 4))
        g = cost_gradient(state, i, chart_graph, quad)
        h = 1e-6
        fd = np.empty(2)
        for ax in range(2):
            e = np.zeros(2)
            e[ax] = h
            up = replace(state, agents_xi=agents + np.outer(
                np.eye(4)[i], e))
            dn = replace(state, agents_xi=agents - np.outer(
                np.eye(4)[i], e))
            fd[ax] = (coverage_cost(up, chart_graph, quad) -
                      coverage_cost(dn, chart_graph, quad)) / (2 * h)
        worst = max(worst, np.linalg.norm(g - fd) / max(np.linalg.norm(fd),
                                                        1e-12))
        checked += 1
    assert worst < 1e-3


def test_agent_step_advances_time(chart_setup, chart_graph, annulus_atlas):
    chart, dens, quad, profile = chart_setup
    psi = np.array([0.3, 1.8, 3.2, 4.9])
    agents = np.array([[0.7, 0.1], [-0.1, 0.7], [-0.7, -0.1], [0.1, -0.7]])
    state = PartitionState(psi, agents, annulus_atlas.inverse(agents),
                           sector_masses(profile, psi))
    gains = Gains(k_psi=0.03, k_p=0.1, dt=0.05)
    nxt = agent_step(state, gains, chart_graph, quad, annulus_atlas)
    assert nxt.time == pytest.approx(state.time + gains.dt)
    for p in nxt.agents_xi:
        assert chart.locate_point(p)[0] >= 0
    # both-space consistency through the inverse chart map
    assert np.allclose(annulus_atlas.forward(nxt.agents_orig),
                       nxt.agents_xi, atol=1e-9)


def test_centroid_solve_symmetric_sector(chart_setup, chart_graph):
    chart, dens, quad, profile = chart_setup
    mask = np.ones(len(quad.points), dtype=bool)
    start = np.array([0.75, 0.0])
    p = centroid_solve(start, chart_graph, quad, mask, tol=1e-3, strict=False)
    assert chart.locate_point(p)[0] >= 0


def test_centroid_solve_empty_sector(chart_setup, chart_graph):
    _, _, quad, _ = chart_setup
    with pytest.raises(ValueError):
        centroid_solve(np.array([0.75, 0.0]), chart_graph, quad,
                       np.zeros(len(quad.points), dtype=bool))


def test_mass_weighted_mean(chart_setup):
    _, _, quad, _ = chart_setup
    mask = np.ones(len(quad.points), dtype=bool)
    m = mass_weighted_mean(quad, mask)
    direct = np.sum(quad.points * quad.weights[:, None], axis=0) \
        / np.sum(quad.weights)
    assert np.allclose(m, direct)
