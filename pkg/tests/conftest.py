"""Shared fixtures: a moderately sized reference annulus and its mapping."""

import numpy as np
import pytest

from seccov.mesh import build_delaunay
from seccov.conformal import build_annulus_atlas
from seccov.metric import GeodesicGraph


def ring(radius, n, phase=0.0):
    t = np.linspace(0, 2 * np.pi, n, endpoint=False) + phase
    return np.column_stack([radius * np.cos(t), radius * np.sin(t)])


def reference_annulus_mesh():
    """Irregular annulus, inner radius 0.5, outer radius 1, 458 vertices."""
    pts = [ring(1.0, 64), ring(0.5, 40)]
    for r, n in [(0.56, 42), (0.62, 44), (0.68, 48), (0.74, 50), (0.8, 54),
                 (0.86, 56), (0.93, 60)]:
        pts.append(ring(r, n, phase=0.13 * r))
    points = np.vstack(pts)
    return build_delaunay(points, np.arange(64), np.arange(64, 104))


@pytest.fixture(scope="session")
def annulus_mesh():
    return reference_annulus_mesh()


@pytest.fixture(scope="session")
def annulus_atlas(annulus_mesh):
    return build_annulus_atlas(annulus_mesh)


@pytest.fixture(scope="session")
def chart_graph(annulus_atlas):
    return GeodesicGraph(annulus_atlas.chart_mesh)
