"""Analytic workload density stand-ins, sampled onto a mesh.

Densities are functions of the annulus-chart coordinates; each generator
returns a DensityField on the given mesh.
"""

import numpy as np

from .coverage import DensityField
from .mesh import TriMesh


def uniform_density(mesh: TriMesh, value: float = 1.0) -> DensityField:
    return DensityField(mesh, np.full(len(mesh.vertices), float(value)))


def gaussian_bumps_density(mesh: TriMesh, centers, widths, amplitudes,
                           baseline: float = 0.05) -> DensityField:
    """Sum of isotropic Gaussian bumps over a strictly positive baseline."""
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    widths = np.broadcast_to(np.asarray(widths, dtype=float), len(centers))
    amplitudes = np.broadcast_to(np.asarray(amplitudes, dtype=float),
                                 len(centers))
    if baseline <= 0:
        raise ValueError("baseline must be strictly positive")
    d2 = np.sum((mesh.vertices[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    vals = baseline + np.sum(amplitudes * np.exp(-d2 / (2 * widths ** 2)),
                             axis=1)
    return DensityField(mesh, vals)


def radial_gradient_density(mesh: TriMesh, center=(0.0, 0.0),
                            inner_value: float = 1.0,
                            outer_value: float = 2.0) -> DensityField:
    """Linear ramp in distance from the center, clipped to stay positive."""
    r = np.linalg.norm(mesh.vertices - np.asarray(center, dtype=float), axis=1)
    lo, hi = r.min(), r.max()
    frac = (r - lo) / (hi - lo) if hi > lo else np.zeros_like(r)
    vals = inner_value + frac * (outer_value - inner_value)
    return DensityField(mesh, vals)


DENSITY_GENERATORS = {
    "uniform": uniform_density,
    "gaussian_bumps": gaussian_bumps_density,
    "radial_gradient": radial_gradient_density,
}


def make_density(name: str, mesh: TriMesh, params: dict | None = None,
                 total_mass: float | None = None) -> DensityField:
    if name not in DENSITY_GENERATORS:
        raise ValueError(f"unknown density generator '{name}'; "
                         f"choose from {sorted(DENSITY_GENERATORS)}")
    field = DENSITY_GENERATORS[name](mesh, **(params or {}))
    if total_mass is not None:
        field = field.normalized(total_mass)
    return field
