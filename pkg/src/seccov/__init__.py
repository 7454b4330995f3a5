"""Sectorial multi-agent coverage of annular planar regions.

The pipeline: triangulate a one-hole region, map it conformally onto a
circular annulus, split the annulus into angular sectors whose bars evolve
to balance workload while agents descend their sector coverage cost, then
sweep anchor phases for the best configuration.
"""

from .mesh import (TriMesh, build_delaunay, shortest_edge_path,
                   slice_along_path, count_flipped_faces, GeometryError,
                   ContainmentError, TopologyError, ConnectivityError)
from .conformal import (MappingAtlas, BeltramiField, beltrami_coefficient,
                        lbs_solve, rectangular_map, quasiconformal_correction,
                        compose_tau, build_annulus_atlas, tau_forward,
                        tau_inverse)
from .registration import (AgentMapRecord, RigidTransform,
                           ring_consensus_length, icp_register,
                           merge_global_cloud)
from .metric import (MetricField, GeodesicGraph, geodesic_distance,
                     distance_tangent, pullback_metric, atlas_metric_fn,
                     torus_metric, MetricError)
from .coverage import (DensityField, Quadrature, WorkloadProfile, Gains,
                       PartitionState, angular_workload_profile, sector_mass,
                       sector_masses, partition_step, lyapunov_value,
                       coverage_cost, cost_gradient, control_input,
                       agent_step, centroid_solve, build_quadrature,
                       IntegrationError, ConvergenceError)
from .search import (AnchorPlan, EpisodeRecord, SweepContext,
                     make_anchor_plan, closest_agent, run_anchor_episode,
                     run_sweep, ring_union_costs, select_best, SweepError)
from .scenario import Scenario, ConfigError, load_scenario, validate_scenario
from .simulate import RunSummary, run, voronoi_baseline, build_problem
from .svg import emit_svg

__version__ = "0.1.0"
