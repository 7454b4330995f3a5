"""Distributed map agreement: ring consensus on the rectangle length and
ICP-based merging of per-agent point clouds.

The ring protocol is simulated in-process with explicit message records so
the information flow is testable; there is no real networking.
"""

from dataclasses import dataclass, field
import json

import numpy as np
from scipy.spatial import cKDTree

from .mesh import TopologyError


@dataclass
class AgentMapRecord:
    """One agent's local mapping result: its point cloud in rectangle
    coordinates, the rectangle length it found, and the distortion norm."""

    agent_id: int
    sub_cloud: np.ndarray
    local_length: float
    local_mu_norm: float
    inverse_map: object = None          # rectangle point -> region point
    point_labels: np.ndarray | None = None

    def __post_init__(self):
        self.sub_cloud = np.asarray(self.sub_cloud, dtype=float)
        if self.sub_cloud.size == 0:
            raise ValueError(f"agent {self.agent_id}: empty sub-cloud")
        if not 0 <= self.local_mu_norm < 1:
            raise ValueError(f"agent {self.agent_id}: mu norm "
                             f"{self.local_mu_norm} outside [0, 1)")


@dataclass(frozen=True)
class RigidTransform:
    angle: float
    translation: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        c, s = np.cos(self.angle), np.sin(self.angle)
        return np.array([[c, -s], [s, c]])

    def apply(self, points: np.ndarray) -> np.ndarray:
        return points @ self.matrix.T + self.translation

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(0.0, np.zeros(2))


def ring_consensus_length(records: list[AgentMapRecord], trace: list | None = None):
    """Agree on the rectangle length of the agent with the smallest
    distortion norm by passing (norm, length, id) around the ring.

    Sweeps run until no agent updates (at most N sweeps); ties go to the
    lowest agent id.  Returns (length, winning agent id).
    """
    if not records:
        raise ValueError("no records to agree on")
    records = sorted(records, key=lambda r: r.agent_id)
    n = len(records)
    # each agent's current belief: (mu_norm, agent_id, length)
    best = [(r.local_mu_norm, r.agent_id, r.local_length) for r in records]
    for sweep in range(n):
        updated = False
        nxt = list(best)
        for j in range(n):
            for neighbor in ((j - 1) % n, (j + 1) % n):
                msg = best[neighbor]
                if trace is not None:
                    trace.append({"sweep": sweep,
                                  "from": records[neighbor].agent_id,
                                  "to": records[j].agent_id,
                                  "mu_norm": msg[0], "agent": msg[1],
                                  "length": msg[2]})
                if msg[:2] < nxt[j][:2]:
                    nxt[j] = msg
                    updated = True
        best = nxt
        if not updated:
            break
    winner = best[0]
    return winner[2], winner[1]


def write_message_trace(path, trace: list[dict]):
    """One JSON document per line, one line per ring message."""
    with open(path, "w") as fh:
        for msg in trace:
            fh.write(json.dumps(msg, sort_keys=True) + "\n")


def icp_register(source: np.ndarray, target: np.ndarray, max_iters: int = 50,
                 tol: float = 1e-12):
    """Rigid alignment of source onto target by nearest-neighbor ICP.

    Returns (RigidTransform, final RMS error).  RMS is nonincreasing across
    iterations; stops when the improvement drops below tol.
    """
    source = np.asarray(source, dtype=float)
    target = np.asarray(target, dtype=float)
    if source.shape[0] < 3 or target.shape[0] < 3:
        raise ValueError("ICP needs at least 3 points in each cloud")
    tree = cKDTree(target)
    current = source.copy()
    angle, trans = 0.0, np.zeros(2)
    prev_rms = np.inf
    rms = np.inf
    for _ in range(max_iters):
        dist, idx = tree.query(current)
        rms = float(np.sqrt(np.mean(dist ** 2)))
        if prev_rms - rms < tol:
            break
        prev_rms = rms
        matched = target[idx]
        # best rigid motion in the least-squares sense (SVD of the covariance)
        mu_s = current.mean(axis=0)
        mu_t = matched.mean(axis=0)
        H = (current - mu_s).T @ (matched - mu_t)
        U, _, Vt = np.linalg.svd(H)
        D = np.diag([1.0, np.sign(np.linalg.det(Vt.T @ U.T))])
        Rm = Vt.T @ D @ U.T
        t = mu_t - Rm @ mu_s
        current = current @ Rm.T + t
        angle += np.arctan2(Rm[1, 0], Rm[0, 0])
        trans = Rm @ trans + t
    return RigidTransform(float(np.remainder(angle + np.pi, 2 * np.pi) - np.pi),
                          trans), rms


def merge_global_cloud(records: list[AgentMapRecord], length_star: float,
                       merge_eps: float | None = None) -> np.ndarray:
    """Fuse per-agent clouds into one region cloud.

    Each sub-cloud is rescaled in x by L*/L_t, pushed through that agent's
    inverse rectangle map, then ICP-aligned and appended in ring order;
    points closer than merge_eps to the running cloud are coalesced.
    """
    if not records:
        raise ValueError("no records to merge")
    records = sorted(records, key=lambda r: r.agent_id)

    clouds = []
    labels = []
    for r in records:
        pts = r.sub_cloud.copy()
        pts[:, 0] *= length_star / r.local_length
        if r.inverse_map is not None:
            pts = np.asarray(r.inverse_map(pts), dtype=float)
        clouds.append(pts)
        labels.append(r.point_labels if r.point_labels is not None
                      else np.zeros(len(pts), dtype=int))

    allpts = np.vstack(clouds)
    diameter = float(np.max(allpts.max(axis=0) - allpts.min(axis=0)))
    if merge_eps is None:
        merge_eps = 1e-6 * diameter

    merged = clouds[0]
    merged_labels = labels[0]
    for pts, lab in zip(clouds[1:], labels[1:]):
        if len(pts) >= 3 and len(merged) >= 3:
            transform, _ = icp_register(pts, merged)
            pts = transform.apply(pts)
        dist, _ = cKDTree(merged).query(pts)
        keep = dist >= merge_eps
        merged = np.vstack([merged, pts[keep]])
        merged_labels = np.concatenate([merged_labels, lab[keep]])

    has_labels = any(r.point_labels is not None for r in records)
    if has_labels:
        for loop_label in (1, 2):
            if np.sum(merged_labels == loop_label) < 3:
                raise TopologyError(
                    f"merged cloud has < 3 points on boundary {loop_label}")
    return merged
