"""Anchor sweep over partition phases.

The sweep discretizes [0, 2pi) into K* anchor phases, runs one coverage
episode per anchor with the anchor-nearest agent's bar frozen, merges the
per-agent cost records through a simulated ring union, and keeps the
configuration with the lowest original-region cost.
"""

from dataclasses import dataclass, replace

import numpy as np

from .conformal import MappingAtlas
from .metric import GeodesicGraph
from .coverage import (Gains, PartitionState, Quadrature, WorkloadProfile,
                       _sub_attachments, agent_step, partition_step,
                       sector_costs, sector_masses)

TWO_PI = 2 * np.pi


class SweepError(RuntimeError):
    """An anchor episode failed or the record set is incomplete."""


@dataclass(frozen=True)
class AnchorPlan:
    """Evenly spaced anchor phases at the requested angular resolution."""

    eps_p: float
    K_star: int
    anchors: np.ndarray


def make_anchor_plan(eps_p: float) -> AnchorPlan:
    """Smallest anchor count K with spacing 2pi/K at or below eps_p."""
    if not 0 < eps_p < TWO_PI:
        raise ValueError(f"angular tolerance {eps_p} outside (0, 2*pi)")
    k = max(1, int(np.floor(TWO_PI / eps_p)))
    if TWO_PI / k > eps_p:
        k += 1
    return AnchorPlan(eps_p, k, TWO_PI * np.arange(k) / k)


def closest_agent(psi: np.ndarray, anchor: float) -> np.ndarray:
    """Indices of the bars at minimal circular distance from the anchor.

    Ties return every attaining index; callers freeze the smallest one.
    """
    psi = np.asarray(psi, dtype=float)
    dist = np.abs((psi - anchor + np.pi) % TWO_PI - np.pi)
    return np.where(dist == dist.min())[0]


@dataclass(frozen=True)
class EpisodeRecord:
    """Outcome of one anchor episode, evaluated in both spaces."""

    anchor_index: int
    frozen_agent: int
    psi: np.ndarray
    agents_xi: np.ndarray
    agents_orig: np.ndarray
    agent_costs: np.ndarray        # per-sector cost on the annulus chart
    agent_costs_orig: np.ndarray   # per-sector cost in the original region
    masses: np.ndarray

    @property
    def total_cost(self) -> float:
        return float(np.sum(self.agent_costs))

    @property
    def total_cost_orig(self) -> float:
        return float(np.sum(self.agent_costs_orig))


@dataclass
class SweepContext:
    """Everything an episode needs besides the evolving state.

    The original-region pieces are optional; without them the chart costs
    double as the original costs (exact when the chart metric is pulled
    back, since distances then agree by construction).
    """

    profile: WorkloadProfile
    graph: GeodesicGraph
    quad: Quadrature
    atlas: MappingAtlas | None = None
    graph_orig: GeodesicGraph | None = None
    quad_orig: Quadrature | None = None
    orig_angles: np.ndarray | None = None

    def __post_init__(self):
        if self.quad.attachments is None:
            self.quad = self.quad.with_attachments(self.graph)
        if self.quad_orig is not None and self.quad_orig.attachments is None:
            self.quad_orig = self.quad_orig.with_attachments(self.graph_orig)
        if self.quad_orig is not None and self.orig_angles is None:
            if self.atlas is None:
                raise ValueError("original-space quadrature needs the atlas "
                                 "to assign points to sectors")
            img = self.atlas.forward(self.quad_orig.points)
            self.orig_angles = np.arctan2(img[:, 1], img[:, 0]) % TWO_PI


def _labels_from_angles(psi: np.ndarray, theta: np.ndarray) -> np.ndarray:
    n = len(psi)
    nxt = np.roll(psi, -1)
    labels = np.zeros(len(theta), dtype=int)
    assigned = np.zeros(len(theta), dtype=bool)
    for i in range(n):
        a, b = psi[i] % TWO_PI, nxt[i] % TWO_PI
        inside = ((theta >= a) & (theta < b)) if a < b else \
                 ((theta >= a) | (theta < b))
        labels[inside & ~assigned] = i
        assigned |= inside
    return labels


def original_sector_costs(state: PartitionState, ctx: SweepContext) -> np.ndarray:
    """Per-agent coverage cost measured in the original region.

    Sector membership follows the chart partition: each original-region
    quadrature point belongs to the sector its forward image falls in.
    """
    if ctx.quad_orig is None:
        return sector_costs(state, ctx.graph, ctx.quad)
    labels = _labels_from_angles(state.psi, ctx.orig_angles)
    out = np.zeros(state.n)
    for i in range(state.n):
        sel = labels == i
        if not np.any(sel):
            continue
        sub = _sub_attachments(ctx.quad_orig, sel)
        d, _ = ctx.graph_orig.distances_from(state.agents_orig[i], sub,
                                             direct_visible=True)
        out[i] = float(np.sum(d ** 2 * ctx.quad_orig.weights[sel]))
    return out


def run_anchor_episode(k: int, plan: AnchorPlan, initial: PartitionState,
                       T_eps: float, gains: Gains,
                       ctx: SweepContext) -> EpisodeRecord:
    """One coverage episode with the bar nearest anchor k held fixed.

    The frozen agent is chosen once at episode start (smallest index among
    the nearest bars) and keeps its bar for the whole episode; its position
    still evolves.  T_eps = 0 evaluates the initial state as-is.
    """
    if not 0 <= k < plan.K_star:
        raise ValueError(f"anchor index {k} outside [0, {plan.K_star})")
    frozen = int(closest_agent(initial.psi, plan.anchors[k]).min())
    steps = int(round(T_eps / gains.dt))
    state = initial
    try:
        for _ in range(steps):
            psi = partition_step(state, ctx.profile, gains, frozen=(frozen,))
            state = replace(state, psi=psi,
                            masses=sector_masses(ctx.profile, psi))
            state = agent_step(state, gains, ctx.graph, ctx.quad, ctx.atlas)
    except Exception as exc:
        raise SweepError(f"anchor {k}: episode failed: {exc}") from exc
    costs = sector_costs(state, ctx.graph, ctx.quad)
    costs_orig = original_sector_costs(state, ctx)
    return EpisodeRecord(k, frozen, state.psi, state.agents_xi,
                         state.agents_orig, costs, costs_orig,
                         sector_masses(ctx.profile, state.psi))


def run_sweep(plan: AnchorPlan, initial: PartitionState, T_eps: float,
              gains: Gains, ctx: SweepContext,
              threads: int = 1) -> list[EpisodeRecord]:
    """All K* episodes from the shared initial state.

    Anchors freezing the same agent produce identical episodes, so each
    distinct frozen agent is integrated once and the result shared.  With
    threads > 1 the distinct episodes run concurrently.
    """
    first_anchor: dict[int, int] = {}
    for k in range(plan.K_star):
        frozen = int(closest_agent(initial.psi, plan.anchors[k]).min())
        first_anchor.setdefault(frozen, k)

    def episode(k):
        return run_anchor_episode(k, plan, initial, T_eps, gains, ctx)

    if threads > 1 and len(first_anchor) > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(episode, first_anchor.values()))
        by_agent = dict(zip(first_anchor.keys(), results))
    else:
        by_agent = {a: episode(k) for a, k in first_anchor.items()}

    records = []
    for k in range(plan.K_star):
        frozen = int(closest_agent(initial.psi, plan.anchors[k]).min())
        records.append(replace(by_agent[frozen], anchor_index=k))
    return records


def ring_union_costs(partials: list[dict]) -> tuple[float, float]:
    """Fixed-point set union of per-agent cost records around the ring.

    partials[i] maps (agent_id, anchor) -> (chart cost, original cost);
    keying by agent keeps equal numeric costs from collapsing.  Returns the
    totals every agent ends up holding.
    """
    if not partials:
        raise ValueError("empty ring")
    n = len(partials)
    held = [dict(p) for p in partials]
    for _ in range(n):
        changed = False
        for i in range(n):
            incoming = held[(i - 1) % n]
            before = len(held[i])
            held[i].update(incoming)
            changed |= len(held[i]) != before
        if not changed:
            break
    full = held[0]
    for d in held[1:]:
        if d.keys() != full.keys():
            raise SweepError("ring union did not reach a common record set")
    total = float(sum(v[0] for v in full.values()))
    total_orig = float(sum(v[1] for v in full.values()))
    return total, total_orig


def select_best(records: list[EpisodeRecord],
                expected: int | None = None) -> tuple[int, EpisodeRecord]:
    """Argmin of the original-region total cost; ties take the smaller
    anchor index."""
    if not records:
        raise SweepError("no episode records to select from")
    seen = {r.anchor_index for r in records}
    n = expected if expected is not None else max(seen) + 1
    missing = set(range(n)) - seen
    if missing:
        raise SweepError(f"missing episode records for anchors {sorted(missing)}")
    best = min(records, key=lambda r: (r.total_cost_orig, r.anchor_index))
    return best.anchor_index, best
