"""Shared fleet state: reservations and dynamic probability adaptions.

A reservation announces which resource an agent is heading for and when it
expects to arrive; other fleet agents treat that resource as occupied when
they would get there later. Probability adaptions go further: biased random
walks simulate where an agent would fall back to if its preferred spot is
taken, and the resulting visit mass is subtracted from the predicted
availability of surrounding resources.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from .availability import AdaptionOverlay, OverlayDelta, availability_after_rates
from .errors import AdaptionError, DegenerateTargetError
from .graph import isochrone_nodes

if TYPE_CHECKING:  # pragma: no cover - type hints only
    from .planners import PlanningView, RouteDecision


@dataclass(frozen=True)
class Reservation:
    resource: str
    agent: str
    t_arrival: float


class ReservationTable:
    """Active reservations, at most one per agent, indexed both ways."""

    def __init__(self) -> None:
        self._by_agent: dict[str, Reservation] = {}
        self._by_resource: dict[str, dict[str, Reservation]] = {}

    def place(self, agent: str, resource: str, t_arrival: float) -> Reservation:
        """Replace the agent's previous reservation with a new one."""
        self.cancel(agent)
        res = Reservation(resource, agent, t_arrival)
        self._by_agent[agent] = res
        self._by_resource.setdefault(resource, {})[agent] = res
        return res

    def cancel(self, agent: str) -> None:
        old = self._by_agent.pop(agent, None)
        if old is not None:
            holders = self._by_resource[old.resource]
            del holders[agent]
            if not holders:
                del self._by_resource[old.resource]

    def for_agent(self, agent: str) -> Reservation | None:
        return self._by_agent.get(agent)

    def for_resource(self, resource: str) -> tuple[Reservation, ...]:
        return tuple(self._by_resource.get(resource, {}).values())

    def all(self) -> tuple[Reservation, ...]:
        return tuple(self._by_agent.values())

    def __len__(self) -> int:
        return len(self._by_agent)


def reservation_blocks(res: Reservation, querying_agent: str | None, query_arrival: float) -> bool:
    """Whether a reservation makes the resource look occupied to a later arrival.

    Strictly earlier reservations always block. At exactly equal arrival times
    the agent that reserved first in id order keeps the claim, which mirrors
    how the simulator resolves simultaneous claims.
    """
    if res.agent == querying_agent:
        return False
    if res.t_arrival < query_arrival:
        return True
    return res.t_arrival == query_arrival and (querying_agent is None or res.agent < querying_agent)


def effective_availability(
    table: ReservationTable | None,
    resource: str,
    querying_agent: str | None,
    query_arrival: float,
    currently_available: bool,
) -> bool:
    """Availability as seen by a fleet agent expecting to arrive at ``query_arrival``."""
    if not currently_available:
        return False
    if table is None:
        return True
    return not any(reservation_blocks(r, querying_agent, query_arrival) for r in table.for_resource(resource))


def reservation_from_decision(agent: str, decision: "RouteDecision") -> Reservation | None:
    """Reservation implied by a decision: the committed target at its expected arrival."""
    if decision.target_resource is None or decision.expected_arrival is None:
        return None
    return Reservation(decision.target_resource, agent, decision.expected_arrival)


@dataclass(frozen=True)
class WalkPath:
    """One finished random walk: the streets taken and the surviving probability mass."""

    edges: tuple[str, ...]
    path_probability: float
    accumulated_time: float
    final_edge: str


@dataclass
class AdaptionRecord:
    """All overlay entries one agent created for one target; reversible as a unit."""

    owner: str
    entries: list[OverlayDelta] = field(default_factory=list)
    reversed: bool = False


def _occupied_probability(view: "PlanningView", res_idx: int, at: float) -> float:
    p = float(
        availability_after_rates(
            view.lam_vec[res_idx], view.mu_vec[res_idx],
            max(0.0, at - view.now), bool(view.avail[res_idx]),
        )
    )
    if view.overlay is not None:
        p -= view.overlay.pending_subtraction(view.ctx.res_ids[res_idx], at, view.agent_id)
    return 1.0 - min(1.0, max(0.0, p))


def _edge_jump_weight(
    view: "PlanningView",
    edge_id: str,
    t_acc: float,
    visited: set[str],
    dest_node_idx: int,
    isochrone_s: float,
    visit_decay: float,
) -> float:
    """Biased jump weight: visit decay times distance penalty times the chance of a free spot."""
    ctx = view.ctx
    edge = ctx.graph.edges[edge_id]
    theta = visit_decay if edge_id in visited else 1.0
    delta = min(1.0, ctx.M[ctx.node_index[edge.to_node], dest_node_idx] / isochrone_s)
    occupied_product = 1.0
    for rid in ctx.graph.resources_by_edge[edge_id]:
        occupied_product *= _occupied_probability(view, ctx.res_index[rid], t_acc)
    return theta * delta * (1.0 - occupied_product)


def adapt_probabilities(
    view: "PlanningView",
    target_resource: str,
    t_arrival: float,
    agent: str,
    *,
    samples: int = 30,
    isochrone_s: float = 300.0,
    visit_decay: float = 0.95,
    rng: np.random.Generator,
    dest_node: str | None = None,
    max_steps: int = 1000,
) -> AdaptionRecord:
    """Simulate fallback search behavior and subtract its visit mass from predictions.

    Runs ``samples`` self-interacting biased random walks starting at the end
    of the target's street. Each walk carries the probability of still
    searching; per step, candidate edges inside the isochrone around the
    target get a jump weight, a single uniform draw either picks an edge
    (proportionally to the weights) or, when it exceeds the total weight,
    ends the walk. Finished walks are turned into overlay deltas grouped by
    their final street.
    """
    if samples < 1:
        raise ValueError("need at least one walk")
    if isochrone_s <= 0:
        raise ValueError("isochrone limit must be positive")
    ctx = view.ctx
    target = ctx.graph.resources[target_resource]
    target_edge = ctx.graph.edges[target.edge_id]
    t_idx = ctx.res_index[target_resource]
    start_node = target_edge.to_node
    if not ctx.out_edges[start_node]:
        raise DegenerateTargetError(
            f"target street {target_edge.id!r} ends in a dead end at {start_node!r}"
        )
    iso_nodes = isochrone_nodes(ctx.graph, ctx.matrix, target_edge.from_node, isochrone_s)
    dest_idx = ctx.node_index[dest_node if dest_node is not None else target_edge.from_node]

    p_initial = _occupied_probability(view, t_idx, t_arrival)
    t_partial = target_edge.drive_time_s - target.offset_s
    paths: list[WalkPath] = []
    for _ in range(samples):
        p_path = p_initial
        t_acc = t_arrival + t_partial
        node = start_node
        visited: set[str] = set()
        taken: list[str] = []
        final_edge = target_edge.id
        for _ in range(max_steps):
            cands = [e for e in ctx.out_edges[node] if e.to_node in iso_nodes]
            if not cands:
                break
            weights = [
                _edge_jump_weight(view, e.id, t_acc, visited, dest_idx, isochrone_s, visit_decay)
                for e in cands
            ]
            total = float(sum(weights))
            if total <= 0.0:
                break
            draw = float(rng.random()) * max(total, 1.0)
            if draw > total:
                break
            cum = 0.0
            chosen = None
            for e, w in zip(cands, weights):
                cum += w
                if draw <= cum:
                    chosen = (e, w)
                    break
            if chosen is None:  # guard against float roundoff at the boundary
                chosen = (cands[-1], weights[-1])
            edge, weight = chosen
            p_path *= weight
            t_acc += edge.drive_time_s
            visited.add(edge.id)
            taken.append(edge.id)
            final_edge = edge.id
            node = edge.to_node
        # A walk that never left the target's street describes staying at the
        # target itself, so it anchors at the arrival time there.
        paths.append(WalkPath(tuple(taken), p_path, t_acc if taken else t_arrival, final_edge))
    return create_adaptions(paths, agent, view.graph, view.overlay)


def create_adaptions(paths, agent: str, graph, overlay: AdaptionOverlay) -> AdaptionRecord:
    """Distribute grouped path probabilities over the resources of each final street."""
    record = AdaptionRecord(owner=agent)
    groups: dict[str, list[WalkPath]] = {}
    for p in paths:
        groups.setdefault(p.final_edge, []).append(p)
    for edge_id in sorted(groups):
        members = groups[edge_id]
        resource_ids = graph.resources_by_edge.get(edge_id, ())
        if not resource_ids:
            continue
        mean_arrival = sum(p.accumulated_time for p in members) / len(members)
        mean_prob = sum(p.path_probability for p in members) / len(members)
        delta = mean_prob / len(resource_ids)
        for rid in resource_ids:
            record.entries.append(overlay.add(rid, mean_arrival, delta, agent))
    return record


def reverse_adaptions(record: AdaptionRecord, overlay: AdaptionOverlay) -> AdaptionOverlay:
    """Remove exactly the record's entries, restoring prior predictions bit for bit."""
    if record.reversed:
        raise AdaptionError(f"adaption record of {record.owner!r} already reversed")
    try:
        for entry in record.entries:
            overlay.remove(entry)
    except KeyError as exc:
        raise AdaptionError(f"adaption record of {record.owner!r} is not applied") from exc
    record.reversed = True
    return overlay
