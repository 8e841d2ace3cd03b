"""Policies mapping an agent's observed state to a drive or park action.

Four families are implemented:

* ``ReplanningPolicy`` plans in the state-frozen most likely future on an
  extended graph where each resource contributes a terminal edge, and plans
  again whenever the target's treated availability changes.
* ``HindsightPolicy`` samples deterministic futures of all resource states,
  solves each optimally, and picks the action with the best one-step
  look-ahead mean cost.
* ``RandomPolicy`` and ``HeuristicPolicy`` are no-information baselines.

All policies are deterministic functions of (view, agent state, rng stream).
Cost bookkeeping is vectorized over resources sorted by id, so ``argmin``
tie-breaks resolve to the smallest id everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .availability import (
    AdaptionOverlay,
    CtmcParams,
    ResourceBelief,
    ResourceState,
    availability_after_rates,
    expected_wait_times,
    expected_wait_times_rates,
)
from .errors import NoPathError
from .fleet import ReservationTable, reservation_blocks
from .geo import GeoPoint, great_circle_m, great_circle_m_many, walking_time_many
from .graph import Edge, RoadGraph, TravelTimeMatrix


@dataclass(frozen=True)
class TakeRoad:
    edge: str


@dataclass(frozen=True)
class TakeResource:
    resource: str


Action = TakeRoad | TakeResource


@dataclass(frozen=True)
class RouteDecision:
    action: Action
    target_resource: str | None = None
    expected_arrival: float | None = None
    q_estimates: dict[str, float] | None = None
    recomputed: bool = True


@dataclass(frozen=True)
class Determinization:
    """One sampled future: availability of every in-scope resource at the agent's arrival time."""

    available: np.ndarray  # bool, aligned with PlannerContext.res_ids
    seed: int | None = None


@dataclass(frozen=True)
class PlannerSettings:
    determinizations: int = 100
    scope_horizon_s: float | None = None
    heuristic_far_radius_m: float = 500.0
    heuristic_accept_walk_s: float = 120.0
    heuristic_relax_s_per_min: float = 10.0
    adaption_samples: int = 30
    adaption_isochrone_s: float = 300.0
    adaption_visit_decay: float = 0.95
    adaption_max_steps: int = 1000


class PlannerContext:
    """Precomputed arrays shared by every policy evaluation on one graph."""

    def __init__(self, graph: RoadGraph, matrix: TravelTimeMatrix):
        self.graph = graph
        self.matrix = matrix
        self.M = matrix.values
        self.node_ids = matrix.node_ids
        self.node_index = {nid: i for i, nid in enumerate(self.node_ids)}
        self.node_lat = np.array([graph.nodes[n].position.lat for n in self.node_ids])
        self.node_lon = np.array([graph.nodes[n].position.lon for n in self.node_ids])

        self.res_ids: tuple[str, ...] = tuple(graph.resources)
        self.res_index = {rid: i for i, rid in enumerate(self.res_ids)}
        res = [graph.resources[rid] for rid in self.res_ids]
        self.res_edge_ids = [r.edge_id for r in res]
        self.res_from_idx = np.array(
            [self.node_index[graph.edges[r.edge_id].from_node] for r in res], dtype=int
        )
        self.res_offset = np.array([r.offset_s for r in res])
        self.res_t_tr = np.array([r.round_trip_s for r in res])
        self.res_lat = np.array([r.position.lat for r in res])
        self.res_lon = np.array([r.position.lon for r in res])

        self.out_edges: dict[str, list[Edge]] = {
            nid: [graph.edges[eid] for eid in graph.out_edges[nid]] for nid in graph.nodes
        }
        adj: dict[str, list[int]] = {nid: [] for nid in graph.nodes}
        for i, r in enumerate(res):
            adj[graph.edges[r.edge_id].from_node].append(i)
        self.adjacent_res: dict[str, tuple[int, ...]] = {
            nid: tuple(sorted(ids, key=lambda i: (self.res_edge_ids[i], self.res_offset[i], self.res_ids[i])))
            for nid, ids in adj.items()
        }
        self._walk_cache: dict[tuple[float, float], np.ndarray] = {}
        self._node_walk_cache: dict[tuple[float, float], np.ndarray] = {}
        self._t_claim_cache: dict[CtmcParams, np.ndarray] = {}

    @property
    def n_resources(self) -> int:
        return len(self.res_ids)

    def walk_vector(self, destination: GeoPoint) -> np.ndarray:
        key = (destination.lat, destination.lon)
        if key not in self._walk_cache:
            self._walk_cache[key] = walking_time_many(self.res_lat, self.res_lon, destination)
        return self._walk_cache[key]

    def node_walk_vector(self, destination: GeoPoint) -> np.ndarray:
        key = (destination.lat, destination.lon)
        if key not in self._node_walk_cache:
            self._node_walk_cache[key] = walking_time_many(self.node_lat, self.node_lon, destination)
        return self._node_walk_cache[key]

    def dest_node(self, destination: GeoPoint) -> str:
        """Node whose position is walk-closest to the destination."""
        return self.node_ids[int(np.argmin(self.node_walk_vector(destination)))]

    def t_claim_vector(self, params: CtmcParams) -> np.ndarray:
        if params not in self._t_claim_cache:
            self._t_claim_cache[params] = expected_wait_times(params, self.res_t_tr)
        return self._t_claim_cache[params]

    def drive_to_resources(self, node: str) -> np.ndarray:
        """Drive seconds from a node to every resource (via its edge start, then the offset)."""
        return self.M[self.node_index[node], self.res_from_idx] + self.res_offset

    def first_hop(self, from_node: str, to_node: str) -> Edge:
        """Edge starting a least-time path; ties resolve to the smallest edge id."""
        if from_node == to_node:
            raise ValueError("already at the target node")
        ti = self.node_index[to_node]
        best: Edge | None = None
        best_cost = np.inf
        for e in self.out_edges[from_node]:
            c = e.drive_time_s + self.M[self.node_index[e.to_node], ti]
            if c < best_cost:
                best, best_cost = e, c
        if best is None or not np.isfinite(best_cost):
            raise NoPathError(f"no path from {from_node!r} to {to_node!r}")
        return best


@dataclass
class PlanningView:
    """Immutable snapshot handed to a policy for one decision.

    ``lam_vec``/``mu_vec`` carry per-resource flip rates; they default to the
    global pair in ``params`` when the scenario does not override them.
    """

    ctx: PlannerContext
    now: float
    avail: np.ndarray  # current availability per resource, aligned with ctx.res_ids
    params: CtmcParams
    reservations: ReservationTable | None = None
    overlay: AdaptionOverlay | None = None
    agent_id: str | None = None
    lam_vec: np.ndarray | None = None
    mu_vec: np.ndarray | None = None
    t_claim_vec: np.ndarray | None = None

    def __post_init__(self) -> None:
        n = self.ctx.n_resources
        if self.lam_vec is None:
            self.lam_vec = np.full(n, self.params.lam)
        if self.mu_vec is None:
            self.mu_vec = np.full(n, self.params.mu)
        if self.t_claim_vec is None:
            self.t_claim_vec = expected_wait_times_rates(self.lam_vec, self.mu_vec, self.ctx.res_t_tr)

    @property
    def graph(self) -> RoadGraph:
        return self.ctx.graph

    @property
    def matrix(self) -> TravelTimeMatrix:
        return self.ctx.matrix

    @property
    def t_claim(self) -> np.ndarray:
        return self.t_claim_vec

    @property
    def beliefs(self) -> dict[str, ResourceBelief]:
        return {
            rid: ResourceBelief(
                rid,
                ResourceState.AVAILABLE if self.avail[i] else ResourceState.OCCUPIED,
                self.now,
                CtmcParams(float(self.lam_vec[i]), float(self.mu_vec[i])),
            )
            for i, rid in enumerate(self.ctx.res_ids)
        }


def _reserved_against(view: PlanningView, arrivals: np.ndarray) -> np.ndarray:
    """Resources another fleet agent will reach no later than this agent."""
    forced = np.zeros(view.ctx.n_resources, dtype=bool)
    if view.reservations is None:
        return forced
    for res in view.reservations.all():
        if res.agent == view.agent_id:
            continue
        i = view.ctx.res_index.get(res.resource)
        if i is not None and reservation_blocks(res, view.agent_id, float(arrivals[i])):
            forced[i] = True
    return forced


def _availability_probs(view: PlanningView, arrivals: np.ndarray) -> np.ndarray:
    """Predicted availability per resource at per-resource arrival times.

    Overlay deltas from other agents are subtracted; the viewing agent's own
    deltas are not, mirroring how reservations never block their holder.
    """
    p = availability_after_rates(view.lam_vec, view.mu_vec, arrivals - view.now, view.avail)
    if view.overlay is not None and len(view.overlay):
        for rid in view.overlay.resources():
            i = view.ctx.res_index.get(rid)
            if i is not None:
                p[i] -= view.overlay.pending_subtraction(rid, float(arrivals[i]), view.agent_id)
        np.clip(p, 0.0, 1.0, out=p)
    return p


def _treated_available(view: PlanningView, arrivals: np.ndarray) -> np.ndarray:
    """State-frozen availability with reservation exclusions applied."""
    return view.avail & ~_reserved_against(view, arrivals)


def replan_route(view: PlanningView, from_node: str, destination: GeoPoint) -> RouteDecision:
    """Least-cost plan in the most likely future; occupied targets pay the expected circling wait."""
    ctx = view.ctx
    drive = ctx.drive_to_resources(from_node)
    arrivals = view.now + drive
    treated = _treated_available(view, arrivals)
    costs = drive + ctx.walk_vector(destination) + np.where(treated, 0.0, view.t_claim)
    best = int(np.argmin(costs))
    if not np.isfinite(costs[best]):
        raise NoPathError(f"no resource reachable from {from_node!r}")
    target = ctx.res_ids[best]
    decision_node = ctx.graph.edges[ctx.res_edge_ids[best]].from_node
    if decision_node == from_node:
        action: Action = TakeResource(target)
    else:
        action = TakeRoad(ctx.first_hop(from_node, decision_node).id)
    return RouteDecision(
        action,
        target_resource=target,
        expected_arrival=float(view.now + drive[best]),
        q_estimates={_action_key(action): float(costs[best])},
        recomputed=True,
    )


def sample_determinizations(
    view: PlanningView, from_node: str, n: int, rng: np.random.Generator
) -> list[Determinization]:
    """Draw ``n`` futures of all resource states at the agent's arrival times."""
    if n < 1:
        raise ValueError("need at least one determinization")
    matrix = _sample_determinization_matrix(view, from_node, n, rng)
    return [Determinization(available=matrix[i].copy()) for i in range(n)]


def _sample_determinization_matrix(
    view: PlanningView, from_node: str, n: int, rng: np.random.Generator
) -> np.ndarray:
    arrivals = view.now + view.ctx.drive_to_resources(from_node)
    probs = _availability_probs(view, arrivals)
    probs[_reserved_against(view, arrivals)] = 0.0
    return rng.random((n, view.ctx.n_resources)) < probs


def solve_determinization(
    view: PlanningView, from_node: str, det: Determinization, destination: GeoPoint
) -> tuple[str, float]:
    """Cheapest resource in one determinized future; ties go to the smallest id."""
    ctx = view.ctx
    costs = (
        ctx.drive_to_resources(from_node)
        + ctx.walk_vector(destination)
        + np.where(det.available, 0.0, view.t_claim)
    )
    best = int(np.argmin(costs))
    if not np.isfinite(costs[best]):
        raise NoPathError(f"no resource reachable from {from_node!r}")
    return ctx.res_ids[best], float(costs[best])


def _action_key(action: Action) -> str:
    return f"road:{action.edge}" if isinstance(action, TakeRoad) else f"resource:{action.resource}"


def modal_choice(choices: np.ndarray, n: int) -> int:
    """Most frequent index among per-future choices; ties go to the smallest index."""
    return int(np.bincount(choices, minlength=n).argmax())


class ReplanningPolicy:
    """Follow the cached plan while its target stays treated available; otherwise plan again."""

    def __init__(self, ctx: PlannerContext, destination: GeoPoint, settings: PlannerSettings | None = None):
        self.ctx = ctx
        self.destination = destination
        self._target: str | None = None

    def _target_treated(self, view: PlanningView, node: str) -> bool:
        i = view.ctx.res_index[self._target]
        if not view.avail[i]:
            return False
        arrival = view.now + view.ctx.M[view.ctx.node_index[node], view.ctx.res_from_idx[i]] + view.ctx.res_offset[i]
        if view.reservations is not None:
            for res in view.reservations.for_resource(self._target):
                if res.agent != view.agent_id and reservation_blocks(res, view.agent_id, arrival):
                    return False
        return True

    def decide(self, view: PlanningView, node: str, rng: np.random.Generator) -> RouteDecision:
        ctx = view.ctx
        if self._target is not None and self._target_treated(view, node):
            i = ctx.res_index[self._target]
            decision_node = ctx.graph.edges[ctx.res_edge_ids[i]].from_node
            if decision_node == node:
                action: Action = TakeResource(self._target)
            else:
                action = TakeRoad(ctx.first_hop(node, decision_node).id)
            arrival = view.now + ctx.M[ctx.node_index[node], ctx.res_from_idx[i]] + ctx.res_offset[i]
            return RouteDecision(action, self._target, float(arrival), recomputed=False)
        decision = replan_route(view, node, self.destination)
        self._target = decision.target_resource
        return decision


class HindsightPolicy:
    """One-step look-ahead over the mean optimal cost of sampled futures.

    The uniform variates behind the sampled futures are drawn once per trip
    and held fixed across re-decisions (common random numbers): each decision
    thresholds the same variates against fresh availability predictions, so
    plans change when observations change, not because of resampling noise.
    """

    def __init__(self, ctx: PlannerContext, destination: GeoPoint, settings: PlannerSettings | None = None):
        self.ctx = ctx
        self.destination = destination
        settings = settings or PlannerSettings()
        self.n = settings.determinizations
        self.scope_horizon_s = settings.scope_horizon_s
        self._uniforms: np.ndarray | None = None

    def decide(self, view: PlanningView, node: str, rng: np.random.Generator) -> RouteDecision:
        ctx = view.ctx
        walk = ctx.walk_vector(self.destination)
        drive_here = ctx.drive_to_resources(node)
        arrivals = view.now + drive_here
        forced = _reserved_against(view, arrivals)
        probs = _availability_probs(view, arrivals)
        probs[forced] = 0.0
        if self._uniforms is None:
            self._uniforms = rng.random((self.n, ctx.n_resources))
        available_in = self._uniforms < probs
        penalty = np.where(available_in, 0.0, view.t_claim)
        out_of_scope = None
        if self.scope_horizon_s is not None:
            out_of_scope = drive_here > self.scope_horizon_s

        # (value, preference rank, id) per candidate action; TakeResource wins ties.
        candidates: list[tuple[float, int, str, Action, Edge | None]] = []
        for ridx in ctx.adjacent_res[node]:
            if view.avail[ridx] and not forced[ridx]:
                value = float(ctx.res_offset[ridx] + walk[ridx])
                rid = ctx.res_ids[ridx]
                candidates.append((value, 0, rid, TakeResource(rid), None))
        for edge in ctx.out_edges[node]:
            succ = ctx.node_index[edge.to_node]
            base = ctx.M[succ, ctx.res_from_idx] + ctx.res_offset + walk
            if out_of_scope is not None:
                base = np.where(out_of_scope, np.inf, base)
            det_costs = (base[None, :] + penalty).min(axis=1)
            value = float(edge.drive_time_s + det_costs.mean())
            candidates.append((value, 1, edge.id, TakeRoad(edge.id), edge))
        if not candidates:
            raise NoPathError(f"no actions available at {node!r}")
        candidates.sort(key=lambda c: (c[0], c[1], c[2]))
        value, _, _, action, via_edge = candidates[0]
        if not np.isfinite(value):
            raise NoPathError(f"no resource reachable from {node!r}")

        q_estimates = {_action_key(c[3]): c[0] for c in candidates}
        if isinstance(action, TakeResource):
            ridx = ctx.res_index[action.resource]
            return RouteDecision(
                action, action.resource, float(view.now + ctx.res_offset[ridx]), q_estimates
            )
        # Commit to the resource chosen most often across the sampled futures.
        succ = ctx.node_index[via_edge.to_node]
        base = ctx.M[succ, ctx.res_from_idx] + ctx.res_offset + walk
        if out_of_scope is not None:
            base = np.where(out_of_scope, np.inf, base)
        choices = (base[None, :] + penalty).argmin(axis=1)
        modal = modal_choice(choices, ctx.n_resources)
        arrival = view.now + via_edge.drive_time_s + ctx.M[succ, ctx.res_from_idx[modal]] + ctx.res_offset[modal]
        return RouteDecision(action, ctx.res_ids[modal], float(arrival), q_estimates)


class RandomPolicy:
    """Drive to the destination street, then take random streets until a spot is found."""

    def __init__(self, ctx: PlannerContext, destination: GeoPoint, settings: PlannerSettings | None = None):
        self.ctx = ctx
        self.destination = destination
        self._searching = False
        best_eid, best_walk = None, np.inf
        for eid, e in ctx.graph.edges.items():
            a = ctx.graph.nodes[e.from_node].position
            b = ctx.graph.nodes[e.to_node].position
            mid = GeoPoint((a.lat + b.lat) / 2.0, (a.lon + b.lon) / 2.0)
            w = great_circle_m(mid, destination)
            if w < best_walk:
                best_eid, best_walk = eid, w
        self.dest_edge = ctx.graph.edges[best_eid]

    def decide(self, view: PlanningView, node: str, rng: np.random.Generator) -> RouteDecision:
        ctx = view.ctx
        if not self._searching and node == self.dest_edge.from_node:
            self._searching = True
        if not self._searching:
            return RouteDecision(TakeRoad(ctx.first_hop(node, self.dest_edge.from_node).id))
        edges = ctx.out_edges[node]
        if not edges:
            raise NoPathError(f"dead end at {node!r}")
        # The driver cruises one random street at a time and takes the first
        # free spot on the street it chose, not spots seen on cross streets.
        edge = edges[int(rng.integers(len(edges)))]
        for rid in ctx.graph.resources_by_edge[edge.id]:
            ridx = ctx.res_index[rid]
            if view.avail[ridx]:
                return RouteDecision(
                    TakeResource(rid), rid, float(view.now + ctx.res_offset[ridx])
                )
        return RouteDecision(TakeRoad(edge.id))


class HeuristicPolicy:
    """Stand-in for an uninformed human driver.

    Beyond ``far_radius_m`` of the destination the driver just heads there.
    Inside the radius it accepts any currently available adjacent spot whose
    walk stays under a threshold that relaxes linearly with search time, and
    otherwise keeps driving toward, then circling around, the destination.
    """

    def __init__(self, ctx: PlannerContext, destination: GeoPoint, settings: PlannerSettings | None = None):
        self.ctx = ctx
        self.destination = destination
        settings = settings or PlannerSettings()
        self.far_radius_m = settings.heuristic_far_radius_m
        self.accept_walk_s = settings.heuristic_accept_walk_s
        self.relax_s_per_min = settings.heuristic_relax_s_per_min
        self.dest_node = ctx.dest_node(destination)
        self._search_started: float | None = None

    def accept_threshold(self, search_time_s: float) -> float:
        return self.accept_walk_s + self.relax_s_per_min * (search_time_s / 60.0)

    def decide(self, view: PlanningView, node: str, rng: np.random.Generator) -> RouteDecision:
        ctx = view.ctx
        here = ctx.graph.nodes[node].position
        if great_circle_m(here, self.destination) > self.far_radius_m and node != self.dest_node:
            return RouteDecision(TakeRoad(ctx.first_hop(node, self.dest_node).id))
        if self._search_started is None:
            self._search_started = view.now
        threshold = self.accept_threshold(view.now - self._search_started)
        walk = ctx.walk_vector(self.destination)
        best_ridx, best_walk = None, np.inf
        for ridx in ctx.adjacent_res[node]:
            if view.avail[ridx] and walk[ridx] <= threshold and walk[ridx] < best_walk:
                best_ridx, best_walk = ridx, walk[ridx]
        if best_ridx is not None:
            rid = ctx.res_ids[best_ridx]
            return RouteDecision(TakeResource(rid), rid, float(view.now + ctx.res_offset[best_ridx]))
        if node != self.dest_node:
            return RouteDecision(TakeRoad(ctx.first_hop(node, self.dest_node).id))
        edges = ctx.out_edges[node]
        if not edges:
            raise NoPathError(f"dead end at {node!r}")
        dist = great_circle_m_many(
            np.array([ctx.graph.nodes[e.to_node].position.lat for e in edges]),
            np.array([ctx.graph.nodes[e.to_node].position.lon for e in edges]),
            self.destination,
        )
        inside = [e for e, d in zip(edges, dist) if d <= self.far_radius_m]
        pool = inside if inside else [edges[int(np.argmin(dist))]]
        return RouteDecision(TakeRoad(pool[int(rng.integers(len(pool)))].id))


PLANNER_KINDS = ("random", "heuristic", "rpl", "hs", "rpl_r", "hs_r", "hs_a")

_POLICY_CLASSES = {
    "random": RandomPolicy,
    "heuristic": HeuristicPolicy,
    "rpl": ReplanningPolicy,
    "rpl_r": ReplanningPolicy,
    "hs": HindsightPolicy,
    "hs_r": HindsightPolicy,
    "hs_a": HindsightPolicy,
}


def make_policy(kind: str, ctx: PlannerContext, destination: GeoPoint, settings: PlannerSettings | None = None):
    if kind not in _POLICY_CLASSES:
        raise ValueError(f"unknown planner kind {kind!r}; expected one of {PLANNER_KINDS}")
    return _POLICY_CLASSES[kind](ctx, destination, settings)
