"""Two-state availability process per resource.

Each resource flips between ``available`` and ``occupied`` with exponentially
distributed sojourn times (rates ``lam`` out of available, ``mu`` out of
occupied). Predictions are anchored at the latest real-time observation.
Fleet coordination can overlay additive probability subtractions that become
active after a given time; overlays are reversible exactly.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np


class ResourceState(enum.Enum):
    AVAILABLE = "available"
    OCCUPIED = "occupied"


@dataclass(frozen=True)
class CtmcParams:
    """Flip rates per second; ``1/lam`` is the mean available sojourn, ``1/mu`` the mean occupied sojourn."""

    lam: float
    mu: float

    def __post_init__(self) -> None:
        if self.lam <= 0 or self.mu <= 0:
            raise ValueError(f"rates must be positive, got lam={self.lam}, mu={self.mu}")

    @classmethod
    def from_mean_times(cls, available_s: float, occupied_s: float) -> "CtmcParams":
        return cls(lam=1.0 / available_s, mu=1.0 / occupied_s)


def stationary_availability(params: CtmcParams) -> float:
    """Long-run fraction of time a resource is available."""
    return params.mu / (params.lam + params.mu)


def transition_probability(params: CtmcParams, frm: ResourceState, to: ResourceState, dt: float) -> float:
    """Probability of being in ``to`` after ``dt`` seconds, starting in ``frm``."""
    if dt < 0:
        raise ValueError(f"dt must be non-negative, got {dt}")
    pi_a = stationary_availability(params)
    decay = math.exp(-(params.lam + params.mu) * dt)
    if frm is ResourceState.AVAILABLE:
        p_avail = pi_a + (1.0 - pi_a) * decay
    else:
        p_avail = pi_a * (1.0 - decay)
    return p_avail if to is ResourceState.AVAILABLE else 1.0 - p_avail


def availability_after(params: CtmcParams, dt: np.ndarray | float, available_now: np.ndarray | bool) -> np.ndarray:
    """Vectorized probability of being available after ``dt``, given the current state."""
    return availability_after_rates(params.lam, params.mu, dt, available_now)


def availability_after_rates(
    lam: np.ndarray | float,
    mu: np.ndarray | float,
    dt: np.ndarray | float,
    available_now: np.ndarray | bool,
) -> np.ndarray:
    """Availability probability with per-element flip rates (broadcasting)."""
    lam = np.asarray(lam, dtype=float)
    mu = np.asarray(mu, dtype=float)
    dt = np.asarray(dt, dtype=float)
    total = lam + mu
    pi_a = mu / total
    decay = np.exp(-total * dt)
    return pi_a + np.where(np.asarray(available_now, dtype=bool), 1.0 - pi_a, -pi_a) * decay


@dataclass(frozen=True)
class ResourceBelief:
    """Latest observation anchor for one resource."""

    resource_id: str
    state: ResourceState
    anchor_time: float
    params: CtmcParams


@dataclass(frozen=True)
class OverlayDelta:
    """One additive subtraction of predicted availability, active from ``activation_time``."""

    resource_id: str
    activation_time: float
    delta: float
    owner: str


class AdaptionOverlay:
    """Per-resource probability subtractions, removable exactly by entry identity."""

    def __init__(self) -> None:
        self._entries: dict[str, list[OverlayDelta]] = {}

    def add(self, resource_id: str, activation_time: float, delta: float, owner: str) -> OverlayDelta:
        entry = OverlayDelta(resource_id, activation_time, delta, owner)
        self._entries.setdefault(resource_id, []).append(entry)
        return entry

    def remove(self, entry: OverlayDelta) -> None:
        entries = self._entries.get(entry.resource_id, [])
        for i, existing in enumerate(entries):
            if existing is entry:
                del entries[i]
                if not entries:
                    del self._entries[entry.resource_id]
                return
        raise KeyError(f"overlay entry not present for resource {entry.resource_id!r}")

    def pending_subtraction(self, resource_id: str, at: float, exclude_owner: str | None = None) -> float:
        """Sum of deltas for the resource whose activation time has passed.

        An agent's own deltas describe its fallback behavior to the rest of
        the fleet; they never feed back into that agent's own predictions, so
        callers pass their identity as ``exclude_owner``.
        """
        return sum(
            e.delta
            for e in self._entries.get(resource_id, ())
            if e.activation_time <= at and e.owner != exclude_owner
        )

    def entries_for(self, resource_id: str) -> tuple[OverlayDelta, ...]:
        return tuple(self._entries.get(resource_id, ()))

    def resources(self) -> tuple[str, ...]:
        return tuple(self._entries)

    def __len__(self) -> int:
        return sum(len(v) for v in self._entries.values())


def availability_probability(
    belief: ResourceBelief,
    at: float,
    overlay: AdaptionOverlay | None = None,
    exclude_owner: str | None = None,
) -> float:
    """Predicted availability at time ``at``, minus any active overlay deltas, clamped to [0, 1]."""
    if at < belief.anchor_time:
        raise ValueError(f"query time {at} precedes anchor {belief.anchor_time}")
    p = transition_probability(belief.params, belief.state, ResourceState.AVAILABLE, at - belief.anchor_time)
    if overlay is not None:
        p -= overlay.pending_subtraction(belief.resource_id, at, exclude_owner)
    return min(1.0, max(0.0, p))


def expected_wait_time(params: CtmcParams, t_tr: float) -> float:
    """Expected time circling an occupied resource until it can be claimed.

    Each round trip of duration ``t_tr`` succeeds independently with the
    probability that the occupied-anchored process is available after ``t_tr``,
    so the expected number of trips is geometric.
    """
    if t_tr <= 0:
        raise ValueError(f"round trip time must be positive, got {t_tr}")
    p = transition_probability(params, ResourceState.OCCUPIED, ResourceState.AVAILABLE, t_tr)
    return t_tr / p


def expected_wait_times(params: CtmcParams, t_tr: np.ndarray) -> np.ndarray:
    """Vectorized :func:`expected_wait_time`."""
    t_tr = np.asarray(t_tr, dtype=float)
    p = availability_after(params, t_tr, False)
    return t_tr / p


def expected_wait_times_rates(
    lam: np.ndarray | float, mu: np.ndarray | float, t_tr: np.ndarray
) -> np.ndarray:
    """:func:`expected_wait_time` with per-element flip rates."""
    t_tr = np.asarray(t_tr, dtype=float)
    p = availability_after_rates(lam, mu, t_tr, False)
    return t_tr / p


def sample_future_state(belief: ResourceBelief, at: float, rng: np.random.Generator) -> ResourceState:
    """Draw the resource state at time ``at`` from the anchored prediction."""
    p = availability_probability(belief, at)
    return ResourceState.AVAILABLE if rng.random() < p else ResourceState.OCCUPIED


def sample_sojourn(params: CtmcParams, state: ResourceState, rng: np.random.Generator) -> float:
    """Draw how long the resource stays in ``state`` before flipping."""
    rate = params.lam if state is ResourceState.AVAILABLE else params.mu
    return float(rng.exponential(1.0 / rate))
