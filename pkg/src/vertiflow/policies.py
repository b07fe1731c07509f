"""Vertiport-selection baselines.

Each policy maps the focal passenger's state view to the index of a departure
vertiport (ports ordered by id). Ties always resolve to the lower index.
"""
from __future__ import annotations

from typing import Callable, List, Optional, Sequence

import numpy as np

from .airside import estimated_wait
from .env import MobilityEnv, StateView

POLICY_KINDS = ("ground", "spf", "rule", "sttf", "qtti", "learned")


def _argmin(costs: Sequence[float]) -> int:
    best = 0
    for i in range(1, len(costs)):
        if costs[i] < costs[best] - 1e-12:
            best = i
    return best


def shortest_path_choice(view: StateView) -> int:
    """Least total distance: access leg plus air leg, ignoring any dynamics."""
    return _argmin([p.ground_km + p.air_km for p in view.ports])


def shortest_time_choice(view: StateView) -> int:
    """Least projected travel time at current corridor speeds, ignoring queues."""
    return _argmin([p.ground_min + p.air_min for p in view.ports])


def queue_aware_choice(view: StateView, include_enroute: bool = True) -> int:
    """Least projected door-to-door time including the queueing estimate."""
    costs = []
    for p in view.ports:
        backlog = p.queue_len + (p.enroute if include_enroute else 0)
        costs.append(p.ground_min + estimated_wait(backlog, p.serv_rate) + p.air_min)
    return _argmin(costs)


class Policy:
    kind = "base"

    def act(self, env: MobilityEnv) -> int:
        raise NotImplementedError


class GroundPolicy(Policy):
    """All-road baseline; the environment must run in ground mode."""

    kind = "ground"

    def act(self, env: MobilityEnv) -> int:
        return 0


class ShortestPathPolicy(Policy):
    kind = "spf"

    def act(self, env: MobilityEnv) -> int:
        return shortest_path_choice(env.state_view())


class ShortestTimePolicy(Policy):
    kind = "sttf"

    def act(self, env: MobilityEnv) -> int:
        return shortest_time_choice(env.state_view())


class QueueAwarePolicy(Policy):
    kind = "qtti"

    def __init__(self, include_enroute: bool = True):
        self.include_enroute = include_enroute

    def act(self, env: MobilityEnv) -> int:
        return queue_aware_choice(env.state_view(), self.include_enroute)


class RandomSplitPolicy(Policy):
    """Stateless random split with fixed weights over departure ports."""

    kind = "rule"

    def __init__(self, weights: Sequence[float], seed: int):
        w = np.asarray(list(weights), dtype=np.float64)
        if w.ndim != 1 or w.size == 0 or np.any(w < 0) or w.sum() <= 0:
            raise ValueError(f"rule weights must be non-negative and sum > 0, got {weights}")
        self.weights = w / w.sum()
        self.rng = np.random.default_rng(seed)

    def act(self, env: MobilityEnv) -> int:
        if len(self.weights) != env.n_actions:
            raise ValueError(
                f"rule weights cover {len(self.weights)} ports, env has {env.n_actions}")
        return int(self.rng.choice(env.n_actions, p=self.weights))


class GreedyNetPolicy(Policy):
    """Deterministic wrapper around a trained network's action scores."""

    kind = "learned"

    def __init__(self, score_fn: Callable[[np.ndarray], np.ndarray]):
        self.score_fn = score_fn

    def act(self, env: MobilityEnv) -> int:
        scores = np.asarray(self.score_fn(env.state_stack()))
        return int(np.argmax(scores))  # np.argmax takes the first max: lower id on ties


def make_policy(kind: str, *, rule_weights: Sequence[float] = (3.0, 1.0),
                qtti_include_enroute: bool = True, seed: int = 0,
                score_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> Policy:
    if kind == "ground":
        return GroundPolicy()
    if kind == "spf":
        return ShortestPathPolicy()
    if kind == "sttf":
        return ShortestTimePolicy()
    if kind == "qtti":
        return QueueAwarePolicy(qtti_include_enroute)
    if kind == "rule":
        return RandomSplitPolicy(rule_weights, seed)
    if kind == "learned":
        if score_fn is None:
            raise ValueError("learned policy needs a trained network; pass score_fn")
        return GreedyNetPolicy(score_fn)
    raise ValueError(f"unknown policy kind {kind!r}; expected one of {POLICY_KINDS}")
