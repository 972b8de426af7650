"""Radio topology over a mobility history.

Positions are sample-and-hold: the snapshot taken at ``t_k`` is in effect
for ``[t_k, t_k + dt)``. Equipped vehicles are network nodes; a vehicle
that wraps around a ring road comes back as a new node.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .mobility import History, relabel_laps


def components(nodes: np.ndarray, positions: np.ndarray, R: float) -> list[list[int]]:
    """Connected components of the unit-disk graph on a line.

    On a line two nodes are connected iff every consecutive gap between
    them (in sorted order) is at most ``R``.
    """
    if len(nodes) == 0:
        return []
    order = np.lexsort((nodes, positions))
    pos = positions[order]
    ids = nodes[order]
    breaks = np.flatnonzero(np.diff(pos) > R) + 1
    return [sorted(int(i) for i in chunk) for chunk in np.split(ids, breaks)]


@dataclass
class NetworkView:
    history: History
    equipped: np.ndarray  # bool mask over history columns
    node_ids: np.ndarray = field(init=False)
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        self.equipped = np.asarray(self.equipped, dtype=bool)
        nodes, _ = relabel_laps(self.history)
        self.node_ids = np.where(self.equipped[None, :], nodes, -1)
        self.n_vehicles = len(self.history.ids)

    @classmethod
    def from_vehicle_ids(cls, history: History, equipped_ids: Iterable[int]) -> "NetworkView":
        eq = set(int(v) for v in equipped_ids)
        return cls(history, np.array([int(v) in eq for v in history.ids], dtype=bool))

    @property
    def dt(self) -> float:
        return self.history.dt

    @property
    def times(self) -> np.ndarray:
        return self.history.times

    def at(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """``(node_ids, positions)`` of the radios present at snapshot *k*."""
        hit = self._cache.get(k)
        if hit is None:
            ids = self.node_ids[k]
            sel = ids >= 0
            hit = (ids[sel], self.history.positions[k][sel])
            self._cache[k] = hit
        return hit

    def at_time(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        return self.at(self.history.index_at(t))

    def vehicle_of(self, node: int) -> int:
        return int(self.history.ids[node % self.n_vehicles])

    def lifetimes(self) -> dict[int, tuple[int, int]]:
        """First and last snapshot index of every node."""
        span: dict[int, tuple[int, int]] = {}
        T = self.node_ids.shape[0]
        for k in range(T):
            for n in self.node_ids[k]:
                if n < 0:
                    continue
                n = int(n)
                first, _ = span.get(n, (k, k))
                span[n] = (first, k)
        return span

    def position_of(self, node: int, t: float) -> float:
        k = self.history.index_at(t)
        col = node % self.n_vehicles
        if self.node_ids[k, col] != node:
            raise KeyError(f"node {node} absent at t={t}")
        return float(self.history.positions[k, col])
