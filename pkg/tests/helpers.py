"""Shared fixture builders."""
import numpy as np

from vanetsim.mobility import History
from vanetsim.topology import NetworkView


def static_history(positions, T=30, dt=1.0, lanes=None):
    pos = np.tile(np.asarray(positions, dtype=float), (T, 1))
    n = len(positions)
    lanes = np.ones(n, dtype=np.int64) if lanes is None else np.asarray(lanes, dtype=np.int64)
    return History(dt, np.arange(T) * dt, np.arange(n, dtype=np.int64), lanes, pos,
                   np.zeros_like(pos), road_length=max(positions) + 1.0)


def history_from(rows, lanes, dt=1.0, road_length=None):
    """``rows[k][j]`` is vehicle j's position at snapshot k."""
    pos = np.asarray(rows, dtype=float)
    T, n = pos.shape
    spd = np.zeros_like(pos)
    spd[1:] = np.abs(np.diff(pos, axis=0)) / dt
    return History(dt, np.arange(T) * dt, np.arange(n, dtype=np.int64),
                   np.asarray(lanes, dtype=np.int64), pos, spd,
                   road_length=road_length or float(np.nanmax(pos)) + 1.0)


def full_view(history):
    return NetworkView(history, np.ones(len(history.ids), dtype=bool))


def bfs_components(positions: dict, R: float):
    """Plain pairwise-edge BFS, independent of the sorted-gap shortcut."""
    left = set(positions)
    out = []
    while left:
        seed = min(left)
        comp, todo = {seed}, [seed]
        left.discard(seed)
        while todo:
            a = todo.pop()
            for b in list(left):
                if abs(positions[a] - positions[b]) <= R:
                    left.discard(b)
                    comp.add(b)
                    todo.append(b)
        out.append(comp)
    return out
