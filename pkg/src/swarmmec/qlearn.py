"""Sparse tabular Q-learning with epsilon-greedy selection."""

from __future__ import annotations

import math
from typing import Dict, Iterable, Optional, Sequence, TextIO

import numpy as np


class QTable:
    """Sparse ``(state, action) -> value`` map; unseen pairs read as 0."""

    def __init__(self) -> None:
        self._rows: Dict[bytes, Dict[int, float]] = {}

    def __len__(self) -> int:
        return sum(len(r) for r in self._rows.values())

    def get(self, state: bytes, action: int) -> float:
        row = self._rows.get(state)
        return row.get(action, 0.0) if row else 0.0

    def set(self, state: bytes, action: int, value: float) -> None:
        if not math.isfinite(value):
            raise ValueError("Q values must be finite")
        self._rows.setdefault(state, {})[action] = value

    def values(self, state: bytes, actions: Sequence[int]) -> list:
        row = self._rows.get(state)
        if not row:
            return [0.0] * len(actions)
        return [row.get(a, 0.0) for a in actions]

    def max_value(self, state: bytes, actions: Sequence[int]) -> float:
        return max(self.values(state, actions)) if actions else 0.0

    def items(self):
        for s in sorted(self._rows):
            for a in sorted(self._rows[s]):
                yield s, a, self._rows[s][a]

    def dump(self, fh: TextIO) -> None:
        for s, a, v in self.items():
            fh.write(f"{s.hex()}\t{a}\t{v!r}\n")

    @classmethod
    def load(cls, fh: Iterable[str]) -> "QTable":
        table = cls()
        for line in fh:
            line = line.rstrip("\n")
            if not line.strip():
                continue
            s, a, v = line.split("\t")
            table.set(bytes.fromhex(s), int(a), float(v))
        return table


def greedy_policy(table: QTable, state: bytes, legal: Sequence[int]) -> int:
    """Highest-valued legal action, lowest index on ties."""
    if not legal:
        raise ValueError("empty legal action set")
    row = table._rows.get(state)
    if not row:
        return min(legal)
    best, best_v = None, -math.inf
    for a in legal:
        v = row.get(a, 0.0)
        if v > best_v or (v == best_v and a < best):
            best, best_v = a, v
    return best


def select_action(table: QTable, state: bytes, legal: Sequence[int], epsilon: float,
                  rng: np.random.Generator) -> int:
    """Epsilon-greedy choice.

    The greedy action has probability ``1 - epsilon``; each other legal
    action has ``epsilon / (len(legal) - 1)``.
    """
    best = greedy_policy(table, state, legal)
    if len(legal) == 1 or epsilon <= 0.0:
        return best
    u = rng.random()
    if u >= epsilon:
        return best
    others = [a for a in sorted(legal) if a != best]
    # reuse the draw: u / epsilon is uniform on [0, 1)
    return others[min(int(u / epsilon * len(others)), len(others) - 1)]


def update(table: QTable, state: bytes, action: int, reward: float,
           next_state: Optional[bytes], next_legal: Optional[Sequence[int]],
           beta: float, sigma: float) -> float:
    """One temporal-difference step; ``next_state=None`` marks a terminal."""
    if not math.isfinite(reward):
        raise ValueError("reward must be finite")
    future = 0.0
    if next_state is not None and next_legal:
        row = table._rows.get(next_state)
        if row:
            future = max(row.get(a, 0.0) for a in next_legal)
    old = table.get(state, action)
    new = old + beta * (reward + sigma * future - old)
    table.set(state, action, new)
    return new
