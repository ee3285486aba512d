"""Observation window and its one-hot tensor encoding."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from ..perception import N_CATEGORIES, N_CELLS

EMPTY_GRID = np.ones(N_CELLS, dtype=np.int8)


@dataclass(frozen=True)
class AgentObservation:
    """``grids`` is (window, 15) categories, oldest row first; ``psi`` is the load level 1..5."""

    grids: np.ndarray
    psi: int

    def __post_init__(self):
        g = np.asarray(self.grids)
        if g.ndim != 2 or g.shape[1] != N_CELLS:
            raise ValueError("grids must have shape (window, 15)")
        if g.min() < 1 or g.max() > N_CATEGORIES:
            raise ValueError("categories must lie in 1..13")
        if not 1 <= self.psi <= 5:
            raise ValueError("psi must lie in 1..5")

    @property
    def window(self) -> int:
        return len(self.grids)

    def to_raw(self) -> np.ndarray:
        """Compact int8 row: flattened grids followed by psi."""
        return np.concatenate([np.asarray(self.grids, dtype=np.int8).reshape(-1), [np.int8(self.psi)]])

    @classmethod
    def from_raw(cls, raw, window: int) -> "AgentObservation":
        raw = np.asarray(raw, dtype=np.int8)
        return cls(raw[:-1].reshape(window, N_CELLS).copy(), int(raw[-1]))

    def __eq__(self, other):
        return (isinstance(other, AgentObservation) and self.psi == other.psi
                and np.array_equal(self.grids, other.grids))

    def __hash__(self):
        return hash((self.psi, np.asarray(self.grids).tobytes()))


@dataclass(frozen=True)
class EncodedState:
    image: np.ndarray  # (13, window, 15)
    load: float  # psi / 5


def encode(obs: AgentObservation) -> EncodedState:
    images, loads = encode_batch(obs.to_raw()[None, :], obs.window)
    return EncodedState(images[0], float(loads[0]))


def encode_batch(raw, window: int, width: int = N_CELLS):
    raw = np.asarray(raw)
    grids = raw[:, :-1].reshape(len(raw), window, width).astype(np.intp)
    images = np.eye(N_CATEGORIES)[grids - 1].transpose(0, 3, 1, 2)
    return images, raw[:, -1].astype(float) / 5.0


def decode(state: EncodedState) -> AgentObservation:
    """Inverse of :func:`encode` on valid states."""
    img = np.asarray(state.image)
    if not np.all(img.sum(axis=0) == 1):
        raise ValueError("not a one-hot encoding")
    grids = (np.argmax(img, axis=0) + 1).astype(np.int8)
    return AgentObservation(grids, int(round(state.load * 5)))


class ObservationWindow:
    """Rolling window of projection grids, pre-filled with all-Empty grids."""

    def __init__(self, window: int = 10):
        self.window = window
        self.grids = deque([EMPTY_GRID] * window, maxlen=window)

    def push(self, grid) -> None:
        self.grids.append(np.asarray(grid, dtype=np.int8))

    def observe(self, psi: int) -> AgentObservation:
        return AgentObservation(np.stack(self.grids), psi)
