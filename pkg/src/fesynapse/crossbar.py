"""Crossbar of stochastic synapses: weighted column sums and per-cell programming.

Rows are presynaptic inputs, columns postsynaptic neurons.  Each cell holds a
state index and a kind flag selecting the tri-state or the binary model, so
arrays with a mix of both (devices that lost their intermediate state) can be
simulated.
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .synapse import BINARY, TRISTATE, Level, State, SynapseModel


class CrossbarArray:
    def __init__(self, rows: int, cols: int, tri: SynapseModel, binary: SynapseModel,
                 state=None, binary_mask=None):
        if tri.kind != TRISTATE or binary.kind != BINARY:
            raise ValueError("need one tri-state and one binary model")
        self.rows, self.cols = int(rows), int(cols)
        self.tri, self.binary = tri, binary
        shape = (self.rows, self.cols)
        self.state = (np.zeros(shape, np.int8) if state is None
                      else np.array(state, dtype=np.int8).reshape(shape))
        self.binary_mask = (np.zeros(shape, bool) if binary_mask is None
                            else np.array(binary_mask, dtype=bool).reshape(shape))
        if np.any((self.state < 0) | (self.state > 2)):
            raise ValueError("cell states must be 0, 1 or 2")
        if np.any(self.binary_mask & (self.state == State.S1)):
            raise ValueError("binary cells cannot hold S1")
        self._wt = tri.weights()
        self._wb = binary.weights()
        self._weights = None

    def copy(self) -> "CrossbarArray":
        return CrossbarArray(self.rows, self.cols, self.tri, self.binary,
                             self.state.copy(), self.binary_mask.copy())

    # -- read path --------------------------------------------------------------

    @property
    def weights(self) -> np.ndarray:
        """Normalised conductance per cell; cached until the next write."""
        if self._weights is None:
            w = np.where(self.binary_mask, self._wb[self.state], self._wt[self.state])
            w.setflags(write=False)
            self._weights = w
        return self._weights

    def column_weights(self, col: int) -> np.ndarray:
        s = self.state[:, col]
        return np.where(self.binary_mask[:, col], self._wb[s], self._wt[s])

    def read(self, spikes) -> np.ndarray:
        spikes = np.asarray(spikes)
        if spikes.shape != (self.rows,):
            raise ValueError(f"expected {self.rows} row inputs, got shape {spikes.shape}")
        return spikes.astype(np.float64) @ self.weights

    def read_many(self, spike_matrix) -> np.ndarray:
        """Column currents for a (steps, rows) spike raster."""
        spike_matrix = np.asarray(spike_matrix)
        if spike_matrix.ndim != 2 or spike_matrix.shape[1] != self.rows:
            raise ValueError(f"expected (steps, {self.rows}) raster, got {spike_matrix.shape}")
        return spike_matrix.astype(np.float32) @ self.weights.astype(np.float32)

    # -- write path -------------------------------------------------------------

    def _transition(self, rows, cols, levels, u):
        cur = self.state[rows, cols]
        is_bin = self.binary_mask[rows, cols]
        nxt = np.empty_like(cur)
        if np.any(~is_bin):
            m = ~is_bin
            nxt[m] = self.tri.sample(cur[m], levels[m], u[m])
        if np.any(is_bin):
            nxt[is_bin] = self.binary.sample(cur[is_bin], levels[is_bin], u[is_bin])
        self.state[rows, cols] = nxt
        self._weights = None

    def program(self, cell_pulses, rng: np.random.Generator) -> "CrossbarArray":
        """Apply (row, col, level) pulses in list order; untouched cells keep their state."""
        cell_pulses = list(cell_pulses)
        if not cell_pulses:
            return self
        arr = np.array([(int(r), int(c), int(lv)) for r, c, lv in cell_pulses], dtype=np.int64)
        rows, cols, levels = arr.T
        if rows.min() < 0 or rows.max() >= self.rows or cols.min() < 0 or cols.max() >= self.cols:
            raise IndexError("pulse addresses a cell outside the array")
        if levels.min() < 0 or levels.max() > Level.RESET:
            raise ValueError("unknown pulse level")
        u = rng.random(len(arr))
        flat = rows * self.cols + cols
        if len(np.unique(flat)) == len(flat):
            self._transition(rows, cols, levels, u)
        else:
            # repeated addresses must see each other's result
            for i in range(len(arr)):
                self._transition(rows[i:i + 1], cols[i:i + 1], levels[i:i + 1], u[i:i + 1])
        return self

    def program_column(self, col: int, levels, rng: np.random.Generator) -> "CrossbarArray":
        """One pulse level per row on a single column, e.g. after a postsynaptic spike."""
        levels = np.asarray(levels, dtype=np.int64)
        if levels.shape != (self.rows,):
            raise ValueError("need one level per row")
        u = rng.random(self.rows)
        self._transition(np.arange(self.rows), np.full(self.rows, col), levels, u)
        return self

    def inject_binary_fraction(self, fraction: float, rng: np.random.Generator) -> "CrossbarArray":
        """Mark exactly round(fraction * cells) uniformly chosen cells as binary.

        Any S1 left on a converted cell drops to S0.
        """
        if not 0.0 <= fraction <= 1.0:
            raise ValueError("fraction must lie in [0, 1]")
        n = self.rows * self.cols
        k = int(math.floor(fraction * n + 0.5))
        mask = np.zeros(n, bool)
        mask[rng.choice(n, size=k, replace=False)] = True
        self.binary_mask = mask.reshape(self.rows, self.cols)
        self.state[self.binary_mask & (self.state == State.S1)] = State.S0
        self._weights = None
        return self

    def count(self, state: int, axis=None):
        return (self.state == state).sum(axis=axis)

    # -- checkpoints ------------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "rows": self.rows,
            "cols": self.cols,
            "state": ["".join(map(str, r)) for r in self.state.tolist()],
            "binary_mask": ["".join("b" if x else "t" for x in r) for r in self.binary_mask.tolist()],
            "models": {"tristate": self.tri.to_dict(), "binary": self.binary.to_dict()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CrossbarArray":
        state = np.array([[int(ch) for ch in r] for r in d["state"]], dtype=np.int8)
        mask = np.array([[ch == "b" for ch in r] for r in d["binary_mask"]], dtype=bool)
        return cls(d["rows"], d["cols"], SynapseModel.from_dict(d["models"]["tristate"]),
                   SynapseModel.from_dict(d["models"]["binary"]), state, mask)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), separators=(",", ":")) + "\n")

    @classmethod
    def load(cls, path) -> "CrossbarArray":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def weight_image(self, side: int = 28, grid_cols: int | None = None) -> np.ndarray:
        """Tile each column's weights as a side x side patch; uint8, 255 = w 1.0."""
        n = self.cols
        if self.rows != side * side:
            raise ValueError(f"rows ({self.rows}) do not form {side}x{side} patches")
        gc = grid_cols or int(math.ceil(math.sqrt(n)))
        gr = int(math.ceil(n / gc))
        img = np.zeros((gr * side, gc * side), np.uint8)
        w = np.rint(np.asarray(self.weights) * 255).astype(np.uint8)
        for j in range(n):
            r, c = divmod(j, gc)
            img[r * side:(r + 1) * side, c * side:(c + 1) * side] = w[:, j].reshape(side, side)
        return img


def write_pgm(path, img: np.ndarray) -> None:
    img = np.asarray(img, dtype=np.uint8)
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + img.tobytes())
