"""Discrete-state stochastic synapses distilled from the device curves.

A synapse is in S0, S1 or S2 (increasing conductance).  Programming applies one
of four pulse levels and the next state is drawn from a fixed transition
table ``P[state, level] -> distribution over states``.  Two kinds exist:

* tri-state: the weak pulse moves S0 up with the device's V1 probabilities,
  the strong pulse with its V2 probabilities; S1 ignores the weak pulse.
* binary: S1 is never used; both pulses jump S0 -> S2, with a high and a low
  probability.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from .device import SwitchCurves


class State(IntEnum):
    S0 = 0
    S1 = 1
    S2 = 2


class Level(IntEnum):
    NONE = 0
    WEAK = 1
    STRONG = 2
    RESET = 3


TRISTATE = "tristate"
BINARY = "binary"
N_STATES = 3
N_LEVELS = 4

DEFAULT_V_WEAK = 2.82
DEFAULT_V_STRONG = 3.6
DEFAULT_V_RESET = -4.0
DEFAULT_WEIGHT_MAP = (0.0, 0.5, 1.0)

ROW_TOL = 1e-12


class InvalidStateError(ValueError):
    pass


def _dist(p0, p1, p2):
    d = np.clip(np.array([p0, p1, p2], dtype=np.float64), 0.0, 1.0)
    return d / d.sum()


@dataclass(frozen=True)
class SynapseModel:
    kind: str
    table: np.ndarray  # (state, level, next_state)
    weight_map: tuple = DEFAULT_WEIGHT_MAP
    v_weak: float = DEFAULT_V_WEAK
    v_strong: float = DEFAULT_V_STRONG
    v_reset: float = DEFAULT_V_RESET
    _cum: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        table = np.array(self.table, dtype=np.float64)
        table.setflags(write=False)
        object.__setattr__(self, "table", table)
        object.__setattr__(self, "weight_map", tuple(float(w) for w in self.weight_map))
        self.validate()
        cum = np.cumsum(table, axis=-1)[..., :2].copy()
        cum.setflags(write=False)
        object.__setattr__(self, "_cum", cum)

    def __eq__(self, other):
        if not isinstance(other, SynapseModel):
            return NotImplemented
        return (self.kind == other.kind and np.array_equal(self.table, other.table)
                and self.weight_map == other.weight_map
                and (self.v_weak, self.v_strong, self.v_reset)
                == (other.v_weak, other.v_strong, other.v_reset))

    __hash__ = None

    def validate(self) -> None:
        t = self.table
        if self.kind not in (TRISTATE, BINARY):
            raise ValueError(f"unknown synapse kind {self.kind!r}")
        if t.shape != (N_STATES, N_LEVELS, N_STATES):
            raise ValueError(f"transition table must be 3x4x3, got {t.shape}")
        if np.any(t < 0):
            raise ValueError("negative transition probability")
        if np.any(np.abs(t.sum(axis=-1) - 1.0) > ROW_TOL):
            raise ValueError("transition rows must sum to 1")
        w = self.weight_map
        if len(w) != 3 or not (0 <= w[0] < w[1] < w[2] <= 1):
            raise ValueError(f"weight_map must be increasing within [0, 1], got {w}")
        if not self.v_weak < self.v_strong:
            raise ValueError("weak pulse amplitude must be below the strong one")
        for s in range(N_STATES):
            if not np.array_equal(t[s, Level.NONE], np.eye(N_STATES)[s]):
                raise ValueError("the NONE pulse must leave the state unchanged")
            if not np.array_equal(t[s, Level.RESET], np.eye(N_STATES)[0]):
                raise ValueError("RESET must send every state to S0")
            for lv in (Level.WEAK, Level.STRONG):
                if t[s, lv, :s].sum() > 0:
                    raise ValueError(f"potentiation may not lower state S{s}")
            # strong pulse first-order dominates the weak one
            tail_w = np.cumsum(t[s, Level.WEAK][::-1])[::-1]
            tail_s = np.cumsum(t[s, Level.STRONG][::-1])[::-1]
            if np.any(tail_s < tail_w - ROW_TOL):
                raise ValueError(f"strong pulse does not dominate the weak pulse from S{s}")
        if self.kind == TRISTATE and t[State.S1, Level.WEAK, State.S1] != 1.0:
            raise ValueError("a weak pulse must leave S1 unchanged")

    # probabilities used by the matched binary baseline
    @property
    def p_weak(self) -> float:
        """Probability that a weak pulse moves S0 anywhere above S0."""
        return float(1.0 - self.table[State.S0, Level.WEAK, State.S0])

    @property
    def p_strong(self) -> float:
        """Probability that a strong pulse takes S0 to S2."""
        return float(self.table[State.S0, Level.STRONG, State.S2])

    def weights(self) -> np.ndarray:
        return np.asarray(self.weight_map)

    def sample(self, states, levels, u) -> np.ndarray:
        """Vectorised next-state draw given uniforms ``u`` in [0, 1)."""
        states = np.asarray(states)
        if self.kind == BINARY and np.any(states == State.S1):
            raise InvalidStateError("binary synapses cannot hold S1")
        thresholds = self._cum[states, np.asarray(levels)]
        u = np.asarray(u)[..., None]
        return (u >= thresholds).sum(axis=-1).astype(np.int8)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "weight_map": list(self.weight_map),
                "v_weak": self.v_weak, "v_strong": self.v_strong, "v_reset": self.v_reset,
                "table": self.table.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "SynapseModel":
        return cls(kind=d["kind"], table=np.array(d["table"]), weight_map=tuple(d["weight_map"]),
                   v_weak=d["v_weak"], v_strong=d["v_strong"], v_reset=d.get("v_reset", DEFAULT_V_RESET))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "SynapseModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _base_table() -> np.ndarray:
    t = np.zeros((N_STATES, N_LEVELS, N_STATES))
    for s in range(N_STATES):
        t[s, Level.NONE, s] = 1.0
        t[s, Level.RESET, State.S0] = 1.0
        t[s, Level.WEAK, s] = 1.0
        t[s, Level.STRONG, s] = 1.0
    return t


def from_device_curves(curves: SwitchCurves, v1: float = DEFAULT_V_WEAK,
                       v2: float = DEFAULT_V_STRONG,
                       weight_map=DEFAULT_WEIGHT_MAP) -> SynapseModel:
    """Tri-state model read off the accumulative curves at two operating points.

    From S0 the weak pulse lands in S1/S2 with the curve values at ``v1`` and
    the strong pulse with those at ``v2``.  From S1 the strong pulse reaches
    S2 with the v2 S2 probability; the weak pulse leaves S1 alone.
    """
    s1_at_v1, s2_at_v1 = curves.interp(v1)
    s1_at_v2, s2_at_v2 = curves.interp(v2)
    p1 = s1_at_v1 + s2_at_v1
    p2 = s2_at_v2
    if not p2 > p1:
        raise ValueError(f"operating points give p2={p2:.4f} <= p1={p1:.4f}; "
                         f"the strong pulse must switch more reliably than the weak one")
    t = _base_table()
    t[State.S0, Level.WEAK] = _dist(1.0 - s1_at_v1 - s2_at_v1, s1_at_v1, s2_at_v1)
    t[State.S0, Level.STRONG] = _dist(1.0 - s1_at_v2 - s2_at_v2, s1_at_v2, s2_at_v2)
    t[State.S1, Level.STRONG] = _dist(0.0, 1.0 - p2, p2)
    return SynapseModel(TRISTATE, t, tuple(weight_map), v_weak=v1, v_strong=v2)


def make_tristate(p_weak_s1: float, p_strong_s2: float, p_weak_s2: float = 0.0,
                  p_strong_s1: float | None = None, weight_map=DEFAULT_WEIGHT_MAP) -> SynapseModel:
    """Tri-state model from explicit probabilities (handy for tests and sweeps)."""
    if p_strong_s1 is None:
        p_strong_s1 = 1.0 - p_strong_s2
    t = _base_table()
    t[State.S0, Level.WEAK] = _dist(1.0 - p_weak_s1 - p_weak_s2, p_weak_s1, p_weak_s2)
    t[State.S0, Level.STRONG] = _dist(1.0 - p_strong_s1 - p_strong_s2, p_strong_s1, p_strong_s2)
    t[State.S1, Level.STRONG] = _dist(0.0, 1.0 - p_strong_s2, p_strong_s2)
    return SynapseModel(TRISTATE, t, tuple(weight_map))


def make_binary(p_hi: float, p_lo: float, weight_map=DEFAULT_WEIGHT_MAP,
                v_weak: float = DEFAULT_V_WEAK, v_strong: float = DEFAULT_V_STRONG) -> SynapseModel:
    """Two-level synapse: strong pulse S0->S2 with p_hi, weak pulse with p_lo."""
    if not 0.0 <= p_lo < p_hi <= 1.0:
        raise ValueError(f"need 0 <= p_lo < p_hi <= 1, got p_lo={p_lo}, p_hi={p_hi}")
    t = _base_table()
    t[State.S0, Level.WEAK] = _dist(1.0 - p_lo, 0.0, p_lo)
    t[State.S0, Level.STRONG] = _dist(1.0 - p_hi, 0.0, p_hi)
    return SynapseModel(BINARY, t, tuple(weight_map), v_weak=v_weak, v_strong=v_strong)


def matched_binary(tri: SynapseModel) -> SynapseModel:
    """Binary baseline using the tri-state model's own switching probabilities."""
    return make_binary(tri.p_strong, tri.p_weak, tri.weight_map, tri.v_weak, tri.v_strong)


def apply_program(state, level, model: SynapseModel, rng: np.random.Generator) -> State:
    state, level = State(state), Level(level)
    return State(int(model.sample(state, level, rng.random())))


def weight(state, model: SynapseModel) -> float:
    return model.weight_map[int(state)]
