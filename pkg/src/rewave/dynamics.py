"""Three-state excitable-medium model of the amacrine-cell layer.

Each cell is READY, ACTIVE or REFRACTORY. A READY cell whose fraction of
ACTIVE neighbours reaches ``activation_threshold`` fires with probability
``propagation_prob``; otherwise it may fire spontaneously with probability
``spontaneous_rate``. Firing lasts ``active_duration`` steps, then the cell
is refractory for a jittered period around ``refractory_mean``. A calcium
trace is pinned at 1 while ACTIVE and decays exponentially otherwise.

All transitions of one step are computed from the previous frame. Random
numbers come from a counter-based stream addressed by
``(step, cell, slot)``, so the outcome does not depend on evaluation order.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import rng as _rng
from .lattice import NeighborTable, RetinaLattice

READY, ACTIVE, REFRACTORY = 0, 1, 2
STATE_NAMES = {READY: "READY", ACTIVE: "ACTIVE", REFRACTORY: "REFRACTORY"}

# draw slots per cell per step
SLOT_PROPAGATE, SLOT_SPONTANEOUS, SLOT_REFRACTORY = 0, 1, 2
N_SLOTS = 3


@dataclass(frozen=True)
class WaveParams:
    """Per-class cell parameters.

    dendritic_radius sets wave size, activation_threshold shape,
    propagation_prob speed, active_duration duration, refractory_mean the
    spacing between waves and spontaneous_rate how often waves start.
    """

    dendritic_radius: float = 1.5
    activation_threshold: float = 0.25
    propagation_prob: float = 0.8
    active_duration: int = 3
    refractory_mean: float = 40.0
    spontaneous_rate: float = 1e-4

    def __post_init__(self):
        d_a = self.active_duration
        if isinstance(d_a, float) and d_a.is_integer():
            object.__setattr__(self, "active_duration", int(d_a))
        check_param_values(dataclasses.asdict(self))

    @classmethod
    def names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in dataclasses.fields(cls))

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "WaveParams":
        return dataclasses.replace(self, **changes)


def _in_range(name: str, v) -> bool:
    if name == "dendritic_radius":
        return v >= 1.0
    if name in ("activation_threshold", "propagation_prob"):
        return 0.0 < v <= 1.0
    if name == "active_duration":
        return isinstance(v, (int, np.integer)) and not isinstance(v, bool) and v >= 1
    if name == "refractory_mean":
        return v >= 1.0
    if name == "spontaneous_rate":
        return 0.0 <= v <= 0.01
    raise KeyError(name)


PARAM_RANGES = {
    "dendritic_radius": ">= 1",
    "activation_threshold": "in (0, 1]",
    "propagation_prob": "in (0, 1]",
    "active_duration": "integer >= 1",
    "refractory_mean": ">= 1",
    "spontaneous_rate": "in [0, 0.01]",
}


def check_param_values(values: dict) -> None:
    for name, v in values.items():
        if name not in PARAM_RANGES:
            raise ValueError(f"unknown wave parameter {name!r}")
        if isinstance(v, float) and math.isnan(v):
            raise ValueError(f"{name} is NaN")
        if not _in_range(name, v):
            raise ValueError(f"{name}={v!r} out of range ({PARAM_RANGES[name]})")


@dataclass(frozen=True)
class GlobalDynamicsConfig:
    """Model constants shared by every class."""

    refractory_jitter: float = 0.2
    calcium_decay: float = 10.0
    max_steps: int = 2000
    quiet_steps: int = 200

    def __post_init__(self):
        if not 0.0 <= self.refractory_jitter < 1.0:
            raise ValueError("refractory_jitter must be in [0, 1)")
        if not self.calcium_decay > 0:
            raise ValueError("calcium_decay must be positive")
        if int(self.max_steps) != self.max_steps or self.max_steps < 1:
            raise ValueError("max_steps must be a positive integer")
        if int(self.quiet_steps) != self.quiet_steps or self.quiet_steps < 1:
            raise ValueError("quiet_steps must be a positive integer")

    @property
    def decay_factor(self) -> float:
        return math.exp(-1.0 / self.calcium_decay)


@dataclass(eq=False)
class SimulationFrame:
    step: int
    state: np.ndarray
    active_timer: np.ndarray
    refractory_timer: np.ndarray
    calcium: np.ndarray
    spontaneous: np.ndarray

    @property
    def n_cells(self) -> int:
        return len(self.state)

    @property
    def active(self) -> np.ndarray:
        return self.state == ACTIVE

    @property
    def active_count(self) -> int:
        return int(np.count_nonzero(self.state == ACTIVE))

    def to_bytes(self) -> bytes:
        """Canonical serialisation, used for bit-identity comparisons."""
        parts = [
            np.int64(self.step).tobytes(),
            self.state.astype(np.uint8).tobytes(),
            self.active_timer.astype("<i4").tobytes(),
            self.refractory_timer.astype("<i4").tobytes(),
            self.calcium.astype("<f8").tobytes(),
            np.asarray(self.spontaneous, dtype="<i8").tobytes(),
        ]
        return b"".join(parts)


class EpisodeRng:
    """Counter-based draws addressed by ``(step, cell, slot)``."""

    def __init__(self, seed: int, n_cells: int):
        self.seed = seed & _rng.MASK64
        self.n_cells = n_cells

    def counter(self, step: int, cell: int, slot: int) -> int:
        return (step * self.n_cells + cell) * N_SLOTS + slot

    def uniform(self, step: int, cell: int, slot: int) -> float:
        return _rng.uniform(self.seed, self.counter(step, cell, slot))

    def uniforms(self, step: int, cells: np.ndarray, slot: int) -> np.ndarray:
        base = step * self.n_cells
        counters = (base + cells.astype(np.uint64)) * np.uint64(N_SLOTS) + np.uint64(slot)
        return _rng.uniforms(self.seed, counters)


def init_state(lattice: RetinaLattice) -> SimulationFrame:
    n = lattice.n_cells
    return SimulationFrame(
        step=0,
        state=np.zeros(n, dtype=np.uint8),
        active_timer=np.zeros(n, dtype=np.int32),
        refractory_timer=np.zeros(n, dtype=np.int32),
        calcium=np.zeros(n, dtype=np.float64),
        spontaneous=np.zeros(0, dtype=np.int64),
    )


def step(
    frame: SimulationFrame,
    lattice: RetinaLattice,
    table: NeighborTable,
    params: WaveParams,
    dyn: GlobalDynamicsConfig,
    rng: EpisodeRng,
) -> SimulationFrame:
    """Advance one synchronous timestep."""
    n = frame.n_cells
    if n != lattice.n_cells or n != len(table):
        raise ValueError("frame does not match lattice size")
    t = frame.step
    old = frame.state
    state = old.copy()
    a_timer = frame.active_timer.copy()
    r_timer = frame.refractory_timer.copy()
    calcium = frame.calcium.copy()

    active = old == ACTIVE
    ready = old == READY
    a_idx = np.flatnonzero(active)
    driven = np.zeros(n, dtype=bool)
    if len(a_idx):
        # only READY cells touching an ACTIVE cell can reach a positive threshold
        touched = np.unique(table.padded[a_idx])
        touched = touched[touched >= 0]
        touched = touched[ready[touched]]
        ext = np.append(active, False)  # padding -1 lands on the trailing False
        count = ext[table.padded[touched]].sum(axis=1)
        drive = count / table.degree[touched]
        driven[touched[drive >= params.activation_threshold]] = True

    d_idx = np.flatnonzero(driven)
    fired_d = d_idx[rng.uniforms(t, d_idx, SLOT_PROPAGATE) < params.propagation_prob]
    s_idx = np.flatnonzero(ready & ~driven)
    if params.spontaneous_rate > 0:
        fired_s = s_idx[rng.uniforms(t, s_idx, SLOT_SPONTANEOUS) < params.spontaneous_rate]
    else:
        fired_s = s_idx[:0]

    a_timer[a_idx] -= 1
    expiring = a_idx[a_timer[a_idx] == 0]
    if len(expiring):
        mean, jit = params.refractory_mean, dyn.refractory_jitter
        lo, hi = mean * (1.0 - jit), mean * (1.0 + jit)
        u = rng.uniforms(t, expiring, SLOT_REFRACTORY)
        period = np.maximum(1, np.floor(lo + u * (hi - lo) + 0.5)).astype(np.int32)
        state[expiring] = REFRACTORY
        r_timer[expiring] = period

    r_idx = np.flatnonzero(old == REFRACTORY)
    r_timer[r_idx] -= 1
    state[r_idx[r_timer[r_idx] == 0]] = READY

    fired = np.union1d(fired_d, fired_s)
    state[fired] = ACTIVE
    a_timer[fired] = params.active_duration
    calcium[fired] = 1.0

    calcium[state != ACTIVE] *= dyn.decay_factor

    return SimulationFrame(t + 1, state, a_timer, r_timer, calcium, fired_s.astype(np.int64))


def iter_episode(
    lattice: RetinaLattice,
    table: NeighborTable,
    params: WaveParams,
    dyn: GlobalDynamicsConfig,
    seed: int,
) -> Iterator[SimulationFrame]:
    """Yield frames of one episode, starting with step 0.

    Stops at ``max_steps`` or once ``quiet_steps`` consecutive frames have
    had no ACTIVE cell (counted from the start, so a retina that never
    ignites also terminates).
    """
    rng = EpisodeRng(seed, lattice.n_cells)
    frame = init_state(lattice)
    yield frame
    quiet = 0
    while frame.step < dyn.max_steps:
        frame = step(frame, lattice, table, params, dyn, rng)
        yield frame
        quiet = 0 if frame.active_count else quiet + 1
        if quiet >= dyn.quiet_steps:
            return


def simulate_episode(lattice, table, params, dyn, seed) -> list[SimulationFrame]:
    return list(iter_episode(lattice, table, params, dyn, seed))
