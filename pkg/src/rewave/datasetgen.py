"""Class enumeration, frame selection, augmentation and split assignment.

A class is one point of a parameter grid. For each class, episodes are
simulated from seeds derived from the class seed. Every ``spacing``-th
frame whose identity-augmentation crop has at least ``threshold`` active
pixels becomes a candidate. When a class cannot fill its quota, spacing is
relaxed first, then threshold, and finally candidates are reused with
fresh augmentations.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import rng
from .dynamics import (
    ACTIVE,
    GlobalDynamicsConfig,
    SimulationFrame,
    WaveParams,
    check_param_values,
    iter_episode,
)
from .lattice import build_lattice, neighbors
from .projection import (
    AugmentationSpec,
    BinaryImage,
    crop_cell_map,
    pixel_weights,
    render_binary,
)

log = logging.getLogger(__name__)

INTEGER_PARAMS = frozenset({"active_duration"})
SPLITS = ("train", "val", "test")
DEFAULT_RATIOS = (0.8, 0.1, 0.1)

# which visible property each parameter mainly drives; echoed in param files
PARAM_EFFECTS = {
    "dendritic_radius": "wave size",
    "activation_threshold": "wave shape",
    "propagation_prob": "wave speed",
    "active_duration": "wave duration",
    "refractory_mean": "spacing between waves",
    "spontaneous_rate": "initiation frequency",
}


class ClassGenerationError(RuntimeError):
    def __init__(self, class_id: int, reason: str):
        super().__init__(f"class {class_id}: {reason}")
        self.class_id = class_id
        self.reason = reason

    def __reduce__(self):
        return type(self), (self.class_id, self.reason)


def spread_values(base: float, spread: float, integer: bool = False) -> list:
    """Four values ``b(1-s), b(1-s/3), b(1+s/3), b(1+s)``."""
    vals = [base * (1 - spread), base * (1 - spread / 3), base * (1 + spread / 3), base * (1 + spread)]
    if integer:
        return [int(math.floor(v + 0.5)) for v in vals]
    return vals


@dataclass(frozen=True)
class ParameterGrid:
    """Altered parameters with their value lists, plus fixed values for the rest.

    ``axes`` is in declaration order, which is also the enumeration order
    (first axis varies slowest).
    """

    axes: tuple[tuple[str, tuple], ...]
    fixed: WaveParams = field(default_factory=WaveParams)

    def __post_init__(self):
        names = [name for name, _ in self.axes]
        if not names:
            raise ValueError("parameter grid has no altered parameters")
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate parameter names in grid: {names}")
        for name, values in self.axes:
            if name not in WaveParams.names():
                raise ValueError(f"unknown wave parameter {name!r}")
            if not values:
                raise ValueError(f"parameter {name!r} has an empty value list")
            for v in values:
                check_param_values({name: v})
            if len(set(values)) != len(values):
                raise ValueError(
                    f"parameter {name!r} has repeated values {list(values)}; "
                    "give explicit distinct values"
                )

    @classmethod
    def from_spread(cls, base: WaveParams, spread: dict, altered: Sequence[str]) -> "ParameterGrid":
        axes = []
        for name in altered:
            if name not in spread:
                raise ValueError(f"no spread given for altered parameter {name!r}")
            vals = spread_values(getattr(base, name), spread[name], name in INTEGER_PARAMS)
            axes.append((name, tuple(vals)))
        return cls(tuple(axes), base)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.axes)

    @property
    def n_classes(self) -> int:
        return math.prod(len(v) for _, v in self.axes)

    def describe(self) -> dict:
        return {
            "altered": {name: list(vals) for name, vals in self.axes},
            "fixed": {k: v for k, v in self.fixed.as_dict().items() if k not in self.names},
        }


@dataclass(frozen=True)
class ClassSpec:
    class_id: int
    params: WaveParams
    class_seed: int


def class_seed(master_seed: int, class_id: int) -> int:
    return rng.mix(master_seed, class_id)


def episode_seed(cls_seed: int, episode_id: int) -> int:
    return rng.mix(cls_seed, episode_id)


def enumerate_classes(grid: ParameterGrid, master_seed: int) -> list[ClassSpec]:
    """Cartesian product of the grid in lexicographic order, ids from 0."""
    if not grid.axes:
        raise ValueError("empty parameter grid")
    names = grid.names
    base = grid.fixed.as_dict()
    out = []
    for cid, combo in enumerate(itertools.product(*(vals for _, vals in grid.axes))):
        values = dict(base)
        values.update(zip(names, combo))
        out.append(ClassSpec(cid, WaveParams(**values), class_seed(master_seed, cid)))
    return out


@dataclass(frozen=True)
class SelectionPolicy:
    spacing: int = 4
    threshold: int = 50
    max_episodes_per_attempt: int = 50

    def __post_init__(self):
        for name in ("spacing", "threshold", "max_episodes_per_attempt"):
            v = getattr(self, name)
            if isinstance(v, bool) or int(v) != v or v < 1:
                raise ValueError(f"{name} must be an integer >= 1, got {v!r}")


class GenerationContext:
    """Per-worker shared state: lattice, identity crop map, neighbour tables."""

    def __init__(self, radius: float, side: int, dynamics: GlobalDynamicsConfig):
        self.lattice = build_lattice(radius)
        self.side = side
        self.dynamics = dynamics
        self.identity_map = crop_cell_map(self.lattice, side)
        self.weights = pixel_weights(self.identity_map, self.lattice.n_cells)
        self._tables = {}

    def table(self, dendritic_radius: float):
        t = self._tables.get(dendritic_radius)
        if t is None:
            t = self._tables[dendritic_radius] = neighbors(self.lattice, dendritic_radius)
        return t

    def episode(self, params: WaveParams, seed: int):
        return iter_episode(
            self.lattice, self.table(params.dendritic_radius), params, self.dynamics, seed
        )

    def identity_count(self, frame_or_mask) -> int:
        """Active-pixel count of the identity-augmentation crop."""
        active = frame_or_mask
        if isinstance(frame_or_mask, SimulationFrame):
            active = frame_or_mask.state == ACTIVE
        return int(self.weights[active].sum())

    def render(self, active: np.ndarray, aug: AugmentationSpec) -> BinaryImage:
        cmap = self.identity_map if aug == AugmentationSpec() else crop_cell_map(self.lattice, self.side, aug)
        return render_binary(active, cmap)


def select_steps(counts: np.ndarray, spacing: int, threshold: int) -> list[int]:
    """Steps ``0, n, 2n, ...`` whose identity crop has ``>= threshold`` active pixels."""
    counts = np.asarray(counts)
    cand = np.arange(0, len(counts), spacing)
    return cand[counts[cand] >= threshold].tolist()


def select_frames(
    episode: Sequence[SimulationFrame], policy: SelectionPolicy, context: GenerationContext
) -> list[int]:
    counts = np.array([context.identity_count(f) for f in episode], dtype=np.int64)
    steps = np.array([f.step for f in episode])
    if len(steps) and not np.array_equal(steps, np.arange(len(steps))):
        raise ValueError("episode frames must be consecutive from step 0")
    return select_steps(counts, policy.spacing, policy.threshold)


def draw_augmentation(cls_seed: int, image_index: int) -> AugmentationSpec:
    s = rng.Stream(rng.mix(cls_seed, "aug", image_index))
    mirror = s.random() < 0.5
    rotation = s.random() * 360.0
    return AugmentationSpec(mirror=mirror, rotation=rotation)


@dataclass
class GeneratedImage:
    image_index: int
    episode_id: int
    frame_step: int
    aug: AugmentationSpec
    reuse_round: int
    active_pixels: int
    image: BinaryImage


@dataclass
class ClassResult:
    spec: ClassSpec
    images: list[GeneratedImage]
    spacing_used: int
    threshold_used: int
    ladder: list[str]
    episodes_simulated: int

    @property
    def reused(self) -> bool:
        return "reuse" in self.ladder


def generate_class(
    spec: ClassSpec, quota: int, policy: SelectionPolicy, context: GenerationContext
) -> ClassResult:
    """Produce exactly ``quota`` augmented images for one class."""
    if quota < 1:
        raise ValueError("quota must be >= 1")
    spacing, threshold = policy.spacing, policy.threshold
    traces: list[np.ndarray] = []
    pool: list[tuple[int, int]] = []
    masks: dict[tuple[int, int], np.ndarray] = {}
    simulated = 0

    for ep in range(policy.max_episodes_per_attempt):
        counts = []
        for frame in context.episode(spec.params, episode_seed(spec.class_seed, ep)):
            c = context.identity_count(frame)
            counts.append(c)
            if frame.step % spacing == 0 and c >= threshold:
                pool.append((ep, frame.step))
                masks[(ep, frame.step)] = np.packbits(frame.state == ACTIVE)
                if len(pool) >= quota:
                    break
        traces.append(np.array(counts, dtype=np.int64))
        simulated += 1
        if len(pool) >= quota:
            break

    ladder: list[str] = []
    if len(pool) >= quota:
        chosen = [(ep, st, 0) for ep, st in pool[:quota]]
    else:
        # every attempt episode ran to completion, so traces are full
        reuse = False
        while True:
            if spacing > 1:
                spacing -= 1
                ladder.append("spacing")
            elif threshold > 1:
                threshold = max(1, threshold // 2)
                ladder.append("threshold")
            else:
                reuse = True
                ladder.append("reuse")
            pool = [(ep, st) for ep, tr in enumerate(traces) for st in select_steps(tr, spacing, threshold)]
            if reuse or len(pool) >= quota:
                break
        if not pool:
            raise ClassGenerationError(
                spec.class_id,
                f"no frame reached {threshold} active pixel(s) in "
                f"{policy.max_episodes_per_attempt} episodes",
            )
        if reuse:
            chosen = [(*pool[i % len(pool)], i // len(pool)) for i in range(quota)]
        else:
            chosen = [(ep, st, 0) for ep, st in pool[:quota]]
        log.debug("class %d relaxed to spacing=%d threshold=%d", spec.class_id, spacing, threshold)
        masks = _capture_masks(spec, context, {(ep, st) for ep, st, _ in chosen})

    n_cells = context.lattice.n_cells
    images = []
    for i, (ep, st, reuse_round) in enumerate(chosen):
        active = np.unpackbits(masks[(ep, st)], count=n_cells).astype(bool)
        aug = draw_augmentation(spec.class_seed, i)
        images.append(
            GeneratedImage(
                i, ep, st, aug, reuse_round, context.identity_count(active), context.render(active, aug)
            )
        )
    return ClassResult(spec, images, spacing, threshold, ladder, simulated)


def _capture_masks(spec: ClassSpec, context: GenerationContext, wanted: set) -> dict:
    """Re-simulate episodes from their seeds and keep the requested frames."""
    out = {}
    by_ep: dict[int, set] = {}
    for ep, st in wanted:
        by_ep.setdefault(ep, set()).add(st)
    for ep in sorted(by_ep):
        steps = by_ep[ep]
        last = max(steps)
        for frame in context.episode(spec.params, episode_seed(spec.class_seed, ep)):
            if frame.step in steps:
                out[(ep, frame.step)] = np.packbits(frame.state == ACTIVE)
            if frame.step >= last:
                break
    return out


def reproject_identity(spec: ClassSpec, episode_id: int, frame_step: int, context: GenerationContext) -> int:
    """Identity-crop active-pixel count of one recorded frame, by re-simulation."""
    return reproject_steps(spec, episode_id, [frame_step], context)[frame_step]


def reproject_steps(spec: ClassSpec, episode_id: int, steps, context: GenerationContext) -> dict[int, int]:
    """Like :func:`reproject_identity` for several steps of one episode, simulating it once."""
    wanted = set(steps)
    out = {}
    if wanted:
        last = max(wanted)
        for frame in context.episode(spec.params, episode_seed(spec.class_seed, episode_id)):
            if frame.step in wanted:
                out[frame.step] = context.identity_count(frame)
            if frame.step >= last:
                break
    missing = wanted - set(out)
    if missing:
        raise ValueError(f"episode {episode_id} has no step(s) {sorted(missing)}")
    return out


def split_sizes(n: int, ratios: Sequence[float] = DEFAULT_RATIOS) -> tuple[int, ...]:
    """Exact per-class split sizes; raises unless every ``n * ratio`` is an integer."""
    fracs = [Fraction(str(r)) for r in ratios]
    if sum(fracs) != 1 or any(f < 0 for f in fracs):
        raise ValueError(f"split ratios must be non-negative and sum to 1, got {list(ratios)}")
    sizes = []
    for f in fracs:
        k = n * f
        if k.denominator != 1:
            denom = math.lcm(*(f.denominator for f in fracs))
            raise ValueError(
                f"{n} images per class cannot be split exactly by {list(ratios)}; "
                f"use a multiple of {denom}"
            )
        sizes.append(int(k))
    return tuple(sizes)


def class_split_labels(
    class_id: int, n: int, master_seed: int, ratios: Sequence[float] = DEFAULT_RATIOS
) -> list[str]:
    """Split label for each image index of one class."""
    sizes = split_sizes(n, ratios)
    order = rng.Stream(rng.mix(master_seed, class_id, "split")).shuffle(range(n))
    labels = [""] * n
    pos = 0
    for name, k in zip(SPLITS, sizes):
        for idx in order[pos : pos + k]:
            labels[idx] = name
        pos += k
    return labels


def assign_splits(
    class_ids: Iterable[int], n: int, master_seed: int, ratios: Sequence[float] = DEFAULT_RATIOS
) -> dict[int, list[str]]:
    return {cid: class_split_labels(cid, n, master_seed, ratios) for cid in class_ids}


# -- per-class parameter files ------------------------------------------------


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        raise TypeError("boolean parameter values are not supported")
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def paramfile_text(spec: ClassSpec) -> str:
    entries = dict(spec.params.as_dict())
    entries["class_id"] = spec.class_id
    entries["class_seed"] = spec.class_seed
    lines = [f"# {name}: {PARAM_EFFECTS[name]}" for name in WaveParams.names()]
    lines += [f"{k}={format_value(entries[k])}" for k in sorted(entries)]
    return "\n".join(lines) + "\n"


def write_class_paramfile(spec: ClassSpec, destination) -> Path:
    path = Path(destination)
    try:
        path.write_text(paramfile_text(spec), encoding="utf-8", newline="\n")
    except OSError as exc:
        raise OSError(f"cannot write parameter file {path}: {exc.strerror or exc}") from exc
    return path


def parse_paramfile(text: str) -> ClassSpec:
    values = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ValueError(f"malformed parameter line {line!r}")
        values[key.strip()] = val.strip()
    try:
        cid = int(values.pop("class_id"))
        seed = int(values.pop("class_seed"))
    except KeyError as exc:
        raise ValueError(f"parameter file lacks {exc.args[0]}") from None
    unknown = set(values) - set(WaveParams.names())
    if unknown:
        raise ValueError(f"unknown parameters in file: {sorted(unknown)}")
    params = {k: int(v) if k in INTEGER_PARAMS else float(v) for k, v in values.items()}
    return ClassSpec(cid, WaveParams(**params), seed)


def read_class_paramfile(path) -> ClassSpec:
    return parse_paramfile(Path(path).read_text(encoding="utf-8"))
