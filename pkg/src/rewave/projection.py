"""Rendering of simulation frames into cropped binary and raw RGB images.

Cropped images sample the square inscribed in the retina disc (its
corners touch the rim). Mirroring and rotation are applied to the
sampling grid in retina space, so every sample stays inside the disc and
the output remains strictly binary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import ACTIVE, READY, REFRACTORY, SimulationFrame
from .lattice import RetinaLattice

ON = 255
GREEN_LEVELS = {READY: 0, REFRACTORY: 85, ACTIVE: 170}
BLUE_RIM = 255

_GREEN_LUT = np.zeros(256, dtype=np.uint8)
for _state, _level in GREEN_LEVELS.items():
    _GREEN_LUT[_state] = _level


class ImageValueError(ValueError):
    pass


@dataclass(frozen=True)
class AugmentationSpec:
    mirror: bool = False
    rotation: float = 0.0  # degrees, counter-clockwise, in [0, 360)

    def __post_init__(self):
        if not 0.0 <= self.rotation < 360.0:
            raise ValueError(f"rotation must be in [0, 360), got {self.rotation}")


IDENTITY = AugmentationSpec()


@dataclass(eq=False)
class BinaryImage:
    """8-bit grayscale image whose pixels are 0 (inactive) or 255 (active)."""

    pixels: np.ndarray

    @property
    def side(self) -> int:
        return self.pixels.shape[0]

    def invalid_values(self) -> set[int]:
        vals = np.unique(self.pixels)
        return {int(v) for v in vals if v not in (0, ON)}

    def validate(self) -> "BinaryImage":
        bad = self.invalid_values()
        if bad:
            raise ImageValueError(f"binary image has values outside {{0,255}}: {sorted(bad)}")
        return self

    def __eq__(self, other):
        return isinstance(other, BinaryImage) and np.array_equal(self.pixels, other.pixels)


@dataclass(eq=False)
class RawImage:
    """Full-retina RGB render: red calcium, green state code, blue rim."""

    pixels: np.ndarray

    @property
    def side(self) -> int:
        return self.pixels.shape[0]

    def invalid_values(self) -> dict[str, set[int]]:
        g = set(np.unique(self.pixels[..., 1]).tolist()) - set(GREEN_LEVELS.values())
        b = set(np.unique(self.pixels[..., 2]).tolist()) - {0, BLUE_RIM}
        return {k: v for k, v in (("green", g), ("blue", b)) if v}

    def validate(self) -> "RawImage":
        bad = self.invalid_values()
        if bad:
            raise ImageValueError(f"raw image has out-of-code channel values: {bad}")
        return self

    def __eq__(self, other):
        return isinstance(other, RawImage) and np.array_equal(self.pixels, other.pixels)


def crop_sample_points(radius: float, side: int, aug: AugmentationSpec = IDENTITY):
    """Retina coordinates sampled by each pixel, as ``(x, y)`` arrays indexed ``[row, col]``.

    Column index drives x, row index drives y; mirroring negates x before
    the rotation.
    """
    if side < 8:
        raise ValueError(f"image side must be >= 8, got {side}")
    edge = radius * math.sqrt(2.0)
    ticks = edge * ((np.arange(side) + 0.5) / side - 0.5)
    x = np.broadcast_to(ticks[None, :], (side, side))
    y = np.broadcast_to(ticks[:, None], (side, side))
    if aug.mirror:
        x = -x
    a = math.radians(aug.rotation)
    c, s = math.cos(a), math.sin(a)
    return c * x - s * y, s * x + c * y


def crop_cell_map(lattice: RetinaLattice, side: int, aug: AugmentationSpec = IDENTITY) -> np.ndarray:
    """Nearest-cell index for every pixel of a cropped image."""
    xs, ys = crop_sample_points(lattice.radius, side, aug)
    cells = lattice.nearest_cells(xs, ys).reshape(side, side)
    if (cells < 0).any():
        raise RuntimeError("crop sample fell outside the retina disc")
    return cells


def render_binary(active: np.ndarray, cell_map: np.ndarray) -> BinaryImage:
    return BinaryImage(np.where(active[cell_map], ON, 0).astype(np.uint8))


def project_cropped(
    frame: SimulationFrame,
    lattice: RetinaLattice,
    aug: AugmentationSpec = IDENTITY,
    side: int = 256,
    cell_map: np.ndarray | None = None,
) -> BinaryImage:
    if cell_map is None:
        cell_map = crop_cell_map(lattice, side, aug)
    return render_binary(frame.state == ACTIVE, cell_map)


def pixel_weights(cell_map: np.ndarray, n_cells: int) -> np.ndarray:
    """How many pixels each cell covers under ``cell_map``.

    ``weights @ active`` equals the active-pixel count of the rendered image.
    """
    return np.bincount(cell_map.ravel(), minlength=n_cells).astype(np.int64)


def raw_side(radius: float) -> int:
    return int(math.ceil(2.0 * radius))


def raw_cell_map(lattice: RetinaLattice) -> np.ndarray:
    """Nearest-cell index per raw pixel (1-unit pitch), ``-1`` outside the disc."""
    m = raw_side(lattice.radius)
    ticks = np.arange(m) + 0.5 - m / 2.0
    xs = np.broadcast_to(ticks[None, :], (m, m))
    ys = np.broadcast_to(ticks[:, None], (m, m))
    return lattice.nearest_cells(xs, ys).reshape(m, m)


def calcium_to_red(calcium) -> np.ndarray:
    """``round(255*c)`` with halves rounded up."""
    return np.floor(255.0 * np.asarray(calcium, dtype=np.float64) + 0.5).astype(np.uint8)


def project_raw(
    frame: SimulationFrame, lattice: RetinaLattice, cell_map: np.ndarray | None = None
) -> RawImage:
    if cell_map is None:
        cell_map = raw_cell_map(lattice)
    inside = cell_map >= 0
    cells = cell_map[inside]
    m = cell_map.shape[0]
    px = np.zeros((m, m, 3), dtype=np.uint8)
    px[inside, 0] = calcium_to_red(frame.calcium[cells])
    px[inside, 1] = _GREEN_LUT[frame.state[cells]]
    px[inside, 2] = np.where(lattice.boundary[cells], BLUE_RIM, 0)
    return RawImage(px)


def active_pixel_count(image: BinaryImage) -> int:
    return int(np.count_nonzero(image.pixels == ON))
