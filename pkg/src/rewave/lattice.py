"""Hexagonal amacrine-cell lattice clipped to a circular retina.

Cells sit on a pointy-top hex grid with unit spacing. Axial coordinate
``(q, r)`` maps to the Cartesian point ``(q + r/2, r*sqrt(3)/2)``, so rows
are ``sqrt(3)/2`` apart and alternate rows are offset by half a unit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SQRT3_2 = math.sqrt(3.0) / 2.0

# Distances are compared with this slack so that points exactly on a
# shell (e.g. the six neighbours at distance 1) are not lost to rounding.
EPS = 1e-9

DEFAULT_RADIUS = 160.0


def axial_to_xy(q, r):
    q = np.asarray(q, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    return q + 0.5 * r, r * SQRT3_2


@dataclass(frozen=True, eq=False)
class RetinaLattice:
    """Immutable cell geometry plus a uniform bucket index (1-unit buckets).

    ``axial`` is ``(n, 2)`` int ``(q, r)``; ``positions`` is ``(n, 2)`` float
    ``(x, y)``; cells are ordered by ``(r, q)``.
    """

    radius: float
    axial: np.ndarray
    positions: np.ndarray
    boundary: np.ndarray
    _bucket_lo: int = field(repr=False)
    _bucket_span: int = field(repr=False)
    _bucket_start: np.ndarray = field(repr=False)
    _bucket_cells: np.ndarray = field(repr=False)
    _bucket_padded: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def n_cells(self) -> int:
        return len(self.positions)

    def contains(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        return x * x + y * y <= (self.radius + EPS) ** 2

    def _bucket_of(self, x: float, y: float) -> tuple[int, int]:
        return math.floor(x) - self._bucket_lo, math.floor(y) - self._bucket_lo

    def _cells_in_bucket(self, bx: int, by: int) -> np.ndarray:
        span = self._bucket_span
        if not (0 <= bx < span and 0 <= by < span):
            return self._bucket_cells[:0]
        b = by * span + bx
        return self._bucket_cells[self._bucket_start[b] : self._bucket_start[b + 1]]

    def nearest_cell(self, point) -> int | None:
        """Index of the closest cell, or ``None`` outside the disc.

        Ties go to the lowest index. Buckets are scanned ring by ring
        around the query until no unscanned ring can hold a closer cell.
        """
        px, py = float(point[0]), float(point[1])
        if not self.contains(px, py):
            return None
        bx, by = self._bucket_of(px, py)
        best, best_d2 = None, math.inf
        span = self._bucket_span
        k = 0
        while True:
            for cx, cy in _ring(bx, by, k):
                for c in self._cells_in_bucket(cx, cy):
                    dx = px - self.positions[c, 0]
                    dy = py - self.positions[c, 1]
                    d2 = dx * dx + dy * dy
                    if d2 < best_d2 or (d2 == best_d2 and c < best):
                        best, best_d2 = int(c), d2
            # cells in ring k+1 are at least k units away
            if best is not None and best_d2 < k * k:
                return best
            if k > 2 * span + 2:
                return best
            k += 1

    def nearest_cells(self, xs, ys) -> np.ndarray:
        """Vectorised :meth:`nearest_cell`; ``-1`` marks points outside the disc."""
        xs = np.ascontiguousarray(xs, dtype=np.float64).ravel()
        ys = np.ascontiguousarray(ys, dtype=np.float64).ravel()
        out = np.full(xs.shape, -1, dtype=np.int64)
        inside = self.contains(xs, ys)
        if not inside.any():
            return out
        idx = np.flatnonzero(inside)
        px, py = xs[idx], ys[idx]
        span = self._bucket_span
        bx = np.floor(px).astype(np.int64) - self._bucket_lo
        by = np.floor(py).astype(np.int64) - self._bucket_lo
        cands = []
        for oy in (-1, 0, 1):
            for ox in (-1, 0, 1):
                cx, cy = bx + ox, by + oy
                ok = (cx >= 0) & (cx < span) & (cy >= 0) & (cy < span)
                b = np.where(ok, cy * span + cx, 0)
                c = self._bucket_padded[b]
                c[~ok] = -1
                cands.append(c)
        cand = np.concatenate(cands, axis=1)
        valid = cand >= 0
        safe = np.where(valid, cand, 0)
        dx = px[:, None] - self.positions[safe, 0]
        dy = py[:, None] - self.positions[safe, 1]
        d2 = dx * dx + dy * dy
        d2[~valid] = np.inf
        dmin = d2.min(axis=1)
        big = np.iinfo(np.int64).max
        best = np.where(d2 == dmin[:, None], cand, big).min(axis=1)
        # a 3x3 hit is final only if nothing two buckets away could tie or win
        unsure = ~(dmin < 1.0)
        best[unsure] = -1
        out[idx] = best
        for j in idx[unsure]:
            out[j] = self.nearest_cell((xs[j], ys[j]))
        return out


def _ring(bx: int, by: int, k: int):
    if k == 0:
        yield bx, by
        return
    for dx in range(-k, k + 1):
        yield bx + dx, by - k
        yield bx + dx, by + k
    for dy in range(-k + 1, k):
        yield bx - k, by + dy
        yield bx + k, by + dy


def build_lattice(radius: float) -> RetinaLattice:
    """All hex-grid points within ``radius`` of the origin."""
    radius = float(radius)
    if not radius >= 1.0:
        raise ValueError(f"retina radius must be >= 1, got {radius}")
    rmax = int(math.ceil(radius / SQRT3_2)) + 1
    qmax = int(math.ceil(radius + 0.5 * rmax)) + 1
    r, q = np.meshgrid(
        np.arange(-rmax, rmax + 1), np.arange(-qmax, qmax + 1), indexing="ij"
    )
    r, q = r.ravel(), q.ravel()  # row-major in (r, q): already sorted
    x, y = axial_to_xy(q, r)
    keep = x * x + y * y <= (radius + EPS) ** 2
    q, r, x, y = q[keep], r[keep], x[keep], y[keep]
    axial = np.stack([q, r], axis=1).astype(np.int64)
    positions = np.stack([x, y], axis=1)
    boundary = radius - np.hypot(x, y) < 1.0

    lo = math.floor(-radius) - 1
    span = math.floor(radius) - lo + 2
    bucket = (np.floor(y).astype(np.int64) - lo) * span + (np.floor(x).astype(np.int64) - lo)
    order = np.argsort(bucket, kind="stable")
    counts = np.bincount(bucket, minlength=span * span)
    start = np.zeros(span * span + 1, dtype=np.int64)
    np.cumsum(counts, out=start[1:])
    cells = order.astype(np.int64)
    width = max(int(counts.max()), 1)
    padded = np.full((span * span, width), -1, dtype=np.int64)
    slot = np.arange(len(cells)) - start[bucket[order]]
    padded[bucket[order], slot] = cells

    for arr in (axial, positions, boundary, start, cells, padded):
        arr.setflags(write=False)
    return RetinaLattice(
        radius=radius,
        axial=axial,
        positions=positions,
        boundary=boundary,
        _bucket_lo=lo,
        _bucket_span=span,
        _bucket_start=start,
        _bucket_cells=cells,
        _bucket_padded=padded,
    )


def nearest_cell(lattice: RetinaLattice, point) -> int | None:
    return lattice.nearest_cell(point)


@dataclass(frozen=True, eq=False)
class NeighborTable:
    """Cells within the dendritic radius of each cell, ascending index order.

    Stored CSR-style (``indptr``/``indices``) with a ``-1``-padded copy for
    vectorised gathers in the stepper.
    """

    dendritic_radius: float
    indptr: np.ndarray
    indices: np.ndarray
    padded: np.ndarray
    degree: np.ndarray

    def __len__(self) -> int:
        return len(self.degree)

    def __getitem__(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i] : self.indptr[i + 1]]

    def as_lists(self) -> list[list[int]]:
        return [self[i].tolist() for i in range(len(self))]


def hex_offsets(dendritic_radius: float) -> list[tuple[int, int]]:
    """Axial offsets ``(dq, dr)`` of all grid points within the radius, origin excluded."""
    reach = int(math.ceil(2 * dendritic_radius)) + 1
    out = []
    for dr in range(-reach, reach + 1):
        for dq in range(-reach, reach + 1):
            if dq == 0 and dr == 0:
                continue
            x, y = dq + 0.5 * dr, dr * SQRT3_2
            if x * x + y * y <= (dendritic_radius + EPS) ** 2:
                out.append((dq, dr))
    return out


def neighbors(lattice: RetinaLattice, dendritic_radius: float) -> NeighborTable:
    """Neighbour table for a dendritic radius (lattice units, >= 1)."""
    rho = float(dendritic_radius)
    if not rho >= 1.0:
        raise ValueError(f"dendritic radius must be >= 1, got {rho}")
    n = lattice.n_cells
    q, r = lattice.axial[:, 0], lattice.axial[:, 1]
    q0, r0 = q.min(), r.min()
    wq, wr = q.max() - q0 + 1, r.max() - r0 + 1
    lookup = np.full((wr, wq), -1, dtype=np.int64)
    lookup[r - r0, q - q0] = np.arange(n)

    offsets = hex_offsets(rho)
    padded = np.full((n, max(len(offsets), 1)), -1, dtype=np.int64)
    for k, (dq, dr) in enumerate(offsets):
        qq, rr = q + dq - q0, r + dr - r0
        ok = (qq >= 0) & (qq < wq) & (rr >= 0) & (rr < wr)
        padded[ok, k] = lookup[rr[ok], qq[ok]]
    # ascending index order, padding pushed to the end
    padded = np.where(padded < 0, n, padded)
    padded.sort(axis=1)
    padded[padded == n] = -1
    degree = (padded >= 0).sum(axis=1)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(degree, out=indptr[1:])
    indices = padded[padded >= 0]
    for arr in (indptr, indices, padded, degree):
        arr.setflags(write=False)
    return NeighborTable(rho, indptr, indices, padded, degree)
