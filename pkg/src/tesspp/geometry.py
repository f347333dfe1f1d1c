"""Windows, point patterns, rasters, and tessellations.

Shared value types for the whole package. All types are immutable after
construction and safe to share across threads.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DomainError(ValueError):
    """A coordinate falls outside the observation window."""


class MaskedValueError(ValueError):
    """A raster lookup hit a masked (NaN) pixel."""


@dataclass(frozen=True)
class Window:
    """Rectangular observation window [xmin, xmax] x [ymin, ymax]."""

    xmin: float
    xmax: float
    ymin: float
    ymax: float

    def __post_init__(self):
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise DomainError("window must satisfy xmax > xmin and ymax > ymin")

    @property
    def width(self):
        return self.xmax - self.xmin

    @property
    def height(self):
        return self.ymax - self.ymin

    @property
    def area(self):
        return self.width * self.height

    @property
    def short_side(self):
        return min(self.width, self.height)

    def contains(self, x, y):
        """Closed-boundary membership test; accepts scalars or arrays."""
        x = np.asarray(x)
        y = np.asarray(y)
        return (x >= self.xmin) & (x <= self.xmax) & (y >= self.ymin) & (y <= self.ymax)


def unit_square():
    return Window(0.0, 1.0, 0.0, 1.0)


class PointPattern:
    """A simple planar point pattern inside a window.

    Duplicate coordinates and out-of-window points are rejected on
    construction.
    """

    def __init__(self, points, window):
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        if pts.size and not np.all(window.contains(pts[:, 0], pts[:, 1])):
            raise DomainError("all points must lie inside the window")
        if len(pts) > 1:
            uniq = np.unique(pts, axis=0)
            if len(uniq) != len(pts):
                raise DomainError("duplicate coordinates are not allowed")
        pts.setflags(write=False)
        self.points = pts
        self.window = window

    @property
    def n(self):
        return len(self.points)

    @property
    def x(self):
        return self.points[:, 0]

    @property
    def y(self):
        return self.points[:, 1]

    def __repr__(self):
        return f"PointPattern(n={self.n}, window={self.window})"


class SpatialRaster:
    """Gridded real-valued field over a window, with one or more bands.

    Pixels are half-open cells; row 0 corresponds to minimum y. NaN encodes
    masked pixels.
    """

    def __init__(self, values, window, band_names=None):
        arr = np.asarray(values, dtype=float)
        if arr.ndim == 2:
            arr = arr[None, :, :]
        if arr.ndim != 3:
            raise ValueError("values must be a 2-d band or a stack of bands")
        arr = arr.copy()
        arr.setflags(write=False)
        self.values = arr
        self.window = window
        if band_names is None:
            band_names = [f"band{i}" for i in range(arr.shape[0])]
        if len(band_names) != arr.shape[0]:
            raise ValueError("band_names length must match the number of bands")
        self.band_names = list(band_names)

    @property
    def nbands(self):
        return self.values.shape[0]

    @property
    def ny(self):
        return self.values.shape[1]

    @property
    def nx(self):
        return self.values.shape[2]

    @property
    def pixel_width(self):
        return self.window.width / self.nx

    @property
    def pixel_height(self):
        return self.window.height / self.ny

    @property
    def pixel_area(self):
        return self.pixel_width * self.pixel_height

    @property
    def x_centers(self):
        w = self.window
        return w.xmin + (np.arange(self.nx) + 0.5) * self.pixel_width

    @property
    def y_centers(self):
        w = self.window
        return w.ymin + (np.arange(self.ny) + 0.5) * self.pixel_height

    def band(self, i=0):
        return self.values[i]

    def indices_of(self, x, y):
        """Map coordinates to (iy, ix) pixel indices.

        Cells are half-open, so a point on an interior boundary belongs to
        the pixel with the larger index; the top/right window edges fold
        into the last pixel.
        """
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if not np.all(self.window.contains(x, y)):
            raise DomainError("coordinate outside the window")
        ix = np.minimum(
            np.floor((x - self.window.xmin) / self.pixel_width).astype(int), self.nx - 1
        )
        iy = np.minimum(
            np.floor((y - self.window.ymin) / self.pixel_height).astype(int), self.ny - 1
        )
        return iy, ix

    def value_at(self, x, y, band=0):
        """Piecewise-constant lookup of the pixel containing (x, y)."""
        iy, ix = self.indices_of(x, y)
        val = self.values[band][iy, ix]
        if np.any(np.isnan(val)):
            raise MaskedValueError("lookup hit a masked pixel")
        return val

    def sample(self, x, y, band=0, allow_nan=False):
        """Vectorized lookup; with allow_nan masked pixels return NaN."""
        iy, ix = self.indices_of(x, y)
        val = self.values[band][iy, ix]
        if not allow_nan and np.any(np.isnan(val)):
            raise MaskedValueError("lookup hit a masked pixel")
        return val

    def mask(self):
        """Boolean in-window (unmasked) map, shared by all bands."""
        return np.all(np.isfinite(self.values), axis=0)

    def with_band_names(self, names):
        return SpatialRaster(self.values, self.window, band_names=names)


class Tessellation:
    """Integer label raster partitioning the window into q tiles.

    Labels run 1..q; 0 marks masked pixels. ``reference_tile`` is the tile
    whose dummy variable is dropped in model designs.
    """

    def __init__(self, labels, window, reference_tile=None, meta=None):
        lab = np.asarray(labels, dtype=int)
        if lab.ndim != 2:
            raise ValueError("labels must be a 2-d integer raster")
        present = np.unique(lab[lab > 0])
        if present.size == 0:
            raise ValueError("tessellation has no labeled pixels")
        q = int(present.max())
        if not np.array_equal(present, np.arange(1, q + 1)):
            raise ValueError("labels 1..q must each occur at least once")
        lab = lab.copy()
        lab.setflags(write=False)
        self.labels = lab
        self.window = window
        self.q = q
        if reference_tile is None:
            counts = np.bincount(lab[lab > 0], minlength=q + 1)
            reference_tile = int(np.argmax(counts[1:]) + 1)
        if not (1 <= reference_tile <= q):
            raise ValueError("reference_tile must be in 1..q")
        self.reference_tile = int(reference_tile)
        self.meta = meta or {}
        self._raster = SpatialRaster(lab.astype(float), window)

    @property
    def ny(self):
        return self.labels.shape[0]

    @property
    def nx(self):
        return self.labels.shape[1]

    def tile_counts(self):
        return np.bincount(self.labels[self.labels > 0], minlength=self.q + 1)[1:]

    def membership(self, x, y):
        """Tile label of the pixel containing (x, y)."""
        lab = self._raster.sample(x, y, allow_nan=True)
        if np.any(lab == 0):
            raise DomainError("coordinate falls on a masked pixel")
        return lab.astype(int) if np.ndim(lab) else int(lab)

    def dummies(self, x, y):
        """Dummy encoding: column k is 1 iff label == k, skipping the
        reference tile. Shape (npts, q-1) for array input."""
        lab = np.atleast_1d(self.membership(x, y))
        ks = [k for k in range(1, self.q + 1) if k != self.reference_tile]
        out = np.column_stack([(lab == k).astype(float) for k in ks]) if ks else np.zeros((len(lab), 0))
        return out

    def with_reference(self, reference_tile):
        return Tessellation(self.labels, self.window, reference_tile, meta=self.meta)


def tessellation_membership(tess, u):
    """Tile label of the pixel containing location u = (x, y)."""
    return tess.membership(u[0], u[1])


def raster_at(raster, u, band=0):
    """Piecewise-constant raster value at location u = (x, y)."""
    return raster.value_at(u[0], u[1], band=band)


def single_tile_tessellation(window, nx, ny):
    return Tessellation(np.ones((ny, nx), dtype=int), window)


def diagonal_tessellation(window, nx, ny):
    """Two tiles split by the line x = y: tile 1 where x <= y, tile 2 where
    x > y, evaluated at pixel centers. Reference tile is tile 1."""
    r = SpatialRaster(np.zeros((ny, nx)), window)
    xx, yy = np.meshgrid(r.x_centers, r.y_centers)
    labels = np.where(xx > yy, 2, 1)
    return Tessellation(labels, window, reference_tile=1)


# ---------------------------------------------------------------------------
# File formats


def write_pattern_csv(pattern, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("x,y\n")
        for x, y in pattern.points:
            fh.write(f"{float(x)!r},{float(y)!r}\n")


def read_pattern_csv(path, window):
    pts = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header.replace(" ", "") != "x,y":
            raise ValueError("pattern CSV must start with header 'x,y'")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            sx, sy = line.split(",")
            pts.append((float(sx), float(sy)))
    return PointPattern(np.asarray(pts, dtype=float).reshape(-1, 2), window)


def write_raster_text(raster, path, band=0):
    w = raster.window
    vals = raster.band(band)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{raster.nx} {raster.ny} {w.xmin!r} {w.xmax!r} {w.ymin!r} {w.ymax!r}\n")
        for row in vals:
            fh.write(" ".join("NA" if np.isnan(v) else repr(float(v)) for v in row))
            fh.write("\n")


def read_raster_text(path):
    with open(path, encoding="utf-8") as fh:
        head = fh.readline().split()
        nx, ny = int(head[0]), int(head[1])
        window = Window(*(float(v) for v in head[2:6]))
        rows = []
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rows.append([np.nan if tok == "NA" else float(tok) for tok in line.split()])
    vals = np.asarray(rows, dtype=float)
    if vals.shape != (ny, nx):
        raise ValueError(f"raster body is {vals.shape}, header says {(ny, nx)}")
    return SpatialRaster(vals, window)


def write_tessellation_text(tess, path):
    w = tess.window
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{tess.nx} {tess.ny} {w.xmin!r} {w.xmax!r} {w.ymin!r} {w.ymax!r} ref={tess.reference_tile}\n")
        for row in tess.labels:
            fh.write(" ".join(str(int(v)) for v in row))
            fh.write("\n")


def read_tessellation_text(path):
    with open(path, encoding="utf-8") as fh:
        head = fh.readline().split()
        nx, ny = int(head[0]), int(head[1])
        window = Window(*(float(v) for v in head[2:6]))
        ref = int(head[6].split("=")[1])
        rows = [[int(tok) for tok in line.split()] for line in fh if line.strip()]
    labels = np.asarray(rows, dtype=int)
    if labels.shape != (ny, nx):
        raise ValueError(f"tessellation body is {labels.shape}, header says {(ny, nx)}")
    return Tessellation(labels, window, reference_tile=ref)
