"""Superpixel segmentation of coefficient maps and tile formation.

SLIC over the (standardized) coefficient bands, connectivity enforcement,
Ward clustering of superpixel values, and a silhouette-based cut that may
select a single tile when no change is supported.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.cluster.hierarchy import fcluster, linkage

from .geometry import Tessellation


@dataclass(frozen=True)
class SlicParams:
    S: int  # initial center spacing, in pixels
    g: float = 1.0  # compactness
    n_iter: int = 10

    def __post_init__(self):
        if self.S < 2:
            raise ValueError("S must be at least 2")
        if self.g <= 0:
            raise ValueError("compactness g must be positive")
        if self.n_iter < 1:
            raise ValueError("n_iter must be at least 1")


def default_spacing(n_pixels, target=400):
    """Center spacing aiming for about ``target`` superpixels."""
    return max(4, int(round(np.sqrt(n_pixels / target))))


@dataclass
class SuperpixelMap:
    """Pixel labels (0..n_sp-1, -1 masked) plus per-superpixel centers."""

    labels: np.ndarray
    centers_xy: np.ndarray  # (n_sp, 2) mean pixel coordinates (x, y)
    centers_val: np.ndarray  # (n_sp, nbands) mean band values
    counts: np.ndarray
    objective_trace: list = field(default_factory=list)
    # centers used in the last assignment pass: a nearest-center pass at
    # these reproduces ``labels`` exactly (the assignment oracle)
    assign_xy: np.ndarray = None
    assign_val: np.ndarray = None

    @property
    def n_superpixels(self):
        return len(self.counts)


def _superpixel_stats(labels, vals, n_sp):
    ny, nx = labels.shape
    yy, xx = np.mgrid[0:ny, 0:nx]
    inb = labels >= 0
    lab = labels[inb]
    counts = np.bincount(lab, minlength=n_sp)
    cx = np.bincount(lab, weights=xx[inb], minlength=n_sp)
    cy = np.bincount(lab, weights=yy[inb], minlength=n_sp)
    safe = np.maximum(counts, 1)
    centers_xy = np.column_stack([cx / safe, cy / safe])
    centers_val = np.column_stack(
        [np.bincount(lab, weights=band[inb], minlength=n_sp) / safe for band in vals]
    )
    return centers_xy, centers_val, counts


def slic_distance2(vals, px, py, cx, cy, cval, g, S):
    """Squared SLIC distance D^2 = d_c^2 + g * d_s^2 / S^2 of pixels
    against one center. ``vals`` is (nbands, npix) at pixel coords."""
    dc2 = np.sum((vals - cval[:, None]) ** 2, axis=0)
    ds2 = (px - cx) ** 2 + (py - cy) ** 2
    return dc2 + g * ds2 / (S * S)


def slic(raster, params, connectivity=True):
    """SLIC superpixels on a multi-band raster.

    Centers start on a regular S-spaced lattice; pixels are assigned to the
    nearest center (by the combined spectral/spatial distance) within a
    2S x 2S search window; centers move to member means. Ties go to the
    lowest center index.
    """
    vals = raster.values
    mask = raster.mask()
    if not np.any(mask):
        raise ValueError("all pixels are masked")
    ny, nx = mask.shape
    S, g = params.S, params.g

    xs = np.arange(S // 2, nx, S)
    ys = np.arange(S // 2, ny, S)
    centers = [(float(x), float(y)) for y in ys for x in xs if mask[y, x]]
    if len(centers) < 2:
        raise ValueError("grid too small for at least 2 superpixel centers")
    centers_xy = np.asarray(centers)
    centers_val = np.stack([vals[:, int(cy), int(cx)] for cx, cy in centers_xy])

    yy, xx = np.mgrid[0:ny, 0:nx]
    labels = np.full((ny, nx), -1, dtype=int)
    trace = []
    for _ in range(params.n_iter):
        best = np.full((ny, nx), np.inf)
        new_labels = np.full((ny, nx), -1, dtype=int)
        for ci, (cx, cy) in enumerate(centers_xy):
            x0, x1 = max(0, int(cx) - S), min(nx, int(cx) + S + 1)
            y0, y1 = max(0, int(cy) - S), min(ny, int(cy) + S + 1)
            sub = np.s_[y0:y1, x0:x1]
            d2 = slic_distance2(
                vals[:, y0:y1, x0:x1].reshape(vals.shape[0], -1),
                xx[sub].ravel(),
                yy[sub].ravel(),
                cx,
                cy,
                centers_val[ci],
                g,
                S,
            ).reshape(y1 - y0, x1 - x0)
            better = (d2 < best[sub]) & mask[sub]
            new_labels[sub][better] = ci
            best[sub][better] = d2[better]
        # unreached masked-in pixels (possible near mask holes): nearest center by D
        orphan = mask & (new_labels < 0)
        if np.any(orphan):
            pxl, pyl = xx[orphan], yy[orphan]
            od = np.full(pxl.shape, np.inf)
            for ci, (cx, cy) in enumerate(centers_xy):
                d2 = slic_distance2(
                    vals[:, orphan].reshape(vals.shape[0], -1), pxl, pyl, cx, cy, centers_val[ci], g, S
                )
                upd = d2 < od
                new_labels[orphan] = np.where(upd, ci, new_labels[orphan])
                od = np.minimum(od, d2)
        trace.append(float(best[mask & np.isfinite(best)].sum()))
        changed = not np.array_equal(new_labels, labels)
        labels = new_labels
        used_xy, used_val = centers_xy, centers_val
        centers_xy_new, centers_val_new, counts = _superpixel_stats(labels, vals, len(centers_xy))
        nonempty = counts > 0
        if not np.all(nonempty):
            remap = -np.ones(len(counts), dtype=int)
            remap[nonempty] = np.arange(nonempty.sum())
            labels = np.where(labels >= 0, remap[labels], -1)
            centers_xy_new = centers_xy_new[nonempty]
            centers_val_new = centers_val_new[nonempty]
            used_xy = used_xy[nonempty]
            used_val = used_val[nonempty]
        centers_xy, centers_val = centers_xy_new, centers_val_new
        if not changed:
            break
    centers_xy, centers_val, counts = _superpixel_stats(labels, vals, len(centers_xy))
    sp = SuperpixelMap(labels, centers_xy, centers_val, counts, trace, used_xy, used_val)
    if connectivity:
        sp = enforce_connectivity(sp, raster)
    return sp


_FOUR_CONN = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])


def enforce_connectivity(sp, raster):
    """Merge small disconnected fragments into their largest 4-neighbour.

    Components below a quarter of the mean superpixel size are absorbed;
    every remaining label is 4-connected afterward.
    """
    labels = sp.labels
    mask = labels >= 0
    comp = np.full(labels.shape, -1, dtype=int)
    n_comp = 0
    for sl in range(sp.n_superpixels):
        cc, k = ndimage.label(labels == sl, structure=_FOUR_CONN)
        comp[cc > 0] = cc[cc > 0] - 1 + n_comp
        n_comp += k
    sizes = np.bincount(comp[mask], minlength=n_comp).astype(float)
    mean_size = mask.sum() / max(sp.n_superpixels, 1)
    threshold = mean_size / 4.0

    parent = np.arange(n_comp)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    ny, nx = labels.shape
    # adjacency via 4-neighbour shifts
    pairs = set()
    for dy, dx in ((0, 1), (1, 0)):
        a = comp[: ny - dy, : nx - dx]
        b = comp[dy:, dx:]
        sel = (a >= 0) & (b >= 0) & (a != b)
        pairs.update(zip(a[sel].ravel().tolist(), b[sel].ravel().tolist()))
    neighbors = {}
    for a, b in pairs:
        neighbors.setdefault(a, set()).add(b)
        neighbors.setdefault(b, set()).add(a)

    order = np.argsort(sizes)
    for c in order:
        c = int(c)
        if sizes[find(c)] >= threshold:
            continue
        root = find(c)
        nbr_roots = {find(nb) for nb in neighbors.get(c, ())} - {root}
        if not nbr_roots:
            continue
        target = max(nbr_roots, key=lambda r: sizes[r])
        parent[root] = target
        sizes[target] += sizes[root]
        sizes[root] = 0.0

    roots = np.array([find(i) for i in range(n_comp)])
    uniq, newids = np.unique(roots, return_inverse=True)
    out = np.where(mask, newids[comp], -1)
    bands = raster.values
    centers_xy, centers_val, counts = _superpixel_stats(out, bands, len(uniq))
    return SuperpixelMap(out, centers_xy, centers_val, counts, sp.objective_trace)


def silhouette(values, labels):
    """Mean silhouette score (b - a) / max(a, b); singletons contribute 0."""
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    labels = np.asarray(labels)
    uniq = np.unique(labels)
    if len(uniq) < 2:
        raise ValueError("silhouette requires at least two clusters")
    d = np.sqrt(np.maximum(np.sum((values[:, None, :] - values[None, :, :]) ** 2, axis=2), 0.0))
    n = len(values)
    scores = np.zeros(n)
    for i in range(n):
        own = labels == labels[i]
        n_own = own.sum()
        if n_own == 1:
            scores[i] = 0.0
            continue
        a = d[i, own].sum() / (n_own - 1)
        b = min(d[i, labels == c].mean() for c in uniq if c != labels[i])
        m = max(a, b)
        scores[i] = 0.0 if m == 0 else (b - a) / m
    return float(scores.mean())


def cluster_superpixels(sp, k_max=6, tau=0.5, window=None, spatial_weight=0.0):
    """Ward-cluster superpixel mean values and cut by best silhouette.

    Selects k in 2..k_max by the highest mean silhouette; below ``tau`` a
    single tile is returned. Tiles may be unions of disjoint superpixels.

    ``spatial_weight`` > 0 appends superpixel centroid coordinates, scaled
    by that factor per pixel, to the feature vectors so that the clustering
    favors spatially coherent tiles.
    """
    if sp.n_superpixels < 2:
        raise ValueError("need at least 2 superpixels")
    if k_max < 2:
        raise ValueError("k_max must be at least 2")
    if spatial_weight < 0:
        raise ValueError("spatial_weight must be non-negative")
    values = sp.centers_val
    if spatial_weight > 0:
        values = np.hstack([values, spatial_weight * sp.centers_xy])
    k_max = min(k_max, sp.n_superpixels - 1)
    curve = []
    best_k, best_sil, best_labels = 1, -np.inf, None
    if k_max >= 2 and np.ptp(values, axis=0).max() > 0:
        Z = linkage(values, method="ward")
        for k in range(2, k_max + 1):
            lab = fcluster(Z, t=k, criterion="maxclust")
            if len(np.unique(lab)) < 2:
                continue
            sil = silhouette(values, lab)
            curve.append((k, sil))
            if sil > best_sil:
                best_k, best_sil, best_labels = k, sil, lab
    if best_labels is None or best_sil < tau:
        best_k, best_labels = 1, np.ones(sp.n_superpixels, dtype=int)
        best_sil = float("nan")
    tile_of_sp = np.asarray(best_labels, dtype=int)
    pix = np.where(sp.labels >= 0, tile_of_sp[sp.labels], 0)
    meta = {"k": int(best_k), "silhouette": best_sil, "silhouette_curve": curve}
    return Tessellation(pix, window, meta=meta) if window is not None else Tessellation(pix, _unit_like(sp), meta=meta)


def _unit_like(sp):
    from .geometry import unit_square

    return unit_square()


def standardize_bands(raster):
    """Center each band and scale by its in-mask standard deviation."""
    from .geometry import SpatialRaster

    mask = raster.mask()
    out = np.array(raster.values)
    for b in range(raster.nbands):
        band = out[b]
        vals = band[mask]
        mu = vals.mean()
        sd = vals.std()
        out[b] = (band - mu) / (sd if sd > 0 else 1.0)
    return SpatialRaster(out, raster.window, band_names=raster.band_names)


def identify_tessellations(maps, params=None, mode="per-covariate", k_max=6, tau=0.5, spatial_weight=0.0):
    """Tessellation(s) from coefficient maps.

    per-covariate: SLIC + clustering independently per band, one
    tessellation per coefficient. common: one joint run on all bands.
    """
    raster = maps.maps if hasattr(maps, "maps") else maps
    std = standardize_bands(raster)
    if params is None:
        params = SlicParams(S=default_spacing(int(std.mask().sum())))
    if mode == "common":
        sp = slic(std, params)
        return [cluster_superpixels(sp, k_max=k_max, tau=tau, window=raster.window,
                                    spatial_weight=spatial_weight)]
    if mode != "per-covariate":
        raise ValueError("mode must be 'per-covariate' or 'common'")
    from .geometry import SpatialRaster

    out = []
    plist = params if isinstance(params, (list, tuple)) else [params] * std.nbands
    for b in range(std.nbands):
        one = SpatialRaster(std.band(b), raster.window)
        sp = slic(one, plist[b])
        out.append(cluster_superpixels(sp, k_max=k_max, tau=tau, window=raster.window,
                                       spatial_weight=spatial_weight))
    return out
