"""Tessellated Poisson models: dummy/interaction designs over a quadrature
scheme, fitting, and per-pixel coefficient surfaces."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .geometry import SpatialRaster
from .quadglm import DesignMatrix, build_quadrature, fit_poisson_glm


@dataclass
class TessellatedSpec:
    """Covariates plus the tessellations interacting with them.

    In ``embedded`` mode a single tessellation object is shared by the
    intercept and every covariate; ``general`` mode allows one per block.
    A q = 1 tessellation contributes no columns.
    """

    covariates: dict = field(default_factory=dict)  # name -> SpatialRaster
    intercept_tessellation: object = None
    covariate_tessellations: dict = field(default_factory=dict)  # name -> Tessellation
    mode: str = "general"

    def __post_init__(self):
        if self.mode not in ("general", "embedded"):
            raise ValueError("mode must be 'general' or 'embedded'")
        if self.mode == "embedded":
            tessellations = [self.intercept_tessellation, *self.covariate_tessellations.values()]
            tessellations = [t for t in tessellations if t is not None]
            if any(t is not tessellations[0] for t in tessellations):
                raise ValueError("embedded mode requires one shared tessellation object")

    def all_tessellations(self):
        out = {}
        if self.intercept_tessellation is not None:
            out["intercept"] = self.intercept_tessellation
        out.update(self.covariate_tessellations)
        return out


def _dummy_columns(tess, xs, ys, prefix):
    labels = np.atleast_1d(tess.membership(xs, ys))
    cols, names = [], []
    for k in range(1, tess.q + 1):
        if k == tess.reference_tile:
            continue
        cols.append((labels == k).astype(float))
        names.append(f"{prefix}[{k}]")
    return cols, names, labels


def build_tessellated_design(quad, spec):
    """Design columns: intercept, covariates, intercept-tile dummies, and
    covariate-by-tile interactions, evaluated at the quadrature points."""
    xs, ys = quad.points[:, 0], quad.points[:, 1]
    cols = [np.ones(len(xs))]
    names = ["intercept"]
    zvals = {}
    for name, rast in spec.covariates.items():
        z = rast.sample(xs, ys, allow_nan=True)
        if np.any(np.isnan(z[quad.is_data])):
            raise ValueError(f"covariate {name!r} is NaN at a data point")
        z = np.nan_to_num(z)
        zvals[name] = z
        cols.append(z)
        names.append(name)
    if spec.intercept_tessellation is not None and spec.intercept_tessellation.q > 1:
        tess = spec.intercept_tessellation
        dcols, dnames, labels = _dummy_columns(tess, xs, ys, "W")
        _check_tiles(tess, labels, "intercept")
        cols += dcols
        names += dnames
    for name, tess in spec.covariate_tessellations.items():
        if name not in spec.covariates:
            raise ValueError(f"tessellation given for unknown covariate {name!r}")
        if tess.q <= 1:
            continue
        dcols, dnames, labels = _dummy_columns(tess, xs, ys, f"W_{name}")
        _check_tiles(tess, labels, name)
        cols += [zvals[name] * c for c in dcols]
        names += [f"{name}:{d}" for d in dnames]
    return DesignMatrix(np.column_stack(cols), tuple(names))


def _check_tiles(tess, labels, block):
    counts = np.bincount(labels, minlength=tess.q + 1)[1:]
    empty = np.nonzero(counts == 0)[0] + 1
    if empty.size:
        raise ValueError(
            f"tile(s) {empty.tolist()} of the {block} tessellation contain no quadrature points"
        )


def fit_tessellated(pattern, spec, dummy_nx=None, dummy_ny=None):
    """Berman-Turner fit of the tessellated design."""
    quad = build_quadrature(pattern, dummy_nx, dummy_ny)
    design = build_tessellated_design(quad, spec)
    data_labels = {}
    for name, tess in spec.all_tessellations().items():
        lab = np.atleast_1d(tess.membership(pattern.x, pattern.y)) if pattern.n else np.array([], int)
        present = np.unique(lab)
        missing = [k for k in range(1, tess.q + 1) if k not in present]
        if missing:
            warnings.warn(
                f"tile(s) {missing} of the {name} tessellation hold no data points; "
                "their coefficients rest on dummy points only",
                stacklevel=2,
            )
        data_labels[name] = lab
    fit = fit_poisson_glm(quad, design)
    return fit, quad, design


def coefficient_surface(fit, spec, which="intercept"):
    """Raster of the total effect of one covariate: base coefficient plus
    the tile-specific increment of the pixel's tile."""
    coefs = fit.coefficients
    if which == "intercept":
        tess = spec.intercept_tessellation
        base = coefs["intercept"]
        prefix = "W"
    else:
        if which not in spec.covariates:
            raise KeyError(f"unknown covariate {which!r}")
        tess = spec.covariate_tessellations.get(which)
        base = coefs[which]
        prefix = f"{which}:W_{which}"
    if tess is None or tess.q == 1:
        grid = spec.intercept_tessellation or next(iter(spec.covariate_tessellations.values()), None)
        if grid is None:
            raise ValueError("no tessellation available to define the surface grid")
        return SpatialRaster(np.full((grid.ny, grid.nx), base), grid.window)
    surf = np.full(tess.labels.shape, np.nan)
    for k in range(1, tess.q + 1):
        inc = 0.0 if k == tess.reference_tile else coefs[f"{prefix}[{k}]"]
        surf[tess.labels == k] = base + inc
    return SpatialRaster(surf, tess.window)


def tessellated_intensity(fit, spec, nx=None, ny=None):
    """Fitted intensity raster exp(eta-hat) on the tessellation grid."""
    grid = spec.intercept_tessellation or next(iter(spec.covariate_tessellations.values()))
    eta = coefficient_surface(fit, spec, "intercept").band(0).copy()
    r = SpatialRaster(eta, grid.window)
    cx, cy = np.meshgrid(r.x_centers, r.y_centers)
    for name, rast in spec.covariates.items():
        z = rast.sample(cx.ravel(), cy.ravel(), allow_nan=True).reshape(eta.shape)
        eta = eta + coefficient_surface(fit, spec, name).band(0) * z
    return SpatialRaster(np.exp(np.minimum(eta, 700.0)), grid.window)
