"""Geographically weighted Poisson fitting.

Kernel-weighted local likelihood on an evaluation grid, implemented as the
quadrature GLM with per-point multiplicative weights; the per-pixel fits are
batched through a vectorized IRLS.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .geometry import SpatialRaster
from .quadglm import (
    _ETA_MAX,
    build_quadrature,
    covariate_design,
    fit_global,
    intercept_design,
    quadrature_cells,
)

_TRUNC = 4.0  # kernel support radius in bandwidths
_MIN_LOCAL_MASS = 1e-8


@dataclass(frozen=True)
class KernelSpec:
    """Fixed-bandwidth bivariate Gaussian kernel, truncated at 4h and
    renormalized so it still integrates to one."""

    bandwidth: float
    family: str = "gaussian"

    def __post_init__(self):
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")
        if self.family != "gaussian":
            raise ValueError("only the Gaussian kernel family is supported")

    def weights(self, d2):
        """Kernel weight w_h at squared distances d2."""
        h2 = self.bandwidth**2
        norm = 1.0 / (2.0 * np.pi * h2 * (1.0 - np.exp(-0.5 * _TRUNC**2)))
        w = np.where(d2 <= (_TRUNC**2) * h2, np.exp(-0.5 * d2 / h2) * norm, 0.0)
        return w


@dataclass
class CoefficientMaps:
    """One raster band per local coefficient, on the evaluation grid."""

    maps: SpatialRaster
    bandwidth: float
    names: tuple
    n_failed: int = 0

    def band(self, name):
        return self.maps.band(self.names.index(name))


def _batched_irls(X, a, is_data, weight_rows, init, a_rows=None, max_iter=100, tol=1e-8, chunk=1024):
    """IRLS for K weighted Poisson fits sharing one design.

    weight_rows is (K, nq) kernel weights; ``a_rows`` optionally overrides
    the cubature weights per fit. Returns (K, p) coefficients and a
    converged flag per row.
    """
    nq, p = X.shape
    K = weight_rows.shape[0]
    out = np.full((K, p), np.nan)
    ok = np.zeros(K, dtype=bool)
    e = is_data.astype(float)
    for lo in range(0, K, chunk):
        hi = min(lo + chunk, K)
        W = weight_rows[lo:hi]
        v = W * (a[None, :] if a_rows is None else a_rows[lo:hi])
        vy = W * e[None, :]
        beta = np.tile(init, (hi - lo, 1)).astype(float)
        eta = beta @ X.T
        mu = np.exp(np.minimum(eta, _ETA_MAX))
        ll = np.einsum("kn,kn->k", vy, eta) - np.einsum("kn,kn->k", v, mu)
        active = np.ones(hi - lo, dtype=bool)
        for _ in range(max_iter):
            idx = np.nonzero(active)[0]
            if idx.size == 0:
                break
            resid = vy[idx] - v[idx] * mu[idx]
            score = resid @ X
            wmu = v[idx] * mu[idx]
            fisher = np.einsum("kn,np,nq->kpq", wmu, X, X)
            try:
                step = np.linalg.solve(fisher, score[..., None])[..., 0]
            except np.linalg.LinAlgError:
                active[idx] = False
                break
            scale = np.ones(idx.size)
            cand = beta[idx] + step
            for _half in range(50):
                eta_c = cand @ X.T
                mu_c = np.exp(np.minimum(eta_c, _ETA_MAX))
                ll_c = np.einsum("kn,kn->k", vy[idx], eta_c) - np.einsum(
                    "kn,kn->k", v[idx], mu_c
                )
                worse = ~(ll_c >= ll[idx]) & np.isfinite(ll[idx])
                if not np.any(worse):
                    break
                scale[worse] *= 0.5
                cand[worse] = beta[idx[worse]] + scale[worse, None] * step[worse]
            delta = ll_c - ll[idx]
            beta[idx] = cand
            eta[idx] = eta_c
            mu[idx] = mu_c
            ll[idx] = ll_c
            done = np.abs(2.0 * delta) < tol
            ok[lo + idx[done]] = True
            active[idx[done]] = False
        out[lo:hi] = beta
    return out, ok, None


def local_design(quad, covariates):
    if covariates:
        return covariate_design(quad, covariates)
    return intercept_design(quad)


def fit_local(pattern, covariates=None, kernel=None, eval_nx=64, eval_ny=64, dummy_nx=None):
    """Local Poisson fit at every evaluation-grid center.

    Maximizes the kernel-weighted quadrature likelihood per pixel; pixels
    with effectively no local data mass come back NaN (counted in
    ``n_failed``).
    """
    if kernel is None:
        raise ValueError("a KernelSpec is required")
    covariates = covariates or {}
    quad = build_quadrature(pattern, dummy_nx)
    design = local_design(quad, covariates)
    win = pattern.window
    grid = SpatialRaster(np.zeros((eval_ny, eval_nx)), win)
    cx, cy = np.meshgrid(grid.x_centers, grid.y_centers)
    centers = np.column_stack([cx.ravel(), cy.ravel()])

    d2 = (
        (centers[:, 0][:, None] - quad.points[None, :, 0]) ** 2
        + (centers[:, 1][:, None] - quad.points[None, :, 1]) ** 2
    )
    W = kernel.weights(d2)
    data_mass = W[:, quad.is_data].sum(axis=1)
    usable = data_mass >= _MIN_LOCAL_MASS

    glob = fit_global(pattern, covariates or None, dummy_nx)[0]
    init = glob.coef
    coefs = np.full((len(centers), design.matrix.shape[1]), np.nan)
    if np.any(usable):
        sub, ok, _ = _batched_irls(design.matrix, quad.weights, quad.is_data, W[usable], init)
        sub[~ok] = np.nan
        coefs[usable] = sub
    bad = ~np.all(np.isfinite(coefs), axis=1)
    coefs[bad] = np.nan  # keep an identical NaN mask across bands
    n_failed = int(bad.sum())
    if n_failed:
        warnings.warn(f"{n_failed} local fits failed or lacked data mass", stacklevel=2)
    bands = coefs.T.reshape(design.matrix.shape[1], eval_ny, eval_nx)
    maps = SpatialRaster(bands, win, band_names=list(design.names))
    return CoefficientMaps(maps=maps, bandwidth=kernel.bandwidth, names=design.names, n_failed=n_failed)


def fill_nearest(maps):
    """Fill failed (NaN) coefficient pixels from the nearest fitted pixel.

    Segmentation requires finite bands; pixels without local data mass
    inherit the values of the closest pixel that has them.
    """
    from scipy.ndimage import distance_transform_edt

    bands = np.array(maps.maps.values, dtype=float)
    invalid = ~np.isfinite(bands[0])
    if not invalid.any():
        return maps
    if invalid.all():
        raise ValueError("no finite coefficient pixels to fill from")
    _, (iy, ix) = distance_transform_edt(invalid, return_indices=True)
    filled = bands[:, iy, ix]
    out = SpatialRaster(filled, maps.maps.window, band_names=list(maps.names))
    return CoefficientMaps(
        maps=out, bandwidth=maps.bandwidth, names=maps.names, n_failed=maps.n_failed
    )


def intensity_from_maps(maps, covariates=None):
    """Fitted local intensity exp{sum_j theta_j(u) Z_j(u)} on the map grid."""
    covariates = covariates or {}
    eta = np.array(maps.band("intercept"))
    grid = maps.maps
    cx, cy = np.meshgrid(grid.x_centers, grid.y_centers)
    for name in maps.names:
        if name == "intercept":
            continue
        z = covariates[name].sample(cx.ravel(), cy.ravel()).reshape(eta.shape)
        eta = eta + maps.band(name) * z
    return SpatialRaster(np.exp(np.minimum(eta, _ETA_MAX)), grid.window)


def lcv(pattern, covariates=None, kernel=None, eval_nx=64, eval_ny=64, dummy_nx=None):
    """Leave-one-out composite-likelihood cross-validation score for h.

    Sum of leave-one-out log-intensities at the data points minus the
    Riemann integral of the fitted intensity over the coefficient maps.
    """
    covariates = covariates or {}
    p = len(covariates)
    if pattern.n < p + 2:
        raise ValueError(f"need at least {p + 2} points for {p} covariates")
    quad = build_quadrature(pattern, dummy_nx)
    design = local_design(quad, covariates)
    n = pattern.n

    # integral term from the full coefficient maps
    maps = fit_local(pattern, covariates, kernel, eval_nx, eval_ny, dummy_nx)
    lam = intensity_from_maps(maps, covariates)
    vals = lam.band(0)
    finite = np.isfinite(vals)
    integral = float(np.nansum(np.where(finite, vals, 0.0)) * lam.pixel_area)

    # leave-one-out fits at the data locations
    d2 = (
        (pattern.x[:, None] - quad.points[None, :, 0]) ** 2
        + (pattern.y[:, None] - quad.points[None, :, 1]) ** 2
    )
    W = kernel.weights(d2)
    nd = int(round(np.sqrt(quad.n_dummy)))
    cells = quadrature_cells(quad, nd, nd)
    counts = np.bincount(cells, minlength=nd * nd)
    Aeff = np.tile(quad.weights, (n, 1))
    for i in range(n):
        W[i, i] = 0.0
        c = counts[cells[i]]
        if c > 1:
            mates = (cells == cells[i]) & (np.arange(len(cells)) != i)
            # reassign the removed point's cubature mass to its cellmates
            Aeff[i, mates] *= c / (c - 1.0)
    glob = fit_global(pattern, covariates or None, dummy_nx)[0]
    X = design.matrix
    coefs, ok, _ = _batched_irls(X, quad.weights, quad.is_data, W, glob.coef, a_rows=Aeff)
    skipped = int((~ok).sum())
    if skipped > 0.1 * n:
        raise RuntimeError(f"{skipped}/{n} leave-one-out fits failed to converge")
    good = ok & np.all(np.isfinite(coefs), axis=1)
    loo_eta = np.einsum("ip,ip->i", X[:n][good], coefs[good])
    return float(loo_eta.sum() - integral)


def select_bandwidth(pattern, covariates=None, h_grid=None, eval_nx=64, eval_ny=64, dummy_nx=None):
    """Maximize LCV over a bandwidth grid; ties break toward the larger h."""
    if h_grid is None:
        side = pattern.window.short_side
        h_grid = list(np.geomspace(0.05 * side, 0.5 * side, 8))
    if len(h_grid) == 0:
        raise ValueError("h_grid must be nonempty")
    h_grid = sorted(h_grid)
    curve = []
    best_h, best_val = None, -np.inf
    failures = []
    for h in h_grid:
        try:
            val = lcv(pattern, covariates, KernelSpec(h), eval_nx, eval_ny, dummy_nx)
        except Exception as exc:  # candidate-level failure, not fatal
            failures.append((h, str(exc)))
            curve.append((h, np.nan))
            continue
        curve.append((h, val))
        if val >= best_val:
            best_h, best_val = h, val
    if best_h is None:
        raise RuntimeError(f"all bandwidth candidates failed: {failures}")
    return {"h_opt": best_h, "lcv_curve": curve}
