"""Berman-Turner quadrature and weighted Poisson likelihood maximization.

The single fitting engine behind the global, local, and tessellated models:
the point-process log-likelihood is approximated on data + dummy points with
counting weights and maximized by IRLS.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import linalg, stats

_WEIGHT_RTOL = 1e-9
_RANK_RTOL = 1e-10
_ETA_MAX = 700.0


class RankDeficiencyError(ValueError):
    """Design columns are collinear on the quadrature support."""


@dataclass(frozen=True)
class QuadratureScheme:
    """Data then dummy points with cubature weights summing to l(W)."""

    points: np.ndarray  # (n + m, 2)
    weights: np.ndarray  # a_k > 0
    is_data: np.ndarray  # e_k, True for the first n entries
    window: object

    def __post_init__(self):
        total = float(self.weights.sum())
        if abs(total - self.window.area) > _WEIGHT_RTOL * self.window.area:
            raise ValueError("quadrature weights must sum to the window area")
        if np.any(self.weights <= 0):
            raise ValueError("quadrature weights must be positive")

    @property
    def n_data(self):
        return int(self.is_data.sum())

    @property
    def n_dummy(self):
        return len(self.weights) - self.n_data

    @property
    def response(self):
        """y_k = e_k / a_k."""
        return self.is_data.astype(float) / self.weights


@dataclass(frozen=True)
class DesignMatrix:
    """Covariate evaluations aligned row-by-row with a quadrature scheme."""

    matrix: np.ndarray  # (n + m, p)
    names: tuple

    def __post_init__(self):
        if self.matrix.shape[1] != len(self.names):
            raise ValueError("one name per column required")
        if len(set(self.names)) != len(self.names):
            raise ValueError("column names must be unique")
        if self.matrix.shape[1] and np.any(np.all(self.matrix == 0, axis=0)):
            dead = [n for n, col in zip(self.names, self.matrix.T) if not np.any(col)]
            raise ValueError(f"all-zero design columns: {dead}")


@dataclass
class FitResult:
    """Fitted coefficients, covariance, and quadrature log-likelihood."""

    names: tuple
    coef: np.ndarray
    covariance: np.ndarray
    loglik: float
    converged: bool
    n_iter: int
    n_data: int
    n_dummy: int

    @property
    def n_parameters(self):
        return len(self.coef)

    @property
    def coefficients(self):
        return dict(zip(self.names, self.coef))

    @property
    def se(self):
        return np.sqrt(np.diag(self.covariance))

    def to_json(self):
        return json.dumps(
            {
                "coefficients": {n: float(c) for n, c in zip(self.names, self.coef)},
                "covariance": [[float(v) for v in row] for row in self.covariance],
                "loglik": float(self.loglik),
                "aic": float(aic(self)),
                "converged": bool(self.converged),
                "n_data": self.n_data,
                "n_dummy": self.n_dummy,
            },
            indent=2,
        )


def default_dummy_grid(pattern, base=32, max_per_cell=20):
    """Dummy grid resolution: ``base``, doubled while any cell holds more
    than ``max_per_cell`` data points."""
    nd = base
    win = pattern.window
    while nd < 4096:
        ix = np.minimum(((pattern.x - win.xmin) / (win.width / nd)).astype(int), nd - 1)
        iy = np.minimum(((pattern.y - win.ymin) / (win.height / nd)).astype(int), nd - 1)
        counts = np.bincount(iy * nd + ix, minlength=nd * nd)
        if pattern.n == 0 or counts.max() <= max_per_cell:
            break
        nd *= 2
    return nd


def build_quadrature(pattern, dummy_nx=None, dummy_ny=None):
    """Berman-Turner scheme: dummies at cell centers, counting weights.

    Each quadrature point gets a_k = (cell area) / (points in its cell), so
    the weights sum exactly to the window area.
    """
    if dummy_nx is None:
        dummy_nx = default_dummy_grid(pattern)
    if dummy_ny is None:
        dummy_ny = dummy_nx
    if dummy_nx < 16 or dummy_ny < 16:
        raise ValueError("dummy grid must be at least 16x16")
    win = pattern.window
    dx = win.width / dummy_nx
    dy = win.height / dummy_ny
    gx, gy = np.meshgrid(
        win.xmin + (np.arange(dummy_nx) + 0.5) * dx,
        win.ymin + (np.arange(dummy_ny) + 0.5) * dy,
    )
    dummies = np.column_stack([gx.ravel(), gy.ravel()])
    pts = np.vstack([pattern.points, dummies]) if pattern.n else dummies
    ix = np.minimum(((pts[:, 0] - win.xmin) / dx).astype(int), dummy_nx - 1)
    iy = np.minimum(((pts[:, 1] - win.ymin) / dy).astype(int), dummy_ny - 1)
    cell = iy * dummy_nx + ix
    counts = np.bincount(cell, minlength=dummy_nx * dummy_ny)
    weights = (dx * dy) / counts[cell]
    is_data = np.zeros(len(pts), dtype=bool)
    is_data[: pattern.n] = True
    return QuadratureScheme(pts, weights, is_data, win)


def quadrature_cells(quad, dummy_nx, dummy_ny):
    """Cell index of each quadrature point on the dummy grid."""
    win = quad.window
    ix = np.minimum(((quad.points[:, 0] - win.xmin) / (win.width / dummy_nx)).astype(int), dummy_nx - 1)
    iy = np.minimum(((quad.points[:, 1] - win.ymin) / (win.height / dummy_ny)).astype(int), dummy_ny - 1)
    return iy * dummy_nx + ix


def _check_rank(X, v, names):
    sq = np.sqrt(v)[:, None] * X
    r = linalg.qr(sq, mode="r", pivoting=True)
    R, piv = r[0], r[1]
    d = np.abs(np.diag(R))
    if d.size == 0 or d[0] == 0:
        raise RankDeficiencyError(f"design has no usable columns: {list(names)}")
    bad = d < _RANK_RTOL * d[0]
    if np.any(bad):
        cols = [names[piv[i]] for i in np.nonzero(bad)[0]]
        raise RankDeficiencyError(f"collinear design columns: {cols}")


def poisson_objective(quad, design, beta, point_weights=None):
    """Weighted quadrature log-likelihood sum_k v_k (y_k eta_k - exp eta_k)."""
    v = quad.weights if point_weights is None else quad.weights * point_weights
    eta = design.matrix @ beta
    mu = np.exp(np.minimum(eta, _ETA_MAX))
    vy = quad.is_data.astype(float) * (1.0 if point_weights is None else point_weights)
    return float(vy @ eta - v @ mu)


def fit_poisson_glm(quad, design, point_weights=None, max_iter=100, tol=1e-8):
    """IRLS maximization of the Berman-Turner weighted Poisson likelihood.

    ``point_weights`` multiplies the quadrature weights (used by the local
    likelihood). Stops when the deviance change falls below ``tol``; on a
    deviance increase the step is halved.
    """
    X = design.matrix
    nq, p = X.shape
    if len(quad.weights) != nq:
        raise ValueError("design rows must align with quadrature points")
    a = quad.weights
    w = np.ones(nq) if point_weights is None else np.asarray(point_weights, dtype=float)
    v = a * w
    vy = quad.is_data.astype(float) * w  # v * y
    _check_rank(X, v, design.names)

    beta = np.zeros(p)
    names = list(design.names)
    if "intercept" in names:
        total_w = float(vy.sum())
        denom = float(v.sum())
        if total_w > 0 and denom > 0:
            beta[names.index("intercept")] = np.log(total_w / denom)

    def objective(b):
        eta = X @ b
        mu = np.exp(np.minimum(eta, _ETA_MAX))
        return float(vy @ eta - v @ mu), eta, mu

    ll, eta, mu = objective(beta)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        score = X.T @ (vy - v * mu)
        fisher = X.T @ ((v * mu)[:, None] * X)
        try:
            step = np.linalg.solve(fisher, score)
        except np.linalg.LinAlgError:
            break
        scale = 1.0
        for _ in range(50):
            ll_new, eta_new, mu_new = objective(beta + scale * step)
            if ll_new >= ll or not np.isfinite(ll_new):
                if np.isfinite(ll_new):
                    break
            scale *= 0.5
        if not np.isfinite(ll_new):
            break
        beta = beta + scale * step
        delta = ll_new - ll
        ll, eta, mu = ll_new, eta_new, mu_new
        if abs(2.0 * delta) < tol:
            converged = True
            break
    fisher = X.T @ ((v * mu)[:, None] * X)
    try:
        cov = np.linalg.inv(fisher)
    except np.linalg.LinAlgError:
        cov = np.full((p, p), np.nan)
    return FitResult(
        names=tuple(design.names),
        coef=beta,
        covariance=cov,
        loglik=ll,
        converged=converged,
        n_iter=it,
        n_data=quad.n_data,
        n_dummy=quad.n_dummy,
    )


def intercept_design(quad):
    return DesignMatrix(np.ones((len(quad.weights), 1)), ("intercept",))


def covariate_design(quad, covariates):
    """Intercept plus named raster covariates evaluated at the quadrature
    points. ``covariates`` maps name -> SpatialRaster."""
    cols = [np.ones(len(quad.weights))]
    names = ["intercept"]
    for name, rast in covariates.items():
        cols.append(rast.sample(quad.points[:, 0], quad.points[:, 1]))
        names.append(name)
    return DesignMatrix(np.column_stack(cols), tuple(names))


def fit_global(pattern, covariates=None, dummy_nx=None, dummy_ny=None):
    """Global log-linear Poisson fit (intercept-only when no covariates)."""
    quad = build_quadrature(pattern, dummy_nx, dummy_ny)
    design = intercept_design(quad) if not covariates else covariate_design(quad, covariates)
    return fit_poisson_glm(quad, design), quad, design


_STAR_LEVELS = ((0.001, "***"), (0.01, "**"), (0.05, "*"))


def coef_table(fit, level=0.95):
    """Per-coefficient estimate, SE, CI, z, and significance stars."""
    zcrit = stats.norm.ppf(0.5 + level / 2.0)
    rows = []
    for name, est, se in zip(fit.names, fit.coef, fit.se):
        if se == 0:
            z = np.inf * np.sign(est) if est != 0 else 0.0
            flag = "zero-se"
        else:
            z = est / se
            flag = ""
        pval = 2.0 * stats.norm.sf(abs(z)) if np.isfinite(z) else 0.0
        stars = ""
        for cut, sym in _STAR_LEVELS:
            if pval < cut:
                stars = sym
                break
        rows.append(
            {
                "name": name,
                "estimate": float(est),
                "se": float(se),
                "ci_lo": float(est - zcrit * se),
                "ci_hi": float(est + zcrit * se),
                "z": float(z),
                "significance": stars,
                "flag": flag,
            }
        )
    return rows


def coef_table_csv(rows, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("name,estimate,se,ci_lo,ci_hi,z,significance\n")
        for r in rows:
            fh.write(
                f"{r['name']},{r['estimate']:.10g},{r['se']:.10g},{r['ci_lo']:.10g},"
                f"{r['ci_hi']:.10g},{r['z']:.10g},{r['significance']}\n"
            )


def lrt(null_fit, alt_fit):
    """Likelihood ratio test between nested fits (nesting checked by name)."""
    if not set(null_fit.names) <= set(alt_fit.names):
        raise ValueError("models are not nested: null columns must be a subset")
    stat = max(0.0, 2.0 * (alt_fit.loglik - null_fit.loglik))
    df = alt_fit.n_parameters - null_fit.n_parameters
    if df <= 0:
        p = 1.0 if stat == 0 else 0.0
    else:
        p = float(stats.chi2.sf(stat, df))
    if stat == 0.0:
        p = 1.0
    return {"statistic": stat, "df": df, "p_value": p}


def aic(fit):
    return 2.0 * fit.n_parameters - 2.0 * fit.loglik
