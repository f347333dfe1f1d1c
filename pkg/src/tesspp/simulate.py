"""Scenario simulation: Gaussian random fields and inhomogeneous Poisson
point patterns with region-wise parameters."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    PointPattern,
    SpatialRaster,
    Tessellation,
    Window,
    diagonal_tessellation,
    unit_square,
)

SCENARIOS = ("constant-tiles", "covariate-effect", "full-embedded")

_ETA_MAX = 700.0  # exp overflow guard


def rng_for(seed, *keys):
    """Named-stream generator derived from a master seed.

    Integer keys identify (replicate, purpose) so streams are reproducible
    independently and in parallel.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


@dataclass(frozen=True)
class GrfParams:
    variance: float = 1.0
    range: float | None = None  # None -> 0.1 * shorter window side

    def resolved_range(self, window):
        return 0.1 * window.short_side if self.range is None else self.range


@dataclass
class ScenarioSpec:
    """One simulation scenario with additive log-linear parameters.

    The intensity formulas are
      constant-tiles:    exp{beta0 + gamma0 W(u)}
      covariate-effect:  exp{beta0 + beta1 Z(u) + gamma1 Z(u) W(u)}
      full-embedded:     exp{beta0 + beta1 Z(u) + gamma0 W(u) + gamma1 Z(u) W(u)}
    with W(u) the indicator of the non-reference tile.
    """

    scenario: str
    beta0: float
    beta1: float | None = None
    gamma0: float | None = None
    gamma1: float | None = None
    seed: int = 0
    grid: int = 128
    window: Window = field(default_factory=unit_square)
    tessellation: Tessellation | None = None  # None -> diagonal x > y rule
    covariate: SpatialRaster | None = None  # None -> GRF drawn per seed
    grf: GrfParams = field(default_factory=GrfParams)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        need = {
            "constant-tiles": ("gamma0",),
            "covariate-effect": ("beta1", "gamma1"),
            "full-embedded": ("beta1", "gamma0", "gamma1"),
        }[self.scenario]
        for name in need:
            if getattr(self, name) is None:
                raise ValueError(f"scenario {self.scenario!r} requires parameter {name}")

    def uses_covariate(self):
        return self.scenario in ("covariate-effect", "full-embedded")

    @classmethod
    def from_json(cls, doc):
        if isinstance(doc, (str, bytes)):
            doc = json.loads(doc)
        grf = GrfParams(**doc.get("grf", {}))
        win = Window(*doc["window"]) if "window" in doc else unit_square()
        return cls(
            scenario=doc["scenario"],
            beta0=doc["beta0"],
            beta1=doc.get("beta1"),
            gamma0=doc.get("gamma0"),
            gamma1=doc.get("gamma1"),
            seed=doc.get("seed", 0),
            grid=doc.get("grid", 128),
            window=win,
            grf=grf,
        )

    def to_json(self):
        doc = {"scenario": self.scenario, "beta0": self.beta0, "seed": self.seed, "grid": self.grid}
        for name in ("beta1", "gamma0", "gamma1"):
            if getattr(self, name) is not None:
                doc[name] = getattr(self, name)
        doc["window"] = [self.window.xmin, self.window.xmax, self.window.ymin, self.window.ymax]
        doc["grf"] = {"variance": self.grf.variance, "range": self.grf.range}
        return json.dumps(doc, indent=2)


@dataclass(frozen=True)
class IntensityField:
    """Pixelwise intensity surface with its maximum as thinning majorant."""

    values: SpatialRaster
    max_value: float

    def __post_init__(self):
        band = self.values.band(0)
        if not np.all(np.isfinite(band)):
            raise ValueError("intensity must be finite everywhere")
        if np.any(band < 0):
            raise ValueError("intensity must be nonnegative")

    def integral(self):
        return float(np.sum(self.values.band(0)) * self.values.pixel_area)


def simulate_grf(window, nx, ny, variance, corr_range, seed=None, rng=None):
    """Sample a zero-mean stationary Gaussian field on the pixel grid.

    Exponential covariance C(d) = variance * exp(-d / corr_range), sampled
    by circulant embedding on a doubled (and, if needed, further padded)
    grid. Deterministic given the seed.
    """
    if variance <= 0 or corr_range <= 0:
        raise ValueError("variance and corr_range must be positive")
    if rng is None:
        rng = np.random.default_rng(seed)
    px = window.width / nx
    py = window.height / ny
    pad = 2
    while pad <= 32:
        mx, my = pad * nx, pad * ny
        ix = np.arange(mx)
        iy = np.arange(my)
        dx = np.minimum(ix, mx - ix) * px
        dy = np.minimum(iy, my - iy) * py
        dist = np.hypot(dx[None, :], dy[:, None])
        cov = variance * np.exp(-dist / corr_range)
        eig = np.fft.fft2(cov).real
        if eig.min() >= -1e-8 * eig.max():
            break
        pad *= 2
    else:
        raise RuntimeError("circulant embedding is not positive definite at maximum padding")
    eig = np.maximum(eig, 0.0)
    noise = rng.standard_normal((my, mx)) + 1j * rng.standard_normal((my, mx))
    fld = np.sqrt(mx * my) * np.fft.ifft2(np.sqrt(eig) * noise)
    return SpatialRaster(fld.real[:ny, :nx], window, band_names=["Z"])


def _tile_indicator(spec, nx, ny):
    tess = spec.tessellation
    if tess is None:
        tess = diagonal_tessellation(spec.window, nx, ny)
    if tess.labels.shape != (ny, nx):
        raise ValueError("tessellation grid must match the simulation grid")
    return (tess.labels != tess.reference_tile).astype(float)


def scenario_intensity(spec, nx=None, ny=None):
    """Evaluate the scenario's intensity formula pixelwise."""
    nx = nx or spec.grid
    ny = ny or spec.grid
    w = _tile_indicator(spec, nx, ny)
    eta = spec.beta0 * np.ones((ny, nx))
    if spec.scenario in ("constant-tiles", "full-embedded"):
        eta += spec.gamma0 * w
    if spec.uses_covariate():
        if spec.covariate is not None:
            z = spec.covariate.band(0)
            if z.shape != (ny, nx):
                raise ValueError("covariate raster must match the simulation grid")
        else:
            z = simulate_grf(
                spec.window,
                nx,
                ny,
                spec.grf.variance,
                spec.grf.resolved_range(spec.window),
                rng=rng_for(spec.seed, 0, 1),
            ).band(0)
        eta += spec.beta1 * z + spec.gamma1 * z * w
    if np.any(eta > _ETA_MAX):
        iy, ix = np.unravel_index(int(np.argmax(eta)), eta.shape)
        raise OverflowError(f"intensity overflows exp at pixel (iy={iy}, ix={ix}): eta={eta[iy, ix]:.1f}")
    lam = np.exp(eta)
    return IntensityField(SpatialRaster(lam, spec.window), float(lam.max()))


def simulate_poisson(field, seed=None, rng=None):
    """Lewis-Shedler thinning against the field's piecewise-constant majorant."""
    if rng is None:
        rng = np.random.default_rng(seed)
    win = field.values.window
    lam_max = field.max_value
    if lam_max <= 0:
        return PointPattern(np.empty((0, 2)), win)
    n_prop = rng.poisson(lam_max * win.area)
    xs = rng.uniform(win.xmin, win.xmax, n_prop)
    ys = rng.uniform(win.ymin, win.ymax, n_prop)
    u = rng.uniform(0.0, 1.0, n_prop)
    lam = field.values.sample(xs, ys) if n_prop else np.empty(0)
    keep = u * lam_max < lam
    return PointPattern(np.column_stack([xs[keep], ys[keep]]), win)


def simulate_scenario(spec, replicate=0):
    """Intensity field plus one pattern replicate, on named RNG streams."""
    field_rng = rng_for(spec.seed, replicate, 1)
    spec_rep = spec
    if spec.uses_covariate() and spec.covariate is None:
        z = simulate_grf(
            spec.window,
            spec.grid,
            spec.grid,
            spec.grf.variance,
            spec.grf.resolved_range(spec.window),
            rng=field_rng,
        )
        spec_rep = ScenarioSpec(**{**spec.__dict__, "covariate": z})
    field = scenario_intensity(spec_rep)
    pattern = simulate_poisson(field, rng=rng_for(spec.seed, replicate, 2))
    return field, pattern, spec_rep
