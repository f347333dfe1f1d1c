"""Tessellated spatial Poisson point-process regression."""

from .geometry import (
    DomainError,
    MaskedValueError,
    PointPattern,
    SpatialRaster,
    Tessellation,
    Window,
    diagonal_tessellation,
    raster_at,
    read_pattern_csv,
    read_raster_text,
    tessellation_membership,
    unit_square,
    write_pattern_csv,
    write_raster_text,
)
from .simulate import (
    GrfParams,
    IntensityField,
    ScenarioSpec,
    rng_for,
    scenario_intensity,
    simulate_grf,
    simulate_poisson,
    simulate_scenario,
)
from .quadglm import (
    DesignMatrix,
    FitResult,
    QuadratureScheme,
    aic,
    build_quadrature,
    coef_table,
    fit_global,
    fit_poisson_glm,
    lrt,
)
from .localfit import (
    CoefficientMaps,
    KernelSpec,
    fill_nearest,
    fit_local,
    intensity_from_maps,
    lcv,
    select_bandwidth,
)
from .segment import (
    SlicParams,
    SuperpixelMap,
    cluster_superpixels,
    enforce_connectivity,
    identify_tessellations,
    silhouette,
    slic,
)
from .tessmodel import (
    TessellatedSpec,
    build_tessellated_design,
    coefficient_surface,
    fit_tessellated,
)
from .evaluate import kernel_intensity, mise_residual, mise_true, select_smoothing_bandwidth
from .experiment import run_experiment, validate_config

__version__ = "0.1.0"
