"""Command-line front end.

Subcommands: simulate, fit-global, fit-local, segment, fit-tessellated,
analyze, experiment. Exit codes: 0 success, 1 runtime failure, 2
config/validation failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from importlib import resources

import numpy as np

from . import experiment as _experiment
from .evaluate import mise_residual
from .geometry import (
    Window,
    read_pattern_csv,
    read_raster_text,
    write_pattern_csv,
    write_raster_text,
    write_tessellation_text,
)
from .localfit import KernelSpec, fit_local, intensity_from_maps, select_bandwidth
from .quadglm import aic, coef_table, coef_table_csv, fit_global, lrt
from .segment import SlicParams, identify_tessellations
from .simulate import ScenarioSpec, simulate_scenario
from .tessmodel import TessellatedSpec, coefficient_surface, fit_tessellated, tessellated_intensity


class CliConfigError(Exception):
    pass


def load_preset(name):
    """Bundled experiment config by name, e.g. 'table1' or 'table1_smoke'."""
    path = resources.files("tesspp").joinpath("presets", f"{name}.json")
    with path.open() as fh:
        return json.load(fh)


def preset_names():
    pkg = resources.files("tesspp").joinpath("presets")
    return sorted(p.name[:-5] for p in pkg.iterdir() if p.name.endswith(".json"))


def _read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliConfigError(f"cannot read JSON config {path}: {exc}") from exc


def _window_from(doc):
    if "window" not in doc:
        raise CliConfigError("config must provide 'window': [xmin, xmax, ymin, ymax]")
    return Window(*doc["window"])


def _save_heatmap(values, window, path, title=""):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(
        values,
        origin="lower",
        extent=(window.xmin, window.xmax, window.ymin, window.ymax),
        cmap="RdBu_r",
    )
    fig.colorbar(im, ax=ax)
    if title:
        ax.set_title(title)
    fig.savefig(path, dpi=120)
    plt.close(fig)


def cmd_simulate(args):
    doc = _read_json(args.spec)
    try:
        spec = ScenarioSpec.from_json(doc)
    except (KeyError, ValueError) as exc:
        raise CliConfigError(f"invalid scenario spec: {exc}") from exc
    if args.seed is not None:
        spec.seed = args.seed
    os.makedirs(args.out, exist_ok=True)
    field, pattern, spec_rep = simulate_scenario(spec)
    write_pattern_csv(pattern, os.path.join(args.out, "pattern.csv"))
    write_raster_text(field.values, os.path.join(args.out, "intensity.txt"))
    if spec_rep.covariate is not None:
        write_raster_text(spec_rep.covariate, os.path.join(args.out, "covariate.txt"))
    print(f"n = {pattern.n}")
    print(f"integral = {field.integral():.6g}")
    return 0


def _load_inputs(cfg):
    window = _window_from(cfg)
    pattern = read_pattern_csv(cfg["pattern"], window)
    covariates = {name: read_raster_text(path) for name, path in cfg.get("covariates", {}).items()}
    return window, pattern, covariates


def cmd_fit_global(args):
    cfg = _read_json(args.config)
    _, pattern, covariates = _load_inputs(cfg)
    os.makedirs(args.out, exist_ok=True)
    fit, _, _ = fit_global(pattern, covariates or None, cfg.get("dummy_grid"))
    with open(os.path.join(args.out, "global_fit.json"), "w", encoding="utf-8") as fh:
        fh.write(fit.to_json() + "\n")
    coef_table_csv(coef_table(fit), os.path.join(args.out, "global_coefs.csv"))
    print(f"loglik = {fit.loglik:.6g}  aic = {aic(fit):.6g}")
    return 0


def _local_maps(cfg, pattern, covariates, out):
    if cfg.get("local_maps"):
        from .geometry import read_raster_text as _rrt
        from .localfit import CoefficientMaps
        from .geometry import SpatialRaster

        rasters = [_rrt(p) for p in cfg["local_maps"]]
        names = tuple(cfg.get("local_map_names", ["intercept", *covariates.keys()]))
        stack = np.stack([r.band(0) for r in rasters])
        maps = CoefficientMaps(
            SpatialRaster(stack, rasters[0].window, band_names=list(names)),
            bandwidth=float(cfg.get("bandwidth") or 0.0) or float("nan"),
            names=names,
        )
        return maps
    grid = int(cfg.get("eval_grid", 64))
    if cfg.get("bandwidth"):
        h = float(cfg["bandwidth"])
    else:
        sel = select_bandwidth(pattern, covariates or None, cfg.get("h_grid"), grid, grid, cfg.get("dummy_grid"))
        h = sel["h_opt"]
        with open(os.path.join(out, "lcv_curve.csv"), "w", encoding="utf-8") as fh:
            fh.write("h,lcv\n")
            for hh, val in sel["lcv_curve"]:
                fh.write(f"{hh:.10g},{val:.10g}\n")
    maps = fit_local(pattern, covariates or None, KernelSpec(h), grid, grid, cfg.get("dummy_grid"))
    return maps


def cmd_fit_local(args):
    cfg = _read_json(args.config)
    _, pattern, covariates = _load_inputs(cfg)
    os.makedirs(args.out, exist_ok=True)
    maps = _local_maps(cfg, pattern, covariates, args.out)
    for i, name in enumerate(maps.names):
        from .geometry import SpatialRaster

        band = SpatialRaster(maps.maps.band(i), maps.maps.window)
        write_raster_text(band, os.path.join(args.out, f"local_{name}.txt"))
    with open(os.path.join(args.out, "local_meta.json"), "w", encoding="utf-8") as fh:
        json.dump(
            {"bandwidth": maps.bandwidth, "bands": list(maps.names), "n_failed": maps.n_failed},
            fh,
            indent=2,
        )
        fh.write("\n")
    print(f"bandwidth = {maps.bandwidth:.6g}  failed pixels = {maps.n_failed}")
    return 0


def _identify(cfg, maps):
    from .localfit import fill_nearest

    maps = fill_nearest(maps)
    slic_cfg = cfg.get("slic", {})
    params = None
    if slic_cfg.get("S"):
        params = SlicParams(S=int(slic_cfg["S"]), g=float(slic_cfg.get("g", 1.0)))
    return identify_tessellations(
        maps,
        params=params,
        mode=cfg.get("mode_tessellation", "common"),
        k_max=int(slic_cfg.get("k_max", 6)),
        tau=float(slic_cfg.get("tau", 0.5)),
        spatial_weight=float(slic_cfg.get("spatial_weight", 0.0)),
    )


def cmd_segment(args):
    cfg = _read_json(args.config)
    _, pattern, covariates = _load_inputs(cfg)
    os.makedirs(args.out, exist_ok=True)
    maps = _local_maps(cfg, pattern, covariates, args.out)
    tessellations = _identify(cfg, maps)
    for i, tess in enumerate(tessellations):
        write_tessellation_text(tess, os.path.join(args.out, f"tessellation_{i}.txt"))
        print(f"tessellation {i}: q = {tess.q}  meta = {tess.meta}")
    return 0


def _tessellated_spec(cfg, covariates, tessellations):
    mode = cfg.get("mode", "embedded")
    if mode == "embedded" or not covariates:
        tess = tessellations[0]
        return TessellatedSpec(
            covariates=covariates,
            intercept_tessellation=tess,
            covariate_tessellations={n: tess for n in covariates},
            mode="embedded" if covariates else "general",
        )
    names = list(covariates)
    return TessellatedSpec(
        covariates=covariates,
        intercept_tessellation=tessellations[0],
        covariate_tessellations={n: t for n, t in zip(names, tessellations[1:])},
        mode="general",
    )


def cmd_fit_tessellated(args):
    cfg = _read_json(args.config)
    _, pattern, covariates = _load_inputs(cfg)
    os.makedirs(args.out, exist_ok=True)
    from .geometry import read_tessellation_text

    tessellations = [read_tessellation_text(p) for p in cfg["tessellations"]]
    spec = _tessellated_spec(cfg, covariates, tessellations)
    fit, _, _ = fit_tessellated(pattern, spec, cfg.get("dummy_grid"))
    with open(os.path.join(args.out, "tessellated_fit.json"), "w", encoding="utf-8") as fh:
        fh.write(fit.to_json() + "\n")
    coef_table_csv(coef_table(fit), os.path.join(args.out, "tessellated_coefs.csv"))
    print(f"loglik = {fit.loglik:.6g}  aic = {aic(fit):.6g}")
    return 0


def cmd_analyze(args):
    cfg = _read_json(args.config)
    _, pattern, covariates = _load_inputs(cfg)
    out = args.out
    os.makedirs(out, exist_ok=True)

    stage = "local fit"
    try:
        maps = _local_maps(cfg, pattern, covariates, out)
        for i, name in enumerate(maps.names):
            from .geometry import SpatialRaster

            write_raster_text(
                SpatialRaster(maps.maps.band(i), maps.maps.window),
                os.path.join(out, f"local_{name}.txt"),
            )
        stage = "segmentation"
        tessellations = _identify(cfg, maps)
        for i, tess in enumerate(tessellations):
            write_tessellation_text(tess, os.path.join(out, f"tessellation_{i}.txt"))
        stage = "global fit"
        gfit, _, _ = fit_global(pattern, covariates or None, cfg.get("dummy_grid"))
        coef_table_csv(coef_table(gfit), os.path.join(out, "global_coefs.csv"))
        stage = "tessellated fit"
        spec = _tessellated_spec(cfg, covariates, tessellations)
        single_tile = all(t.q == 1 for t in tessellations)
        tfit, _, _ = fit_tessellated(pattern, spec, cfg.get("dummy_grid"))
        coef_table_csv(coef_table(tfit), os.path.join(out, "tessellated_coefs.csv"))
        stage = "evaluation"
        lam_tess = tessellated_intensity(tfit, spec)
        ny, nx = lam_tess.band(0).shape
        eta_g = np.full((ny, nx), gfit.coefficients["intercept"])
        from .evaluate import resample_nearest
        from .geometry import SpatialRaster

        for name, rast in covariates.items():
            z = resample_nearest(rast, nx, ny).band(0)
            eta_g = eta_g + gfit.coefficients[name] * z
        lam_glob = SpatialRaster(np.exp(np.minimum(eta_g, 700.0)), lam_tess.window)
        lam_loc = resample_nearest(intensity_from_maps(maps, covariates), nx, ny)
        bw = cfg.get("smoothing_bandwidth")
        comparison = {
            "aic_global": aic(gfit),
            "aic_tessellated": aic(tfit),
            "lrt": lrt(gfit, tfit),
            "mise_global": mise_residual(lam_glob, pattern, bandwidth=bw),
            "mise_local": mise_residual(lam_loc, pattern, bandwidth=bw),
            "mise_tessellated": mise_residual(lam_tess, pattern, bandwidth=bw),
            "tessellation_q": [t.q for t in tessellations],
            "no_spatial_change_detected": bool(single_tile),
        }
        with open(os.path.join(out, "comparison.json"), "w", encoding="utf-8") as fh:
            json.dump(comparison, fh, indent=2)
            fh.write("\n")
        stage = "plots"
        surf = coefficient_surface(tfit, spec, "intercept")
        _save_heatmap(surf.band(0), surf.window, os.path.join(out, "surface_intercept.png"), "intercept")
        for name in covariates:
            surf = coefficient_surface(tfit, spec, name)
            _save_heatmap(surf.band(0), surf.window, os.path.join(out, f"surface_{name}.png"), name)
    except CliConfigError:
        raise
    except Exception as exc:
        raise RuntimeError(f"analyze failed during {stage}: {exc}") from exc
    if single_tile:
        print("no spatial change detected: tessellated model equals the global model")
    print(f"AIC global = {comparison['aic_global']:.6g}  tessellated = {comparison['aic_tessellated']:.6g}")
    return 0


def cmd_experiment(args):
    if args.preset:
        cfg = load_preset(args.preset)
    else:
        cfg = _read_json(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    try:
        cfg = _experiment.validate_config(cfg)
    except _experiment.ConfigError as exc:
        raise CliConfigError(str(exc)) from exc
    if args.dry_run:
        print("config OK")
        return 0
    _, failures, status = _experiment.run_experiment(cfg, args.out, threads=args.threads)
    if failures:
        print(f"{len(failures)} replicate failure(s)", file=sys.stderr)
    print(f"report written to {os.path.join(args.out, 'table.csv')}")
    return status


def build_parser():
    ap = argparse.ArgumentParser(prog="tesspp", description=__doc__)
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", default="out")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a scenario point pattern")
    p.add_argument("spec", help="scenario spec JSON")
    p.set_defaults(func=cmd_simulate)

    for name, fn in (
        ("fit-global", cmd_fit_global),
        ("fit-local", cmd_fit_local),
        ("segment", cmd_segment),
        ("fit-tessellated", cmd_fit_tessellated),
        ("analyze", cmd_analyze),
    ):
        p = sub.add_parser(name)
        p.add_argument("config", help="pipeline config JSON")
        p.set_defaults(func=fn)

    p = sub.add_parser("experiment", help="run a Monte Carlo experiment")
    p.add_argument("config", nargs="?", help="experiment config JSON")
    p.add_argument("--preset", help=f"bundled preset name")
    p.add_argument("--dry-run", action="store_true")
    p.set_defaults(func=cmd_experiment)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "experiment" and not (args.preset or args.config):
        print("experiment requires a config path or --preset", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (CliConfigError, _experiment.ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
