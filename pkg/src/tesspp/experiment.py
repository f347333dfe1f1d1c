"""Monte Carlo experiment harness.

Reproduces the simulation-study protocols (tessellation identification
rate, parameter recovery with a known tessellation, and per-model MISE
comparison) from JSON configs, writing deterministic CSV/JSON reports.
"""
from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .evaluate import mise_true, resample_nearest
from .geometry import SpatialRaster, diagonal_tessellation
from .localfit import (
    KernelSpec,
    fill_nearest,
    fit_local,
    intensity_from_maps,
    select_bandwidth,
)
from .quadglm import fit_global
from .segment import SlicParams, default_spacing, identify_tessellations
from .simulate import GrfParams, ScenarioSpec, simulate_scenario
from .tessmodel import TessellatedSpec, fit_tessellated, tessellated_intensity

PROTOCOLS = ("identification", "recovery", "mise")


class ConfigError(ValueError):
    pass


_DEFAULTS = {
    "sim_grid": 128,
    "eval_grid": 64,
    "dummy_grid": 32,
    "bandwidth": None,
    "h_grid": None,
    "agreement_threshold": 0.9,
}


def validate_config(doc):
    """Check an experiment config document; returns the filled-in config."""
    cfg = dict(_DEFAULTS)
    cfg.update(doc)
    for key in ("protocol", "scenario", "rows", "replicates", "seed"):
        if key not in cfg:
            raise ConfigError(f"missing config key {key!r}")
    if cfg["protocol"] not in PROTOCOLS:
        raise ConfigError(f"unknown protocol {cfg['protocol']!r}")
    if not isinstance(cfg["rows"], list) or not cfg["rows"]:
        raise ConfigError("rows must be a nonempty list")
    if int(cfg["replicates"]) < 1:
        raise ConfigError("replicates must be at least 1")
    cfg["replicates"] = int(cfg["replicates"])
    cfg["grf"] = dict({"variance": 1.0, "range": None}, **cfg.get("grf", {}))
    cfg["slic"] = dict({"S": None, "g": 1.0, "k_max": 6, "tau": 0.5, "spatial_weight": 0.0}, **cfg.get("slic", {}))
    return cfg


def _row_seed(seed, row_idx):
    return int(np.random.SeedSequence([int(seed), int(row_idx)]).generate_state(1)[0])


def _row_spec(cfg, row, row_idx):
    """Build the additive ScenarioSpec from a table-layout row.

    Rows carry per-tile values as tabulated (gamma0/gamma1 are the
    non-reference tile's own intercept/slope), converted here to the
    additive dummy parametrization.
    """
    scen = cfg["scenario"]
    beta0 = float(row["beta0"])
    beta1 = row.get("beta1")
    gamma0 = row.get("gamma0")
    gamma1 = row.get("gamma1")
    kw = {"beta0": beta0}
    if scen in ("constant-tiles", "full-embedded"):
        kw["gamma0"] = float(gamma0) - beta0
    if scen in ("covariate-effect", "full-embedded"):
        kw["beta1"] = float(beta1)
        kw["gamma1"] = float(gamma1) - float(beta1)
    return ScenarioSpec(
        scenario=scen,
        seed=_row_seed(cfg["seed"], row_idx),
        grid=int(cfg["sim_grid"]),
        grf=GrfParams(**cfg["grf"]),
        **kw,
    )


def _slic_params(cfg, n_pixels):
    s = cfg["slic"]["S"] or default_spacing(n_pixels)
    return SlicParams(S=int(s), g=float(cfg["slic"]["g"]))


def _row_bandwidth(cfg, spec, covariates_of):
    """Fixed bandwidth for a scenario row: the row's own value, the config
    value, or the LCV optimum on the row's first replicate."""
    if cfg["bandwidth"]:
        return float(cfg["bandwidth"])
    _, pattern, spec_rep = simulate_scenario(spec, replicate=0)
    sel = select_bandwidth(
        pattern,
        covariates_of(spec_rep),
        h_grid=cfg["h_grid"],
        eval_nx=int(cfg["eval_grid"]),
        eval_ny=int(cfg["eval_grid"]),
        dummy_nx=int(cfg["dummy_grid"]),
    )
    return sel["h_opt"]


def _covariates_of(spec_rep):
    return {"Z": spec_rep.covariate} if spec_rep.uses_covariate() else None


def _agreement(tess, window, eval_n):
    """Best label-permutation pixel agreement with the true diagonal split."""
    truth = diagonal_tessellation(window, eval_n, eval_n).labels
    lab = tess.labels
    m1 = np.mean((lab == 1) == (truth == 1))
    m2 = np.mean((lab == 2) == (truth == 1))
    return max(m1, m2)


def _identification_replicate(cfg, spec, h, rep):
    _, pattern, spec_rep = simulate_scenario(spec, replicate=rep)
    maps = fit_local(
        pattern,
        _covariates_of(spec_rep),
        KernelSpec(h),
        eval_nx=int(cfg["eval_grid"]),
        eval_ny=int(cfg["eval_grid"]),
        dummy_nx=int(cfg["dummy_grid"]),
    )
    tess = identify_tessellations(
        fill_nearest(maps),
        params=_slic_params(cfg, int(cfg["eval_grid"]) ** 2),
        mode="common",
        k_max=int(cfg["slic"]["k_max"]),
        tau=float(cfg["slic"]["tau"]),
        spatial_weight=float(cfg["slic"]["spatial_weight"]),
    )[0]
    if tess.q != 2:
        return {"identified": False, "q": tess.q, "agreement": 0.0}
    agr = _agreement(tess, pattern.window, int(cfg["eval_grid"]))
    return {
        "identified": bool(agr >= float(cfg["agreement_threshold"])),
        "q": tess.q,
        "agreement": float(agr),
    }


def _recovery_replicate(cfg, spec, rep):
    _, pattern, spec_rep = simulate_scenario(spec, replicate=rep)
    # The "known" tessellation is represented on the evaluation grid, the same
    # resolution at which identified tessellations are reported.
    grid = int(cfg["eval_grid"])
    tess = diagonal_tessellation(spec.window, grid, grid)
    scen = spec.scenario
    if scen == "constant-tiles":
        mspec = TessellatedSpec(intercept_tessellation=tess)
    elif scen == "covariate-effect":
        mspec = TessellatedSpec(
            covariates={"Z": spec_rep.covariate}, covariate_tessellations={"Z": tess}
        )
    else:
        mspec = TessellatedSpec(
            covariates={"Z": spec_rep.covariate},
            intercept_tessellation=tess,
            covariate_tessellations={"Z": tess},
            mode="embedded",
        )
    fit, _, _ = fit_tessellated(pattern, mspec, dummy_nx=int(cfg["dummy_grid"]))
    c = fit.coefficients
    out = {"beta0": c["intercept"]}
    if scen in ("constant-tiles", "full-embedded"):
        out["gamma0"] = c["intercept"] + c["W[2]"]
    if scen in ("covariate-effect", "full-embedded"):
        out["beta1"] = c["Z"]
        out["gamma1"] = c["Z"] + c["Z:W_Z[2]"]
    if not fit.converged:
        raise RuntimeError("tessellated fit did not converge")
    return out


def _mise_replicate(cfg, spec, h, rep):
    field, pattern, spec_rep = simulate_scenario(spec, replicate=rep)
    grid = int(cfg["sim_grid"])
    eval_n = int(cfg["eval_grid"])
    dummy = int(cfg["dummy_grid"])
    covs = _covariates_of(spec_rep)
    truth = field.values

    gfit, _, _ = fit_global(pattern, covs, dummy)
    eta = np.full((grid, grid), gfit.coefficients["intercept"])
    if covs:
        eta = eta + gfit.coefficients["Z"] * spec_rep.covariate.band(0)
    lam_global = SpatialRaster(np.exp(np.minimum(eta, 700.0)), spec.window)

    maps = fit_local(pattern, covs, KernelSpec(h), eval_n, eval_n, dummy)
    maps = fill_nearest(maps)
    lam_local = resample_nearest(intensity_from_maps(maps, covs), grid, grid)

    tess = identify_tessellations(
        maps,
        params=_slic_params(cfg, eval_n * eval_n),
        mode="common",
        k_max=int(cfg["slic"]["k_max"]),
        tau=float(cfg["slic"]["tau"]),
        spatial_weight=float(cfg["slic"]["spatial_weight"]),
    )[0]
    if covs:
        mspec = TessellatedSpec(
            covariates=covs,
            intercept_tessellation=tess,
            covariate_tessellations={"Z": tess},
            mode="embedded",
        )
    else:
        mspec = TessellatedSpec(intercept_tessellation=tess)
    tfit, _, _ = fit_tessellated(pattern, mspec, dummy_nx=dummy)
    lam_tess = resample_nearest(tessellated_intensity(tfit, mspec), grid, grid)

    return {
        "global": mise_true(lam_global, truth),
        "local": mise_true(lam_local, truth),
        "tessellated": mise_true(lam_tess, truth),
        "q": tess.q,
    }


def _summaries(protocol, row, results, cfg):
    out = dict(row)
    n_ok = len(results)
    out["replicates_ok"] = n_ok
    if protocol == "identification":
        out["rate"] = float(np.mean([r["identified"] for r in results])) if n_ok else np.nan
        out["mean_q"] = float(np.mean([r["q"] for r in results])) if n_ok else np.nan
    elif protocol == "recovery":
        for par in ("beta0", "beta1", "gamma0", "gamma1"):
            if results and par in results[0]:
                vals = np.array([r[par] for r in results])
                truth = float(row[par])
                out[f"{par}_mean"] = float(vals.mean())
                out[f"{par}_sd"] = float(vals.std(ddof=1)) if n_ok > 1 else 0.0
                out[f"{par}_mse"] = float(np.mean((vals - truth) ** 2))
    else:
        for model in ("global", "local", "tessellated"):
            out[f"mise_{model}"] = float(np.mean([r[model] for r in results])) if n_ok else np.nan
        out["mean_q"] = float(np.mean([r["q"] for r in results])) if n_ok else np.nan
    return out


def run_experiment(config, out_dir, threads=1):
    """Run all rows of a config; returns (rows, n_failures, exit_status)."""
    cfg = validate_config(config)
    os.makedirs(out_dir, exist_ok=True)
    protocol = cfg["protocol"]
    reps = cfg["replicates"]
    table = []
    failures = []
    for row_idx, row in enumerate(cfg["rows"]):
        spec = _row_spec(cfg, row, row_idx)
        h = None
        if protocol in ("identification", "mise"):
            if row.get("bandwidth"):
                h = float(row["bandwidth"])
            else:
                h = _row_bandwidth(cfg, spec, _covariates_of)

        def one(rep):
            if protocol == "identification":
                return _identification_replicate(cfg, spec, h, rep)
            if protocol == "recovery":
                return _recovery_replicate(cfg, spec, rep)
            return _mise_replicate(cfg, spec, h, rep)

        results = []
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                futs = [pool.submit(one, rep) for rep in range(reps)]
                for rep, fut in enumerate(futs):
                    try:
                        results.append(fut.result())
                    except Exception as exc:
                        failures.append((row_idx, rep, str(exc)))
        else:
            for rep in range(reps):
                try:
                    results.append(one(rep))
                except Exception as exc:
                    failures.append((row_idx, rep, str(exc)))
        summary = _summaries(protocol, row, results, cfg)
        if h is not None:
            summary["bandwidth"] = float(h)
        table.append(summary)

    _write_reports(table, cfg, failures, out_dir)
    status = 1 if len(failures) > 0.05 * reps * len(cfg["rows"]) else 0
    return table, failures, status


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.10g}"
    return str(v)


def _write_reports(table, cfg, failures, out_dir):
    keys = []
    for row in table:
        for k in row:
            if k not in keys:
                keys.append(k)
    with open(os.path.join(out_dir, "table.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(keys) + "\n")
        for row in table:
            fh.write(",".join(_fmt(row.get(k, "")) for k in keys) + "\n")
    doc = {
        "config": {k: v for k, v in cfg.items()},
        "rows": table,
        "failures": [{"row": r, "replicate": rep, "error": e} for r, rep, e in failures],
    }
    with open(os.path.join(out_dir, "table.json"), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2, default=str)
        fh.write("\n")
