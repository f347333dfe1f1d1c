"""End-to-end acceptance gate.

Each test prints one PASS/FAIL line. The Monte Carlo tests are the slow
part of the suite (several minutes total on one core).
"""
import json
import os
import sys
import warnings

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from tesspp.cli import load_preset
from tesspp.experiment import run_experiment, validate_config
from tesspp.geometry import (
    PointPattern,
    Tessellation,
    diagonal_tessellation,
    unit_square,
)
from tesspp.localfit import KernelSpec, fit_local
from tesspp.quadglm import aic, build_quadrature, fit_global, lrt
from tesspp.simulate import ScenarioSpec, simulate_scenario
from tesspp.tessmodel import TessellatedSpec, coefficient_surface, fit_tessellated

SEED = 20260826
# identification settings: fixed kernel bandwidths calibrated per study row
# (the sparse high-contrast row needs a much finer kernel than LCV selects)
ID_BANDWIDTH = 0.0695
ID_BANDWIDTH_SPARSE = 0.02
ID_SLIC = {"g": 1.0, "spatial_weight": 0.015}
MISE_BANDWIDTH = 0.05
MISE_SLIC = {"g": 1.0, "spatial_weight": 0.015, "tau": 0.0}


@pytest.fixture()
def report(capfd):
    def _report(name, ok, detail=""):
        line = f"[ACCEPTANCE] {name}: {'PASS' if ok else 'FAIL'}"
        if detail:
            line += f"  ({detail})"
        with capfd.disabled():
            print(line, flush=True)

    return _report


def _run(doc, tmp_path, sub):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        table, failures, _ = run_experiment(doc, str(tmp_path / sub))
    assert not failures, failures[:3]
    return table


def test_criterion_1_identification_rates(tmp_path, report):
    base = {
        "protocol": "identification",
        "scenario": "constant-tiles",
        "replicates": 100,
        "seed": SEED,
        "slic": ID_SLIC,
    }
    doc_a = dict(base, rows=[{"en": 500, "beta0": 3.91, "gamma0": 6.11}], bandwidth=ID_BANDWIDTH)
    doc_b = dict(
        base, rows=[{"en": 600, "beta0": 1.61, "gamma0": 6.31}], bandwidth=ID_BANDWIDTH_SPARSE
    )
    table = _run(doc_a, tmp_path, "c1a") + _run(doc_b, tmp_path, "c1b")
    targets = (0.79, 0.91)
    rates = [row["rate"] for row in table]
    ok = all(abs(r - t) <= 0.15 for r, t in zip(rates, targets))
    report(
        "criterion 1 (identification rates)",
        ok,
        f"rates {rates[0]:.2f}/{rates[1]:.2f} vs targets 0.79/0.91 ± 0.15",
    )
    assert ok


def test_criterion_2_intercept_recovery(tmp_path, report):
    rows = [
        {"en": 1000, "beta0": 6.21, "gamma0": 6.21},
        {"en": 1000, "beta0": 5.99, "gamma0": 6.40},
        {"en": 1000, "beta0": 5.30, "gamma0": 6.68},
        {"en": 1000, "beta0": 4.61, "gamma0": 6.80},
    ]
    mse_limits = [(0.012, 0.008), (0.016, 0.004), (0.022, 0.006), (0.040, 0.004)]
    doc = {
        "protocol": "recovery",
        "scenario": "constant-tiles",
        "rows": rows,
        "replicates": 100,
        "seed": SEED,
    }
    table = _run(doc, tmp_path, "c2")
    ok = True
    details = []
    for row, (lim_b, lim_g) in zip(table, mse_limits):
        ok &= abs(row["beta0_mean"] - row["beta0"]) <= 0.10
        ok &= abs(row["gamma0_mean"] - row["gamma0"]) <= 0.10
        ok &= row["beta0_mse"] <= lim_b and row["gamma0_mse"] <= lim_g
        details.append(
            f"{row['beta0']}: {row['beta0_mean']:.2f}/{row['gamma0_mean']:.2f} "
            f"mse {row['beta0_mse']:.4f}/{row['gamma0_mse']:.4f}"
        )
    report("criterion 2 (intercept recovery, known tiles)", ok, "; ".join(details))
    assert ok


def test_criterion_3_joint_recovery(tmp_path, report):
    doc = {
        "protocol": "recovery",
        "scenario": "full-embedded",
        "rows": [{"en": 500, "beta0": 3.40, "beta1": 0.50, "gamma0": 6.64, "gamma1": 0.75}],
        "replicates": 100,
        "seed": SEED,
    }
    table = _run(doc, tmp_path, "c3")
    row = table[0]
    means = (3.52, 6.69, 0.50, 0.60)  # replicate means of the reference study
    mse_limits = (0.162, 0.010, 0.116, 0.046)
    got = (row["beta0_mean"], row["gamma0_mean"], row["beta1_mean"], row["gamma1_mean"])
    mses = (row["beta0_mse"], row["gamma0_mse"], row["beta1_mse"], row["gamma1_mse"])
    ok = all(abs(g - m) <= 0.15 for g, m in zip(got, means)) and all(
        s <= lim for s, lim in zip(mses, mse_limits)
    )
    report(
        "criterion 3 (joint covariate/intercept recovery)",
        ok,
        "means " + "/".join(f"{g:.2f}" for g in got) + " vs " + "/".join(map(str, means)),
    )
    assert ok


def test_criterion_4_mise_orderings(tmp_path, report):
    doc = {
        "protocol": "mise",
        "scenario": "constant-tiles",
        "rows": [{"en": 500, "beta0": 3.91, "gamma0": 6.11}],
        "replicates": 20,
        "seed": SEED,
        "bandwidth": MISE_BANDWIDTH,
        "slic": MISE_SLIC,
    }
    abrupt = _run(doc, tmp_path, "c4a")[0]
    doc_const = dict(doc, rows=[{"en": 500, "beta0": 5.52, "gamma0": 5.52}], replicates=10)
    const = _run(doc_const, tmp_path, "c4b")[0]
    ok_a = (
        abrupt["mise_tessellated"] < abrupt["mise_global"]
        and abrupt["mise_tessellated"] < abrupt["mise_local"]
    )
    ok_b = const["mise_global"] < const["mise_tessellated"]
    ok = ok_a and ok_b
    report(
        "criterion 4 (MISE orderings)",
        ok,
        f"abrupt g/l/t {abrupt['mise_global']:.3g}/{abrupt['mise_local']:.3g}/"
        f"{abrupt['mise_tessellated']:.3g}; constant g/t "
        f"{const['mise_global']:.3g}/{const['mise_tessellated']:.3g}",
    )
    assert ok


def test_criterion_5_oracle_equivalence(report):
    import test_glm
    import test_segmentation

    ok = True
    try:
        for seed in range(24):
            test_glm.test_irls_matches_direct_maximization(seed)
        for seed in range(12):
            test_segmentation.test_slic_assignment_matches_brute_force(seed)
        test_segmentation.test_silhouette_hand_computed()
        test_segmentation.test_silhouette_perfect_separation()
        # definitional silhouette on randomized instances <= 50 points
        from tesspp.segment import silhouette

        rng = np.random.default_rng(0)
        for _ in range(25):
            n = int(rng.integers(4, 50))
            k = int(rng.integers(2, min(5, n)))
            vals = rng.normal(size=(n, 2))
            labels = rng.integers(0, k, size=n)
            while len(np.unique(labels)) < 2:
                labels = rng.integers(0, k, size=n)
            expect = test_segmentation._silhouette_brute(vals, labels)
            assert abs(silhouette(vals, labels) - expect) < 1e-12
    except AssertionError as exc:
        ok = False
        detail = str(exc).splitlines()[0] if str(exc) else ""
    else:
        detail = "IRLS x24, SLIC x12, silhouette x25 randomized instances"
    report("criterion 5 (oracle equivalence)", ok, detail)
    assert ok


def test_criterion_6_conservation_invariants(report):
    rng = np.random.default_rng(3)
    pat = PointPattern(rng.uniform(size=(150, 2)), unit_square())
    checks = {}

    quad = build_quadrature(pat, 32, 32)
    checks["quadrature-area"] = abs(quad.weights.sum() - 1.0) <= 1e-9

    from tesspp.evaluate import kernel_intensity

    lam = kernel_intensity(pat, 0.05, nx=128, ny=128)
    checks["kernel-mass"] = abs(lam.band(0).mean() - pat.n) <= 0.005 * pat.n

    spec = ScenarioSpec("constant-tiles", beta0=3.91, gamma0=6.11 - 3.91, seed=9)
    _, pattern, _ = simulate_scenario(spec, replicate=0)
    gfit, _, _ = fit_global(pattern)
    tess = diagonal_tessellation(pattern.window, 64, 64)
    tfit, _, _ = fit_tessellated(pattern, TessellatedSpec(intercept_tessellation=tess))
    checks["nesting"] = tfit.loglik >= gfit.loglik - 1e-8

    one = Tessellation(np.ones((16, 16), int), pattern.window)
    ofit, _, _ = fit_tessellated(pattern, TessellatedSpec(intercept_tessellation=one))
    checks["q1-equals-global"] = (
        abs(ofit.loglik - gfit.loglik) <= 1e-10
        and abs(ofit.coefficients["intercept"] - gfit.coefficients["intercept"]) <= 1e-10
    )

    alt = tess.with_reference(2)
    afit, _, _ = fit_tessellated(pattern, TessellatedSpec(intercept_tessellation=alt))
    s1 = coefficient_surface(tfit, TessellatedSpec(intercept_tessellation=tess)).band(0)
    s2 = coefficient_surface(afit, TessellatedSpec(intercept_tessellation=alt)).band(0)
    checks["reference-invariance"] = np.max(np.abs(s1 - s2)) <= 1e-8

    maps = fit_local(pat, kernel=KernelSpec(10.0), eval_nx=16, eval_ny=16)
    gfit2, _, _ = fit_global(pat)
    checks["local-degeneracy"] = (
        np.nanmax(np.abs(maps.band("intercept") - gfit2.coefficients["intercept"])) <= 1e-3
    )

    ok = all(checks.values())
    bad = [k for k, v in checks.items() if not v]
    report("criterion 6 (conservation/invariants)", ok, "all hold" if ok else f"failed: {bad}")
    assert ok


def test_criterion_7_lrt_behavior(report):
    spec0 = ScenarioSpec("constant-tiles", beta0=4.0, gamma0=2.0, seed=21)
    _, pattern, _ = simulate_scenario(spec0, replicate=0)
    gfit, _, _ = fit_global(pattern)
    same = lrt(gfit, gfit)
    ok_ident = abs(same["statistic"]) <= 1e-12 and same["p_value"] == 1.0

    tess = diagonal_tessellation(pattern.window, 64, 64)
    hits = 0
    aic_ok = True
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for rep in range(100):
            _, pat, _ = simulate_scenario(spec0, replicate=rep)
            g, _, _ = fit_global(pat)
            t, _, _ = fit_tessellated(pat, TessellatedSpec(intercept_tessellation=tess))
            res = lrt(g, t)
            if res["p_value"] < 0.001:
                hits += 1
            # AIC difference = LRT statistic - 2 * extra parameters
            lhs = aic(g) - aic(t)
            rhs = res["statistic"] - 2.0 * res["df"]
            aic_ok &= abs(lhs - rhs) <= 1e-9
    ok = ok_ident and hits >= 95 and aic_ok
    report(
        "criterion 7 (likelihood-ratio test)",
        ok,
        f"identical stat/p ok={ok_ident}, p<0.001 in {hits}/100, AIC identity ok={aic_ok}",
    )
    assert ok


def test_criterion_8_determinism(tmp_path, report):
    ok = True
    checked = []
    for i in range(1, 8):
        doc = load_preset(f"table{i}")
        doc["replicates"] = 2
        doc["bandwidth"] = 0.08
        digests = []
        for run_id in ("a", "b"):
            out = tmp_path / f"t{i}{run_id}"
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                run_experiment(dict(doc), str(out))
            digests.append((out / "table.csv").read_bytes())
        same = digests[0] == digests[1]
        ok &= same
        checked.append(f"table{i}:{'=' if same else '!='}")
    report("criterion 8 (determinism)", ok, " ".join(checked))
    assert ok
