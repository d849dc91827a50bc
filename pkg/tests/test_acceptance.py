"""Acceptance gate: every shipped criterion at its stated tolerance.

Run with `pytest tests/test_acceptance.py -v -s` to see one line per
criterion.  The end-to-end criteria drive the real CLI (subprocesses) on the
pinned seed-42 synthetic cohort of 94 plus an independent 39, and must finish
inside five minutes on commodity hardware.
"""
import csv
import json
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from dvhpredict.bundle import load_bundle
from dvhpredict.core import (
    CumulativeDVH,
    DoseGrid,
    FeatureVector,
    Organ,
    canonical_grid,
    monotone_projection,
)
from dvhpredict.evaluation import chi2_sf, kruskal_wallis, median_abs_error
from dvhpredict.frbp import build_fdt, fdt_predict, fit_partitions, generate_rules
from dvhpredict.regressors import (
    AlgorithmId,
    fit_elastic_net,
    fit_mlp,
    fit_ols,
    mlp_loss,
    mlp_loss_and_grad,
)
from dvhpredict.weibull import (
    FitStatus,
    band_coverage,
    band_from_csv,
    build_band,
    median_ranks,
    weibull_fit_lsm,
    weibull_quantile,
)
from tests.test_core import brute_force_lattice_projection
from tests.test_evaluation import brute_force_kruskal
from tests.test_regressors import oracle_normal_equations

PIPELINE_TIME_LIMIT_S = 300.0


def _accept(name: str):
    print(f"[ACCEPT] {name}: PASS")


def _run_cli(args, cwd):
    proc = subprocess.run(
        [sys.executable, "-m", "dvhpredict", *args],
        cwd=cwd,
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, f"CLI {' '.join(args)} failed:\n{proc.stderr}"
    return json.loads(proc.stdout.strip().splitlines()[-1])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Pinned end-to-end run: synth fixtures -> ingest -> train -> band ->
    evaluate -> predict, all through the CLI."""
    root = tmp_path_factory.mktemp("pipeline")
    t0 = time.time()
    synth = _run_cli(["synth", "--out", "fixtures", "--n", "94", "--seed", "42", "--format", "both"], root)
    assert synth["n_patients"] == 94
    _run_cli(["synth", "--out", "vfixtures", "--n", "39", "--seed", "43"], root)
    ingest = _run_cli(["ingest", "--in", "fixtures", "--out", "library.json"], root)
    assert ingest["n_records"] == 94 and ingest["failures"] == []
    vingest = _run_cli(["ingest", "--in", "vfixtures", "--out", "validation.json"], root)
    assert vingest["n_records"] == 39
    train = _run_cli(
        ["train", "--library", "library.json", "--out", "bundle.dvhm", "--seed", "42"], root
    )
    _run_cli(["band", "--library", "library.json", "--out-dir", "bands"], root)
    _run_cli(
        [
            "evaluate",
            "--bundle",
            "bundle.dvhm",
            "--library",
            "validation.json",
            "--out-dir",
            "reports",
            "--band-dir",
            "bands",
        ],
        root,
    )
    _run_cli(
        [
            "predict",
            "--bundle",
            "bundle.dvhm",
            "--organ",
            "bladder",
            "--ptv60-cc",
            "110",
            "--ptv44-cc",
            "450",
            "--rectum-cc",
            "85",
            "--bladder-cc",
            "240",
            "--rectum-overlap",
            "0.2",
            "--bladder-overlap",
            "0.22",
            "--band-dir",
            "bands",
            "--out",
            "prediction.json",
        ],
        root,
    )
    elapsed = time.time() - t0
    return {"root": root, "train_summary": train, "elapsed_s": elapsed}


def _validation_rows(root, organ):
    rows = {}
    with open(root / "reports" / f"report_{organ}.csv") as fh:
        for row in csv.DictReader(fh):
            if row["dataset"] == "validation":
                rows[row["method"]] = row
    return rows


# --- criterion 1: monotone contract -------------------------------------------

def test_monotone_contract_suite(tiny_bundle):
    _, bundle = tiny_bundle
    rng = np.random.default_rng(1)
    algorithms = bundle.algorithms(Organ.BLADDER)
    assert len(algorithms) == 9  # 7 base + 2 ensembles
    violations = 0
    for _ in range(100):
        features = FeatureVector(
            ptv60_cc=float(rng.uniform(20, 300)),
            ptv44_cc=float(rng.uniform(100, 900)),
            rectum_cc=float(rng.uniform(30, 150)),
            bladder_cc=float(rng.uniform(60, 500)),
            rectum_overlap_frac=float(rng.uniform(0, 1)),
            bladder_overlap_frac=float(rng.uniform(0, 1)),
        )
        for algorithm in algorithms:
            v = bundle.predict(features, Organ.BLADDER, algorithm).volume_pct
            if v.min() < 0.0 or v.max() > 100.0 or np.any(np.diff(v) > 0.0):
                violations += 1
    assert violations == 0
    _accept("monotone contract, 9 algorithms x 100 random feature vectors")


# --- criterion 2: OLS oracle ---------------------------------------------------

def test_ols_oracle_equivalence():
    rng = np.random.default_rng(7)
    for _ in range(10):
        X = rng.normal(size=(30, 6))
        y = rng.normal(size=30)
        model = fit_ols(X, y)
        oracle = oracle_normal_equations(X, y)
        diff = max(np.max(np.abs(model.weights - oracle[:-1])), abs(model.intercept - oracle[-1]))
        assert diff < 1e-8
    _accept("OLS equals independent normal-equation oracle (10 x 30x6, <1e-8)")


# --- criterion 3: elastic-net limits --------------------------------------------

def test_elastic_net_limits():
    rng = np.random.default_rng(17)
    X = rng.normal(size=(30, 6))
    y = rng.normal(size=30)
    en0 = fit_elastic_net(X, y, l1_ratio=0.5, lam=0.0, tol=1e-10)
    ols = fit_ols(X, y)
    assert np.max(np.abs(en0.weights - ols.weights)) < 1e-6
    assert abs(en0.intercept - ols.intercept) < 1e-6
    en_inf = fit_elastic_net(X, y, l1_ratio=0.5, lam=1e6)
    assert np.all(en_inf.weights == 0.0)
    _accept("elastic-net limits: lam=0 -> OLS (1e-6), lam=1e6 -> zero weights")


# --- criterion 4: PAV oracle -----------------------------------------------------

def test_pav_lattice_oracle():
    rng = np.random.default_rng(99)
    for _ in range(20):
        v = 0.6 * rng.integers(0, 167, size=6)
        out = monotone_projection(v)
        gap = abs(float(((out - v) ** 2).sum()) - brute_force_lattice_projection(v))
        assert gap < 1e-4
    _accept("PAV matches brute-force lattice minimization (20 curves, gap <1e-4)")


# --- criterion 5: MLP gradient ----------------------------------------------------

def test_mlp_gradient_check():
    rng = np.random.default_rng(77)
    X = rng.normal(size=(3, 2))
    y = rng.normal(size=3)
    net = fit_mlp(X, y, hidden=(2,), epochs=0, seed=4)
    layers = [(W.copy(), b.copy()) for W, b in net.layers]
    _, grad = mlp_loss_and_grad(X, y, layers)

    flat0 = np.concatenate([np.concatenate([W.ravel(), b.ravel()]) for W, b in layers])

    def loss_of(flat):
        rebuilt = []
        pos = 0
        for W, b in layers:
            w = flat[pos : pos + W.size].reshape(W.shape)
            pos += W.size
            bb = flat[pos : pos + b.size].reshape(b.shape)
            pos += b.size
            rebuilt.append((w, bb))
        return mlp_loss(X, y, rebuilt)

    eps = 1e-6
    fd = np.empty_like(flat0)
    for i in range(len(flat0)):
        up, dn = flat0.copy(), flat0.copy()
        up[i] += eps
        dn[i] -= eps
        fd[i] = (loss_of(up) - loss_of(dn)) / (2 * eps)
    rel = np.max(np.abs(grad - fd) / np.maximum(np.abs(fd), 1e-8))
    assert rel < 1e-5
    _accept("MLP analytic gradient vs central differences (rel <1e-5)")


# --- criterion 6: Kruskal-Wallis ---------------------------------------------------

def test_kruskal_wallis_criteria():
    h, _ = kruskal_wallis([[1, 2, 3], [4, 5, 6], [7, 8, 9]])
    assert abs(h - 7.2) <= 1e-10
    rng = np.random.default_rng(5)
    for _ in range(50):
        k = int(rng.integers(2, 5))
        groups = [rng.integers(0, 9, size=rng.integers(2, 8)).astype(float).tolist() for _ in range(k)]
        h_impl, _ = kruskal_wallis(groups)
        assert abs(h_impl - brute_force_kruskal(groups)) < 1e-10
    for x in (0.3, 1.0, 7.2, 12.5, 25.0):
        assert abs(chi2_sf(x, 2) - np.exp(-x / 2.0)) < 1e-12
    _accept("Kruskal-Wallis: H=7.2 exact, 50-instance rank oracle, chi2 SF df=2")


# --- criterion 7: MAE formula ---------------------------------------------------------

def test_mae_formula_criteria():
    grid = DoseGrid(10.0, 10.0, 3)
    actual = CumulativeDVH(grid, np.array([30.0, 20.0, 10.0]))
    predicted = CumulativeDVH(grid, np.array([32.0, 21.0, 6.0]))
    assert median_abs_error(actual, predicted) == 2.0
    g = canonical_grid()
    rng = np.random.default_rng(11)
    for _ in range(100):
        a = CumulativeDVH(g, monotone_projection(rng.uniform(0, 80, g.n_bins)))
        b = CumulativeDVH(g, monotone_projection(rng.uniform(0, 100, g.n_bins)))
        assert median_abs_error(a, b) == median_abs_error(b, a)
        c = float(rng.uniform(0, 15))
        shifted = CumulativeDVH(g, np.asarray(a.volume_pct) + c)
        assert median_abs_error(a, shifted) == pytest.approx(c)
    _accept("MAE: hand median 2.0, symmetry + offset on 100 random pairs")


# --- criterion 8: Weibull LSM -----------------------------------------------------------

def test_weibull_criteria():
    k, s, n = 2.0, 50.0, 20
    p = median_ranks(n)
    x = s * (-np.log(1.0 - p)) ** (1.0 / k)
    params = weibull_fit_lsm(x)
    assert abs(params.k - k) <= 1e-6 and abs(params.s - s) <= 1e-6
    rng = np.random.default_rng(7)
    draws = 30.0 * rng.weibull(1.5, size=200)
    stat = weibull_fit_lsm(draws)
    assert abs(stat.k - 1.5) <= 0.15  # +-10%
    assert abs(stat.s - 30.0) <= 1.5  # +-5%
    assert abs(weibull_quantile(params, 0.5) - 41.628) <= 1e-3
    _accept("Weibull LSM: exact quantile recovery, seeded statistical recovery, closed-form quantile")


# --- criterion 9: FRBP suite ----------------------------------------------------------------

def test_frbp_acceptance_suite():
    rng = np.random.default_rng(23)
    n = 40
    X = np.column_stack(
        [
            rng.uniform(40, 200, n),
            rng.uniform(200, 800, n),
            rng.uniform(40, 120, n),
            rng.uniform(80, 400, n),
            rng.uniform(0.05, 0.35, n),
            rng.uniform(0.05, 0.35, n),
        ]
    )
    partitions = fit_partitions(X)
    for f, part in enumerate(partitions):
        lo = part.sets[0].core - 10.0
        hi = part.sets[-1].core + 10.0
        pts = rng.uniform(lo, hi, 1000)
        sums = part.memberships(pts).sum(axis=1)
        assert np.max(np.abs(sums - 1.0)) < 1e-9, f"partition {f} not strong"

    y = rng.uniform(0, 100, n)
    rules = generate_rules(X, y, partitions)
    antecedents = [r.antecedent for r in rules.rules]
    assert len(antecedents) == len(set(antecedents))

    tree = build_fdt((X, y), partitions)
    for _ in range(50):
        probe = np.array(
            [
                rng.uniform(40, 200),
                rng.uniform(200, 800),
                rng.uniform(40, 120),
                rng.uniform(80, 400),
                rng.uniform(0.05, 0.35),
                rng.uniform(0.05, 0.35),
            ]
        )
        pred = fdt_predict(tree, partitions, probe)
        assert y.min() - 1e-9 <= pred <= y.max() + 1e-9

    y_causal = 100.0 * (X[:, 3] - 80.0) / 320.0
    causal_tree = build_fdt((X, y_causal), partitions)
    assert causal_tree.attribute_order[0] == 3
    _accept("FRBP: strong partitions, unique antecedents, FDT hull, causal attribute first")


# --- criterion 10: end-to-end pinned run ------------------------------------------------------

def test_end_to_end_pinned_run(pipeline):
    summary = pipeline["train_summary"]
    assert summary["train_count"] == 65
    assert summary["test_count"] == 29
    root = pipeline["root"]
    for organ in ("bladder", "rectum"):
        with open(root / "reports" / f"report_{organ}.csv") as fh:
            reader = csv.reader(fh)
            header = tuple(next(reader))
        assert header == (
            "method",
            "dataset",
            "0-6420",
            "0-1990",
            "2000-3990",
            "4000-6420",
            "5300",
            "5600",
            "6000",
        )
        rows = _validation_rows(root, organ)
        assert set(rows) >= {a.value for a in AlgorithmId}
        rf_high = float(rows["RF"]["4000-6420"])
        assert rf_high < 1.0, f"RF high-band MAE {rf_high} on {organ}"
        for method, row in rows.items():
            high = float(row["4000-6420"])
            assert high < 5.0, f"{method} high-band MAE {high} on {organ}"
        # FRBP sanity bound pinned against LR (frozen-seed cohort)
        assert float(rows["FRBP"]["4000-6420"]) <= 2.0 * float(rows["LR"]["4000-6420"]) + 0.1
    assert pipeline["elapsed_s"] < PIPELINE_TIME_LIMIT_S, (
        f"pipeline took {pipeline['elapsed_s']:.0f}s"
    )
    _accept(
        f"end-to-end pinned run: 65/29 split, Table-shaped CSV, RF high-band <1.0, "
        f"all <5.0, {pipeline['elapsed_s']:.0f}s < 300s"
    )


# --- criterion 11: band behavior --------------------------------------------------------------

def test_band_behavior(pipeline):
    from dvhpredict.cli import load_library

    root = pipeline["root"]
    records = load_library(root / "library.json")
    for organ in Organ:
        band = band_from_csv((root / "bands" / f"band_{organ.value}.csv").read_text())
        curves = [r.dvh[organ] for r in records]
        assert np.all(band.lower <= band.upper)
        cov = band_coverage(band, curves, fitted_only=True)
        assert 0.90 <= cov <= 0.99, f"{organ.value} coverage {cov}"
    # all-zero bins collapse to [0, 0]
    grid = DoseGrid(10.0, 10.0, 3)
    zero_tail = [
        CumulativeDVH(grid, np.array([v, v / 2, 0.0])) for v in (80.0, 60.0, 40.0, 20.0)
    ]
    zb = build_band(zero_tail)
    assert zb.lower[-1] == 0.0 and zb.upper[-1] == 0.0
    assert zb.fit_status[-1] is FitStatus.DEGENERATE
    _accept("band behavior: coverage in [0.90, 0.99] on fitted bins, lower<=upper, zero bins [0,0]")


# --- criterion 12: persistence ---------------------------------------------------------------

def test_persistence_bit_identical(tiny_bundle, small_models, pipeline):
    _, loaded = tiny_bundle
    features = FeatureVector(
        ptv60_cc=105.0,
        ptv44_cc=510.0,
        rectum_cc=75.0,
        bladder_cc=260.0,
        rectum_overlap_frac=0.21,
        bladder_overlap_frac=0.27,
    )
    for algo, in_memory in small_models.items():
        a = in_memory.predict_curve(features).volume_pct
        b = loaded.models[(algo, Organ.BLADDER)].predict_curve(features).volume_pct
        assert np.array_equal(a, b), f"save->load drift for {algo.value}"
    # a second independent load of the full pipeline bundle predicts identically
    root = pipeline["root"]
    b1 = load_bundle(root / "bundle.dvhm")
    b2 = load_bundle(root / "bundle.dvhm")
    for organ in Organ:
        for algorithm in b1.algorithms(organ):
            v1 = b1.predict(features, organ, algorithm).volume_pct
            v2 = b2.predict(features, organ, algorithm).volume_pct
            assert np.array_equal(v1, v2)
    _accept("persistence: save->load->predict bit-identical for every algorithm")


# --- criterion 13: service ---------------------------------------------------------------------

def test_service_matches_cli_predict(pipeline):
    from fastapi.testclient import TestClient

    from dvhpredict.bundle import DEFAULT_CONSTRAINTS
    from dvhpredict.service import create_app

    root = pipeline["root"]
    bundle = load_bundle(root / "bundle.dvhm")
    bands = {
        organ: band_from_csv((root / "bands" / f"band_{organ.value}.csv").read_text())
        for organ in Organ
    }
    client = TestClient(create_app(bundle, bands=bands, constraints=DEFAULT_CONSTRAINTS))

    cli_payload = json.loads((root / "prediction.json").read_text())
    response = client.post(
        "/api/predict",
        json={"features": cli_payload["features"], "organ": "bladder"},
    )
    assert response.status_code == 200
    body = response.json()
    assert body["curves"] == cli_payload["curves"]
    assert body["point_doses"] == cli_payload["point_doses"]
    assert body["band"] == cli_payload["band"]
    for curve in body["curves"].values():
        assert len(curve["values"]) == 642

    bad = dict(cli_payload["features"], bladder_overlap_frac=1.5)
    assert client.post("/api/predict", json={"features": bad, "organ": "bladder"}).status_code == 400
    _accept("service: /api/predict matches cmd_predict byte-for-byte, invalid features -> 400")
