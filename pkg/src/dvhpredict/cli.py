"""Command-line pipeline: synth, ingest, train, evaluate, predict, band, serve.

Exit codes: 0 success, 1 input error (bad files, bad features, PII), 2
internal error.  All commands accept --config pointing at a JSON file whose
sections (synth, rules, hyperparams, constraints, pii_patterns, grids)
override built-in defaults.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .bundle import (
    DEFAULT_CONSTRAINTS,
    ModelBundle,
    load_bundle,
    prediction_payload,
    save_bundle,
)
from .core import FeatureVector, Organ, PatientRecord, RecordSource, value_at
from .errors import (
    DvhPredictError,
    EmptyValidation,
    NoParseableFiles,
    PiiDetected,
    TooFewRecords,
)
from .evaluation import (
    KW_DOSES_CGY,
    REPORT_COLUMNS,
    cohort_error_report,
    kruskal_wallis,
    select_best,
    split_cohort,
)
from .ingest import (
    DEFAULT_PII_PATTERNS,
    StructureNameRules,
    build_record,
    default_rules,
    deidentify_check,
    parse_eclipse_text,
    parse_tomo_csv,
)
from .regressors import (
    BASE_ALGORITHMS,
    DEFAULT_GRIDS,
    AlgorithmId,
    grid_search_cv,
    train_dvh_model,
)
from .synth import SynthConfig, synth_cohort, write_fixtures
from .weibull import band_coverage, band_from_csv, band_to_csv, build_band

LIBRARY_FORMAT = "dvh-library/1"


def load_config(path) -> dict:
    if path is None:
        return {}
    return json.loads(Path(path).read_text())


def save_library(path, records) -> None:
    payload = {"format": LIBRARY_FORMAT, "records": [r.to_dict() for r in records]}
    Path(path).write_text(json.dumps(payload) + "\n")


def load_library(path) -> list[PatientRecord]:
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != LIBRARY_FORMAT:
        raise DvhPredictError(f"{path}: not a {LIBRARY_FORMAT} file")
    return [PatientRecord.from_dict(d) for d in payload["records"]]


def _rules_from_config(config: dict) -> StructureNameRules:
    if "rules" in config:
        return StructureNameRules.from_dict(config["rules"])
    return default_rules()


def _constraints_from(path, config: dict) -> dict:
    if path:
        return json.loads(Path(path).read_text())
    return config.get("constraints", DEFAULT_CONSTRAINTS)


def _parse_algorithms(text: str | None, allow_ensembles: bool = False) -> list[AlgorithmId]:
    if not text:
        return list(BASE_ALGORITHMS)
    out = []
    for name in text.split(","):
        name = name.strip()
        try:
            algo = AlgorithmId(name)
        except ValueError:
            raise DvhPredictError(f"unknown algorithm {name!r}") from None
        if not allow_ensembles and algo not in BASE_ALGORITHMS:
            raise DvhPredictError(f"{name} is derived at training time, not trainable")
        out.append(algo)
    return out


# --- commands ----------------------------------------------------------------

def cmd_synth(args) -> int:
    config = load_config(args.config)
    synth_overrides = dict(config.get("synth", {}))
    for key in ("ptv60_cc", "ptv44_cc", "rectum_cc", "bladder_cc",
                "rectum_overlap_frac", "bladder_overlap_frac"):
        if key in synth_overrides:
            synth_overrides[key] = tuple(synth_overrides[key])
    cfg = SynthConfig(
        seed=args.seed,
        n_patients=args.n,
        noise_std=args.noise_std,
        **synth_overrides,
    )
    cohort = synth_cohort(cfg)
    paths = write_fixtures(cohort, args.out, fmt=args.format)
    print(json.dumps({"n_patients": len(paths), "out": str(args.out), "format": args.format}))
    return 0


def ingest_directory(in_dir, rules: StructureNameRules, pii_patterns=DEFAULT_PII_PATTERNS):
    """Parse every export in a directory; per-file parse failures are
    collected, PII is a hard failure."""
    in_dir = Path(in_dir)
    records, failures = [], []
    paths = sorted(p for p in in_dir.iterdir() if p.suffix.lower() in (".txt", ".csv"))
    for path in paths:
        content = path.read_text()
        ok, offending = deidentify_check(content, pii_patterns)
        if not ok:
            raise PiiDetected(str(path), [ln for ln, _ in offending])
        try:
            if path.suffix.lower() == ".csv":
                blocks = parse_tomo_csv(content)
                source = RecordSource.TOMO_CSV
                case_id = path.stem
            else:
                blocks = parse_eclipse_text(content)
                source = RecordSource.ECLIPSE_TEXT
                first = content.strip().splitlines()[0]
                case_id = first.split(":", 1)[1].strip() or path.stem
            records.append(build_record(blocks, rules, case_id, source=source))
        except DvhPredictError as exc:
            failures.append({"file": str(path), "error": str(exc)})
    if not records:
        raise NoParseableFiles(f"no parseable exports under {in_dir}")
    return records, failures


def cmd_ingest(args) -> int:
    config = load_config(args.config)
    rules = _rules_from_config(config)
    pii = tuple(config.get("pii_patterns", DEFAULT_PII_PATTERNS))
    records, failures = ingest_directory(args.in_dir, rules, pii)
    save_library(args.out, records)
    print(json.dumps({"n_records": len(records), "failures": failures, "out": str(args.out)}))
    return 0


def train_bundle(
    records,
    algorithms,
    seed: int,
    tune: bool = False,
    ratio: float = 0.7,
    n_jobs: int = 1,
    hyperparams: dict | None = None,
    grids: dict | None = None,
):
    """Split, optionally tune on the held-out portion, fit every requested
    algorithm per organ and derive the ensemble memberships."""
    train, test = split_cohort(records, ratio=ratio, seed=seed)
    if len(train) < 7:
        raise TooFewRecords(f"training split has {len(train)} records; need >= 7")
    hyperparams = hyperparams or {}
    grids = grids or {}
    models = {}
    test_reports = []
    ensembles = {}
    chosen_params = {}
    for organ in Organ:
        organ_reports = []
        for algorithm in algorithms:
            params = hyperparams.get(algorithm.value)
            if tune:
                grid = grids.get(algorithm.value, DEFAULT_GRIDS[algorithm])
                if grid:
                    params = grid_search_cv(
                        algorithm, organ, test, grid, k=min(5, len(test)), seed=seed, n_jobs=n_jobs
                    )
            model = train_dvh_model(algorithm, organ, train, params, seed=seed, n_jobs=n_jobs)
            models[(algorithm, organ)] = model
            chosen_params[f"{algorithm.value}/{organ.value}"] = _jsonable(model.hyperparams)
            if test:
                organ_reports.append(cohort_error_report(model, test, "test"))
        test_reports.extend(r.to_dict() for r in organ_reports)
        organ_ens = {}
        if len(organ_reports) >= 3:
            organ_ens[AlgorithmId.ENSEMBLE3.value] = [
                a.value for a in select_best(organ_reports, 3)
            ]
        if len(organ_reports) >= 6:
            organ_ens[AlgorithmId.ENSEMBLE6.value] = [
                a.value for a in select_best(organ_reports, 6)
            ]
        ensembles[organ.value] = organ_ens
    meta = {
        "seed": seed,
        "split": {"train": len(train), "test": len(test), "ratio": ratio},
        "algorithms": [a.value for a in algorithms],
        "tuned": tune,
        "hyperparams": chosen_params,
        "ensembles": ensembles,
        "test_reports": test_reports,
    }
    return models, meta


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def cmd_train(args) -> int:
    config = load_config(args.config)
    records = load_library(args.library)
    algorithms = _parse_algorithms(args.algorithms)
    models, meta = train_bundle(
        records,
        algorithms,
        seed=args.seed,
        tune=args.tune,
        ratio=args.ratio,
        n_jobs=args.n_jobs,
        hyperparams=config.get("hyperparams"),
        grids=config.get("grids"),
    )
    save_bundle(args.out, models, meta)
    print(
        json.dumps(
            {
                "train_count": meta["split"]["train"],
                "test_count": meta["split"]["test"],
                "algorithms": meta["algorithms"],
                "ensembles": meta["ensembles"],
                "out": str(args.out),
            }
        )
    )
    return 0


def _report_rows(report_dicts, organ: Organ):
    rows = []
    for d in report_dicts:
        if d["organ"] != organ.value:
            continue
        row = {"method": d["method"], "dataset": d["dataset"]}
        row.update({k: d["band_avg"][k] for k in ("0-6420", "0-1990", "2000-3990", "4000-6420")})
        row.update({k: d["point_avg"][k] for k in ("5300", "5600", "6000")})
        rows.append(row)
    return rows


def _write_report_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (f"{v:.4g}" if isinstance(v, float) else v) for k, v in row.items()})


def evaluate_bundle(bundle: ModelBundle, records, band_dir=None):
    """Validation reports per organ plus Kruskal-Wallis summaries and
    optional band coverage; returns (report dicts, kw rows, coverage rows)."""
    if not records:
        raise EmptyValidation("validation library is empty")
    report_dicts = list(bundle.meta.get("test_reports", []))
    kw_rows = []
    coverage_rows = []
    for organ in bundle.organs():
        band = None
        if band_dir is not None:
            band_path = Path(band_dir) / f"band_{organ.value}.csv"
            if band_path.exists():
                band = band_from_csv(band_path.read_text())
        actual_curves = [r.dvh[organ] for r in records]
        for algorithm in bundle.algorithms(organ):
            model = bundle.model_for(algorithm, organ)
            predictions = [model.predict_curve(r.features) for r in records]
            report = cohort_error_report(model, records, "validation", predictions=predictions)
            report_dicts.append(report.to_dict())
            for dose in KW_DOSES_CGY:
                actual = [value_at(c, dose) for c in actual_curves]
                predicted = [value_at(c, dose) for c in predictions]
                h, p = kruskal_wallis([actual, predicted])
                kw_rows.append(
                    {
                        "organ": organ.value,
                        "dose_cgy": f"{dose:.0f}",
                        "method": algorithm.value,
                        "H": f"{h:.6g}",
                        "p_value": f"{p:.6g}",
                    }
                )
            if band is not None:
                coverage_rows.append(
                    {
                        "organ": organ.value,
                        "method": algorithm.value,
                        "coverage": f"{band_coverage(band, predictions):.6g}",
                    }
                )
    return report_dicts, kw_rows, coverage_rows


def cmd_evaluate(args) -> int:
    bundle = load_bundle(args.bundle)
    records = load_library(args.library)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_dicts, kw_rows, coverage_rows = evaluate_bundle(bundle, records, args.band_dir)
    for organ in bundle.organs():
        _write_report_csv(out_dir / f"report_{organ.value}.csv", _report_rows(report_dicts, organ))
        organ_kw = [r for r in kw_rows if r["organ"] == organ.value]
        with open(out_dir / f"kw_{organ.value}.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["organ", "dose_cgy", "method", "H", "p_value"])
            writer.writeheader()
            writer.writerows(organ_kw)
    if coverage_rows:
        with open(out_dir / "coverage.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["organ", "method", "coverage"])
            writer.writeheader()
            writer.writerows(coverage_rows)
    (out_dir / "report.json").write_text(json.dumps(report_dicts, indent=2) + "\n")
    print(
        json.dumps(
            {
                "n_validation": len(records),
                "out_dir": str(out_dir),
                "reports": len(report_dicts),
                "coverage_rows": len(coverage_rows),
            }
        )
    )
    return 0


def _features_from_args(args) -> FeatureVector:
    if args.features:
        return FeatureVector.from_dict(json.loads(Path(args.features).read_text()))
    values = {}
    flag_map = {
        "ptv60_cc": args.ptv60_cc,
        "ptv44_cc": args.ptv44_cc,
        "rectum_cc": args.rectum_cc,
        "bladder_cc": args.bladder_cc,
        "rectum_overlap_frac": args.rectum_overlap,
        "bladder_overlap_frac": args.bladder_overlap,
    }
    missing = [k for k, v in flag_map.items() if v is None]
    if missing:
        raise DvhPredictError(f"missing feature value(s): {missing} (or pass --features)")
    for k, v in flag_map.items():
        values[k] = v
    return FeatureVector.from_dict(values)


def _load_band_dir(band_dir, organ: Organ):
    if band_dir is None:
        return None
    path = Path(band_dir) / f"band_{organ.value}.csv"
    if not path.exists():
        return None
    return band_from_csv(path.read_text())


def cmd_predict(args) -> int:
    config = load_config(args.config)
    bundle = load_bundle(args.bundle)
    organ = Organ(args.organ)
    features = _features_from_args(args)
    algorithms = (
        _parse_algorithms(args.algorithms, allow_ensembles=True)
        if args.algorithms
        else bundle.algorithms(organ)
    )
    band = _load_band_dir(args.band_dir, organ)
    constraints = _constraints_from(args.constraints, config)
    payload = prediction_payload(bundle, features, organ, algorithms, band, constraints)
    if args.format == "json":
        text = json.dumps(payload, indent=2) + "\n"
    else:
        text = _payload_to_csv(payload)
    if args.out:
        Path(args.out).write_text(text)
        print(json.dumps({"out": str(args.out), "algorithms": payload["algorithms"]}))
    else:
        sys.stdout.write(text)
    return 0


def _payload_to_csv(payload: dict) -> str:
    algos = payload["algorithms"]
    first = payload["curves"][algos[0]]
    doses = [first["start_cgy"] + i * first["step_cgy"] for i in range(len(first["values"]))]
    cols = ["dose_cgy", *algos]
    band = payload.get("band")
    if band:
        cols += ["band_lower", "band_upper"]
    lines = [",".join(cols)]
    for i, dose in enumerate(doses):
        row = [f"{dose:.0f}"] + [repr(payload["curves"][a]["values"][i]) for a in algos]
        if band:
            row += [repr(band["lower"][i]), repr(band["upper"][i])]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def cmd_band(args) -> int:
    records = load_library(args.library)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = {}
    for organ in Organ:
        curves = [r.dvh[organ] for r in records]
        band = build_band(curves, confidence=args.confidence)
        path = out_dir / f"band_{organ.value}.csv"
        path.write_text(band_to_csv(band))
        written[organ.value] = str(path)
    print(json.dumps({"out_dir": str(out_dir), "bands": written}))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    config = load_config(args.config)
    bundle = load_bundle(args.bundle)
    bands = {o: _load_band_dir(args.band_dir, o) for o in Organ}
    constraints = _constraints_from(args.constraints, config)
    app = create_app(bundle, bands=bands, constraints=constraints)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


# --- argument parsing -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dvhpredict",
        description="Predict bladder/rectum cumulative DVHs from six structure volumes",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=42)

    p = sub.add_parser("synth", help="generate synthetic TPS export fixtures")
    common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n", type=int, default=94, help="number of patients")
    p.add_argument("--noise-std", type=float, default=0.0)
    p.add_argument("--format", choices=("eclipse", "tomo", "both"), default="eclipse")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="mine a directory of TPS exports into a library")
    common(p)
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", required=True, help="library JSON path")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train models on a library (7:3 split)")
    common(p)
    p.add_argument("--library", required=True)
    p.add_argument("--out", required=True, help="bundle path")
    p.add_argument("--algorithms", default=None, help="comma-separated subset, e.g. LR,RF")
    p.add_argument("--tune", action="store_true", help="grid-search on the test split")
    p.add_argument("--ratio", type=float, default=0.7)
    p.add_argument("--n-jobs", type=int, default=1)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a bundle on a validation library")
    common(p)
    p.add_argument("--bundle", required=True)
    p.add_argument("--library", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--band-dir", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="predict curves for one feature set")
    common(p)
    p.add_argument("--bundle", required=True)
    p.add_argument("--organ", choices=[o.value for o in Organ], required=True)
    p.add_argument("--algorithms", default=None)
    p.add_argument("--features", default=None, help="JSON file with the six features")
    p.add_argument("--ptv60-cc", type=float, default=None)
    p.add_argument("--ptv44-cc", type=float, default=None)
    p.add_argument("--rectum-cc", type=float, default=None)
    p.add_argument("--bladder-cc", type=float, default=None)
    p.add_argument("--rectum-overlap", type=float, default=None)
    p.add_argument("--bladder-overlap", type=float, default=None)
    p.add_argument("--band-dir", default=None)
    p.add_argument("--constraints", default=None)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("band", help="build Weibull confidence bands from a library")
    common(p)
    p.add_argument("--library", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--confidence", type=float, default=0.95)
    p.set_defaults(func=cmd_band)

    p = sub.add_parser("serve", help="serve the prediction API over HTTP")
    common(p)
    p.add_argument("--bundle", required=True)
    p.add_argument("--band-dir", default=None)
    p.add_argument("--constraints", default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8750)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args) or 0
    except (DvhPredictError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"internal error: {exc!r}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
