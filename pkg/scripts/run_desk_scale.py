#!/usr/bin/env python3
"""Run the desk-scale experiment end to end and print the report tables.

Generates the default synthetic cohort (20,000 patients, seed 7), runs
prepare/train/evaluate through the library, and prints the markdown
report plus a short summary.  Takes about a minute.

Usage: python scripts/run_desk_scale.py [--out DIR]
"""

import argparse
import io
import json
import time
from pathlib import Path

from labcdss.catalog import default_data_path, load_default_catalog
from labcdss.gbdt import TrainParams, train
from labcdss.metrics import evaluate_model, render_report
from labcdss.pipeline import (
    SplitSpec,
    apply_outlier_bounds,
    build_cohort,
    class_weights,
    remove_outliers,
    stratified_split,
)
from labcdss.records import read_ingest_csv, write_ingest_csv
from labcdss.synth import generate_rows, load_synth_config


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=None,
                        help="directory for model.json and eval reports")
    args = parser.parse_args()

    started = time.perf_counter()
    catalog = load_default_catalog()
    config = load_synth_config(default_data_path("synth_default.json"))
    print(f"generating {config.n_patients} patients (seed {config.seed})...")
    buf = io.StringIO()
    write_ingest_csv(generate_rows(config, catalog), buf)
    buf.seek(0)
    ingest = read_ingest_csv(buf, catalog)

    cohort = build_cohort(ingest.patients, catalog)
    print(f"cohort: {len(cohort)} eligible patients, exclusions {cohort.exclusions}")
    train_split, test_split = stratified_split(cohort, SplitSpec(seed=7))
    train_clean, outliers = remove_outliers(train_split, 4.0)
    test_clean, _ = apply_outlier_bounds(test_split, outliers.bounds)
    print(f"split: {len(train_clean)} train / {len(test_clean)} test, "
          f"{outliers.total_removed} outlier values nulled")

    weights = class_weights(train_clean.y, len(cohort.class_names))
    params = TrainParams(**json.loads(default_data_path("desk_params.json").read_text()))
    print(f"training {params.n_estimators} rounds x {len(cohort.class_names)} classes...")
    model = train(train_clean.as_dataset(), params, weights)

    report = evaluate_model(model, test_clean.X, test_clean.y)
    print()
    print(render_report(report, "markdown").decode())
    print(f"wall time: {time.perf_counter() - started:.0f}s")

    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        model.save(args.out / "model.json")
        for fmt, name in (("json", "eval.json"), ("tsv", "eval.tsv"), ("markdown", "eval.md")):
            (args.out / name).write_bytes(render_report(report, fmt))
        print(f"artifacts written to {args.out}")


if __name__ == "__main__":
    main()
