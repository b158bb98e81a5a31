"""Command-line entry point covering the full pipeline.

Subcommands: gen-data, prepare, train, evaluate, explain, confirm,
lint-rules, serve.  Every stage that uses randomness takes an explicit
seed, and artifact files (cohort arrays, model JSON, eval reports) are
byte-stable for identical seeds and inputs.
"""

from __future__ import annotations

import datetime as dt
import json
import sys
from pathlib import Path

import click
import numpy as np

from .catalog import Catalog, default_data_path, load_catalog, load_default_catalog
from .explain import explanation_to_dict, shap_values
from .gbdt import ForestModel, TrainParams, top_n, train as train_model
from .metrics import evaluate_model, render_report
from .pipeline import (
    Cohort,
    CohortSpec,
    SplitSpec,
    apply_outlier_bounds,
    build_cohort,
    class_weights,
    file_digest,
    grid_search,
    remove_outliers,
    stratified_split,
    undersample,
    write_manifest,
)
from .records import build_feature_vector, read_ingest_csv
from .rules import (
    ParseError,
    evaluate as evaluate_rules,
    format_condition,
    lint,
    lint_tsv,
    load_rules,
    parse_rulebase,
)
from .synth import generate_csv, load_synth_config


def _load_catalog(catalog_path: str | None, conversions_path: str | None) -> Catalog:
    if catalog_path is None:
        return load_default_catalog()
    return load_catalog(Path(catalog_path), Path(conversions_path) if conversions_path else None)


_catalog_options = [
    click.option("--catalog", "catalog_path", type=click.Path(exists=True), default=None,
                 help="Lab catalog TSV (default: shipped catalog)."),
    click.option("--conversions", "conversions_path", type=click.Path(exists=True), default=None,
                 help="Unit conversion TSV (default: shipped table)."),
]


def catalog_options(fn):
    for opt in reversed(_catalog_options):
        fn = opt(fn)
    return fn


@click.group(context_settings={"auto_envvar_prefix": "LABCDSS"})
def main() -> None:
    """Lab-based clinical decision support toolkit.

    Every flag can also come from the environment as
    LABCDSS_<SUBCOMMAND>_<FLAG>, e.g. LABCDSS_SERVE_PORT=8080.
    """


# -- gen-data -------------------------------------------------------------------


@main.command("gen-data")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="Synthetic config JSON (default: shipped config).")
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--n-patients", type=int, default=None, help="Override the config patient count.")
@click.option("--out", "out_path", type=click.Path(), required=True)
@catalog_options
def gen_data(config_path, seed, n_patients, out_path, catalog_path, conversions_path) -> None:
    """Write a synthetic cohort CSV in the ingest schema."""
    catalog = _load_catalog(catalog_path, conversions_path)
    config = load_synth_config(Path(config_path) if config_path else default_data_path("synth_default.json"))
    if seed is not None:
        config.seed = seed
    if n_patients is not None:
        config.n_patients = n_patients
    rows = generate_csv(config, catalog, Path(out_path))
    click.echo(f"wrote {rows} rows for {config.n_patients} patients to {out_path}")


# -- prepare --------------------------------------------------------------------


@main.command()
@click.option("--data", "data_path", type=click.Path(exists=True), required=True,
              help="Ingest CSV.")
@click.option("--out", "out_dir", type=click.Path(), required=True,
              help="Cohort output directory.")
@click.option("--window-days", type=int, default=365, show_default=True)
@click.option("--outlier-k", type=float, default=4.0, show_default=True)
@click.option("--train-fraction", type=float, default=0.8, show_default=True)
@click.option("--folds", type=int, default=5, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@catalog_options
def prepare(data_path, out_dir, window_days, outlier_k, train_fraction, folds, seed,
            catalog_path, conversions_path) -> None:
    """Ingest, label, window, split, and clean a cohort; write arrays + manifest."""
    catalog = _load_catalog(catalog_path, conversions_path)
    cohort_spec = CohortSpec(window_days=window_days, outlier_k=outlier_k)
    split_spec = SplitSpec(train_fraction=train_fraction, folds=folds, seed=seed)

    ingest = read_ingest_csv(Path(data_path), catalog)
    cohort = build_cohort(ingest.patients, catalog, cohort_spec)
    if len(cohort) == 0:
        raise click.ClickException("no eligible patients in the input")
    train_split, test_split = stratified_split(cohort, split_spec)
    train_clean, outlier_report = remove_outliers(train_split, outlier_k)
    test_clean, _ = apply_outlier_bounds(test_split, outlier_report.bounds)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    np.save(out / "train_features.npy", train_clean.X)
    np.save(out / "train_labels.npy", train_clean.y)
    np.save(out / "test_features.npy", test_clean.X)
    np.save(out / "test_labels.npy", test_clean.y)
    meta = {
        "feature_names": cohort.feature_names,
        "class_names": cohort.class_names,
        "exclusions": cohort.exclusions,
        "lab_rejections": ingest.rejection_counts,
        "outlier_bounds": {k: list(v) for k, v in outlier_report.bounds.items()},
        "outliers_removed": outlier_report.removed,
        "n_train": len(train_clean),
        "n_test": len(test_clean),
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    artifacts = {
        name: file_digest(out / name)
        for name in ("train_features.npy", "train_labels.npy",
                     "test_features.npy", "test_labels.npy", "meta.json")
    }
    write_manifest(
        out / "manifest.json",
        input_digest=file_digest(Path(data_path)),
        cohort_spec=cohort_spec,
        split_spec=split_spec,
        seeds={"split": seed},
        artifacts=artifacts,
    )
    click.echo(
        f"cohort: {len(train_clean)} train / {len(test_clean)} test, "
        f"{outlier_report.total_removed} outlier values nulled, "
        f"exclusions {sum(cohort.exclusions.values())}"
    )


def _load_cohort_dir(cohort_dir: Path, split: str) -> Cohort:
    meta = json.loads((cohort_dir / "meta.json").read_text())
    return Cohort(
        X=np.load(cohort_dir / f"{split}_features.npy"),
        y=np.load(cohort_dir / f"{split}_labels.npy"),
        patient_ids=[],
        feature_names=meta["feature_names"],
        class_names=meta["class_names"],
    )


# -- train ----------------------------------------------------------------------


@main.command()
@click.option("--cohort", "cohort_dir", type=click.Path(exists=True), required=True)
@click.option("--out", "model_path", type=click.Path(), required=True)
@click.option("--params", "params_path", type=click.Path(exists=True), default=None,
              help="TrainParams JSON object.")
@click.option("--grid", "grid_path", type=click.Path(exists=True), default=None,
              help="JSON list of TrainParams objects to grid-search.")
@click.option("--folds", type=int, default=5, show_default=True)
@click.option("--seed", type=int, default=None, help="Override the params seed.")
@click.option("--weighting", type=click.Choice(["sqrt", "none", "undersample"]),
              default="sqrt", show_default=True,
              help="Class imbalance strategy (undersample loses data; kept for comparison).")
def train(cohort_dir, model_path, params_path, grid_path, folds, seed, weighting) -> None:
    """Train the boosted forest; optionally grid-search hyper-parameters first."""
    cohort_dir = Path(cohort_dir)
    cohort = _load_cohort_dir(cohort_dir, "train")
    k = len(cohort.class_names)

    if weighting == "undersample":
        cohort = undersample(cohort, seed or 0)

    def params_from(doc: dict) -> TrainParams:
        p = TrainParams(**doc)
        if seed is not None:
            p = TrainParams(**{**p.to_dict(), "seed": seed})
        return p

    cv_table = None
    if grid_path is not None:
        grid = [params_from(doc) for doc in json.loads(Path(grid_path).read_text())]
        fold_seed = seed if seed is not None else grid[0].seed
        params, cv_table = grid_search(cohort, grid, folds=folds, seed=fold_seed)
        click.echo(f"grid search: best mean score "
                   f"{max(row['mean_score'] for row in cv_table):.4f} at {params.to_dict()}")
    elif params_path is not None:
        params = params_from(json.loads(Path(params_path).read_text()))
    else:
        params = params_from({})

    weights = class_weights(cohort.y, k) if weighting == "sqrt" else None
    model = train_model(cohort.as_dataset(), params, weights)

    manifest_path = cohort_dir / "manifest.json"
    if manifest_path.exists():
        model.manifest_digest = file_digest(manifest_path)
    model.save(Path(model_path))
    if cv_table is not None:
        cv_path = Path(model_path).with_suffix(".cv.json")
        cv_path.write_text(json.dumps(cv_table, indent=2) + "\n")
        click.echo(f"wrote CV table to {cv_path}")
    click.echo(f"trained {len(model.trees)} trees -> {model_path}")


# -- evaluate ---------------------------------------------------------------------


@main.command()
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--cohort", "cohort_dir", type=click.Path(exists=True), required=True)
@click.option("--split", type=click.Choice(["test", "train"]), default="test", show_default=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--format", "fmt", type=click.Choice(["json", "tsv", "markdown", "all"]),
              default="all", show_default=True)
@click.option("--min-top5", type=float, default=None,
              help="Exit nonzero when Top-5 accuracy falls below this threshold.")
def evaluate(model_path, cohort_dir, split, out_dir, fmt, min_top5) -> None:
    """Score a model on a held-out split and write eval reports."""
    model = ForestModel.load(Path(model_path))
    cohort = _load_cohort_dir(Path(cohort_dir), split)
    report = evaluate_model(model, cohort.X, cohort.y)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    formats = {"json": "eval.json", "tsv": "eval.tsv", "markdown": "eval.md"}
    wanted = formats if fmt == "all" else {fmt: formats[fmt]}
    for name, filename in wanted.items():
        (out / filename).write_bytes(render_report(report, name))
    click.echo(
        f"top-1 {report.top_n_accuracy[1]:.4f}, top-5 {report.top_n_accuracy[5]:.4f}, "
        f"max distribution gap {report.max_abs_diff:.2f} points -> {out}"
    )
    if min_top5 is not None and report.top_n_accuracy[5] < min_top5:
        click.echo(
            f"FAIL: top-5 accuracy {report.top_n_accuracy[5]:.4f} < threshold {min_top5}",
            err=True,
        )
        sys.exit(1)


# -- explain ----------------------------------------------------------------------


def _single_patient(data_path: Path, catalog: Catalog):
    ingest = read_ingest_csv(data_path, catalog)
    if len(ingest.patients) != 1:
        raise click.ClickException(
            f"patient file must contain exactly one patient, found {len(ingest.patients)}"
        )
    patient = ingest.patients[0]
    if patient.reference_date is None:
        if patient.observations:
            patient.reference_date = max(o.observed_at for o in patient.observations)
        else:
            patient.reference_date = dt.date.today()
    return patient


@main.command("explain")
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--patient", "patient_path", type=click.Path(exists=True), required=True,
              help="Ingest-schema CSV holding one patient.")
@click.option("--top", "n_groups", type=int, default=3, show_default=True,
              help="Explain the N most likely groups.")
@click.option("--out", "out_path", type=click.Path(), required=True)
@catalog_options
def explain_cmd(model_path, patient_path, n_groups, out_path, catalog_path, conversions_path) -> None:
    """Write Shapley explanations for a patient's top predicted groups."""
    catalog = _load_catalog(catalog_path, conversions_path)
    model = ForestModel.load(Path(model_path))
    patient = _single_patient(Path(patient_path), catalog)
    fv = build_feature_vector(patient, catalog)
    proba = model.predict_proba_batch(fv.values[None, :])[0]
    ranked = top_n(proba, min(n_groups, model.n_classes))
    doc = {
        "patient_id": patient.patient_id,
        "reference_date": patient.reference_date.isoformat(),
        "explanations": [
            {**explanation_to_dict(shap_values(model, fv.values, idx)),
             "probability": float(proba[idx])}
            for idx in ranked
        ],
    }
    Path(out_path).write_text(json.dumps(doc, indent=2) + "\n")
    click.echo(f"wrote explanations for {len(ranked)} groups to {out_path}")


# -- confirm ----------------------------------------------------------------------


@main.command()
@click.option("--rules", "rules_path", type=click.Path(exists=True), default=None,
              help="Rule file (default: shipped seed rules).")
@click.option("--patient", "patient_path", type=click.Path(exists=True), required=True)
@click.option("--format", "fmt", type=click.Choice(["text", "json"]), default="text",
              show_default=True)
@catalog_options
def confirm(rules_path, patient_path, fmt, catalog_path, conversions_path) -> None:
    """Evaluate the rule base against a patient's most recent labs."""
    catalog = _load_catalog(catalog_path, conversions_path)
    rulebase = load_rules(Path(rules_path) if rules_path else default_data_path("seed.rules"))
    patient = _single_patient(Path(patient_path), catalog)

    latest: dict[str, tuple[dt.date, float]] = {}
    for obs in patient.observations:
        prev = latest.get(obs.lab_key)
        if prev is None or obs.observed_at >= prev[0]:
            latest[obs.lab_key] = (obs.observed_at, obs.value)
    labs = {key: value for key, (_, value) in latest.items()}

    confirmed = evaluate_rules(
        rulebase, labs, age=patient.age, gender=patient.gender, catalog=catalog
    )
    if fmt == "json":
        click.echo(json.dumps([
            {
                "rule_id": c.rule_id,
                "icd10": c.icd10,
                "display_name": c.display_name,
                "matched": [
                    {"condition": format_condition(cond), "value": value}
                    for cond, value in c.matched
                ],
            }
            for c in confirmed
        ], indent=2))
        return
    if not confirmed:
        click.echo("no diagnoses confirmed")
        return
    for c in confirmed:
        label = f" ({c.display_name})" if c.display_name else ""
        click.echo(f"{c.icd10}{label} confirmed by {c.rule_id}:")
        for cond, value in c.matched:
            click.echo(f"  {format_condition(cond)}  [observed {value}]")


# -- lint-rules ---------------------------------------------------------------------


@main.command("lint-rules")
@click.argument("rules_file", type=click.Path(exists=True))
@click.option("--format", "fmt", type=click.Choice(["tsv", "json"]), default="tsv",
              show_default=True)
@catalog_options
def lint_rules(rules_file, fmt, catalog_path, conversions_path) -> None:
    """Parse and lint a rule file; exit 1 on parse errors."""
    catalog = _load_catalog(catalog_path, conversions_path)
    text = Path(rules_file).read_text(encoding="utf-8")
    try:
        rulebase = parse_rulebase(text)
    except ParseError as exc:
        click.echo(f"{rules_file}:{exc.line}:{exc.col}: error: {exc.message}", err=True)
        sys.exit(1)
    warnings = lint(rulebase, catalog)
    if fmt == "json":
        click.echo(json.dumps([
            {"rule_id": w.rule_id, "severity": w.severity, "code": w.code, "message": w.message}
            for w in warnings
        ], indent=2))
    else:
        click.echo(lint_tsv(warnings), nl=False)
    click.echo(f"{len(rulebase.rules)} rules, {len(warnings)} warnings", err=True)


# -- serve ------------------------------------------------------------------------


@main.command()
@click.option("--model", "model_path", type=click.Path(exists=True), default=None)
@click.option("--rules", "rules_path", type=click.Path(exists=True), default=None)
@click.option("--ui", "ui_dir", type=click.Path(exists=True), default=None,
              help="Static console assets to serve under /ui.")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
@catalog_options
def serve(model_path, rules_path, ui_dir, host, port, catalog_path, conversions_path) -> None:
    """Run the HTTP service."""
    import uvicorn

    from .service import create_app

    catalog = _load_catalog(catalog_path, conversions_path)
    app = create_app(
        catalog=catalog,
        model_path=Path(model_path) if model_path else None,
        rules_path=Path(rules_path) if rules_path else None,
        ui_dir=Path(ui_dir) if ui_dir else None,
    )
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
