#!/usr/bin/env python3
"""Record golden service responses for the console contract tests.

Trains a small deterministic model on synthetic data, boots the service
in-process, replays the console's fixture interactions, and writes the
responses under frontend/fixtures/.  The python test suite regenerates
these and fails if the committed files drift from the service.

Usage: python scripts/record_console_fixtures.py
"""

import io
import json
from pathlib import Path

REPO_ROOT = Path(__file__).resolve().parent.parent
FIXTURE_DIR = REPO_ROOT / "frontend" / "fixtures"

# the clinician's first panel: suspicious glucose, routine CBC values, and
# one unresolvable home reading the console must surface as rejected
INITIAL_PANEL = {
    "age": 54,
    "gender": "F",
    "labs": [
        {"name": "glucose", "unit": "mg/dL", "value": 185.0, "observed_at": "2023-06-01"},
        {"name": "Hgb", "unit": "g/dL", "value": 13.9, "observed_at": "2023-06-01"},
        {"name": "wbc", "unit": "10^3/uL", "value": 6.8, "observed_at": "2023-06-01"},
        {"name": "home glucometer", "unit": "units", "value": 185.0, "observed_at": "2023-06-01"},
    ],
    "top_n": 5,
}

# the follow-up the console orders after the likely-diagnosis step
FOLLOWUP_LAB = {"name": "hba1c", "unit": "%", "value": 7.1, "observed_at": "2023-06-08"}

MERGED_PANEL = {
    **INITIAL_PANEL,
    "labs": INITIAL_PANEL["labs"] + [FOLLOWUP_LAB],
}


def build_fixture_model():
    from labcdss.catalog import default_data_path, load_default_catalog
    from labcdss.gbdt import TrainParams, train
    from labcdss.pipeline import build_cohort, class_weights
    from labcdss.records import read_ingest_csv, write_ingest_csv
    from labcdss.synth import generate_rows, load_synth_config

    catalog = load_default_catalog()
    config = load_synth_config(default_data_path("synth_default.json"))
    config.n_patients = 800
    config.seed = 7
    buf = io.StringIO()
    write_ingest_csv(generate_rows(config, catalog), buf)
    buf.seek(0)
    cohort = build_cohort(read_ingest_csv(buf, catalog).patients, catalog)
    weights = class_weights(cohort.y, len(cohort.class_names))
    params = TrainParams(max_depth=3, learning_rate=0.3, n_estimators=10, seed=7)
    return catalog, train(cohort.as_dataset(), params, weights)


def build_fixtures() -> dict[str, dict]:
    from fastapi.testclient import TestClient

    from labcdss.catalog import default_data_path
    from labcdss.service import create_app

    catalog, model = build_fixture_model()
    app = create_app(catalog=catalog, rules_path=default_data_path("seed.rules"))
    app.state.store.set_model(model, digest="fixture")
    client = TestClient(app)

    likely = client.post("/v1/likely-diagnoses?explain=true", json=INITIAL_PANEL)
    assert likely.status_code == 200, likely.text
    reranked = client.post("/v1/likely-diagnoses?explain=true", json=MERGED_PANEL)
    assert reranked.status_code == 200, reranked.text
    confirm = client.post("/v1/confirm", json=MERGED_PANEL)
    assert confirm.status_code == 200, confirm.text
    # follow-up value below every confirming threshold (and no glucose row):
    # the service must return an empty confirmation list
    not_confirmed = client.post(
        "/v1/confirm",
        json={**INITIAL_PANEL, "labs": INITIAL_PANEL["labs"][1:3]
              + [{**FOLLOWUP_LAB, "value": 5.2}]},
    )
    assert not_confirmed.status_code == 200, not_confirmed.text
    assert not_confirmed.json() == [], "negative fixture must confirm nothing"
    catalog_listing = client.get("/v1/catalog")

    return {
        "request_initial_panel.json": INITIAL_PANEL,
        "request_merged_panel.json": MERGED_PANEL,
        "likely_diagnoses.json": likely.json(),
        "likely_diagnoses_reranked.json": reranked.json(),
        "confirmations.json": confirm.json(),
        "confirmations_negative.json": not_confirmed.json(),
        "catalog.json": catalog_listing.json(),
    }


def main() -> None:
    FIXTURE_DIR.mkdir(parents=True, exist_ok=True)
    fixtures = build_fixtures()
    for name, doc in fixtures.items():
        path = FIXTURE_DIR / name
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
