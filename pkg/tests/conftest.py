import io

import pytest

from labcdss.catalog import default_data_path, load_default_catalog
from labcdss.gbdt import TrainParams, train
from labcdss.pipeline import SplitSpec, class_weights, stratified_split, build_cohort
from labcdss.records import read_ingest_csv, write_ingest_csv
from labcdss.rules import load_rules
from labcdss.synth import generate_rows, load_synth_config


@pytest.fixture(scope="session")
def catalog():
    return load_default_catalog()


@pytest.fixture(scope="session")
def seed_rulebase():
    return load_rules(default_data_path("seed.rules"))


@pytest.fixture(scope="session")
def synth_config():
    return load_synth_config(default_data_path("synth_default.json"))


def make_cohort(catalog, n_patients, seed):
    config = load_synth_config(default_data_path("synth_default.json"))
    config.n_patients = n_patients
    config.seed = seed
    buf = io.StringIO()
    write_ingest_csv(generate_rows(config, catalog), buf)
    buf.seek(0)
    ingest = read_ingest_csv(buf, catalog)
    return build_cohort(ingest.patients, catalog)


@pytest.fixture(scope="session")
def small_cohort(catalog):
    """2,000 synthetic patients, built once per session."""
    return make_cohort(catalog, 2000, seed=7)


@pytest.fixture(scope="session")
def small_split(small_cohort):
    return stratified_split(small_cohort, SplitSpec(seed=7))


@pytest.fixture(scope="session")
def small_model(small_split):
    """Modest forest over the small cohort, shared by explain/service tests."""
    train_cohort, _ = small_split
    weights = class_weights(train_cohort.y, len(train_cohort.class_names))
    params = TrainParams(max_depth=3, learning_rate=0.3, n_estimators=15, seed=7)
    return train(train_cohort.as_dataset(), params, weights)
