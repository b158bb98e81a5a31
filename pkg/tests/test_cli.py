import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from labcdss.cli import main

SMALL_PARAMS = {"max_depth": 3, "learning_rate": 0.3, "n_estimators": 8, "seed": 7}


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


def run(runner, *args):
    result = runner.invoke(main, list(args), catch_exceptions=False)
    return result


@pytest.fixture(scope="module")
def workspace(runner, tmp_path_factory):
    """One gen-data -> prepare -> train -> evaluate chain, shared by the tests."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data.csv"
    cohort = root / "cohort"
    model = root / "model.json"
    out = root / "eval"
    params = root / "params.json"
    params.write_text(json.dumps(SMALL_PARAMS))

    assert run(runner, "gen-data", "--n-patients", "500", "--seed", "7",
               "--out", str(data)).exit_code == 0
    assert run(runner, "prepare", "--data", str(data), "--out", str(cohort),
               "--seed", "7").exit_code == 0
    assert run(runner, "train", "--cohort", str(cohort), "--params", str(params),
               "--out", str(model)).exit_code == 0
    assert run(runner, "evaluate", "--model", str(model), "--cohort", str(cohort),
               "--out", str(out)).exit_code == 0
    return root


def test_gen_data_deterministic(runner, tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for path in (a, b):
        result = run(runner, "gen-data", "--n-patients", "120", "--seed", "3",
                     "--out", str(path))
        assert result.exit_code == 0
    assert a.read_bytes() == b.read_bytes()
    c = tmp_path / "c.csv"
    run(runner, "gen-data", "--n-patients", "120", "--seed", "4", "--out", str(c))
    assert a.read_bytes() != c.read_bytes()


def test_prepare_writes_manifest_and_arrays(workspace):
    cohort = workspace / "cohort"
    for name in ("train_features.npy", "train_labels.npy", "test_features.npy",
                 "test_labels.npy", "meta.json", "manifest.json"):
        assert (cohort / name).exists()
    manifest = json.loads((cohort / "manifest.json").read_text())
    assert set(manifest) == {"input_digest", "cohort_spec", "split_spec", "seeds", "artifacts"}
    assert manifest["split_spec"]["seed"] == 7
    meta = json.loads((cohort / "meta.json").read_text())
    assert len(meta["class_names"]) == 12


def test_model_embeds_manifest_digest(workspace):
    import hashlib

    model_doc = json.loads((workspace / "model.json").read_text())
    manifest_bytes = (workspace / "cohort" / "manifest.json").read_bytes()
    assert model_doc["manifest_digest"] == hashlib.sha256(manifest_bytes).hexdigest()


def test_evaluate_outputs_monotone_report(workspace):
    report = json.loads((workspace / "eval" / "eval.json").read_text())
    accuracies = [report["top_n_accuracy"][str(n)] for n in range(1, 13)]
    assert accuracies == sorted(accuracies)
    assert accuracies[-1] == 1.0
    assert (workspace / "eval" / "eval.md").exists()
    assert (workspace / "eval" / "eval.tsv").exists()


def test_evaluate_threshold_gates_exit_code(runner, workspace):
    result = run(runner, "evaluate", "--model", str(workspace / "model.json"),
                 "--cohort", str(workspace / "cohort"), "--out",
                 str(workspace / "eval2"), "--min-top5", "0.999")
    assert result.exit_code == 1
    assert "FAIL" in result.output


def test_full_chain_reproducible(runner, tmp_path):
    def chain(root: Path) -> tuple[bytes, bytes]:
        root.mkdir()
        params = root / "params.json"
        params.write_text(json.dumps(SMALL_PARAMS))
        run(runner, "gen-data", "--n-patients", "300", "--seed", "11",
            "--out", str(root / "d.csv"))
        run(runner, "prepare", "--data", str(root / "d.csv"),
            "--out", str(root / "cohort"), "--seed", "11")
        run(runner, "train", "--cohort", str(root / "cohort"),
            "--params", str(params), "--out", str(root / "model.json"))
        run(runner, "evaluate", "--model", str(root / "model.json"),
            "--cohort", str(root / "cohort"), "--out", str(root / "eval"))
        return (root / "model.json").read_bytes(), (root / "eval" / "eval.json").read_bytes()

    model_a, eval_a = chain(tmp_path / "run_a")
    model_b, eval_b = chain(tmp_path / "run_b")
    assert model_a == model_b
    assert eval_a == eval_b


def test_explain_command(runner, workspace, tmp_path):
    patient = tmp_path / "patient.csv"
    patient.write_text(
        "patient_id,age,gender,lab_name,lab_unit,value,observed_at,icd10_code,diagnosis_date\n"
        "p1,60,F,hba1c,%,9.1,2023-05-01,,\n"
        "p1,60,F,glucose,mg/dL,190,2023-05-01,,\n"
    )
    out = tmp_path / "expl.json"
    result = run(runner, "explain", "--model", str(workspace / "model.json"),
                 "--patient", str(patient), "--top", "2", "--out", str(out))
    assert result.exit_code == 0
    doc = json.loads(out.read_text())
    assert doc["patient_id"] == "p1"
    assert len(doc["explanations"]) == 2
    for explanation in doc["explanations"]:
        gap = abs(explanation["base_value"]
                  + sum(f["phi"] for f in explanation["features"])
                  - explanation["fx"])
        assert gap < 1e-6


def test_explain_rejects_multi_patient_file(runner, workspace, tmp_path):
    patient = tmp_path / "two.csv"
    patient.write_text(
        "patient_id,age,gender,lab_name,lab_unit,value,observed_at,icd10_code,diagnosis_date\n"
        "p1,60,F,hba1c,%,9.1,2023-05-01,,\n"
        "p2,61,M,hba1c,%,5.1,2023-05-01,,\n"
    )
    result = run(runner, "explain", "--model", str(workspace / "model.json"),
                 "--patient", str(patient), "--out", str(tmp_path / "x.json"))
    assert result.exit_code == 1
    assert "exactly one patient" in result.output


def test_confirm_command(runner, tmp_path):
    patient = tmp_path / "patient.csv"
    patient.write_text(
        "patient_id,age,gender,lab_name,lab_unit,value,observed_at,icd10_code,diagnosis_date\n"
        "p1,60,F,hba1c,%,7.1,2023-05-01,,\n"
    )
    result = run(runner, "confirm", "--patient", str(patient))
    assert result.exit_code == 0
    assert "E11" in result.output and "t2dm_a1c" in result.output

    as_json = run(runner, "confirm", "--patient", str(patient), "--format", "json")
    doc = json.loads(as_json.output)
    assert doc[0]["icd10"] == "E11"


def test_confirm_uses_most_recent_value(runner, tmp_path):
    patient = tmp_path / "patient.csv"
    patient.write_text(
        "patient_id,age,gender,lab_name,lab_unit,value,observed_at,icd10_code,diagnosis_date\n"
        "p1,60,F,hba1c,%,7.1,2022-01-01,,\n"
        "p1,60,F,hba1c,%,5.2,2023-05-01,,\n"
    )
    result = run(runner, "confirm", "--patient", str(patient))
    assert "no diagnoses confirmed" in result.output


def test_lint_rules_clean_and_broken(runner, tmp_path):
    from labcdss.catalog import default_data_path

    result = run(runner, "lint-rules", str(default_data_path("seed.rules")))
    assert result.exit_code == 0

    bad = tmp_path / "bad.rules"
    bad.write_text("RULE x CONFIRMS E11 WHEN\n")
    result = run(runner, "lint-rules", str(bad))
    assert result.exit_code == 1
    assert ":1:" in result.output or "line 1" in result.output

    warny = tmp_path / "warny.rules"
    warny.write_text("RULE w CONFIRMS X99 WHEN lab(nosuch) > 3 mg/dL\n")
    result = run(runner, "lint-rules", str(warny))
    assert result.exit_code == 0
    assert "unknown_lab" in result.output or "not in the catalog" in result.output


def test_train_with_grid_writes_cv_table(runner, workspace, tmp_path):
    grid = tmp_path / "grid.json"
    grid.write_text(json.dumps([
        {"max_depth": 1, "n_estimators": 1, "learning_rate": 0.05, "seed": 7},
        {"max_depth": 3, "n_estimators": 6, "learning_rate": 0.3, "seed": 7},
    ]))
    model = tmp_path / "model.json"
    result = run(runner, "train", "--cohort", str(workspace / "cohort"),
                 "--grid", str(grid), "--folds", "3", "--out", str(model))
    assert result.exit_code == 0
    assert "grid search" in result.output
    table = json.loads(model.with_suffix(".cv.json").read_text())
    assert len(table) == 2
    assert all(len(row["fold_scores"]) == 3 for row in table)
    assert model.exists()


def test_train_weighting_strategies_differ(runner, workspace, tmp_path):
    params = tmp_path / "params.json"
    params.write_text(json.dumps(SMALL_PARAMS))
    outputs = {}
    for strategy in ("sqrt", "none", "undersample"):
        path = tmp_path / f"model_{strategy}.json"
        result = run(runner, "train", "--cohort", str(workspace / "cohort"),
                     "--params", str(params), "--weighting", strategy, "--out", str(path))
        assert result.exit_code == 0
        outputs[strategy] = path.read_bytes()
    assert outputs["sqrt"] != outputs["none"]
    assert outputs["undersample"] != outputs["sqrt"]


def test_unknown_flag_is_usage_error(runner):
    result = run(runner, "gen-data", "--does-not-exist", "x")
    assert result.exit_code == 2
