"""HTTP facade over the trained model, rule base, and catalog.

Inference endpoints are pure reads over immutable snapshots; the only
mutations are rule-base replacement and model (re)load, both atomic whole
swaps, so a request observes exactly one snapshot end to end.  Results
always equal the corresponding direct library calls.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import logging
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import math

from fastapi import FastAPI, HTTPException, Request
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field, field_validator

from .catalog import Catalog, load_default_catalog
from .explain import explanation_to_dict, shap_values
from .gbdt import ForestModel, top_n
from .records import LabObservation, PatientRecord, build_feature_vector, parse_gender
from .rules import (
    ConfirmedDiagnosis,
    ParseError,
    RuleBase,
    evaluate,
    format_condition,
    lint,
    parse_rulebase,
    pretty_print,
    recommend_followup,
)

__all__ = ["create_app", "ArtifactStore"]

log = logging.getLogger("labcdss.service")


class LabEntry(BaseModel):
    name: str
    unit: str
    value: float
    observed_at: dt.date | None = None

    @field_validator("value")
    @classmethod
    def _finite(cls, v: float) -> float:
        if not math.isfinite(v):
            raise ValueError("lab value must be finite")
        return v


class InferenceRequest(BaseModel):
    age: int | None = Field(default=None, ge=0)
    gender: str = "unknown"
    labs: list[LabEntry] = Field(default_factory=list)
    top_n: int = 5


class ConfirmRequest(BaseModel):
    age: int | None = Field(default=None, ge=0)
    gender: str = "unknown"
    labs: list[LabEntry] = Field(default_factory=list)


@dataclass
class _Snapshot:
    model: ForestModel | None = None
    model_digest: str | None = None
    rulebase: RuleBase | None = None


class ArtifactStore:
    """Atomically swappable artifacts; readers grab one snapshot per request."""

    def __init__(self, catalog: Catalog):
        self.catalog = catalog
        self._snapshot = _Snapshot()
        self._lock = threading.Lock()

    def snapshot(self) -> _Snapshot:
        return self._snapshot

    def set_model(self, model: ForestModel, digest: str | None = None) -> None:
        with self._lock:
            current = self._snapshot
            self._snapshot = _Snapshot(model, digest, current.rulebase)

    def set_rulebase(self, rulebase: RuleBase) -> None:
        with self._lock:
            current = self._snapshot
            self._snapshot = _Snapshot(current.model, current.model_digest, rulebase)

    def load_model_file(self, path: Path) -> None:
        data = Path(path).read_bytes()
        model = ForestModel.from_json(data.decode("utf-8"))
        self.set_model(model, hashlib.sha256(data).hexdigest())


def _canonical_panel(
    catalog: Catalog, labs: list[LabEntry]
) -> tuple[list[tuple[str, float, dt.date | None]], list[dict]]:
    accepted: list[tuple[str, float, dt.date | None]] = []
    rejected: list[dict] = []
    for entry in labs:
        result = catalog.canonicalize(entry.name, entry.unit, entry.value)
        if result.ok:
            accepted.append((result.key, result.value, entry.observed_at))
        else:
            rejected.append({"name": entry.name, "reason": result.reason})
    return accepted, rejected


def _confirmation_payload(confirmed: list[ConfirmedDiagnosis]) -> list[dict]:
    return [
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
    ]


def create_app(
    catalog: Catalog | None = None,
    model_path: Path | None = None,
    rules_path: Path | None = None,
    ui_dir: Path | None = None,
) -> FastAPI:
    catalog = catalog or load_default_catalog()
    store = ArtifactStore(catalog)
    if model_path is not None:
        store.load_model_file(model_path)
    if rules_path is not None:
        text = Path(rules_path).read_text(encoding="utf-8")
        store.set_rulebase(parse_rulebase(text))

    app = FastAPI(title="labcdss", docs_url=None, redoc_url=None)
    app.state.store = store

    @app.middleware("http")
    async def request_log(request: Request, call_next):
        started = time.perf_counter()
        response = await call_next(request)
        log.info(
            json.dumps(
                {
                    "method": request.method,
                    "path": request.url.path,
                    "status": response.status_code,
                    "duration_ms": round((time.perf_counter() - started) * 1000, 3),
                },
                separators=(",", ":"),
            )
        )
        return response

    @app.get("/v1/health")
    def health() -> dict:
        snap = store.snapshot()
        degraded = snap.model is None or snap.rulebase is None
        return {
            "status": "degraded" if degraded else "ok",
            "model_digest": snap.model_digest,
            "rules_digest": snap.rulebase.source_hash if snap.rulebase else None,
        }

    @app.get("/v1/model/info")
    def model_info() -> dict:
        snap = store.snapshot()
        if snap.model is None:
            return {"loaded": False}
        return {
            "loaded": True,
            "classes": snap.model.classes,
            "feature_names": snap.model.feature_names,
            "params": snap.model.params.to_dict(),
            "manifest_digest": snap.model.manifest_digest,
            "model_digest": snap.model_digest,
        }

    @app.get("/v1/catalog")
    def catalog_listing() -> dict:
        return {
            "labs": [
                {"key": lab.key, "canonical_unit": lab.canonical_unit, "aliases": list(lab.aliases)}
                for lab in catalog.labs.values()
            ],
            "groups": catalog.group_names(),
        }

    @app.post("/v1/likely-diagnoses")
    def likely_diagnoses(body: InferenceRequest, explain: bool = False) -> dict:
        snap = store.snapshot()
        if snap.model is None:
            raise HTTPException(status_code=503, detail="no model loaded")
        model = snap.model
        if not 1 <= body.top_n <= model.n_classes:
            raise HTTPException(
                status_code=422,
                detail=f"top_n must be in [1, {model.n_classes}], got {body.top_n}",
            )

        accepted, rejected = _canonical_panel(catalog, body.labs)
        dates = [d for _, _, d in accepted if d is not None]
        reference = max(dates) if dates else dt.date.today()
        patient = PatientRecord(
            patient_id="live",
            age=body.age,
            gender=parse_gender(body.gender),
            observations=[
                LabObservation(key, value, observed_at or reference)
                for key, value, observed_at in accepted
            ],
            reference_date=reference,
        )
        fv = build_feature_vector(patient, catalog, window_days=365)
        proba = model.predict_proba_batch(fv.values[None, :])[0]
        ranked_idx = top_n(proba, body.top_n)

        present = {key for key, _, _ in accepted}
        ranked, recommended, explanations = [], {}, {}
        for idx in ranked_idx:
            name = model.classes[idx]
            ranked.append({"group": name, "probability": float(proba[idx])})
            if snap.rulebase is not None:
                group = catalog.group_by_name(name)
                recommended[name] = recommend_followup(snap.rulebase, group, catalog, present)
            if explain:
                explanations[name] = explanation_to_dict(shap_values(model, fv.values, idx))

        response = {"ranked": ranked, "rejected_labs": rejected, "recommended_labs": recommended}
        if explain:
            response["explanations"] = explanations
        return response

    @app.post("/v1/confirm")
    def confirm(body: ConfirmRequest) -> list[dict]:
        snap = store.snapshot()
        if snap.rulebase is None:
            raise HTTPException(status_code=503, detail="no rule base loaded")
        accepted, _ = _canonical_panel(catalog, body.labs)
        labs = {key: value for key, value, _ in accepted}  # last value wins per key
        confirmed = evaluate(
            snap.rulebase,
            labs,
            age=body.age,
            gender=parse_gender(body.gender),
            catalog=catalog,
        )
        return _confirmation_payload(confirmed)

    @app.get("/v1/rules")
    def get_rules() -> dict:
        snap = store.snapshot()
        if snap.rulebase is None:
            raise HTTPException(status_code=503, detail="no rule base loaded")
        return {"text": pretty_print(snap.rulebase), "source_hash": snap.rulebase.source_hash}

    @app.put("/v1/rules")
    async def put_rules(request: Request) -> dict:
        text = (await request.body()).decode("utf-8")
        try:
            rulebase = parse_rulebase(text)
        except ParseError as exc:
            raise HTTPException(
                status_code=422,
                detail={"line": exc.line, "col": exc.col, "message": exc.message},
            )
        warnings = lint(rulebase, catalog)
        store.set_rulebase(rulebase)
        return {
            "rules": len(rulebase.rules),
            "source_hash": rulebase.source_hash,
            "warnings": [
                {"rule_id": w.rule_id, "severity": w.severity, "message": w.message}
                for w in warnings
            ],
        }

    if ui_dir is not None:
        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
