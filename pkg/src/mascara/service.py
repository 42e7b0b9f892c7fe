"""Session-oriented HTTP API for the interactive makeup phase: load a face,
watch the region heatmap, paint or undo layers, ask for greedy suggestions,
export the plan. Every number the API reports comes from the same library
calls the batch attack uses, so interactive and scripted sessions never
drift. Sessions live in process memory; requests to one session are
serialized, different sessions proceed concurrently.
"""

from __future__ import annotations

import base64
import io
import threading
import time
import uuid
from dataclasses import replace
from typing import Literal

import numpy as np
from fastapi import FastAPI, HTTPException, Response
from pydantic import BaseModel, ConfigDict

from mascara import attack as atk
from mascara import harness as hz
from mascara import makeup as mk
from mascara import synthface as sf
from mascara.imaging import load_png, save_png


class LayerSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")
    region: str
    entry: str
    opacity: float
    feather: float = 0.0


class ActionRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    action: Literal["add_layer", "undo", "auto_step"]
    layer: LayerSpec | None = None


class CreateSessionRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    identity_seed: int | None = None
    positives: int = 3
    negative_seed: int | None = None
    capture_seed: int = 211
    image: str | None = None            # base64 PNG, aligned to the model input
    landmarks: dict | None = None       # landmark document for the upload
    positive_images: list[str] | None = None
    negative_image: str | None = None
    attack: dict | None = None          # attack setting overrides


class Session:
    def __init__(self, context: atk.AttackContext, config: atk.AttackConfig):
        self.id = uuid.uuid4().hex
        self.context = context
        self.config = config
        self.state = atk.AttackState(image=context.base_image.copy(),
                                     applications={}, layers=())
        self.mean_emb = context.mean_positive_embedding()
        self.distance = atk.dodge_distance(context.model, self.mean_emb,
                                           context.base_image)
        self.history = []               # one record per mutating action
        self.created = time.time()
        self.updated = self.created
        self.lock = threading.Lock()

    def snapshot(self):
        return {"layers": self.state.layers,
                "applications": dict(self.state.applications),
                "retired": self.state.retired,
                "distance": self.distance}


def _png_bytes(image) -> bytes:
    buf = io.BytesIO()
    save_png(buf, image)
    return buf.getvalue()


def _decode_png(data: str, what: str):
    try:
        return load_png(io.BytesIO(base64.b64decode(data)))
    except Exception as e:
        raise HTTPException(400, f"cannot decode {what}: {e}") from e


def build_app(model, palette: mk.Palette | None = None,
              attack_config: atk.AttackConfig | None = None) -> FastAPI:
    palette = palette or mk.DEFAULT_PALETTE
    base_config = attack_config or atk.AttackConfig()
    app = FastAPI(title="mascara studio", version="1")
    sessions: dict[str, Session] = {}
    registry_lock = threading.Lock()

    def get_session(session_id: str) -> Session:
        with registry_lock:
            session = sessions.get(session_id)
        if session is None:
            raise HTTPException(404, f"no session {session_id!r}")
        return session

    def region_catalog(context: atk.AttackContext) -> dict:
        catalog = {}
        for region in sorted(context.masks):
            entries = context.palette.entries_for_region(region)
            if not entries:
                continue
            catalog[region] = {
                "entries": [e.id for e in entries],
                "paintable": bool(np.any(context.masks[region] > 0.0)),
            }
        return catalog

    def summary(session: Session) -> dict:
        intensity = mk.intensity(session.state.image, session.context.base_image)
        return {
            "id": session.id,
            "created": session.created,
            "updated": session.updated,
            "steps": len(session.history),
            "distance": session.distance,
            "dodged": session.distance >= session.config.threshold,
            "threshold": session.config.threshold,
            "opacity_step": session.config.opacity_step,
            "region_cap": session.config.region_cap,
            "intensity": intensity,
            "layers": mk.plan_to_json(session.state.layers)["layers"],
            "applications": dict(sorted(session.state.applications.items())),
            "retired": sorted(session.state.retired),
        }

    def build_context(req: CreateSessionRequest) -> atk.AttackContext:
        if (req.identity_seed is None) == (req.image is None):
            raise HTTPException(
                422, "provide exactly one of identity_seed or image")
        if req.identity_seed is not None:
            return hz.standalone_attack_context(
                model, req.identity_seed, attack_positives=req.positives,
                capture_seed=req.capture_seed, negative_seed=req.negative_seed,
                palette=palette)
        if req.landmarks is None:
            raise HTTPException(400, "uploaded images need a landmark document")
        if not req.positive_images or req.negative_image is None:
            raise HTTPException(
                400, "uploads need positive_images and negative_image")
        try:
            landmarks = sf.FaceLandmarks.from_json(req.landmarks)
        except (TypeError, ValueError, KeyError) as e:
            raise HTTPException(400, f"invalid landmarks: {e}") from e
        base = _decode_png(req.image, "image")
        expected = model.input_shape[:2]
        if base.shape[:2] != expected:
            raise HTTPException(400, f"image is {base.shape[:2]}, "
                                     f"model wants {expected}")
        positives = tuple(_decode_png(p, f"positive_images[{i}]")
                          for i, p in enumerate(req.positive_images))
        negative = _decode_png(req.negative_image, "negative_image")
        masks = sf.region_masks(landmarks, base.shape[:2])
        return atk.AttackContext(model=model, base_image=base,
                                 positives=positives, negative_image=negative,
                                 masks=masks, palette=palette)

    @app.post("/sessions", status_code=201)
    def create_session(req: CreateSessionRequest):
        config = base_config
        if req.attack:
            known = set(atk.AttackConfig.__dataclass_fields__)
            unknown = set(req.attack) - known
            if unknown:
                raise HTTPException(422, f"unknown attack keys: {sorted(unknown)}")
            try:
                config = replace(base_config, **req.attack)
            except (TypeError, ValueError) as e:
                raise HTTPException(422, f"invalid attack settings: {e}") from e
        context = build_context(req)
        session = Session(context, config)
        with registry_lock:
            sessions[session.id] = session
        doc = summary(session)
        doc["regions"] = region_catalog(context)
        doc["palette"] = context.palette.to_json()
        return doc

    @app.get("/sessions/{session_id}")
    def get_state(session_id: str):
        session = get_session(session_id)
        with session.lock:
            doc = summary(session)
            doc["regions"] = region_catalog(session.context)
            doc["palette"] = session.context.palette.to_json()
            return doc

    def do_add_layer(session: Session, spec: LayerSpec | None):
        if spec is None:
            raise HTTPException(422, "add_layer needs a layer")
        if spec.region not in session.context.masks:
            raise HTTPException(422, f"unknown region {spec.region!r}")
        try:
            layer = mk.MakeupLayer(region=spec.region, entry=spec.entry,
                                   opacity=spec.opacity, feather=spec.feather)
            mk.validate_layer(layer, session.context.palette,
                              cap=session.config.region_cap)
        except ValueError as e:
            raise HTTPException(422, str(e)) from e
        prior = session.snapshot()
        slot = next((i for i, l in enumerate(session.state.layers)
                     if l.region == layer.region), len(session.state.layers))
        layers = (session.state.layers[:slot] + (layer,)
                  + session.state.layers[slot + 1:])
        image = mk.composite(session.context.base_image, layers,
                             session.context.masks, session.context.palette,
                             cap=session.config.region_cap)
        applications = dict(session.state.applications)
        applications[layer.region] = int(
            np.ceil(layer.opacity / session.config.opacity_step - 1e-9))
        session.state = atk.AttackState(
            image=image, applications=applications, layers=layers,
            retired=session.state.retired - {layer.region})
        session.distance = atk.dodge_distance(session.context.model,
                                              session.mean_emb, image)
        session.history.append({"action": "add_layer", "prior": prior})

    def do_undo(session: Session):
        if not session.history:
            raise HTTPException(409, "nothing to undo")
        record = session.history.pop()
        prior = record["prior"]
        image = mk.composite(session.context.base_image, prior["layers"],
                             session.context.masks, session.context.palette,
                             cap=session.config.region_cap)
        session.state = atk.AttackState(image=image,
                                        applications=prior["applications"],
                                        layers=prior["layers"],
                                        retired=prior["retired"])
        session.distance = atk.dodge_distance(session.context.model,
                                              session.mean_emb, image)

    def do_auto_step(session: Session):
        prior = session.snapshot()
        try:
            state, step = atk.attack_step(session.state, session.context,
                                          session.config,
                                          iteration=len(session.history))
        except atk.RegionBudgetExhausted as e:
            raise HTTPException(409, str(e)) from e
        session.state = state
        session.distance = step.distance_after
        session.history.append({"action": "auto_step", "prior": prior,
                                "step": step})
        return step

    @app.post("/sessions/{session_id}/actions")
    def apply_action(session_id: str, req: ActionRequest):
        session = get_session(session_id)
        with session.lock:
            step = None
            if req.action == "add_layer":
                do_add_layer(session, req.layer)
            elif req.action == "undo":
                do_undo(session)
            else:
                step = do_auto_step(session)
            session.updated = time.time()
            doc = summary(session)
            if step is not None:
                doc["step"] = {
                    "region": step.region,
                    "entry": step.entry,
                    "applied": step.applied,
                    "opacity": step.opacity,
                    "cumulative_opacity": step.cumulative_opacity,
                    "distance_after": step.distance_after,
                }
            return doc

    @app.get("/sessions/{session_id}/heatmap")
    def get_heatmap(session_id: str, format: str = "png"):
        session = get_session(session_id)
        with session.lock:
            heatmap = atk.compute_heatmap(session.context, session.state.image)
            if format == "scores":
                ranking = atk.region_scores(heatmap, session.context.masks)
                return {"scores": [[region, score]
                                   for region, score in ranking.scores],
                        "excluded": list(ranking.excluded),
                        "raw_min": heatmap.raw_min,
                        "raw_max": heatmap.raw_max}
            if format != "png":
                raise HTTPException(422, "format must be png or scores")
            return Response(content=_png_bytes(heatmap.values),
                            media_type="image/png")

    @app.get("/sessions/{session_id}/export")
    def export_plan(session_id: str):
        session = get_session(session_id)
        with session.lock:
            intensity = mk.intensity(session.state.image,
                                     session.context.base_image)
            plan = mk.plan_to_json(
                session.state.layers,
                extra={"dodged": session.distance >= session.config.threshold,
                       "distance": session.distance,
                       "intensity": intensity})
            return {
                "plan": plan,
                "image": base64.b64encode(
                    _png_bytes(session.state.image)).decode(),
                "base_image": base64.b64encode(
                    _png_bytes(session.context.base_image)).decode(),
                "distance": session.distance,
                "dodged": session.distance >= session.config.threshold,
                "intensity": intensity,
            }

    return app
