"""HTTP front end for :class:`~provgate.service.GateService` (JSON bodies, base64 payloads)."""

from __future__ import annotations

import base64
import binascii
import json
from typing import Optional

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from .errors import DuplicateRecordError, NotFoundError, ProvGateError, ResourceExistsError
from .evaluator import AccessRequest
from .records import canonical_serialize
from .service import GateService


class UploadBody(BaseModel):
    resourceId: str
    ownerActorId: str
    payload: str = Field(description="base64-encoded resource bytes")
    contextId: Optional[str] = None


class AccessBody(BaseModel):
    actorId: str
    claimedRole: str
    contextId: str
    requestedActions: list[str]
    systemAttributes: dict[str, str] = {}
    payload: Optional[str] = Field(default=None, description="base64 replacement bytes for write")


class RegenerateBody(BaseModel):
    resourceId: Optional[str] = None


class ActorBody(BaseModel):
    id: str
    name: str
    role: str


class ContextBody(BaseModel):
    id: str
    state: str
    parameter: dict[str, str] = {}


class PreferenceBody(BaseModel):
    id: str
    target: str
    condition: str
    effect: str
    obligations: list[str] = []


def _decode(data: str) -> bytes:
    try:
        return base64.b64decode(data, validate=True)
    except binascii.Error:
        raise HTTPException(400, "payload is not valid base64") from None


def _error(exc: ProvGateError) -> HTTPException:
    if isinstance(exc, NotFoundError):
        return HTTPException(404, str(exc))
    if isinstance(exc, (DuplicateRecordError, ResourceExistsError)):
        return HTTPException(409, str(exc))
    return HTTPException(400, str(exc))


def create_app(service: GateService) -> FastAPI:
    app = FastAPI(title="provgate")

    @app.post("/actors", status_code=201)
    def add_actor(body: ActorBody) -> dict:
        try:
            return {"sequence": service.add_actor(body.id, body.name, body.role)}
        except ProvGateError as exc:
            raise _error(exc) from None

    @app.post("/contexts", status_code=201)
    def add_context(body: ContextBody) -> dict:
        try:
            return {"sequence": service.add_context(body.id, body.state, body.parameter)}
        except ProvGateError as exc:
            raise _error(exc) from None

    @app.post("/preferences", status_code=201)
    def add_preference(body: PreferenceBody) -> dict:
        try:
            seq = service.add_preference(body.id, body.target, body.condition, body.effect, tuple(body.obligations))
        except ProvGateError as exc:
            raise _error(exc) from None
        return {"sequence": seq}

    @app.post("/resources", status_code=201)
    def upload(body: UploadBody) -> dict:
        try:
            return service.upload_resource(body.resourceId, _decode(body.payload), body.ownerActorId, body.contextId)
        except ProvGateError as exc:
            raise _error(exc) from None

    @app.post("/resources/{resource_id}/access")
    def access(resource_id: str, body: AccessBody) -> dict:
        if not body.requestedActions:
            raise HTTPException(400, "requestedActions must not be empty")
        request = AccessRequest(
            actor_id=body.actorId,
            claimed_role=body.claimedRole,
            context_id=body.contextId,
            resource_id=resource_id,
            requested_actions=frozenset(body.requestedActions),
            at=service.clock.now(),
            system_attributes=dict(body.systemAttributes),
        )
        payload = _decode(body.payload) if body.payload is not None else None
        try:
            result = service.request_access(request, payload)
        except ProvGateError as exc:
            raise _error(exc) from None
        out = result.decision.to_json()
        out["operationId"] = result.operation.id
        if result.payload is not None:
            out["payload"] = base64.b64encode(result.payload).decode("ascii")
        return out

    @app.post("/policies/regenerate")
    def regenerate(body: Optional[RegenerateBody] = None) -> dict:
        return {"attached": service.regenerate_policies(body.resourceId if body else None)}

    @app.get("/resources/{resource_id}/audit")
    def audit(resource_id: str) -> dict:
        try:
            trail = service.get_audit_trail(resource_id)
        except ProvGateError as exc:
            raise _error(exc) from None
        return {
            "resourceId": resource_id,
            "operations": [json.loads(canonical_serialize(op)) for op in trail.operations],
            "report": trail.report,
        }

    @app.get("/resources/{resource_id}/verify")
    def verify(resource_id: str) -> dict:
        try:
            integrity = service.verify_resource(resource_id)
        except ProvGateError as exc:
            raise _error(exc) from None
        return {"intact": integrity.intact, "reason": integrity.reason}

    return app
