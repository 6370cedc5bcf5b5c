"""Administration REST API under ``/api/v1``.

Bearer-token auth; every mutating endpoint records its request id with the
resulting events. Error bodies are ``{code, message, path?}``.

All handlers are ``async def`` on purpose: they must run on the server's
event loop (never in a threadpool) so that core operations stay serialized.
"""

from __future__ import annotations

import uuid
from typing import Optional

from fastapi import APIRouter, Request, Response
from pydantic import BaseModel, Field

from .core import ApiError, Core

router = APIRouter(prefix="/api/v1")


def _core(request: Request) -> Core:
    return request.app.state.core


def _ctx(request: Request):
    auth = request.headers.get("authorization", "")
    token_id = auth.removeprefix("Bearer ").strip() if auth.startswith("Bearer ") else None
    core = _core(request)
    token = core.resolve_bearer(token_id)
    request_id = request.headers.get("x-request-id") or uuid.uuid4().hex[:16]
    return core, token, request_id


class CreateTokenBody(BaseModel):
    permissions: list[str] = Field(default_factory=list)
    login_room_id: str
    task_id: Optional[int] = None
    uses: int = 1
    bot: bool = False
    visible_in_roster: bool = True


class CreateTaskBody(BaseModel):
    name: str
    num_users: int
    layout_id: int


class CreateRoomBody(BaseModel):
    layout_id: Optional[int] = None
    id: Optional[str] = None
    task_id: Optional[int] = None


class MoveUserBody(BaseModel):
    to_room: Optional[str] = None
    from_room: Optional[str] = None


class PermissionsBody(BaseModel):
    add: list[str] = Field(default_factory=list)
    remove: list[str] = Field(default_factory=list)


class VideoSessionBody(BaseModel):
    session: str


def _token_desc(token) -> dict:
    return {
        "id": token.id,
        "permissions": sorted(p.value for p in token.permissions),
        "login_room_id": token.login_room_id,
        "task_id": token.task_id,
        "uses_remaining": token.uses_remaining,
        "revoked": token.revoked,
        "bot": token.bot,
        "visible_in_roster": token.visible_in_roster,
    }


@router.post("/tokens", status_code=201)
async def create_token(body: CreateTokenBody, request: Request):
    core, ctx, request_id = _ctx(request)
    token = core.create_token(
        ctx,
        permissions=body.permissions,
        login_room_id=body.login_room_id,
        task_id=body.task_id,
        uses=body.uses,
        bot=body.bot,
        visible_in_roster=body.visible_in_roster,
        request_id=request_id,
    )
    return _token_desc(token)


@router.delete("/tokens/{token_id}")
async def revoke_token(token_id: str, request: Request):
    core, ctx, request_id = _ctx(request)
    token = core.revoke_token(ctx, token_id, request_id=request_id)
    return _token_desc(token)


@router.patch("/tokens/{token_id}/permissions")
async def update_permissions(token_id: str, body: PermissionsBody, request: Request):
    core, ctx, request_id = _ctx(request)
    effective = core.update_permissions(ctx, token_id, body.add, body.remove, request_id=request_id)
    return {"id": token_id, "permissions": sorted(p.value for p in effective)}


@router.post("/layouts", status_code=201)
async def create_layout(request: Request):
    core, ctx, request_id = _ctx(request)
    raw = await request.body()
    if not raw:
        raise ApiError(400, "invalid", "request body must be a layout document", path="$")
    layout_id = core.create_layout(ctx, raw.decode("utf-8"), request_id=request_id)
    return {"id": layout_id}


@router.get("/layouts/{layout_id}")
async def get_layout(layout_id: int, request: Request):
    core, ctx, _ = _ctx(request)
    text = core.get_layout_text(layout_id)
    return Response(content=text, media_type="application/json")


@router.post("/tasks", status_code=201)
async def create_task(body: CreateTaskBody, request: Request):
    core, ctx, request_id = _ctx(request)
    task = core.create_task(ctx, body.name, body.num_users, body.layout_id, request_id=request_id)
    return {"id": task.id, "name": task.name, "num_users": task.num_users, "layout_id": task.layout_id}


@router.get("/tasks/{task_id}")
async def task_info(task_id: int, request: Request):
    core, ctx, _ = _ctx(request)
    task = core.task_info(ctx, task_id)
    return {"id": task.id, "name": task.name, "num_users": task.num_users, "layout_id": task.layout_id}


@router.post("/rooms", status_code=201)
async def create_room(body: CreateRoomBody, request: Request):
    core, ctx, request_id = _ctx(request)
    room = core.create_room(
        ctx, layout_id=body.layout_id, room_id=body.id, task_id=body.task_id, request_id=request_id
    )
    return {"id": room.id, "layout_id": room.layout_id, "task_id": room.task_id}


@router.get("/rooms/{room_id}")
async def room_info(room_id: str, request: Request):
    core, ctx, _ = _ctx(request)
    return core.room_info(ctx, room_id)


@router.post("/rooms/{room_id}/close")
async def close_room(room_id: str, request: Request):
    core, ctx, request_id = _ctx(request)
    room = core.close_room(ctx, room_id, request_id=request_id)
    return {"id": room.id, "read_only": room.read_only}


@router.post("/rooms/{room_id}/video-session")
async def attach_video_session(room_id: str, body: VideoSessionBody, request: Request):
    core, ctx, request_id = _ctx(request)
    room = core.attach_video_session(ctx, room_id, body.session, request_id=request_id)
    return {"id": room.id, "video_session": room.video_session}


@router.get("/rooms/{room_id}/logs")
async def get_logs(room_id: str, request: Request, since: int = 0, format: str = "json"):
    core, ctx, _ = _ctx(request)
    entries = core.get_logs(ctx, room_id, since_seq=since)
    if format == "ndjson":
        return Response(
            content="".join(e.to_json_line() + "\n" for e in entries),
            media_type="application/x-ndjson",
        )
    return [e.to_dict() for e in entries]


@router.post("/users/{user_id}/move")
async def move_user(user_id: int, body: MoveUserBody, request: Request):
    core, ctx, request_id = _ctx(request)
    core.move_user(ctx, user_id, to_room_id=body.to_room, from_room_id=body.from_room,
                   request_id=request_id)
    user = core.get_user(user_id)
    return {"id": user.id, "rooms": sorted(user.rooms)}


@router.post("/users/{user_id}/disconnect")
async def disconnect_user(user_id: int, request: Request):
    core, ctx, request_id = _ctx(request)
    core.kick_user(ctx, user_id, request_id=request_id)
    return {"id": user_id, "connected": core.get_user(user_id).connected}


@router.get("/users/{user_id}")
async def user_info(user_id: int, request: Request):
    core, ctx, _ = _ctx(request)
    return core.user_info(ctx, user_id)
