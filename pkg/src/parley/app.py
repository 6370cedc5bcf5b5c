"""FastAPI application wiring: REST API, websocket gateway, health check and
the static browser client (when a built frontend is present).
"""

from __future__ import annotations

import logging
from contextlib import asynccontextmanager
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import FileResponse, HTMLResponse, JSONResponse
from fastapi.staticfiles import StaticFiles

from .api import router
from .core import ApiError, Core, ServerConfig
from .gateway import chat_websocket

logger = logging.getLogger("parley.app")

FALLBACK_PAGE = """<!doctype html>
<html><head><title>parley</title></head>
<body><h1>parley server</h1>
<p>No browser client is installed. Connect a websocket client to
<code>/chat?token=&lt;token&gt;&amp;name=&lt;name&gt;</code> or use the REST API under
<code>/api/v1</code>.</p></body></html>
"""


def find_frontend_dist() -> Path | None:
    here = Path(__file__).resolve()
    for candidate in (
        here.parent / "frontend",
        here.parent.parent.parent / "frontend" / "dist",
    ):
        if (candidate / "index.html").exists():
            return candidate
    return None


def create_app(config: ServerConfig | None = None, core: Core | None = None) -> FastAPI:
    config = config or ServerConfig()

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        yield
        app.state.core.close()

    app = FastAPI(title="parley", docs_url=None, redoc_url=None, lifespan=lifespan)
    app.state.core = core or Core(config)
    app.include_router(router)
    app.websocket("/chat")(chat_websocket)

    @app.exception_handler(ApiError)
    async def api_error_handler(request: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status, content=exc.body())

    @app.exception_handler(RequestValidationError)
    async def validation_error_handler(request: Request, exc: RequestValidationError):
        first = exc.errors()[0] if exc.errors() else {}
        path = ".".join(str(part) for part in first.get("loc", ()) if part != "body")
        return JSONResponse(
            status_code=400,
            content={"code": "invalid", "message": first.get("msg", "invalid request"), "path": path},
        )

    @app.get("/health")
    async def health():
        return {"status": "ok"}

    dist = find_frontend_dist()
    if dist is not None:
        app.mount("/static", StaticFiles(directory=dist), name="static")

        @app.get("/chat", response_class=HTMLResponse)
        async def chat_page():
            return FileResponse(dist / "index.html")

        logger.info("serving browser client from %s", dist)
    else:

        @app.get("/chat", response_class=HTMLResponse)
        async def chat_page_fallback():
            return HTMLResponse(FALLBACK_PAGE)

    return app
