"""HTTP binding of ``ReadmissionService`` (FastAPI + uvicorn)."""

from __future__ import annotations

import json
import logging

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response

from .service import ReadmissionService, ServeConfig

logger = logging.getLogger(__name__)


async def _body(request: Request):
    raw = await request.body()
    try:
        return json.loads(raw)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        return _BadJSON(str(exc))


class _BadJSON:
    def __init__(self, msg):
        self.msg = msg


def create_app(service: ReadmissionService) -> FastAPI:
    app = FastAPI(title="readmit", docs_url=None, redoc_url=None, openapi_url=None)

    def respond(endpoint: str, handler, body):
        if isinstance(body, _BadJSON):
            status, payload = service.reject(endpoint, {"_": f"invalid JSON: {body.msg}"})
        else:
            status, payload = handler(body)
        return JSONResponse(payload, status_code=status)

    # Handlers are CPU-bound and short; running them on the event loop avoids
    # thread hand-off and serializes scoring on a single core.
    @app.post("/predict")
    async def predict(request: Request):
        return respond("predict", service.handle_predict, await _body(request))

    @app.post("/explain")
    async def explain(request: Request):
        return respond("explain", service.handle_explain, await _body(request))

    @app.get("/health")
    async def health():
        status, payload = service.handle_health()
        return JSONResponse(payload, status_code=status)

    @app.get("/metrics")
    async def metrics():
        status, text, ctype = service.render_metrics()
        return Response(text, status_code=status, media_type=ctype)

    return app


def run(cfg: ServeConfig) -> None:
    import uvicorn

    service = ReadmissionService.from_config(cfg)
    logger.info("serving model %s on %s:%d", service.model_version, cfg.host, cfg.port)
    uvicorn.run(create_app(service), host=cfg.host, port=cfg.port, log_level="warning", access_log=False)
