"""HTTP surface for the recall console: plain text bodies in, JSON out,
plus a server-sent-events stream of live session updates."""

from __future__ import annotations

import json
import logging
import queue

from fastapi import FastAPI, HTTPException, Query, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, StreamingResponse

from .errors import (
    NoMatchingEpisodeError,
    RecallGraphError,
    StreamFormatError,
    UnknownEpisodeError,
    UnknownSessionError,
)
from .service import SessionService

logger = logging.getLogger(__name__)

SSE_POLL_SECONDS = 0.5


def create_app(service: SessionService) -> FastAPI:
    app = FastAPI(title="recallgraph", version="0.1.0")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(RecallGraphError)
    async def _engine_error(_request: Request, exc: RecallGraphError):
        status = 404 if isinstance(exc, (UnknownSessionError, UnknownEpisodeError)) else 400
        if isinstance(exc, NoMatchingEpisodeError):
            status = 404
        return JSONResponse(status_code=status, content={"error": str(exc)})

    @app.get("/episodes")
    def list_episodes():
        return {"episodes": service.episode_listing()}

    @app.post("/episodes")
    async def record_episode(request: Request, title: str = Query(...), location: str = Query("")):
        body = await request.body()
        meta = service.ingest_recording(body, title=title, location=location)
        return {
            "id": meta.id,
            "title": meta.title,
            "location": meta.location,
            "duration": meta.duration,
        }

    @app.post("/sessions")
    async def create_session(request: Request):
        body = await request.body()
        try:
            query = json.loads(body) if body else {}
        except json.JSONDecodeError as exc:
            raise HTTPException(status_code=400, detail=f"query body must be JSON: {exc.msg}") from exc
        return service.create_session(query)

    @app.post("/sessions/{session_id}/events")
    async def post_events(session_id: str, request: Request):
        body = await request.body()
        try:
            return service.ingest_event_stream(session_id, body)
        except StreamFormatError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc

    @app.get("/sessions/{session_id}/state")
    def session_state(session_id: str):
        return service.session_state(session_id)

    @app.get("/sessions/{session_id}/stream")
    def session_stream(session_id: str):
        q = service.subscribe(session_id)

        def events():
            try:
                while True:
                    try:
                        update = q.get(timeout=SSE_POLL_SECONDS)
                    except queue.Empty:
                        yield ": keep-alive\n\n"
                        continue
                    yield f"data: {json.dumps(update, separators=(',', ':'))}\n\n"
            finally:
                service.unsubscribe(session_id, q)

        return StreamingResponse(events(), media_type="text/event-stream")

    return app
