"""HTTP chat service: session management, one turn at a time per session,
trace inspection, and crash-safe append-only turn logs."""

from __future__ import annotations

import json
import os
import threading
import time
import uuid
from dataclasses import dataclass, field
from typing import Optional

from fastapi import Depends, FastAPI, HTTPException, Request
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel

from .config import Runtime, ServiceConfig, build_runtime
from .orchestrator import ChatTurn


@dataclass
class TurnView:
    turn_id: str
    user_input: str
    reply: str
    language: str
    trace: list = field(default_factory=list)
    latency: float = 0.0
    input_tokens: int = 0
    output_tokens: int = 0
    cost: str = "0"

    def summary(self) -> dict:
        return {"turn_id": self.turn_id, "user_input": self.user_input,
                "reply": self.reply, "language": self.language,
                "status": "done"}

    def as_record(self) -> dict:
        return {"turn_id": self.turn_id, "user_input": self.user_input,
                "reply": self.reply, "language": self.language,
                "trace": self.trace, "latency": self.latency,
                "input_tokens": self.input_tokens,
                "output_tokens": self.output_tokens, "cost": self.cost}


@dataclass
class Session:
    id: str
    created_at: float
    history: list = field(default_factory=list)
    turns: list = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)


class SessionStore:
    def __init__(self, state_dir: Optional[str] = None):
        self.state_dir = state_dir
        self._sessions: dict[str, Session] = {}
        self._turn_index: dict[str, TurnView] = {}
        self._lock = threading.Lock()
        if state_dir:
            os.makedirs(state_dir, exist_ok=True)
            self._replay()

    def _log_path(self, session_id: str) -> str:
        return os.path.join(self.state_dir, f"{session_id}.jsonl")

    def _replay(self) -> None:
        """Reconstruct sessions byte-identically from persisted turn logs."""
        for name in sorted(os.listdir(self.state_dir)):
            if not name.endswith(".jsonl"):
                continue
            session_id = name[:-len(".jsonl")]
            session = Session(id=session_id, created_at=0.0)
            with open(os.path.join(self.state_dir, name)) as fh:
                for line in fh:
                    rec = json.loads(line)
                    if "created_at" in rec:
                        session.created_at = rec["created_at"]
                        continue
                    view = TurnView(**rec)
                    session.turns.append(view)
                    session.history.append((view.user_input, view.reply))
                    self._turn_index[view.turn_id] = view
            self._sessions[session_id] = session

    def create(self) -> Session:
        session = Session(id=uuid.uuid4().hex[:12], created_at=time.time())
        with self._lock:
            self._sessions[session.id] = session
        if self.state_dir:
            with open(self._log_path(session.id), "a") as fh:
                fh.write(json.dumps({"created_at": session.created_at}) + "\n")
        return session

    def get(self, session_id: str) -> Session:
        try:
            return self._sessions[session_id]
        except KeyError:
            raise HTTPException(status_code=404,
                                detail=f"unknown session {session_id}") from None

    def all(self) -> list[Session]:
        with self._lock:
            return list(self._sessions.values())

    def record_turn(self, session: Session, turn: ChatTurn) -> TurnView:
        view = TurnView(
            turn_id=uuid.uuid4().hex[:12],
            user_input=turn.user_input, reply=turn.final_report,
            language=turn.language, trace=turn.trace.as_dicts(),
            latency=turn.latency,
            input_tokens=turn.usage.input_tokens,
            output_tokens=turn.usage.output_tokens,
            cost=str(turn.cost),
        )
        session.turns.append(view)
        self._turn_index[view.turn_id] = view
        if self.state_dir:
            with open(self._log_path(session.id), "a") as fh:
                fh.write(json.dumps(view.as_record()) + "\n")
        return view

    def turn(self, turn_id: str) -> TurnView:
        try:
            return self._turn_index[turn_id]
        except KeyError:
            raise HTTPException(status_code=404,
                                detail=f"unknown turn {turn_id}") from None


class ChatBody(BaseModel):
    message: str


def create_app(config: ServiceConfig, runtime: Runtime = None) -> FastAPI:
    runtime = runtime or build_runtime(config)
    store = SessionStore(config.state_dir)
    app = FastAPI(title="moldassist")
    app.state.runtime = runtime
    app.state.sessions = store
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])

    def check_auth(request: Request):
        if config.auth_token:
            header = request.headers.get("Authorization", "")
            if header != f"Bearer {config.auth_token}":
                raise HTTPException(status_code=401, detail="bad token")

    @app.get("/api/health")
    def health():
        return {"status": "ok", "backend": config.backend,
                "diffusion_available": runtime.tool_context.diffusion_model is not None}

    @app.post("/api/sessions", dependencies=[Depends(check_auth)])
    def create_session():
        session = store.create()
        return {"id": session.id, "created_at": session.created_at}

    @app.get("/api/sessions", dependencies=[Depends(check_auth)])
    def list_sessions():
        return [{"id": s.id, "created_at": s.created_at,
                 "turns": len(s.turns)} for s in store.all()]

    @app.post("/api/sessions/{session_id}/chat",
              dependencies=[Depends(check_auth)])
    def chat(session_id: str, body: ChatBody):
        session = store.get(session_id)
        if not session.lock.acquire(blocking=False):
            raise HTTPException(status_code=409,
                                detail="a turn is already in flight")
        try:
            turn = runtime.engine.run_turn(body.message, session.history)
            view = store.record_turn(session, turn)
        finally:
            session.lock.release()
        return {"reply": view.reply, "language": view.language,
                "turn_id": view.turn_id}

    @app.get("/api/sessions/{session_id}/turns",
             dependencies=[Depends(check_auth)])
    def list_turns(session_id: str):
        session = store.get(session_id)
        return [v.summary() for v in session.turns]

    @app.get("/api/turns/{turn_id}/trace", dependencies=[Depends(check_auth)])
    def trace(turn_id: str):
        view = store.turn(turn_id)
        return {"turn_id": view.turn_id, "stages": view.trace,
                "latency": view.latency,
                "input_tokens": view.input_tokens,
                "output_tokens": view.output_tokens, "cost": view.cost}

    return app
