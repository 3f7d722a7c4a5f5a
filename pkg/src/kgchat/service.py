"""HTTP chat service: live recommendation, generation, and subgraph inspection.

Sessions are kept in memory, serialized per session, and mirrored to an
append-only line-delimited JSON log so a restarted service can replay its
state. Model weights are read-only while serving.
"""

from __future__ import annotations

import json
import threading
import uuid
from pathlib import Path

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from .corpus import RECOMMENDER, USER
from .pipeline import Pipeline


class MessageIn(BaseModel):
    text: str


class SessionStore:
    """In-memory sessions with an optional append-only replay log."""

    def __init__(self, log_path=None):
        self._sessions: dict[str, dict] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._registry_lock = threading.Lock()
        self._log_path = Path(log_path) if log_path else None
        if self._log_path and self._log_path.exists():
            self._replay()

    def _replay(self) -> None:
        with open(self._log_path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                event = json.loads(line)
                kind = event.get("event")
                if kind == "create":
                    self._sessions[event["session_id"]] = _fresh_session(
                        event["session_id"]
                    )
                    self._locks[event["session_id"]] = threading.Lock()
                elif kind == "turn":
                    session = self._sessions.get(event["session_id"])
                    if session is None:
                        continue
                    session["messages"].append(event["message"])
                    if event["message"]["speaker"] == RECOMMENDER:
                        session["recommendations"] = event.get("recommendations", [])
                        session["subgraph"] = event.get("subgraph", [])

    def _append_log(self, record: dict) -> None:
        if self._log_path is None:
            return
        self._log_path.parent.mkdir(parents=True, exist_ok=True)
        with open(self._log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record) + "\n")

    def create(self) -> str:
        session_id = uuid.uuid4().hex
        with self._registry_lock:
            self._sessions[session_id] = _fresh_session(session_id)
            self._locks[session_id] = threading.Lock()
        self._append_log({"event": "create", "session_id": session_id})
        return session_id

    def lock(self, session_id: str) -> threading.Lock:
        with self._registry_lock:
            if session_id not in self._locks:
                raise KeyError(session_id)
            return self._locks[session_id]

    def get(self, session_id: str) -> dict:
        session = self._sessions.get(session_id)
        if session is None:
            raise KeyError(session_id)
        return session

    def record_turn(self, session_id, message, recommendations=None, subgraph=None):
        session = self.get(session_id)
        session["messages"].append(message)
        record = {"event": "turn", "session_id": session_id, "message": message}
        if message["speaker"] == RECOMMENDER:
            session["recommendations"] = recommendations or []
            session["subgraph"] = subgraph or []
            record["recommendations"] = session["recommendations"]
            record["subgraph"] = session["subgraph"]
        self._append_log(record)


def _fresh_session(session_id: str) -> dict:
    return {
        "session_id": session_id,
        "messages": [],
        "recommendations": [],
        "subgraph": [],
    }


def create_app(pipeline: Pipeline, log_path=None, top_m: int = 10) -> FastAPI:
    app = FastAPI(title="kgchat")
    store = SessionStore(log_path)
    app.state.store = store

    def _context_of(session) -> list:
        return [
            pipeline.make_utterance(m["speaker"], m["text"])
            for m in session["messages"]
        ]

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.post("/session")
    def new_session():
        return {"session_id": store.create()}

    @app.get("/session/{session_id}")
    def get_session(session_id: str):
        try:
            return store.get(session_id)
        except KeyError:
            raise HTTPException(status_code=404, detail="unknown session")

    @app.post("/session/{session_id}/message")
    def post_message(session_id: str, message: MessageIn):
        text = message.text.strip()
        if not text:
            raise HTTPException(status_code=400, detail="empty message")
        try:
            lock = store.lock(session_id)
        except KeyError:
            raise HTTPException(status_code=404, detail="unknown session")

        with lock:
            session = store.get(session_id)
            user_utt = pipeline.make_utterance(USER, text)
            store.record_turn(
                session_id,
                {
                    "speaker": USER,
                    "text": text,
                    "entities": [pipeline.kg.entity_ids[e] for e in user_utt.entities],
                },
            )
            context = _context_of(session)
            turn = pipeline.infer_turn(context, top_m=top_m)
            response_tokens = pipeline.vocab.decode(turn.response_ids)
            response_text = " ".join(response_tokens)
            recommendations = [
                {
                    "item_id": pipeline.kg.entity_ids[i],
                    "name": pipeline.kg.entity_names[i],
                    "score": float(turn.scores[pipeline.item_slot(i)]),
                }
                for i in turn.ranking
            ]
            subgraph = turn.subgraph_payload(pipeline.kg)
            store.record_turn(
                session_id,
                {"speaker": RECOMMENDER, "text": response_text, "entities": []},
                recommendations=recommendations,
                subgraph=subgraph,
            )
            return {
                "response_text": response_text,
                "recommendations": recommendations,
                "subgraph": subgraph,
            }

    return app
