"""HTTP/JSON API for live triage sessions.

Handlers hold no triage logic: every counter and flag in a response comes
from the session engine, so replaying the verdict sequence through the
triage module reproduces the same report.
"""
from __future__ import annotations

import os
import threading
import uuid
from pathlib import Path

from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .encoding import one_hot, prune
from .matching import NscrEntry, StateChangeLabel, read_nscr
from .ml import ParameterError
from .prioritize import Algorithm, PipelineConfig, RankedHost, prioritize
from .scans import PortKey, ScanDataError
from .triage import SessionClosedError, TriageSession


class ConfigBody(BaseModel):
    preset: str | None = None
    algorithm: str | None = None
    k: int | None = None
    sc: int | None = None
    pruning: bool = True
    seed: int = 0

    def to_config(self) -> PipelineConfig:
        if self.preset:
            base = PipelineConfig.preset(self.preset)
            return PipelineConfig(algorithm=base.algorithm, k=base.k,
                                  sc=self.sc if self.sc is not None else base.sc,
                                  pruning=self.pruning, seed=self.seed)
        if not self.algorithm:
            raise ParameterError("config needs an algorithm or a preset")
        return PipelineConfig(algorithm=Algorithm(self.algorithm.lower()), k=self.k,
                              sc=self.sc, pruning=self.pruning, seed=self.seed)


class NscrRowBody(BaseModel):
    ip_initial: str | None = None
    ip_updated: str | None = None
    mac: str | None = None
    changes: dict[str, str]
    vulnerable: bool | None = None

    def to_entry(self) -> NscrEntry:
        return NscrEntry(
            ip_initial=self.ip_initial,
            ip_updated=self.ip_updated,
            mac=self.mac,
            changes={
                PortKey.from_token(token): StateChangeLabel.from_token(label)
                for token, label in self.changes.items()
            },
            vulnerable=self.vulnerable,
        )


class CreateSessionBody(BaseModel):
    nscr: list[NscrRowBody] | None = None
    nscr_path: str | None = None
    config: ConfigBody


class VerdictBody(BaseModel):
    vulnerable: bool
    rank: int | None = None


class _SessionHolder:
    def __init__(self, session: TriageSession, ranking: list[RankedHost]):
        self.session = session
        self.ranking = ranking
        self.lock = threading.Lock()


def _host_payload(host: RankedHost) -> dict:
    return {
        "ip_initial": host.entry.ip_initial,
        "ip_updated": host.entry.ip_updated,
        "mac": host.entry.mac,
        "changes": {key.token: label.token
                    for key, label in sorted(host.entry.changed_ports().items())},
    }


def _ranking_payload(holder: _SessionHolder) -> list[dict]:
    rows = []
    for host in holder.ranking:
        row = _host_payload(host)
        row.update({
            "rank": host.rank,
            "anomaly_score": host.anomaly_score,
            "cluster": list(host.cluster) if host.cluster else None,
            "flagged": host.flagged,
            "vulnerable": host.entry.vulnerable,
        })
        rows.append(row)
    return rows


def create_app(nscr_dir: str = ".", session_dir: str | None = None,
               ui_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="portdrift triage API")
    origin = os.environ.get("PORTDRIFT_UI_ORIGIN", "*")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=[origin],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    sessions: dict[str, _SessionHolder] = {}
    registry_lock = threading.Lock()
    session_root = Path(session_dir) if session_dir else None
    if session_root:
        session_root.mkdir(parents=True, exist_ok=True)

    @app.exception_handler(RequestValidationError)
    def validation_handler(request: Request, exc: RequestValidationError):
        detail = [{"loc": list(err["loc"]), "msg": err["msg"]} for err in exc.errors()]
        return JSONResponse(status_code=400, content={"detail": detail})

    def _get(session_id: str) -> _SessionHolder:
        holder = sessions.get(session_id)
        if holder is None:
            raise HTTPException(status_code=404, detail="unknown session")
        return holder

    def _persist(session_id: str, holder: _SessionHolder) -> None:
        if session_root:
            holder.session.write_event_log(session_root / f"{session_id}.json")

    @app.post("/sessions")
    def create_session(body: CreateSessionBody):
        try:
            cfg = body.config.to_config()
            if body.nscr is not None:
                entries = [row.to_entry() for row in body.nscr]
            elif body.nscr_path:
                entries = read_nscr(Path(nscr_dir) / body.nscr_path)
            else:
                raise ParameterError("provide nscr rows or nscr_path")
            if not entries:
                raise ParameterError("the report has no rows")
            rows = prune(entries).kept if cfg.pruning else entries
            if not rows:
                raise ParameterError("no rows remain after pruning")
            ranking = prioritize(one_hot(rows), cfg)
        except (ParameterError, ScanDataError, FileNotFoundError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        session = TriageSession(ranking, sc=cfg.sc)
        session_id = uuid.uuid4().hex
        with registry_lock:
            sessions[session_id] = _SessionHolder(session, ranking)
        return {"session_id": session_id, "n_hosts": session.n_hosts,
                "mode": session.mode.value}

    @app.get("/sessions/{session_id}/next")
    def next_host(session_id: str):
        holder = _get(session_id)
        with holder.lock:
            session = holder.session
            if session.stopped:
                raise HTTPException(status_code=409, detail="session stopped")
            host = session.current()
            return {
                "rank": host.rank,
                "host": _host_payload(host),
                "anomaly_score": host.anomaly_score,
                "cluster": list(host.cluster) if host.cluster else None,
                "consecutive_fp": session.consecutive_fp,
                "sc": session.sc,
                "stopped": session.stopped,
                "n_hosts": session.n_hosts,
            }

    @app.post("/sessions/{session_id}/verdict")
    def post_verdict(session_id: str, body: VerdictBody):
        holder = _get(session_id)
        with holder.lock:
            session = holder.session
            if session.stopped:
                raise HTTPException(status_code=409, detail="session stopped")
            if body.rank is not None and body.rank != session.cursor:
                raise HTTPException(
                    status_code=409,
                    detail=f"verdict targets rank {body.rank} but cursor is at {session.cursor}",
                )
            try:
                session.record_verdict(body.vulnerable)
            except SessionClosedError as exc:
                raise HTTPException(status_code=409, detail=str(exc)) from exc
            _persist(session_id, holder)
            return {
                "consecutive_fp": session.consecutive_fp,
                "stopped": session.stopped,
                "inspected": session.inspected,
            }

    @app.get("/sessions/{session_id}/report")
    def report(session_id: str):
        holder = _get(session_id)
        with holder.lock:
            return holder.session.report().to_dict()

    @app.get("/sessions/{session_id}/ranking")
    def ranking(session_id: str):
        holder = _get(session_id)
        with holder.lock:
            return {"n_hosts": holder.session.n_hosts,
                    "ranking": _ranking_payload(holder)}

    @app.get("/sessions/{session_id}/log")
    def event_log(session_id: str):
        holder = _get(session_id)
        with holder.lock:
            return holder.session.to_event_log()

    if ui_dir and Path(ui_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
