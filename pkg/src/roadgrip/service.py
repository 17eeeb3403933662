"""HTTP face of the roadside unit.

Thin FastAPI wrapper over :class:`roadgrip.rsu.RsuStation`: vehicles POST
their binary reports, the station runs the regressor and keeps the consensus
windows, and clients read advisories and intervals as JSON. All state lives
in the station object; the app holds no state of its own, so one station can
back several app instances in tests.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException, Request, Response
from pydantic import BaseModel

from .rsu import (
    IngestError,
    RsuStation,
    WireError,
    decode_message,
    section_code,
)


class SectionInfo(BaseModel):
    name: str
    code: int
    rated_speed_kph: float
    length_m: float
    n_estimates: int


class IntervalOut(BaseModel):
    lower: float
    upper: float
    midpoint: float
    batch_size: int


class SectionIntervalOut(BaseModel):
    section: str
    n_estimates: int
    min_batch: int
    interval: IntervalOut | None


class AdvisoryOut(BaseModel):
    section: str
    rated_speed_kph: float
    advisory_speed_kph: float
    section_length_m: float
    map_samples: int
    wire_bytes: int


class ReportAck(BaseModel):
    section: str
    report_id: int
    estimate: float
    n_estimates: int


def _counts(station: RsuStation) -> dict[str, int]:
    state = station.state_dict()
    return {name: sec["n_estimates"] for name, sec in state["sections"].items()}


def create_app(station: RsuStation) -> FastAPI:
    app = FastAPI(title="roadgrip rsu", version="0.1.0")

    def require_section(name: str) -> None:
        if name not in station.section_names():
            raise HTTPException(status_code=404, detail=f"unknown section {name!r}")

    @app.get("/healthz")
    def healthz() -> dict:
        return {"status": "ok", "sections": list(station.section_names())}

    @app.get("/sections", response_model=list[SectionInfo])
    def sections() -> list[SectionInfo]:
        counts = _counts(station)
        out = []
        for name in station.section_names():
            section = station.section(name)
            out.append(SectionInfo(
                name=name, code=section_code(name),
                rated_speed_kph=section.rated_speed_kph,
                length_m=section.length_m,
                n_estimates=counts[name]))
        return out

    @app.get("/sections/{name}/advisory", response_model=AdvisoryOut)
    def advisory(name: str, wire: bool = False):
        require_section(name)
        msg = station.advisory(name)
        if wire:
            return Response(content=msg.encode(),
                            media_type="application/octet-stream")
        return AdvisoryOut(
            section=name,
            rated_speed_kph=msg.rated_speed_kph,
            advisory_speed_kph=msg.advisory_speed_kph,
            section_length_m=msg.section_length_m,
            map_samples=len(msg.map_samples),
            wire_bytes=len(msg.encode()))

    @app.post("/sections/{name}/reports", response_model=ReportAck, status_code=202)
    async def post_report(name: str, request: Request) -> ReportAck:
        require_section(name)
        raw = await request.body()
        try:
            msg = decode_message(raw)
        except WireError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        if getattr(msg, "section_code", None) != section_code(name):
            raise HTTPException(
                status_code=409,
                detail="report section code does not match the URL section")
        try:
            estimate = station.ingest(msg)
        except IngestError as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from exc
        return ReportAck(section=name, report_id=msg.report_id,
                         estimate=estimate, n_estimates=_counts(station)[name])

    @app.get("/sections/{name}/interval", response_model=SectionIntervalOut)
    def interval(name: str) -> SectionIntervalOut:
        require_section(name)
        got = station.consensus_for(name)
        out = None
        if got is not None:
            out = IntervalOut(lower=got.lower, upper=got.upper,
                              midpoint=got.midpoint, batch_size=got.batch_size)
        return SectionIntervalOut(section=name, n_estimates=_counts(station)[name],
                                  min_batch=station.min_batch, interval=out)

    @app.get("/state")
    def state() -> dict:
        return station.state_dict()

    return app
