"""JSON API served next to the framed TCP endpoints of a running node."""

from __future__ import annotations

import statistics

from fastapi import FastAPI, HTTPException

from ..wire import ACK_ACCEPTED, ACK_DUPLICATE
from .schemas import (
    CertificateResponse,
    MetricsResponse,
    StatusResponse,
    SubmitRequest,
    SubmitResponse,
)

_STATUS = {ACK_ACCEPTED: "accepted", ACK_DUPLICATE: "duplicate"}


def create_app(node) -> FastAPI:
    """Build the API for a :class:`~logres.runtime.node.NodeRuntime`."""
    app = FastAPI(title="logres node", version="0.1.0")

    @app.get("/status", response_model=StatusResponse)
    async def status():
        return node.status()

    @app.get("/certificate", response_model=CertificateResponse)
    async def certificate():
        if node.certificate is None:
            raise HTTPException(404, "no certificate published yet")
        return CertificateResponse.from_certificate(node.certificate)

    @app.post("/entries", response_model=SubmitResponse)
    async def submit(req: SubmitRequest):
        code, reason = await node.submit_async(req.raw())
        if code not in _STATUS:
            raise HTTPException(422, reason)
        return SubmitResponse(status=_STATUS[code], reason=reason)

    @app.get("/metrics", response_model=MetricsResponse)
    async def metrics():
        m = node.metrics
        latencies = list(m.request_latencies_ms)
        return MetricsResponse(
            epochs_published=m.epochs_published,
            epochs_failed=m.epochs_failed,
            entries_logged=m.entries_logged,
            submissions=m.submissions,
            duplicates=m.duplicates,
            rejected=m.rejected,
            frames_in=m.frames_in,
            bytes_in=m.bytes_in,
            late_messages=m.late_messages,
            bad_frames=m.bad_frames,
            catch_ups=m.catch_ups,
            last_publish_delay_ms=m.last_publish_delay_ms,
            median_request_latency_ms=statistics.median(latencies) if latencies else None,
        )

    return app
