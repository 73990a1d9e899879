"""Request and response models of the JSON API."""

from __future__ import annotations

import base64

from pydantic import BaseModel, Field, field_validator

from ..log import LogCertificate, encode_certificate, mk_digest


class SubmitRequest(BaseModel):
    entry: str = Field(description="entry bytes, base64 encoded")

    @field_validator("entry")
    @classmethod
    def _valid_base64(cls, value: str) -> str:
        try:
            base64.b64decode(value, validate=True)
        except ValueError as exc:
            raise ValueError("entry must be base64") from exc
        return value

    def raw(self) -> bytes:
        return base64.b64decode(self.entry)


class SubmitResponse(BaseModel):
    status: str
    reason: str = ""


class SignatureModel(BaseModel):
    signer: int
    signature: str  # hex


class CertificateResponse(BaseModel):
    epoch: int
    digest: str
    prev_digest: str
    expiration: int
    entries: list[str]  # base64
    signatures: list[SignatureModel]
    encoded: str = Field(description="wire encoding of the certificate, hex")

    @classmethod
    def from_certificate(cls, cert: LogCertificate) -> "CertificateResponse":
        lg = cert.log
        return cls(
            epoch=lg.epoch,
            digest=mk_digest(lg).hex(),
            prev_digest=lg.prev_digest.hex(),
            expiration=lg.expiration,
            entries=[base64.b64encode(e).decode() for e in lg.entries],
            signatures=[SignatureModel(signer=s.signer, signature=s.data.hex()) for s in cert.sigs],
            encoded=encode_certificate(cert).hex(),
        )


class StatusResponse(BaseModel):
    node: int
    n: int
    f: int
    phase: str
    slot: int | None
    log_epoch: int
    pending_entries: int
    certified_epoch: int | None


class MetricsResponse(BaseModel):
    epochs_published: int
    epochs_failed: int
    entries_logged: int
    submissions: int
    duplicates: int
    rejected: int
    frames_in: int
    bytes_in: int
    late_messages: int
    bad_frames: int
    catch_ups: int
    last_publish_delay_ms: float | None
    median_request_latency_ms: float | None
