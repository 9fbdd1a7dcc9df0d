"""REST surface over an :class:`EmulatorCore`.

Resource lifecycle lives on /radio-links, /pdu-sessions, /qos-flows, and
/filters; GET /tree returns the canonical dump. /classify, /transmit, and
/deliver are the validation data path and not part of any 3GPP surface.
"""
from __future__ import annotations

import argparse
import logging

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, PlainTextResponse
from pydantic import BaseModel

from ..errors import Conflict, DependencyViolation, NotFound, QosBridgeError
from .core import EmulatorCore

log = logging.getLogger(__name__)

_STATUS_BY_KIND = {
    NotFound.kind: 404,
    Conflict.kind: 409,
    DependencyViolation.kind: 409,
}


class PduSessionBody(BaseModel):
    radio_link_id: str


class QosFlowBody(BaseModel):
    session_id: str
    five_qi: int
    delay_ms: float
    rate_kbps: float | None = None
    qfi: int | None = None
    averaging_window_ms: int | None = None


class FilterBody(BaseModel):
    mark: int
    mask: int
    session_id: str
    qfi: int


class ClassifyBody(BaseModel):
    mark: int


class TransmitBody(BaseModel):
    session_id: str | None = None
    qfi: int | None = None
    send_time_us: int
    size_bytes: int


class PacketBody(BaseModel):
    mark: int
    send_time_us: int
    size_bytes: int


class DeliverBody(BaseModel):
    packets: list[PacketBody]


def create_app(core: EmulatorCore | None = None) -> FastAPI:
    core = core or EmulatorCore()
    app = FastAPI(title="qosbridge-emulator", docs_url=None, redoc_url=None)
    app.state.core = core

    @app.exception_handler(QosBridgeError)
    async def _qos_error(request: Request, exc: QosBridgeError):
        status = _STATUS_BY_KIND.get(exc.kind, 400)
        return JSONResponse(
            status_code=status,
            content={"error": {"kind": exc.kind, "msg": exc.msg, "details": exc.details}},
        )

    @app.exception_handler(ValueError)
    async def _value_error(request: Request, exc: ValueError):
        return JSONResponse(
            status_code=400,
            content={"error": {"kind": "invalid-argument", "msg": str(exc), "details": ""}},
        )

    @app.get("/healthz")
    def healthz():
        return {"ok": True}

    @app.post("/radio-links", status_code=201)
    def create_radio_link():
        return core.create_radio_link().to_json()

    @app.get("/radio-links")
    def list_radio_links():
        return [l.to_json() for l in core.list_radio_links()]

    @app.delete("/radio-links/{link_id}")
    def delete_radio_link(link_id: str, idempotent: bool = False, cascade: bool = False):
        core.delete_radio_link(link_id, idempotent=idempotent, cascade=cascade)
        return {"deleted": link_id}

    @app.post("/pdu-sessions", status_code=201)
    def create_pdu_session(body: PduSessionBody):
        return core.create_pdu_session(body.radio_link_id).to_json()

    @app.get("/pdu-sessions")
    def list_pdu_sessions():
        return [s.to_json() for s in core.list_pdu_sessions()]

    @app.delete("/pdu-sessions/{session_id}")
    def delete_pdu_session(session_id: str, idempotent: bool = False, cascade: bool = False):
        core.delete_pdu_session(session_id, idempotent=idempotent, cascade=cascade)
        return {"deleted": session_id}

    @app.post("/qos-flows", status_code=201)
    def create_qos_flow(body: QosFlowBody):
        return core.create_qos_flow(
            body.session_id,
            body.five_qi,
            body.delay_ms,
            rate_kbps=body.rate_kbps,
            qfi=body.qfi,
            averaging_window_ms=body.averaging_window_ms,
        ).to_json()

    @app.get("/qos-flows")
    def list_qos_flows():
        return [f.to_json() for f in core.list_qos_flows()]

    @app.delete("/qos-flows/{flow_id}")
    def delete_qos_flow(flow_id: str, idempotent: bool = False, cascade: bool = False):
        core.delete_qos_flow(flow_id, idempotent=idempotent, cascade=cascade)
        return {"deleted": flow_id}

    @app.post("/filters", status_code=201)
    def create_filter(body: FilterBody):
        return core.create_filter(body.mark, body.mask, body.session_id, body.qfi).to_json()

    @app.get("/filters")
    def list_filters():
        return [f.to_json() for f in core.list_filters()]

    @app.delete("/filters/{filter_id}")
    def delete_filter(filter_id: str, idempotent: bool = False):
        core.delete_filter(filter_id, idempotent=idempotent)
        return {"deleted": filter_id}

    @app.post("/classify")
    def classify(body: ClassifyBody):
        return core.classify(body.mark).to_json()

    @app.post("/transmit")
    def transmit(body: TransmitBody):
        return core.transmit(
            body.session_id, body.qfi, body.send_time_us, body.size_bytes
        ).to_json()

    @app.post("/deliver")
    def deliver(body: DeliverBody):
        marks = [p.mark for p in body.packets]
        sends = [p.send_time_us for p in body.packets]
        sizes = [p.size_bytes for p in body.packets]
        arrivals, session_ids, qfis, handles = core.deliver_batch(marks, sends, sizes)
        return {
            "packets": [
                {
                    "send_time_us": sends[i],
                    "arrival_time_us": int(arrivals[i]),
                    "session_id": session_ids[i],
                    "qfi": qfis[i],
                    "class_handle": handles[i],
                }
                for i in range(len(sends))
            ]
        }

    @app.get("/tree", response_class=PlainTextResponse)
    def tree():
        return core.dump_tree()

    return app


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="qos-emulator", description="Run the 5G QoS emulator.")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8765)
    parser.add_argument(
        "--wall-clock",
        action="store_true",
        help="sleep real time for virtual delays (demo mode)",
    )
    args = parser.parse_args(argv)

    import uvicorn

    app = create_app(EmulatorCore(wall_clock=args.wall_clock))
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
