"""Unix-socket front end for the daemon; one JSON line per request/response."""
from __future__ import annotations

import argparse
import json
import logging
import os
import socketserver
import threading

from ..errors import QosBridgeError
from ..qosmodel import QosRequirement
from .config import load_config
from .core import QosDaemon

log = logging.getLogger(__name__)


def _dispatch(daemon: QosDaemon, op: str, params: dict):
    if op == "add":
        requirement = QosRequirement.from_json(params.get("requirement") or {})
        return daemon.handle_add(
            params.get("container_id", ""), params.get("pod_ip", ""), requirement
        ).to_json()
    if op == "del":
        daemon.handle_del(params.get("container_id", ""))
        return None
    if op == "check":
        return daemon.handle_check(params.get("container_id", "")).to_json()
    if op == "snapshot":
        return {"text": daemon.snapshot_state()}
    if op == "bindings":
        return [b.to_json() for b in daemon.list_bindings()]
    raise QosBridgeError(f"unknown op {op!r}")


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        raw = self.rfile.readline(1 << 20)
        try:
            request = json.loads(raw.decode())
            if not isinstance(request, dict):
                raise ValueError("request must be a JSON object")
            result = _dispatch(
                self.server.daemon, request.get("op", ""), request.get("params") or {}
            )
            payload = {"ok": True, "result": result}
        except QosBridgeError as exc:
            payload = {
                "ok": False,
                "error": {"kind": exc.kind, "msg": exc.msg, "details": exc.details},
            }
        except Exception as exc:
            log.exception("request failed")
            payload = {"ok": False, "error": {"kind": "internal", "msg": str(exc), "details": ""}}
        self.wfile.write(json.dumps(payload).encode() + b"\n")


class DaemonServer(socketserver.ThreadingMixIn, socketserver.UnixStreamServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, socket_path: str, daemon: QosDaemon):
        if os.path.exists(socket_path):
            os.unlink(socket_path)
        os.makedirs(os.path.dirname(socket_path) or ".", exist_ok=True)
        super().__init__(socket_path, _Handler)
        self.daemon = daemon
        self.socket_path = socket_path

    def serve_in_thread(self) -> threading.Thread:
        thread = threading.Thread(target=self.serve_forever, daemon=True)
        thread.start()
        return thread

    def stop(self) -> None:
        self.shutdown()
        self.server_close()
        if os.path.exists(self.socket_path):
            os.unlink(self.socket_path)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="qos-daemon", description="Run the QoS daemon.")
    parser.add_argument("--config", help="YAML config file")
    parser.add_argument("--socket", help="override the listening socket path")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO)

    config = load_config(args.config)
    if args.socket:
        config.socket_path = args.socket
    daemon = QosDaemon(config)
    server = DaemonServer(config.socket_path, daemon)
    log.info("listening on %s", config.socket_path)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
