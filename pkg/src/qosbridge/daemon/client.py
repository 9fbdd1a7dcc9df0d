"""Daemon clients: in-process for tests, Unix stream socket for real use.

The wire protocol is one JSON object per line in each direction:
``{"op": ..., "params": {...}}`` in, ``{"ok": true, "result": ...}`` or
``{"ok": false, "error": {"kind", "msg", "details"}}`` out.
"""
from __future__ import annotations

import json
import socket

from ..errors import DaemonUnreachable, QosBridgeError, error_from_wire
from ..qosmodel import QosRequirement
from .core import CheckReport, QosDaemon


class LocalDaemonClient:
    """Direct calls into an in-process daemon; mirrors the socket surface."""

    def __init__(self, daemon: QosDaemon):
        self.daemon = daemon

    def add(self, container_id: str, pod_ip: str, requirement: QosRequirement) -> dict:
        return self.daemon.handle_add(container_id, pod_ip, requirement).to_json()

    def delete(self, container_id: str) -> None:
        self.daemon.handle_del(container_id)

    def check(self, container_id: str) -> CheckReport:
        return self.daemon.handle_check(container_id)

    def snapshot(self) -> str:
        return self.daemon.snapshot_state()

    def bindings(self) -> list[dict]:
        return [b.to_json() for b in self.daemon.list_bindings()]


class SocketDaemonClient:
    """One short-lived connection per request against the daemon socket."""

    def __init__(self, socket_path: str, timeout: float = 10.0):
        self.socket_path = socket_path
        self.timeout = timeout

    def _call(self, op: str, params: dict):
        request = json.dumps({"op": op, "params": params}) + "\n"
        try:
            with socket.socket(socket.AF_UNIX, socket.SOCK_STREAM) as sock:
                sock.settimeout(self.timeout)
                sock.connect(self.socket_path)
                sock.sendall(request.encode())
                chunks = []
                while True:
                    chunk = sock.recv(65536)
                    if not chunk:
                        break
                    chunks.append(chunk)
                    if chunk.endswith(b"\n"):
                        break
        except OSError as exc:
            raise DaemonUnreachable(
                f"cannot reach daemon at {self.socket_path}: {exc}"
            ) from exc
        raw = b"".join(chunks)
        if not raw:
            raise DaemonUnreachable(f"daemon at {self.socket_path} closed the connection")
        try:
            response = json.loads(raw.decode())
        except ValueError as exc:
            raise QosBridgeError(f"undecodable daemon response: {raw[:200]!r}") from exc
        if response.get("ok"):
            return response.get("result")
        err = response.get("error") or {}
        raise error_from_wire(
            err.get("kind", "internal"), err.get("msg", "daemon error"), err.get("details", "")
        )

    def add(self, container_id: str, pod_ip: str, requirement: QosRequirement) -> dict:
        return self._call(
            "add",
            {
                "container_id": container_id,
                "pod_ip": pod_ip,
                "requirement": requirement.to_json(),
            },
        )

    def delete(self, container_id: str) -> None:
        self._call("del", {"container_id": container_id})

    def check(self, container_id: str) -> CheckReport:
        return CheckReport.from_json(self._call("check", {"container_id": container_id}))

    def snapshot(self) -> str:
        return self._call("snapshot", {})["text"]

    def bindings(self) -> list[dict]:
        return self._call("bindings", {})
