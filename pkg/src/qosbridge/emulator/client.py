"""Clients for the emulator: in-process and REST.

Both expose the same surface, so the daemon and the experiment harness never
care where the emulator lives. The HTTP client accepts any httpx-compatible
client object, which lets tests drive the real REST app without a socket.
"""
from __future__ import annotations

import numpy as np

from ..errors import EmulatorUnreachable, NotFound, QosBridgeError, error_from_wire
from .core import Classification, DeliveredPacket, EmulatorCore


class LocalEmulatorClient:
    """Direct calls into an in-process :class:`EmulatorCore`."""

    def __init__(self, core: EmulatorCore):
        self.core = core

    def healthz(self) -> bool:
        return True

    def create_radio_link(self) -> dict:
        return self.core.create_radio_link().to_json()

    def delete_radio_link(self, link_id, idempotent=False, cascade=False):
        self.core.delete_radio_link(link_id, idempotent=idempotent, cascade=cascade)

    def create_pdu_session(self, radio_link_id) -> dict:
        return self.core.create_pdu_session(radio_link_id).to_json()

    def delete_pdu_session(self, session_id, idempotent=False, cascade=False):
        self.core.delete_pdu_session(session_id, idempotent=idempotent, cascade=cascade)

    def create_qos_flow(
        self, session_id, five_qi, delay_ms, rate_kbps=None, qfi=None, averaging_window_ms=None
    ) -> dict:
        return self.core.create_qos_flow(
            session_id,
            five_qi,
            delay_ms,
            rate_kbps=rate_kbps,
            qfi=qfi,
            averaging_window_ms=averaging_window_ms,
        ).to_json()

    def delete_qos_flow(self, flow_id, idempotent=False, cascade=False):
        self.core.delete_qos_flow(flow_id, idempotent=idempotent, cascade=cascade)

    def list_qos_flows(self) -> list[dict]:
        return [f.to_json() for f in self.core.list_qos_flows()]

    def create_filter(self, mark, mask, session_id, qfi) -> dict:
        return self.core.create_filter(mark, mask, session_id, qfi).to_json()

    def delete_filter(self, filter_id, idempotent=False):
        self.core.delete_filter(filter_id, idempotent=idempotent)

    def list_filters(self) -> list[dict]:
        return [f.to_json() for f in self.core.list_filters()]

    def classify(self, mark) -> Classification:
        return self.core.classify(mark)

    def transmit(self, session_id, qfi, send_time_us, size_bytes) -> DeliveredPacket:
        return self.core.transmit(session_id, qfi, send_time_us, size_bytes)

    def deliver_batch(self, marks, send_us, sizes):
        return self.core.deliver_batch(marks, send_us, sizes)

    def dump_tree(self) -> str:
        return self.core.dump_tree()


def _raise_for_error(response):
    if 200 <= response.status_code < 300:
        return
    try:
        body = response.json()
    except ValueError:
        body = {}
    err = body.get("error")
    if isinstance(err, dict) and "kind" in err:
        raise error_from_wire(err["kind"], err.get("msg", ""), err.get("details", ""))
    raise QosBridgeError(f"emulator returned HTTP {response.status_code}: {response.text[:200]}")


class HttpEmulatorClient:
    """REST client; mirrors :class:`LocalEmulatorClient` member for member."""

    def __init__(self, base_url: str, client=None):
        if client is None:
            import httpx

            client = httpx.Client(base_url=base_url, timeout=10.0)
            self._base = ""
        else:
            # Caller-supplied client (e.g., a test client already bound to the app).
            self._base = base_url.rstrip("/")
        self._client = client

    def _url(self, path: str) -> str:
        return f"{self._base}{path}"

    def _request(self, method: str, path: str, **kwargs):
        try:
            response = self._client.request(method, self._url(path), **kwargs)
        except Exception as exc:  # connection refused, DNS, timeouts
            if isinstance(exc, QosBridgeError):
                raise
            raise EmulatorUnreachable(f"emulator request {method} {path} failed: {exc}") from exc
        _raise_for_error(response)
        return response

    def healthz(self) -> bool:
        return self._request("GET", "/healthz").json().get("ok", False)

    def create_radio_link(self) -> dict:
        return self._request("POST", "/radio-links", json={}).json()

    def delete_radio_link(self, link_id, idempotent=False, cascade=False):
        self._request(
            "DELETE",
            f"/radio-links/{link_id}",
            params={"idempotent": idempotent, "cascade": cascade},
        )

    def create_pdu_session(self, radio_link_id) -> dict:
        return self._request(
            "POST", "/pdu-sessions", json={"radio_link_id": radio_link_id}
        ).json()

    def delete_pdu_session(self, session_id, idempotent=False, cascade=False):
        self._request(
            "DELETE",
            f"/pdu-sessions/{session_id}",
            params={"idempotent": idempotent, "cascade": cascade},
        )

    def create_qos_flow(
        self, session_id, five_qi, delay_ms, rate_kbps=None, qfi=None, averaging_window_ms=None
    ) -> dict:
        body = {
            "session_id": session_id,
            "five_qi": five_qi,
            "delay_ms": delay_ms,
            "rate_kbps": rate_kbps,
            "qfi": qfi,
            "averaging_window_ms": averaging_window_ms,
        }
        return self._request("POST", "/qos-flows", json=body).json()

    def delete_qos_flow(self, flow_id, idempotent=False, cascade=False):
        self._request(
            "DELETE",
            f"/qos-flows/{flow_id}",
            params={"idempotent": idempotent, "cascade": cascade},
        )

    def list_qos_flows(self) -> list[dict]:
        return self._request("GET", "/qos-flows").json()

    def create_filter(self, mark, mask, session_id, qfi) -> dict:
        body = {"mark": mark, "mask": mask, "session_id": session_id, "qfi": qfi}
        return self._request("POST", "/filters", json=body).json()

    def delete_filter(self, filter_id, idempotent=False):
        self._request("DELETE", f"/filters/{filter_id}", params={"idempotent": idempotent})

    def list_filters(self) -> list[dict]:
        return self._request("GET", "/filters").json()

    def classify(self, mark) -> Classification:
        body = self._request("POST", "/classify", json={"mark": mark}).json()
        return Classification(body["session_id"], body["qfi"], body["class_handle"])

    def transmit(self, session_id, qfi, send_time_us, size_bytes) -> DeliveredPacket:
        body = {
            "session_id": session_id,
            "qfi": qfi,
            "send_time_us": send_time_us,
            "size_bytes": size_bytes,
        }
        data = self._request("POST", "/transmit", json=body).json()
        return DeliveredPacket(
            data["send_time_us"],
            data["arrival_time_us"],
            data["session_id"],
            data["qfi"],
            data["class_handle"],
        )

    def deliver_batch(self, marks, send_us, sizes):
        body = {
            "packets": [
                {"mark": int(m), "send_time_us": int(t), "size_bytes": int(s)}
                for m, t, s in zip(marks, send_us, sizes)
            ]
        }
        rows = self._request("POST", "/deliver", json=body).json()["packets"]
        arrivals = np.array([r["arrival_time_us"] for r in rows], dtype=np.int64)
        session_ids = [r["session_id"] for r in rows]
        qfis = [r["qfi"] for r in rows]
        handles = [r["class_handle"] for r in rows]
        return arrivals, session_ids, qfis, handles

    def dump_tree(self) -> str:
        return self._request("GET", "/tree").text


def find_flow(client, session_id: str, qfi: int) -> dict:
    """Locate a flow record by its (session, qfi) pair via the list API."""
    for flow in client.list_qos_flows():
        if flow["session_id"] == session_id and flow["qfi"] == qfi:
            return flow
    raise NotFound(f"no QoS flow at session {session_id} qfi {qfi}")


def find_filter(client, mark: int, mask: int) -> dict:
    """Locate a filter record by its (mark, mask) pair via the list API."""
    for filt in client.list_filters():
        if filt["mark"] == mark and filt["mask"] == mask:
            return filt
    raise NotFound(f"no filter for {mark:#x}/{mask:#x}")
