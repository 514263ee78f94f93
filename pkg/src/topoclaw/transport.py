"""Optional loopback TCP transport for the JSON envelope format.

A demonstration that the wire format is transport-independent: envelopes
travel as newline-delimited JSON over a localhost socket. The in-process
bus remains the reference path; nothing in the test-critical pipeline
depends on networking.
"""

from __future__ import annotations

import json
import socket
import threading

from .eventbus import Envelope, envelope_from_dict, envelope_to_dict


def send_envelope(host: str, port: int, env: Envelope) -> None:
    line = (json.dumps(envelope_to_dict(env), sort_keys=True) + "\n").encode("utf-8")
    with socket.create_connection((host, port), timeout=5) as sock:
        sock.sendall(line)


class EnvelopeReceiver:
    """Accepts envelopes on a loopback port until stopped."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0):
        self._server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._server.bind((host, port))
        self._server.listen(8)
        self.host, self.port = self._server.getsockname()
        self.received: list[Envelope] = []
        self._lock = threading.Lock()
        self._stopped = threading.Event()
        self._thread = threading.Thread(target=self._serve, daemon=True)
        self._thread.start()

    def _serve(self) -> None:
        while not self._stopped.is_set():
            try:
                self._server.settimeout(0.2)
                conn, _ = self._server.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            with conn:
                buf = b""
                conn.settimeout(5)
                try:
                    while not buf.endswith(b"\n"):
                        chunk = conn.recv(65536)
                        if not chunk:
                            break
                        buf += chunk
                except socket.timeout:
                    continue
            for line in buf.splitlines():
                if line.strip():
                    env = envelope_from_dict(json.loads(line.decode("utf-8")))
                    with self._lock:
                        self.received.append(env)

    def stop(self) -> None:
        self._stopped.set()
        self._thread.join(timeout=2)
        self._server.close()
