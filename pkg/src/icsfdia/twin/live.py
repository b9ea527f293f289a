"""Socket endpoints that play one flow of a twin trace over real TCP."""

from __future__ import annotations

import socket
import threading
from typing import List, Optional, Tuple

from ..capture import Flow, FlowKey, Trace, classify
from ..proto import FrameError, Proto, frame_size


def flow_of(trace: Trace, plc_addr: str) -> Flow:
    for flow in classify(trace):
        if flow.key.plc.addr == plc_addr:
            return flow
    raise KeyError(f"no flow to {plc_addr} in trace")


def read_frame(sock: socket.socket, proto: Proto, buf: bytearray) -> Optional[bytes]:
    """Next complete frame from ``sock``, or None on EOF. Leftover bytes stay in ``buf``."""
    while True:
        size = frame_size(bytes(buf), proto)
        if size is not None and len(buf) >= size:
            raw = bytes(buf[:size])
            del buf[:size]
            return raw
        chunk = sock.recv(65536)
        if not chunk:
            return None
        buf.extend(chunk)


class PlcEmulator:
    """Answers each request with the next recorded response of the flow.

    ``sent`` records what actually left the PLC, the ground truth side of a
    relay experiment.
    """

    def __init__(self, flow: Flow, host: str = "127.0.0.1", port: int = 0):
        self.key: FlowKey = flow.key
        self.responses = [f.raw for f in flow.responses]
        self.sent: List[bytes] = []
        self.received: List[bytes] = []
        self._srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._srv.bind((host, port))
        self._srv.listen(4)
        self._srv.settimeout(0.2)
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._serve, daemon=True)

    @property
    def address(self) -> Tuple[str, int]:
        return self._srv.getsockname()[:2]

    def start(self) -> "PlcEmulator":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        self._thread.join(timeout=2.0)
        self._srv.close()

    def __enter__(self) -> "PlcEmulator":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    def _serve(self) -> None:
        while not self._stop.is_set():
            try:
                conn, _ = self._srv.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            with conn:
                buf = bytearray()
                try:
                    while len(self.sent) < len(self.responses):
                        req = read_frame(conn, self.key.proto, buf)
                        if req is None:
                            break
                        self.received.append(req)
                        reply = self.responses[len(self.sent)]
                        conn.sendall(reply)
                        self.sent.append(reply)
                except (OSError, FrameError):
                    pass


class HmiPoller:
    """Sends the flow's recorded requests one by one and logs each reply."""

    def __init__(self, flow: Flow, target: Tuple[str, int], timeout: float = 5.0):
        self.key = flow.key
        self.requests = [f.raw for f in flow.requests]
        self.target = target
        self.timeout = timeout
        self.received: List[bytes] = []

    def run(self, limit: Optional[int] = None) -> List[bytes]:
        with socket.create_connection(self.target, timeout=self.timeout) as sock:
            buf = bytearray()
            for raw in self.requests[:limit]:
                sock.sendall(raw)
                reply = read_frame(sock, self.key.proto, buf)
                if reply is None:
                    break
                self.received.append(reply)
        return self.received
