"""The input proxy: many producer sessions, one device link.

A single coordinating loop owns all shared state (sessions, routing table,
counters), so every operation on it is trivially linearizable. Producers
connect on a host-facing TCP listener, get a processor id and the CONFIG
broadcast, and from then on their SUBMIT frames are forwarded to the
device in arrival order; FEEDBACK and ERROR frames coming back are routed
to the originating session by processor id. Frames whose session died
mid-flight are counted as orphaned, never redelivered.
"""

from __future__ import annotations

import logging
import os
import selectors
import socket
import threading
from collections import deque
from dataclasses import dataclass

from .links import DeviceLinkBase
from .protocol import (
    ConfigMessage,
    ErrorReason,
    Frame,
    MsgType,
    ProtocolError,
    StreamDecoder,
    encode,
    error_frame,
)

log = logging.getLogger(__name__)


@dataclass
class ProxyCounters:
    sessions_accepted: int = 0
    sessions_rejected: int = 0
    submits_forwarded: int = 0
    feedbacks_routed: int = 0
    errors_routed: int = 0
    orphaned: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


class _Session:
    __slots__ = ("sock", "processor_id", "decoder")

    def __init__(self, sock: socket.socket, processor_id: int):
        self.sock = sock
        self.processor_id = processor_id
        # Size policy is enforced after decode so an oversize frame draws
        # an ERROR reply instead of poisoning the stream.
        self.decoder = StreamDecoder(max_payload=None)


class Proxy:
    """Multiplexes producer sessions onto a single device link."""

    def __init__(self, listener: socket.socket, device_link: DeviceLinkBase,
                 config: ConfigMessage, max_processors: int):
        self.listener = listener
        self.device_link = device_link
        self.config = config.validate()
        self.max_processors = max_processors
        self.counters = ProxyCounters()
        self.device_lost = False
        self.sessions: dict[int, _Session] = {}
        self._selector = selectors.DefaultSelector()
        self._inbox: deque[Frame] = deque()
        self._inbox_lock = threading.Lock()
        self._wake_r, self._wake_w = os.pipe()
        os.set_blocking(self._wake_r, False)
        self._stop = False
        self._thread: threading.Thread | None = None
        self._config_raw = encode(Frame(MsgType.CONFIG, 0, 0, self.config.pack()))

    # -- lifecycle -------------------------------------------------------------

    def start(self) -> None:
        self.device_link.start(self._on_device_frame, self._on_device_close)
        # The device allocates its coverage structures off this broadcast.
        self.device_link.send_frame(Frame(MsgType.CONFIG, 0, 0, self.config.pack()),
                                    self._config_raw)
        self._thread = threading.Thread(target=self._run, name="proxy", daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._stop = True
        self._wake()
        if self._thread is not None:
            self._thread.join(timeout=10)
        self.device_link.close()

    def _wake(self) -> None:
        try:
            os.write(self._wake_w, b"\x01")
        except OSError:
            pass

    # -- device side (called from link receiver threads) ------------------------

    def _on_device_frame(self, frame: Frame) -> None:
        with self._inbox_lock:
            self._inbox.append(frame)
        self._wake()

    def _on_device_close(self) -> None:
        log.error("device link closed unexpectedly: treating as device loss")
        self.device_lost = True
        self._stop = True
        self._wake()

    # -- the coordinating loop ---------------------------------------------------

    def _run(self) -> None:
        self._selector.register(self.listener, selectors.EVENT_READ, "accept")
        self._selector.register(self._wake_r, selectors.EVENT_READ, "wake")
        try:
            while not self._stop:
                for key, _ in self._selector.select(timeout=0.5):
                    what = key.data
                    if what == "accept":
                        self._accept()
                    elif what == "wake":
                        self._drain_wake()
                        self._drain_inbox()
                    else:
                        self._service_session(what)
                self._drain_inbox()
        finally:
            self._teardown()

    def _teardown(self) -> None:
        self._drain_inbox()
        for session in list(self.sessions.values()):
            self._close_session(session)
        try:
            self._selector.unregister(self.listener)
        except (KeyError, ValueError):
            pass
        self.listener.close()
        self._selector.close()
        os.close(self._wake_r)
        os.close(self._wake_w)

    def _drain_wake(self) -> None:
        try:
            while os.read(self._wake_r, 4096):
                pass
        except BlockingIOError:
            pass

    # -- sessions ----------------------------------------------------------------

    def _accept(self) -> None:
        try:
            sock, addr = self.listener.accept()
        except OSError as exc:
            log.warning("accept failed: %s", exc)
            return
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        pid = next((i for i in range(1, self.max_processors + 1)
                    if i not in self.sessions), None)
        if pid is None:
            self.counters.sessions_rejected += 1
            try:
                sock.sendall(error_frame(0, 0, ErrorReason.CAPACITY))
            except OSError:
                pass
            sock.close()
            log.warning("rejected session from %s: at capacity (%d)",
                        addr, self.max_processors)
            return
        session = _Session(sock, pid)
        self.sessions[pid] = session
        self._selector.register(sock, selectors.EVENT_READ, session)
        self.counters.sessions_accepted += 1
        # CONFIG first, before any other traffic; the header carries the
        # assigned processor id.
        self._send_to_session(session, encode(Frame(MsgType.CONFIG, pid, 0,
                                                    self.config.pack())))

    def _close_session(self, session: _Session) -> None:
        if self.sessions.get(session.processor_id) is not session:
            return
        del self.sessions[session.processor_id]
        try:
            self._selector.unregister(session.sock)
        except (KeyError, ValueError):
            pass
        session.sock.close()

    def _send_to_session(self, session: _Session, raw: bytes) -> bool:
        try:
            session.sock.sendall(raw)
            return True
        except OSError as exc:
            log.warning("session %d send failed: %s", session.processor_id, exc)
            self._close_session(session)
            return False

    def _service_session(self, session: _Session) -> None:
        try:
            data = session.sock.recv(65536)
        except OSError:
            data = b""
        if not data:
            self._close_session(session)
            return
        session.decoder.feed(data)
        try:
            while (frame := session.decoder.next_frame()) is not None:
                self._handle_session_frame(session, frame)
                if self.sessions.get(session.processor_id) is not session:
                    return
        except ProtocolError as exc:
            log.warning("session %d stream fatal: %s", session.processor_id, exc)
            self._close_session(session)

    def _handle_session_frame(self, session: _Session, frame: Frame) -> None:
        if frame.msg_type != MsgType.SUBMIT:
            self._send_to_session(session, error_frame(
                session.processor_id, frame.seq, ErrorReason.PROTOCOL_VIOLATION))
            self._close_session(session)
            return
        if frame.processor_id != session.processor_id:
            log.warning("session %d sent frame claiming id %d",
                        session.processor_id, frame.processor_id)
            self._send_to_session(session, error_frame(
                session.processor_id, frame.seq, ErrorReason.PROTOCOL_VIOLATION))
            self._close_session(session)
            return
        if len(frame.payload) > self.config.max_payload:
            # Policy bound, not stream corruption: the session survives.
            self._send_to_session(session, error_frame(
                session.processor_id, frame.seq, ErrorReason.OVERSIZE_PAYLOAD))
            return
        self.device_link.send_frame(frame, encode(frame))
        self.counters.submits_forwarded += 1

    # -- feedback routing ----------------------------------------------------------

    def _drain_inbox(self) -> None:
        while True:
            with self._inbox_lock:
                if not self._inbox:
                    return
                frame = self._inbox.popleft()
            self._route(frame)

    def _route(self, frame: Frame) -> None:
        if frame.msg_type not in (MsgType.FEEDBACK, MsgType.ERROR):
            log.warning("unexpected %s frame from device", frame.msg_type.name)
            return
        session = self.sessions.get(frame.processor_id)
        if session is None:
            self.counters.orphaned += 1
            return
        if self._send_to_session(session, encode(frame)):
            if frame.msg_type == MsgType.FEEDBACK:
                self.counters.feedbacks_routed += 1
            else:
                self.counters.errors_routed += 1
        else:
            self.counters.orphaned += 1
