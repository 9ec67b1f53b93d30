"""Transport layer: frame streams over sockets plus a simulated serial link.

Two device-link flavors exist behind one interface:

  * StreamDeviceLink - a plain reliable byte stream (TCP or socketpair),
    frames are written unpadded and delivered as fast as the OS allows.
  * SerialSimDeviceLink - a chunked serial stand-in. Frames are padded to
    whole chunks and both directions are paced by a FIFO latency/bandwidth
    model, so a slow UART-class channel can be reproduced on loopback.

The FIFO model is exposed separately (FifoLinkModel) so tests and the
throughput predictor can compute delivery times without real sockets.
"""

from __future__ import annotations

import logging
import queue
import socket
import threading
import time
from typing import Callable

from .protocol import (
    Frame,
    ProtocolError,
    StreamDecoder,
    pad_for_chunked_link,
    padded_length,
)

log = logging.getLogger(__name__)

_RECV_SIZE = 65536


class FifoLinkModel:
    """Delivery-time model for one direction of a serial-style pipe.

    The channel serializes whole transmissions back to back at `bandwidth`
    bytes/second, then each arrives one latency later:

        finish = max(now, previous finish) + nbytes / bandwidth
        arrival = finish + latency

    Arrivals are strictly ordered because finish times are monotone.
    """

    def __init__(self, latency_s: float, bandwidth_bps: float, chunk_size: int = 0):
        if latency_s < 0 or bandwidth_bps <= 0:
            raise ValueError("latency must be >= 0 and bandwidth > 0")
        self.latency_s = latency_s
        self.bandwidth_bps = bandwidth_bps
        self.chunk_size = chunk_size
        self._busy_until = 0.0

    def wire_length(self, frame_len: int) -> int:
        if self.chunk_size:
            return padded_length(frame_len, self.chunk_size)
        return frame_len

    def delivery(self, frame_bytes: bytes, now: float) -> float:
        """Arrival time of a frame handed to the link at `now`."""
        return self.delivery_for_length(len(frame_bytes), now)

    def delivery_for_length(self, frame_len: int, now: float) -> float:
        wire = self.wire_length(frame_len)
        finish = max(now, self._busy_until) + wire / self.bandwidth_bps
        self._busy_until = finish
        return finish + self.latency_s

    def reset(self) -> None:
        self._busy_until = 0.0


def simulate_link_delivery(frame_bytes: bytes, link: FifoLinkModel, now: float) -> float:
    return link.delivery(frame_bytes, now)


def make_socketpair() -> tuple[socket.socket, socket.socket]:
    return socket.socketpair()


def connect_tcp(host: str, port: int, timeout: float = 10.0) -> socket.socket:
    sock = socket.create_connection((host, port), timeout=timeout)
    sock.settimeout(None)
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return sock


def listen_tcp(host: str = "127.0.0.1", port: int = 0) -> tuple[socket.socket, int]:
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    sock.bind((host, port))
    sock.listen(64)
    return sock, sock.getsockname()[1]


class FrameStream:
    """Blocking frame-at-a-time I/O over a connected socket.

    With a chunk size set, outbound frames are padded to whole chunks and
    inbound padding is stripped, mirroring a DMA-buffered serial endpoint.
    """

    def __init__(self, sock: socket.socket, max_payload: int | None = None,
                 chunk_size: int | None = None):
        self.sock = sock
        self.chunk_size = chunk_size or None
        self._decoder = StreamDecoder(max_payload, self.chunk_size)
        self._send_lock = threading.Lock()
        if sock.family == socket.AF_INET:
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def send(self, frame_bytes: bytes) -> None:
        if self.chunk_size:
            frame_bytes = pad_for_chunked_link(frame_bytes, self.chunk_size)
        with self._send_lock:
            self.sock.sendall(frame_bytes)

    def recv(self) -> Frame | None:
        """Next frame, or None on clean end of stream."""
        while True:
            frame = self._decoder.next_frame()
            if frame is not None:
                return frame
            try:
                data = self.sock.recv(_RECV_SIZE)
            except OSError:
                data = b""
            if not data:
                if self._decoder.pending():
                    raise ProtocolError(
                        f"stream closed mid-frame with {self._decoder.pending()} bytes pending"
                    )
                return None
            self._decoder.feed(data)

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


class DeviceLinkBase:
    """Proxy-side handle on the device channel.

    Outbound frames go through send_frame(); inbound frames are handed to
    the callback given to start() from the link's receiver thread. Exactly
    one writer and one reader per direction.
    """

    def __init__(self, sock: socket.socket, max_payload: int | None = None,
                 event_log: list | None = None):
        self.sock = sock
        self.max_payload = max_payload
        self.event_log = event_log
        self._on_frame: Callable[[Frame], None] | None = None
        self._on_close: Callable[[], None] | None = None
        self._closing = False
        self._epoch = time.monotonic()
        if sock.family == socket.AF_INET:
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def _log_event(self, direction: str, frame: Frame, wire_len: int) -> None:
        if self.event_log is not None:
            self.event_log.append({
                "t": round(time.monotonic() - self._epoch, 6),
                "dir": direction,
                "type": int(frame.msg_type),
                "processor_id": frame.processor_id,
                "seq": frame.seq,
                "wire_len": wire_len,
            })

    def start(self, on_frame: Callable[[Frame], None],
              on_close: Callable[[], None]) -> None:
        raise NotImplementedError

    def send_frame(self, frame: Frame, raw: bytes) -> None:
        raise NotImplementedError

    def close(self) -> None:
        raise NotImplementedError


class StreamDeviceLink(DeviceLinkBase):
    """Raw reliable stream to the device, no pacing, no padding."""

    def __init__(self, sock, max_payload=None, event_log=None):
        super().__init__(sock, max_payload, event_log)
        self._reader: threading.Thread | None = None

    def start(self, on_frame, on_close) -> None:
        self._on_frame = on_frame
        self._on_close = on_close
        self._reader = threading.Thread(target=self._read_loop, name="device-rx", daemon=True)
        self._reader.start()

    def _read_loop(self) -> None:
        decoder = StreamDecoder(self.max_payload)
        try:
            while True:
                frame = decoder.next_frame()
                if frame is not None:
                    self._log_event("rx", frame, 13 + len(frame.payload))
                    self._on_frame(frame)
                    continue
                data = self.sock.recv(_RECV_SIZE)
                if not data:
                    break
                decoder.feed(data)
        except (OSError, ProtocolError) as exc:
            if not self._closing:
                log.error("device link read failed: %s", exc)
        finally:
            if not self._closing:
                self._on_close()

    def send_frame(self, frame: Frame, raw: bytes) -> None:
        self._log_event("tx", frame, len(raw))
        self.sock.sendall(raw)

    def close(self) -> None:
        self._closing = True
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()
        if self._reader is not None:
            self._reader.join(timeout=5)


class SerialSimDeviceLink(DeviceLinkBase):
    """Chunked serial channel simulated on top of a reliable byte pipe.

    TX: frames are padded to whole chunks, scheduled through a FifoLinkModel,
    and written to the carrier at their modeled arrival time (serialization
    occupies the channel, latency is pipelined on top).

    RX: the device writes padded frames as soon as it produces them; this
    side reads them immediately, then holds each until its modeled arrival
    before handing it to the proxy. The two directions are independent, so
    feedback never blocks submissions (full duplex).
    """

    def __init__(self, sock, latency_s: float, bandwidth_bps: float, chunk_size: int,
                 max_payload=None, event_log=None):
        super().__init__(sock, max_payload, event_log)
        if chunk_size < 16:
            raise ValueError(f"chunk size must be >= 16, got {chunk_size}")
        self.chunk_size = chunk_size
        self._tx_model = FifoLinkModel(latency_s, bandwidth_bps, chunk_size)
        self._rx_model = FifoLinkModel(latency_s, bandwidth_bps, chunk_size)
        self._tx_queue: queue.SimpleQueue = queue.SimpleQueue()
        self._stop = threading.Event()
        self._tx_thread: threading.Thread | None = None
        self._rx_thread: threading.Thread | None = None
        self._tx_lock = threading.Lock()
        self.tx_queue_depth = 0
        self.max_tx_queue_depth = 0

    def start(self, on_frame, on_close) -> None:
        self._on_frame = on_frame
        self._on_close = on_close
        self._tx_thread = threading.Thread(target=self._tx_loop, name="serial-tx", daemon=True)
        self._rx_thread = threading.Thread(target=self._rx_loop, name="serial-rx", daemon=True)
        self._tx_thread.start()
        self._rx_thread.start()

    def send_frame(self, frame: Frame, raw: bytes) -> None:
        padded = pad_for_chunked_link(raw, self.chunk_size)
        with self._tx_lock:
            arrival = self._tx_model.delivery_for_length(len(raw), time.monotonic())
            self.tx_queue_depth += 1
            self.max_tx_queue_depth = max(self.max_tx_queue_depth, self.tx_queue_depth)
        self._log_event("tx", frame, len(padded))
        self._tx_queue.put((arrival, padded))

    def _tx_loop(self) -> None:
        while True:
            item = self._tx_queue.get()
            if item is None:
                return
            arrival, padded = item
            delay = arrival - time.monotonic()
            if delay > 0 and self._stop.wait(delay):
                pass  # closing: flush immediately
            try:
                self.sock.sendall(padded)
            except OSError:
                return
            finally:
                with self._tx_lock:
                    self.tx_queue_depth -= 1

    def _rx_loop(self) -> None:
        decoder = StreamDecoder(self.max_payload, self.chunk_size)
        try:
            while True:
                frame = decoder.next_frame()
                if frame is not None:
                    # The device wrote this as soon as it was ready; model the
                    # serial transfer by holding it until its arrival time.
                    frame_len = 13 + len(frame.payload)
                    arrival = self._rx_model.delivery_for_length(frame_len, time.monotonic())
                    delay = arrival - time.monotonic()
                    if delay > 0:
                        self._stop.wait(delay)
                    self._log_event("rx", frame, padded_length(frame_len, self.chunk_size))
                    self._on_frame(frame)
                    continue
                data = self.sock.recv(_RECV_SIZE)
                if not data:
                    break
                decoder.feed(data)
        except (OSError, ProtocolError) as exc:
            if not self._stop.is_set():
                log.error("serial link read failed: %s", exc)
        finally:
            if not self._stop.is_set():
                self._on_close()

    def close(self) -> None:
        self._stop.set()
        self._tx_queue.put(None)
        if self._tx_thread is not None:
            self._tx_thread.join(timeout=5)
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()
        if self._rx_thread is not None:
            self._rx_thread.join(timeout=5)
