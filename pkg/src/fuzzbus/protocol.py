"""Bit-exact wire protocol between producers, proxy, and executor.

Every message is one frame: a fixed 13-byte header followed by a payload.
All multi-byte fields are little-endian.

    offset  size  field
    0       1     magic          0xEF
    1       1     version        0x01
    2       1     msg_type       CONFIG=0x00 SUBMIT=0x01 FEEDBACK=0x02 ERROR=0x7F
    3       2     processor_id   u16
    5       4     seq            u32
    9       4     payload_len    u32

Payloads:
    CONFIG    map_size u32, max_payload u32, checksum_enabled u8, map_mode u8
    SUBMIT    the test-case bytes (length <= max_payload)
    FEEDBACK  fault u8, novelty u8, flags u8 (bit0 = checksum_valid),
              reserved u8 = 0, checksum u32  -- always 8 bytes, so a
              FEEDBACK frame is exactly 21 bytes before padding
    ERROR     one reason-code byte

On chunked links every frame is zero-padded up to a multiple of the chunk
size; a frame may span several chunks but never shares one with the next
frame. See docs/WIRE_PROTOCOL.md for the standalone reference.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

MAGIC = 0xEF
VERSION = 0x01
HEADER_LEN = 13
FEEDBACK_PAYLOAD_LEN = 8
CONFIG_PAYLOAD_LEN = 10

_HEADER = struct.Struct("<BBBHII")
_CONFIG = struct.Struct("<IIBB")
_FEEDBACK = struct.Struct("<BBBBI")

FLAG_CHECKSUM_VALID = 0x01


class MsgType(enum.IntEnum):
    CONFIG = 0x00
    SUBMIT = 0x01
    FEEDBACK = 0x02
    ERROR = 0x7F


class Fault(enum.IntEnum):
    OK = 0
    CRASH = 1
    TIMEOUT = 2


class ErrorReason(enum.IntEnum):
    """Reason codes carried as the 1-byte payload of ERROR frames."""

    UNCONFIGURED = 0x01
    UNKNOWN_PROCESSOR = 0x02
    OVERSIZE_PAYLOAD = 0x03
    CAPACITY = 0x04
    PROTOCOL_VIOLATION = 0x05


class ProtocolError(Exception):
    """Fatal framing error; the byte stream can no longer be trusted."""


class FrameTooLarge(ProtocolError):
    pass


class NeedMoreData(Exception):
    """Not an error: the buffer holds only a frame prefix. Retry with more."""


@dataclass
class Frame:
    msg_type: MsgType
    processor_id: int
    seq: int
    payload: bytes = b""


@dataclass
class ConfigMessage:
    """Campaign-wide settings broadcast before any other traffic.

    map_mode 0 keeps one cumulative map per producer, 1 shares a single
    map across all of them.
    """

    map_size: int
    max_payload: int
    checksum_enabled: bool = True
    map_mode: int = 0

    def validate(self) -> "ConfigMessage":
        if self.map_size <= 0 or (self.map_size & (self.map_size - 1)) != 0:
            raise ProtocolError(f"map_size must be a power of two, got {self.map_size}")
        if self.max_payload < 1:
            raise ProtocolError(f"max_payload must be >= 1, got {self.max_payload}")
        if self.map_mode not in (0, 1):
            raise ProtocolError(f"map_mode must be 0 or 1, got {self.map_mode}")
        return self

    def pack(self) -> bytes:
        self.validate()
        return _CONFIG.pack(
            self.map_size, self.max_payload, int(self.checksum_enabled), self.map_mode
        )

    @classmethod
    def unpack(cls, payload: bytes) -> "ConfigMessage":
        if len(payload) != CONFIG_PAYLOAD_LEN:
            raise ProtocolError(f"CONFIG payload must be {CONFIG_PAYLOAD_LEN} bytes")
        map_size, max_payload, checksum_enabled, map_mode = _CONFIG.unpack(payload)
        if checksum_enabled not in (0, 1):
            raise ProtocolError(f"bad checksum_enabled byte {checksum_enabled:#x}")
        return cls(map_size, max_payload, bool(checksum_enabled), map_mode).validate()


@dataclass
class FeedbackRecord:
    """The compact per-execution result: everything the producer learns."""

    fault: Fault
    novelty: int
    checksum_valid: bool = False
    checksum: int = 0

    def pack(self) -> bytes:
        if self.novelty not in (0, 1, 2):
            raise ProtocolError(f"novelty must be 0..2, got {self.novelty}")
        flags = FLAG_CHECKSUM_VALID if self.checksum_valid else 0
        return _FEEDBACK.pack(int(self.fault), self.novelty, flags, 0, self.checksum)

    @classmethod
    def unpack(cls, payload: bytes) -> "FeedbackRecord":
        if len(payload) != FEEDBACK_PAYLOAD_LEN:
            raise ProtocolError(f"FEEDBACK payload must be {FEEDBACK_PAYLOAD_LEN} bytes")
        fault, novelty, flags, reserved, csum = _FEEDBACK.unpack(payload)
        if fault not in (0, 1, 2):
            raise ProtocolError(f"bad fault code {fault}")
        if novelty not in (0, 1, 2):
            raise ProtocolError(f"bad novelty level {novelty}")
        if reserved != 0:
            raise ProtocolError(f"reserved byte must be zero, got {reserved:#x}")
        return cls(Fault(fault), novelty, bool(flags & FLAG_CHECKSUM_VALID), csum)


def encode(frame: Frame, max_payload: int | None = None) -> bytes:
    """Serialize a frame. SUBMIT payloads are checked against max_payload."""
    n = len(frame.payload)
    if frame.msg_type == MsgType.SUBMIT and max_payload is not None and n > max_payload:
        raise FrameTooLarge(f"payload of {n} bytes exceeds max_payload {max_payload}")
    if not 0 <= frame.processor_id <= 0xFFFF:
        raise ProtocolError(f"processor_id out of range: {frame.processor_id}")
    if not 0 <= frame.seq <= 0xFFFFFFFF:
        raise ProtocolError(f"seq out of range: {frame.seq}")
    header = _HEADER.pack(
        MAGIC, VERSION, int(frame.msg_type), frame.processor_id, frame.seq, n
    )
    return header + frame.payload


def decode(buf: bytes | bytearray | memoryview, max_payload: int | None = None) -> tuple[Frame, int]:
    """Parse one frame from the start of `buf`.

    Returns (frame, bytes_consumed); trailing bytes are left untouched so
    chunk padding and back-to-back frames survive. Raises NeedMoreData for
    a truncated prefix, ProtocolError for anything unrecoverable.
    """
    if len(buf) < HEADER_LEN:
        raise NeedMoreData(f"have {len(buf)} bytes, header needs {HEADER_LEN}")
    magic, version, msg_type, processor_id, seq, payload_len = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {magic:#04x}")
    if version != VERSION:
        raise ProtocolError(f"unsupported version {version:#04x}")
    try:
        mtype = MsgType(msg_type)
    except ValueError:
        raise ProtocolError(f"unknown msg_type {msg_type:#04x}") from None
    if mtype == MsgType.SUBMIT and max_payload is not None and payload_len > max_payload:
        raise FrameTooLarge(f"declared payload {payload_len} exceeds max_payload {max_payload}")
    total = HEADER_LEN + payload_len
    if len(buf) < total:
        raise NeedMoreData(f"have {len(buf)} bytes, frame needs {total}")
    payload = bytes(buf[HEADER_LEN:total])
    return Frame(mtype, processor_id, seq, payload), total


def pad_for_chunked_link(frame_bytes: bytes, chunk_size: int) -> bytes:
    """Zero-pad a frame up to the next multiple of the chunk size."""
    if chunk_size < 16:
        raise ValueError(f"chunk size must be >= 16, got {chunk_size}")
    remainder = len(frame_bytes) % chunk_size
    if remainder == 0:
        return frame_bytes
    return frame_bytes + b"\x00" * (chunk_size - remainder)


def padded_length(frame_len: int, chunk_size: int) -> int:
    return -(-frame_len // chunk_size) * chunk_size


def strip_padding(chunked: bytes, chunk_size: int) -> bytes:
    """Inverse of pad_for_chunked_link: recover the frame via payload_len."""
    frame, consumed = decode(chunked)
    if len(chunked) != padded_length(consumed, chunk_size):
        raise ProtocolError(
            f"chunked buffer is {len(chunked)} bytes, expected "
            f"{padded_length(consumed, chunk_size)} for a {consumed}-byte frame"
        )
    if any(chunked[consumed:]):
        raise ProtocolError("nonzero padding bytes after frame")
    return chunked[:consumed]


class StreamDecoder:
    """Incremental frame parser for one byte stream.

    Feed arbitrary slices of the stream and pull complete frames out. With
    a chunk size set, the padding after each frame (up to the next chunk
    boundary) is consumed and discarded, matching the chunked-link rule
    that frames start on chunk boundaries.
    """

    def __init__(self, max_payload: int | None = None, chunk_size: int | None = None):
        if chunk_size is not None and chunk_size < 16:
            raise ValueError(f"chunk size must be >= 16, got {chunk_size}")
        self.max_payload = max_payload
        self.chunk_size = chunk_size
        self._buf = bytearray()

    def feed(self, data: bytes) -> None:
        self._buf.extend(data)

    def next_frame(self) -> Frame | None:
        """Return the next complete frame, or None until more bytes arrive."""
        try:
            frame, consumed = decode(self._buf, self.max_payload)
        except NeedMoreData:
            return None
        if self.chunk_size:
            consumed = padded_length(consumed, self.chunk_size)
            if len(self._buf) < consumed:
                return None
        del self._buf[:consumed]
        return frame

    def pending(self) -> int:
        return len(self._buf)


def submit_frame(processor_id: int, seq: int, data: bytes,
                 max_payload: int | None = None) -> bytes:
    return encode(Frame(MsgType.SUBMIT, processor_id, seq, data), max_payload)


def feedback_frame(processor_id: int, seq: int, record: FeedbackRecord) -> bytes:
    return encode(Frame(MsgType.FEEDBACK, processor_id, seq, record.pack()))


def config_frame(config: ConfigMessage, processor_id: int = 0) -> bytes:
    return encode(Frame(MsgType.CONFIG, processor_id, 0, config.pack()))


def error_frame(processor_id: int, seq: int, reason: ErrorReason) -> bytes:
    return encode(Frame(MsgType.ERROR, processor_id, seq, bytes([int(reason)])))
