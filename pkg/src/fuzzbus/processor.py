"""Input processors: corpus management, scheduling, mutation, retention.

Each processor owns a private corpus, walks it cyclically giving every
entry a fixed energy's worth of mutated children, keeps exactly one
request in flight, and decides retention purely from the compact feedback
record: novel inputs join the corpus, crashing inputs go to the crash
store deduplicated by coverage checksum, timeouts go to a separate hang
store. Processors share nothing with each other.
"""

from __future__ import annotations

import json
import logging
import random
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .coverage import fnv1a32
from .links import FrameStream
from .protocol import (
    ConfigMessage,
    Fault,
    FeedbackRecord,
    Frame,
    MsgType,
    ProtocolError,
    submit_frame,
)

log = logging.getLogger(__name__)

DEFAULT_ENERGY = 32
HAVOC_MAX_STACK = 8
INTERESTING_VALUES = (0x00, 0x01, 0x7F, 0x80, 0xFF)
ARITH_MAX = 35
_WIDTHS = (1, 2, 4)


class SessionTerminated(Exception):
    """The proxy or executor ended this processor's session."""


@dataclass
class CorpusEntry:
    id: int
    input: bytes
    parent_id: int | None
    novelty_at_discovery: int
    discovered_at: float
    exec_count: int = 0


class Corpus:
    """Retained inputs plus crash/hang stores, written through to disk.

    Layout under the processor directory: corpus/<id>.bin for retained
    entries (seeds included), crashes/<dedupkey>.bin keyed by the feedback
    checksum (input hash when checksums are off), hangs/<n>.bin.
    """

    def __init__(self, root: Path):
        self.root = Path(root)
        self.entries: list[CorpusEntry] = []
        self.crashes: dict[str, bytes] = {}
        self.hangs = 0
        for sub in ("corpus", "crashes", "hangs"):
            (self.root / sub).mkdir(parents=True, exist_ok=True)

    def __len__(self) -> int:
        return len(self.entries)

    def add(self, data: bytes, parent_id: int | None, novelty: int) -> CorpusEntry:
        entry = CorpusEntry(len(self.entries), data, parent_id, novelty, time.time())
        self.entries.append(entry)
        (self.root / "corpus" / f"{entry.id:06d}.bin").write_bytes(data)
        return entry

    def add_seed(self, data: bytes) -> CorpusEntry:
        return self.add(data, None, 0)

    def record_crash(self, key: str, data: bytes) -> bool:
        """Store one input per distinct dedup key. True if the key is new."""
        if key in self.crashes:
            return False
        self.crashes[key] = data
        (self.root / "crashes" / f"{key}.bin").write_bytes(data)
        return True

    def record_hang(self, data: bytes) -> None:
        (self.root / "hangs" / f"{self.hangs:06d}.bin").write_bytes(data)
        self.hangs += 1


class CyclicScheduler:
    """Round-robin over corpus entries, a fixed energy per visit.

    New entries join the end of the cycle; each selected entry yields
    `energy` mutated children before the cursor advances.
    """

    def __init__(self, energy: int = DEFAULT_ENERGY):
        if energy < 1:
            raise ValueError(f"energy must be >= 1, got {energy}")
        self.energy = energy
        self._index = -1
        self._remaining = 0

    def next_entry(self, corpus: Corpus) -> CorpusEntry:
        if not corpus.entries:
            raise ValueError("corpus is empty: seed inputs are required")
        if self._remaining <= 0:
            self._index = (self._index + 1) % len(corpus.entries)
            self._remaining = self.energy
        self._remaining -= 1
        return corpus.entries[self._index]


def havoc(data: bytes, rng: random.Random, corpus_inputs: list[bytes],
          max_payload: int) -> bytes:
    """Stacked random mutation of one input.

    Applies 1..8 operators drawn uniformly from: bit flip, random byte
    overwrite, interesting-value overwrite (1/2/4-byte little-endian),
    add/subtract 1..35 (1/2/4-byte little-endian, wrapping), block
    deletion, block duplication, splice with another corpus entry. The
    result is clamped to [1, max_payload] bytes.
    """
    buf = bytearray(data)
    for _ in range(rng.randint(1, HAVOC_MAX_STACK)):
        op = rng.randrange(7)
        n = len(buf)
        if op == 0 and n:  # single-bit flip
            bit = rng.randrange(n * 8)
            buf[bit >> 3] ^= 1 << (bit & 7)
        elif op == 1 and n:  # random byte overwrite
            buf[rng.randrange(n)] = rng.randrange(256)
        elif op == 2:  # interesting value, little-endian
            width = _WIDTHS[rng.randrange(3)]
            if n >= width:
                pos = rng.randrange(n - width + 1)
                value = INTERESTING_VALUES[rng.randrange(len(INTERESTING_VALUES))]
                buf[pos:pos + width] = value.to_bytes(width, "little")
        elif op == 3:  # add/subtract, wrapping little-endian
            width = _WIDTHS[rng.randrange(3)]
            if n >= width:
                pos = rng.randrange(n - width + 1)
                delta = rng.randint(1, ARITH_MAX)
                if rng.randrange(2):
                    delta = -delta
                mod = 1 << (8 * width)
                value = (int.from_bytes(buf[pos:pos + width], "little") + delta) % mod
                buf[pos:pos + width] = value.to_bytes(width, "little")
        elif op == 4 and n >= 2:  # block deletion, never empties the input
            length = rng.randint(1, n - 1)
            pos = rng.randrange(n - length + 1)
            del buf[pos:pos + length]
        elif op == 5 and n:  # block duplication
            length = rng.randint(1, n)
            pos = rng.randrange(n - length + 1)
            block = buf[pos:pos + length]
            at = rng.randrange(n + 1)
            buf[at:at] = block
        elif op == 6 and corpus_inputs:  # splice head with another entry's tail
            other = corpus_inputs[rng.randrange(len(corpus_inputs))]
            keep = rng.randint(0, len(buf))
            tail_from = rng.randint(0, len(other))
            spliced = bytearray(buf[:keep])
            spliced.extend(other[tail_from:])
            if spliced:
                buf = spliced
        if len(buf) > max_payload:
            del buf[max_payload:]
    if not buf:
        buf.append(0)
    return bytes(buf)


def mutate(entry: CorpusEntry, corpus: Corpus, rng: random.Random,
           max_payload: int) -> bytes:
    entry.exec_count += 1
    return havoc(entry.input, rng, [e.input for e in corpus.entries], max_payload)


@dataclass
class ProcessorStats:
    processor_id: int = 0
    execs: int = 0
    crashes: int = 0
    unique_crashes: int = 0
    hangs: int = 0
    corpus_size: int = 0
    session_error: str | None = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class ProcessorOptions:
    """Per-processor knobs; everything else arrives in the CONFIG message."""

    out_root: Path
    seeds: list[bytes]
    rng_seed: int = 0
    energy: int = DEFAULT_ENERGY
    duration_s: float | None = None
    max_execs: int | None = None
    stop_on_crash: bool = False
    retention: bool = True   # off = pure random mutation of the seeds only
    stats_sink: Callable[[dict], None] | None = field(default=None, repr=False)


class Processor:
    """One producer session: connect, learn the config, fuzz until done."""

    def __init__(self, stream: FrameStream, options: ProcessorOptions):
        self.stream = stream
        self.opt = options
        self.stats = ProcessorStats()
        self.processor_id = 0
        self.config: ConfigMessage | None = None
        self.corpus: Corpus | None = None
        self._seq = 0
        self._rng: random.Random | None = None
        self._last_report = 0.0

    # -- session -------------------------------------------------------------

    def handshake(self) -> None:
        """Receive the CONFIG broadcast; it carries our assigned id."""
        frame = self.stream.recv()
        if frame is None:
            raise SessionTerminated("proxy closed the session before CONFIG")
        if frame.msg_type == MsgType.ERROR:
            raise SessionTerminated(f"rejected by proxy (reason {frame.payload.hex()})")
        if frame.msg_type != MsgType.CONFIG:
            raise ProtocolError(f"expected CONFIG first, got {frame.msg_type.name}")
        self.config = ConfigMessage.unpack(frame.payload)
        self.processor_id = frame.processor_id
        # Deterministic per assigned id, so a given output directory is
        # reproducible regardless of session accept order.
        self._rng = random.Random((self.opt.rng_seed << 16) ^ self.processor_id)
        self.corpus = Corpus(Path(self.opt.out_root) / str(self.processor_id))
        for seed in self.opt.seeds:
            if not 1 <= len(seed) <= self.config.max_payload:
                raise ValueError(
                    f"seed of {len(seed)} bytes outside [1, {self.config.max_payload}]"
                )
            self.corpus.add_seed(seed)

    def submit_and_await(self, data: bytes) -> FeedbackRecord:
        """Send one test case and block for its matching feedback."""
        seq = self._seq
        self._seq += 1
        self.stream.send(submit_frame(self.processor_id, seq, data, self.config.max_payload))
        reply = self.stream.recv()
        if reply is None:
            raise SessionTerminated("session closed while awaiting feedback")
        if reply.msg_type == MsgType.ERROR:
            raise SessionTerminated(
                f"ERROR frame for seq {reply.seq} (reason {reply.payload.hex()})"
            )
        if reply.msg_type != MsgType.FEEDBACK:
            raise ProtocolError(f"expected FEEDBACK, got {reply.msg_type.name}")
        if reply.seq != seq or reply.processor_id != self.processor_id:
            raise ProtocolError(
                f"feedback mismatch: got (id {reply.processor_id}, seq {reply.seq}), "
                f"awaiting (id {self.processor_id}, seq {seq})"
            )
        self.stats.execs += 1
        return FeedbackRecord.unpack(reply.payload)

    # -- retention -------------------------------------------------------------

    def handle_feedback(self, record: FeedbackRecord, candidate: bytes,
                        parent_id: int | None) -> None:
        if record.fault == Fault.CRASH:
            self.stats.crashes += 1
            if record.checksum_valid:
                key = f"{record.checksum:08x}"
            else:
                key = f"{fnv1a32(candidate):08x}"
            if self.corpus.record_crash(key, candidate):
                self.stats.unique_crashes += 1
            return
        if record.fault == Fault.TIMEOUT:
            self.stats.hangs += 1
            self.corpus.record_hang(candidate)
            return
        if record.novelty > 0 and self.opt.retention:
            self.corpus.add(candidate, parent_id, record.novelty)

    # -- main loop -------------------------------------------------------------

    def run(self) -> ProcessorStats:
        deadline = None
        try:
            self.handshake()
            if self.opt.duration_s is not None:
                deadline = time.monotonic() + self.opt.duration_s
            scheduler = CyclicScheduler(self.opt.energy)
            found_crash = False

            # Dry run: execute every seed once so its coverage is in the
            # cumulative map before mutation starts. No retention decisions.
            for entry in list(self.corpus.entries):
                record = self.submit_and_await(entry.input)
                if record.fault != Fault.OK:
                    self.handle_feedback(record, entry.input, entry.id)
                    found_crash |= record.fault == Fault.CRASH
                self._report_stats()

            while not self._done(deadline, found_crash):
                entry = scheduler.next_entry(self.corpus)
                candidate = mutate(entry, self.corpus, self._rng, self.config.max_payload)
                record = self.submit_and_await(candidate)
                self.handle_feedback(record, candidate, entry.id)
                found_crash |= record.fault == Fault.CRASH
                self._report_stats()
        except SessionTerminated as exc:
            log.warning("processor %d: %s", self.processor_id, exc)
            self.stats.session_error = str(exc)
        finally:
            self.stats.processor_id = self.processor_id
            self.stats.corpus_size = len(self.corpus) if self.corpus else 0
            self._report_stats(force=True)
        return self.stats

    def _done(self, deadline: float | None, found_crash: bool) -> bool:
        if found_crash and self.opt.stop_on_crash:
            return True
        if self.opt.max_execs is not None and self.stats.execs >= self.opt.max_execs:
            return True
        if deadline is not None and time.monotonic() >= deadline:
            return True
        return False

    def _report_stats(self, force: bool = False) -> None:
        if self.opt.stats_sink is None:
            return
        now = time.monotonic()
        if force or now - self._last_report >= 1.0:
            self._last_report = now
            snap = self.stats.to_dict()
            snap["processor_id"] = self.processor_id
            snap["corpus_size"] = len(self.corpus) if self.corpus else 0
            self.opt.stats_sink(snap)

    def flush_stats(self) -> None:
        """Write final stats.json under this processor's directory."""
        if self.processor_id:
            path = Path(self.opt.out_root) / str(self.processor_id) / "stats.json"
            path.write_text(json.dumps(self.stats.to_dict(), indent=1))
