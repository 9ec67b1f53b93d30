"""The single persistent input executor.

One long-lived loop owns the device end of the link: it receives SUBMIT
frames strictly in arrival order, runs the harnessed target under a
watchdog, triages coverage locally against per-producer (or shared)
cumulative maps, and answers each submit with exactly one compact
FEEDBACK frame. The target process is never rebooted or forked between
test cases; a crash is an in-process fault signal, a timeout abandons the
execution thread and carries on.
"""

from __future__ import annotations

import ctypes
import json
import logging
import queue
import struct
import threading
import time
from dataclasses import dataclass

from .coverage import (
    CoverageMap,
    CumulativeMap,
    checksum,
    classify,
    has_new_bits,
)
from .links import FrameStream, connect_tcp
from .protocol import (
    ConfigMessage,
    ErrorReason,
    Fault,
    FeedbackRecord,
    Frame,
    MsgType,
    ProtocolError,
    error_frame,
    feedback_frame,
)
from .targets import Harness, make_harness

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT_S = 1.0

DUMP_MAGIC = b"FBDUMP01"
_DUMP_HEADER = struct.Struct("<8sIBH")   # magic, map_size, map_mode, max_processors
_DUMP_RECORD = struct.Struct("<HIBB")    # processor_id, seq, fault, novelty


class WatchdogTimeout(BaseException):
    """Injected into the execution thread when the watchdog budget expires.

    BaseException so target-level `except Exception` handlers cannot
    swallow the abandonment signal.
    """


class DeviceLost(Exception):
    """The device-side stream died mid-campaign (fatal decode error)."""


class ExecutionContext:
    """Trace sink handed to the target for one execution."""

    __slots__ = ("cov",)

    def __init__(self, cov: CoverageMap):
        self.cov = cov

    def trace(self, location: int) -> None:
        self.cov.trace(location)


@dataclass
class ExecutionOutcome:
    status: Fault
    wall_time: float


@dataclass
class ExecutorStats:
    processed: int = 0
    ok: int = 0
    crashes: int = 0
    timeouts: int = 0
    submit_errors: int = 0
    init_calls: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


class _Worker(threading.Thread):
    """Dedicated execution thread; replaced wholesale after a timeout."""

    def __init__(self):
        super().__init__(name="executor-target", daemon=True)
        self.jobs: queue.SimpleQueue = queue.SimpleQueue()
        self.results: queue.SimpleQueue = queue.SimpleQueue()
        self.start()

    def run(self) -> None:
        try:
            while True:
                job = self.jobs.get()
                if job is None:
                    return
                run_fn, ctx, data = job
                try:
                    run_fn(ctx, data)
                except WatchdogTimeout:
                    return  # abandoned; a fresh worker already took over
                except Exception as exc:
                    self.results.put((Fault.CRASH, exc))
                else:
                    self.results.put((Fault.OK, None))
        except WatchdogTimeout:
            return

    def abandon(self) -> None:
        """Raise WatchdogTimeout in this thread at its next bytecode boundary."""
        tid = self.ident
        if tid is None:
            return
        n = ctypes.pythonapi.PyThreadState_SetAsyncExc(
            ctypes.c_ulong(tid), ctypes.py_object(WatchdogTimeout)
        )
        if n > 1:  # pragma: no cover - defensive per CPython docs
            ctypes.pythonapi.PyThreadState_SetAsyncExc(ctypes.c_ulong(tid), None)

    def stop(self) -> None:
        self.jobs.put(None)


class Executor:
    """Runs the harnessed target persistently and triages coverage locally.

    Construction only registers the harness; coverage structures are
    allocated when the CONFIG broadcast arrives. In per-producer map mode
    there is one cumulative map per processor_id in [1, max_processors];
    map_mode 1 shares a single cumulative map across all producers.
    """

    def __init__(self, harness: Harness, *, max_processors: int = 16,
                 timeout_s: float = DEFAULT_TIMEOUT_S, reset_on_crash: bool = False,
                 debug_dump_path: str | None = None,
                 expect_map_size: int | None = None, expect_map_mode: int | None = None):
        if timeout_s <= 0:
            raise ValueError(f"timeout must be > 0, got {timeout_s}")
        if max_processors < 1:
            raise ValueError(f"max_processors must be >= 1, got {max_processors}")
        self.harness = harness
        self.max_processors = max_processors
        self.timeout_s = timeout_s
        self.reset_on_crash = reset_on_crash
        self.debug_dump_path = debug_dump_path
        self.expect_map_size = expect_map_size
        self.expect_map_mode = expect_map_mode
        self.config: ConfigMessage | None = None
        self.stats = ExecutorStats()
        self._temp: CoverageMap | None = None
        self._cumulative: dict[int, CumulativeMap] = {}
        self._shared: CumulativeMap | None = None
        self._worker: _Worker | None = None
        self._dump = None

    # -- configuration -------------------------------------------------------

    def configure(self, config: ConfigMessage) -> None:
        config.validate()
        if self.config is not None:
            if config == self.config:
                return
            raise ProtocolError("conflicting CONFIG received mid-campaign")
        if self.expect_map_size is not None and config.map_size != self.expect_map_size:
            raise ProtocolError(
                f"CONFIG map_size {config.map_size} does not match device "
                f"map_size {self.expect_map_size}"
            )
        if self.expect_map_mode is not None and config.map_mode != self.expect_map_mode:
            raise ProtocolError(
                f"CONFIG map_mode {config.map_mode} does not match device "
                f"map_mode {self.expect_map_mode}"
            )
        self.config = config
        self._temp = CoverageMap(config.map_size)
        if config.map_mode == 0:
            self._cumulative = {
                pid: CumulativeMap(config.map_size)
                for pid in range(1, self.max_processors + 1)
            }
        else:
            self._shared = CumulativeMap(config.map_size)
        if self.debug_dump_path:
            self._dump = open(self.debug_dump_path, "wb")
            self._dump.write(_DUMP_HEADER.pack(
                DUMP_MAGIC, config.map_size, config.map_mode, self.max_processors
            ))
        self.harness.init()
        self.stats.init_calls += 1

    def cumulative_for(self, processor_id: int) -> CumulativeMap | None:
        if self.config is None:
            return None
        if self.config.map_mode == 1:
            return self._shared
        return self._cumulative.get(processor_id)

    # -- execution -----------------------------------------------------------

    def watchdog_run(self, data: bytes) -> ExecutionOutcome:
        """Run one input with a hard wall-clock budget.

        Returns Ok or Crash from the target itself; on budget expiry the
        execution thread is abandoned (async-exception poisoned) and a
        fresh one takes over, so the loop keeps serving. The abandoned
        thread still holds the old temporary map, which is dropped, so a
        straggler cannot contaminate later executions.
        """
        if self._worker is None:
            self._worker = _Worker()
        worker = self._worker
        ctx = ExecutionContext(self._temp)
        start = time.perf_counter()
        worker.jobs.put((self.harness.run, ctx, data))
        try:
            fault, _exc = worker.results.get(timeout=self.timeout_s)
        except queue.Empty:
            worker.abandon()
            self._worker = None
            self._temp = CoverageMap(self.config.map_size)
            return ExecutionOutcome(Fault.TIMEOUT, time.perf_counter() - start)
        return ExecutionOutcome(fault, time.perf_counter() - start)

    def run_one(self, frame: Frame) -> bytes:
        """Execute one SUBMIT frame and build its reply frame."""
        pid, seq = frame.processor_id, frame.seq
        if self.config is None:
            self.stats.submit_errors += 1
            return error_frame(pid, seq, ErrorReason.UNCONFIGURED)
        if self.config.map_mode == 0 and not 1 <= pid <= self.max_processors:
            self.stats.submit_errors += 1
            return error_frame(pid, seq, ErrorReason.UNKNOWN_PROCESSOR)
        if len(frame.payload) > self.config.max_payload:
            self.stats.submit_errors += 1
            return error_frame(pid, seq, ErrorReason.OVERSIZE_PAYLOAD)

        self._temp.reset()
        outcome = self.watchdog_run(frame.payload)
        self.stats.processed += 1

        if outcome.status == Fault.TIMEOUT:
            # Partial map, nondeterministic abandonment point: contributes
            # no coverage and no novelty.
            self.stats.timeouts += 1
            record = FeedbackRecord(Fault.TIMEOUT, 0, False, 0)
            self._write_dump(pid, seq, record, b"")
            return feedback_frame(pid, seq, record)

        if outcome.status == Fault.CRASH:
            self.stats.crashes += 1
        else:
            self.stats.ok += 1

        raw_map = self._temp.tobytes() if self._dump else b""
        classified = classify(self._temp)
        novelty = has_new_bits(classified, self.cumulative_for(pid))
        if self.config.checksum_enabled:
            record = FeedbackRecord(outcome.status, int(novelty), True, checksum(classified))
        else:
            record = FeedbackRecord(outcome.status, int(novelty), False, 0)
        self._write_dump(pid, seq, record, raw_map)

        if outcome.status == Fault.CRASH and self.reset_on_crash:
            self.harness.init()
            self.stats.init_calls += 1
        return feedback_frame(pid, seq, record)

    def _write_dump(self, pid: int, seq: int, record: FeedbackRecord, raw_map: bytes) -> None:
        if self._dump is None:
            return
        payload = raw_map if raw_map else bytes(self.config.map_size)
        self._dump.write(_DUMP_RECORD.pack(pid, seq, int(record.fault), record.novelty))
        self._dump.write(payload)

    # -- the persistent loop ---------------------------------------------------

    def serve(self, stream: FrameStream) -> ExecutorStats:
        """Process frames until the stream closes. Never reboots the target.

        Exactly one FEEDBACK (or ERROR) goes out per SUBMIT, echoing its
        processor_id and seq, in arrival order. Fatal decode errors tear
        the loop down as device loss.
        """
        try:
            while True:
                frame = stream.recv()
                if frame is None:
                    return self.stats
                if frame.msg_type == MsgType.CONFIG:
                    self.configure(ConfigMessage.unpack(frame.payload))
                elif frame.msg_type == MsgType.SUBMIT:
                    stream.send(self.run_one(frame))
                else:
                    log.warning("ignoring unexpected %s frame on device link",
                                frame.msg_type.name)
        except ProtocolError as exc:
            log.error("device stream fatal: %s", exc)
            raise DeviceLost(str(exc)) from exc
        finally:
            self.shutdown()

    def shutdown(self) -> None:
        if self._worker is not None:
            self._worker.stop()
            self._worker = None
        if self._dump is not None:
            self._dump.close()
            self._dump = None


def read_debug_dump(path: str):
    """Parse a debug dump: header dict plus the per-execution records.

    Record layout (little-endian): processor_id u16, seq u32, fault u8,
    novelty u8, then the raw map (map_size bytes of counters in index
    order). Test-only format.
    """
    with open(path, "rb") as fh:
        head = fh.read(_DUMP_HEADER.size)
        magic, map_size, map_mode, max_procs = _DUMP_HEADER.unpack(head)
        if magic != DUMP_MAGIC:
            raise ValueError(f"not a debug dump: {path}")
        header = {"map_size": map_size, "map_mode": map_mode, "max_processors": max_procs}
        records = []
        while True:
            meta = fh.read(_DUMP_RECORD.size)
            if not meta:
                break
            pid, seq, fault, novelty = _DUMP_RECORD.unpack(meta)
            raw = fh.read(map_size)
            if len(raw) != map_size:
                raise ValueError("truncated debug dump record")
            records.append({
                "processor_id": pid, "seq": seq,
                "fault": Fault(fault), "novelty": novelty, "raw_map": raw,
            })
    return header, records


def run_device_process(spec: dict) -> None:
    """Entry point for the executor when launched as its own process.

    Connects back to the proxy's device listener, serves until the link
    closes, and drops final stats as JSON for the campaign to reconcile.
    """
    logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")
    harness = make_harness(spec["target"])
    executor = Executor(
        harness,
        max_processors=spec["max_processors"],
        timeout_s=spec["timeout_s"],
        reset_on_crash=spec.get("reset_on_crash", False),
        debug_dump_path=spec.get("debug_dump_path"),
    )
    sock = connect_tcp(spec["host"], spec["port"])
    stream = FrameStream(sock, chunk_size=spec.get("chunk_size") or None)
    try:
        stats = executor.serve(stream)
    finally:
        stream.close()
    stats_path = spec.get("stats_path")
    if stats_path:
        with open(stats_path, "w") as fh:
            json.dump(stats.to_dict(), fh)
