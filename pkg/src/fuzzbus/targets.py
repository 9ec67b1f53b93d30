"""Built-in in-process harness targets.

Each target is a plain function taking an execution context and the input
bytes. Branch points call ctx.trace() with a fixed edge identifier, the
in-process analog of compiled-in instrumentation, and faults are signaled
by raising TargetFault.

Available targets (see make_harness for the spec syntax):

  magic      crashes iff the input starts with the 4 bytes b"FUZZ"; one
             edge per matched prefix byte, so guided search can close in
             on the prefix one byte at a time.
  delay:D    busy-computes for D per execution (e.g. "delay:20ms",
             "delay:0.2ms", bare numbers are milliseconds); one fixed
             edge. The workhorse for throughput experiments.
  kvparse    a small key=value;key=value parser with several instrumented
             branches and a planted out-of-bounds-style fault: a value
             ending in "!<digit>" stores to a 4-slot table, so digits
             above 3 land outside it and crash.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Protocol


class TargetFault(Exception):
    """Raised by a target to signal an in-process fault (crash)."""


class TraceSink(Protocol):
    def trace(self, location: int) -> None: ...


@dataclass
class Harness:
    """A fuzzable target: one-time init plus a per-input run procedure.

    run() must trace only through the context it is handed and must not
    keep references to the input or context after returning. For timeout
    abandonment to reclaim the execution thread, run() has to stay in
    Python bytecode (busy loops are fine, uninterruptible C calls are not).
    """

    name: str
    run: Callable[[TraceSink, bytes], None]
    init: Callable[[], None] = field(default=lambda: None)


# --- magic -----------------------------------------------------------------

_MAGIC_PREFIX = b"FUZZ"
_MAGIC_ENTRY = 0x6A21
_MAGIC_EDGES = (0x1B07, 0x52F1, 0x33A9, 0x7C65)


def _magic_run(ctx: TraceSink, data: bytes) -> None:
    ctx.trace(_MAGIC_ENTRY)
    for i, want in enumerate(_MAGIC_PREFIX):
        if i >= len(data) or data[i] != want:
            return
        ctx.trace(_MAGIC_EDGES[i])
    raise TargetFault("magic prefix matched")


# --- delay -----------------------------------------------------------------

_DELAY_EDGE = 0x2E19


def _make_delay_run(delay_s: float) -> Callable[[TraceSink, bytes], None]:
    def run(ctx: TraceSink, data: bytes) -> None:
        ctx.trace(_DELAY_EDGE)
        if delay_s > 0:
            end = time.perf_counter() + delay_s
            x = 1
            while time.perf_counter() < end:
                x = (x * 31 + 7) & 0xFFFFFFFF  # keep the core genuinely busy
    return run


# --- kvparse ---------------------------------------------------------------

KV_SLOT_COUNT = 4

_KV_ENTRY = 0x44D3
_KV_EMPTY_FIELD = 0x09A2
_KV_NO_EQUALS = 0x5F10
_KV_EMPTY_KEY = 0x7702
_KV_PAIR = 0x1C58
_KV_EMPTY_VALUE = 0x63BE
_KV_NUMERIC = 0x2AF4
_KV_QUOTED = 0x4E81
_KV_PLAIN = 0x35C7
_KV_SLOT_STORE = 0x58E6


def _kvparse_run(ctx: TraceSink, data: bytes) -> None:
    text = data.decode("latin-1")
    slots = [0] * KV_SLOT_COUNT
    for field_text in text.split(";"):
        ctx.trace(_KV_ENTRY)
        if not field_text:
            ctx.trace(_KV_EMPTY_FIELD)
            continue
        eq = field_text.find("=")
        if eq < 0:
            ctx.trace(_KV_NO_EQUALS)
            continue
        key, value = field_text[:eq], field_text[eq + 1:]
        if not key:
            ctx.trace(_KV_EMPTY_KEY)
            continue
        ctx.trace(_KV_PAIR)
        if not value:
            ctx.trace(_KV_EMPTY_VALUE)
        elif value.isdigit():
            ctx.trace(_KV_NUMERIC)
        elif len(value) >= 2 and value[0] == '"' and value[-1] == '"':
            ctx.trace(_KV_QUOTED)
        else:
            ctx.trace(_KV_PLAIN)
        if len(value) >= 2 and value[-2] == "!" and value[-1].isdigit():
            ctx.trace(_KV_SLOT_STORE)
            slot = int(value[-1])
            if slot >= KV_SLOT_COUNT:
                raise TargetFault(f"slot index {slot} out of range")
            slots[slot] = len(key)


# --- registry --------------------------------------------------------------


def _parse_delay_spec(arg: str) -> float:
    arg = arg.strip().lower()
    if arg.endswith("ms"):
        return float(arg[:-2]) / 1000.0
    if arg.endswith("us"):
        return float(arg[:-2]) / 1e6
    if arg.endswith("s"):
        return float(arg[:-1])
    return float(arg) / 1000.0  # bare numbers are milliseconds


def make_harness(spec: str) -> Harness:
    """Build a harness from a target spec like "magic" or "delay:20ms".

    Parameters ride after a colon; the parenthesized form "delay(20ms)" is
    accepted too. Unknown names raise ValueError (fatal at startup).
    """
    spec = spec.strip()
    if spec.endswith(")") and "(" in spec:
        name, _, arg = spec[:-1].partition("(")
    else:
        name, _, arg = spec.partition(":")
    name = name.strip()
    if name == "magic":
        return Harness("magic", _magic_run)
    if name == "delay":
        delay_s = _parse_delay_spec(arg) if arg else 0.0
        if delay_s < 0:
            raise ValueError(f"delay must be >= 0, got {arg!r}")
        return Harness(spec, _make_delay_run(delay_s))
    if name == "kvparse":
        return Harness("kvparse", _kvparse_run)
    raise ValueError(f"unknown target {spec!r} (expected magic, delay[:D], or kvparse)")
