"""Independent reference implementations used as test oracles.

Everything here is deliberately written as plain loops over bytes, with no
imports from the package's hot paths, so the optimized implementations are
checked against straight transcriptions of the definitions.
"""

from __future__ import annotations


def fnv1a32_reference(data: bytes) -> int:
    h = 2166136261
    for b in data:
        h ^= b
        h = (h * 16777619) & 0xFFFFFFFF
    return h


def classify_reference(counters: bytes) -> bytes:
    out = bytearray(len(counters))
    for i, c in enumerate(counters):
        if c == 0:
            v = 0x00
        elif c == 1:
            v = 0x01
        elif c == 2:
            v = 0x02
        elif c == 3:
            v = 0x04
        elif c <= 7:
            v = 0x08
        elif c <= 15:
            v = 0x10
        elif c <= 31:
            v = 0x20
        elif c <= 127:
            v = 0x40
        else:
            v = 0x80
        out[i] = v
    return bytes(out)


def has_new_bits_reference(classified: bytes, cumulative: bytearray) -> int:
    """0 none, 1 new count, 2 new edge; updates cumulative in place."""
    level = 0
    for i, b in enumerate(classified):
        if b == 0:
            continue
        if cumulative[i] == 0:
            level = 2
        elif b & ~cumulative[i] and level < 2:
            level = max(level, 1)
    if level:
        changed = False
        for i, b in enumerate(classified):
            if b & ~cumulative[i]:
                changed = True
            cumulative[i] |= b
        if not changed:
            level = 0
    return level


def replay_novelty(records: list[dict], map_size: int, map_mode: int) -> list[int]:
    """Recompute the novelty for each dump record with the references above.

    Faulted-out (timeout) records contribute nothing and must have been
    reported as novelty 0.
    """
    cumulative: dict[int, bytearray] = {}
    shared = bytearray(map_size)
    levels = []
    for rec in records:
        if int(rec["fault"]) == 2:
            levels.append(0)
            continue
        if map_mode == 1:
            cum = shared
        else:
            cum = cumulative.setdefault(rec["processor_id"], bytearray(map_size))
        classified = classify_reference(rec["raw_map"])
        levels.append(has_new_bits_reference(classified, cum))
    return levels


def kvparse_crashes(data: bytes) -> bool:
    """Crash predicate for the kvparse target, derived from its documented
    input language: any ';'-separated field with a nonempty key whose value
    ends in '!' followed by a digit above 3 stores out of slot range."""
    text = data.decode("latin-1")
    for field in text.split(";"):
        eq = field.find("=")
        if eq < 1:
            continue
        value = field[eq + 1:]
        if len(value) >= 2 and value[-2] == "!" and value[-1] in "456789":
            return True
    return False


def simulate_pipeline(n: int, t_host: float, t_exec: float,
                      latency_s: float, bandwidth_bps: float, chunk: int,
                      submit_frame_len: int, feedback_frame_len: int,
                      n_execs: int) -> float:
    """Discrete-event simulation of the whole loop: n producers, one FIFO
    serial channel per direction, one serial executor. Returns exec/s.

    Producers keep one request in flight; the uplink serializes padded
    submits back to back; the executor services arrivals in order; the
    downlink returns padded feedback the same way.
    """
    def padded(length: int) -> int:
        if chunk:
            return -(-length // chunk) * chunk
        return length

    tx_time = padded(submit_frame_len) / bandwidth_bps
    rx_time = padded(feedback_frame_len) / bandwidth_bps

    import heapq
    # Event: (time, order, kind, producer)
    events: list = []
    counter = 0
    uplink_free = 0.0
    downlink_free = 0.0
    executor_free = 0.0
    completed = 0
    end_time = 0.0

    def push(t, kind, producer):
        nonlocal counter
        heapq.heappush(events, (t, counter, kind, producer))
        counter += 1

    for p in range(n):
        push(t_host, "submit", p)  # first test case ready after one host step

    while events and completed < n_execs:
        t, _, kind, p = heapq.heappop(events)
        if kind == "submit":
            nonlocal_start = max(t, uplink_free)
            uplink_free = nonlocal_start + tx_time
            push(uplink_free + latency_s, "arrive", p)
        elif kind == "arrive":
            start = max(t, executor_free)
            executor_free = start + t_exec
            push(executor_free, "done", p)
        elif kind == "done":
            start = max(t, downlink_free)
            downlink_free = start + rx_time
            push(downlink_free + latency_s, "feedback", p)
        elif kind == "feedback":
            completed += 1
            end_time = t
            push(t + t_host, "submit", p)
    return n_execs / end_time if end_time > 0 else 0.0
