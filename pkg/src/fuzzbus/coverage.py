"""Edge-coverage maps, count bucketing, and on-device novelty triage.

The executor keeps one temporary map per execution and one cumulative map
per producer (or one shared map). After each run the temporary map is
bucketized and compared against the cumulative map; only the resulting
novelty level and a short checksum ever leave the device.
"""

from __future__ import annotations

import enum

import numpy as np

DEFAULT_MAP_SIZE = 65536
EMBEDDED_MAP_SIZE = 4096

FNV32_OFFSET = 2166136261
FNV32_PRIME = 16777619
_U32 = 1 << 32

# Count -> bucket flag. Exactly zero or one bit set per byte:
#   0 -> 0x00   1 -> 0x01   2 -> 0x02   3 -> 0x04   4..7 -> 0x08
#   8..15 -> 0x10   16..31 -> 0x20   32..127 -> 0x40   128..255 -> 0x80
def _build_bucket_lut() -> np.ndarray:
    lut = np.zeros(256, dtype=np.uint8)
    lut[1] = 0x01
    lut[2] = 0x02
    lut[3] = 0x04
    lut[4:8] = 0x08
    lut[8:16] = 0x10
    lut[16:32] = 0x20
    lut[32:128] = 0x40
    lut[128:256] = 0x80
    return lut


BUCKET_LUT = _build_bucket_lut()


class MapSizeMismatch(Exception):
    """Classified and cumulative maps disagree on size: the campaign-wide
    map size was not applied consistently. Protocol-fatal."""


class NoveltyLevel(enum.IntEnum):
    NONE = 0
    NEW_COUNT = 1   # a known edge moved to an unseen count bucket
    NEW_EDGE = 2    # an edge byte went from zero to nonzero

    @property
    def is_new(self) -> bool:
        return self is not NoveltyLevel.NONE


def _check_size(size: int) -> int:
    if size <= 0 or (size & (size - 1)) != 0:
        raise ValueError(f"map size must be a positive power of two, got {size}")
    return size


class CoverageMap:
    """Per-execution array of 8-bit saturating edge hit counters.

    Edge indices follow the classic previous^current hash: each traced
    location is XORed with the right-shifted previous location, reduced
    mod the map size. Counters stick at 255.
    """

    __slots__ = ("counters", "_mask", "_prev")

    def __init__(self, size: int = DEFAULT_MAP_SIZE):
        _check_size(size)
        self.counters = np.zeros(size, dtype=np.uint8)
        self._mask = size - 1
        self._prev = 0

    def __len__(self) -> int:
        return len(self.counters)

    def trace(self, location: int) -> None:
        """Record traversal of the edge into `location`. Saturates at 255."""
        idx = (location ^ (self._prev >> 1)) & self._mask
        cur = self.counters[idx]
        if cur != 255:
            self.counters[idx] = cur + 1
        self._prev = location

    def reset(self) -> None:
        """Zero every counter and the previous-location register."""
        self.counters.fill(0)
        self._prev = 0

    def tobytes(self) -> bytes:
        """Raw counter bytes in index order (the debug-dump format)."""
        return self.counters.tobytes()


def trace_edge(cov: CoverageMap, location: int) -> None:
    cov.trace(location)


class ClassifiedMap:
    """Bucketized form of a coverage map: one flag bit per byte."""

    __slots__ = ("buckets",)

    def __init__(self, buckets: np.ndarray):
        self.buckets = buckets

    def __len__(self) -> int:
        return len(self.buckets)

    def tobytes(self) -> bytes:
        return self.buckets.tobytes()


class CumulativeMap:
    """OR-accumulation of every classified map seen so far.

    Bits are only ever set, never cleared, for the life of a campaign.
    """

    __slots__ = ("seen",)

    def __init__(self, size: int = DEFAULT_MAP_SIZE):
        _check_size(size)
        self.seen = np.zeros(size, dtype=np.uint8)

    def __len__(self) -> int:
        return len(self.seen)

    def tobytes(self) -> bytes:
        return self.seen.tobytes()


def classify(cov: CoverageMap) -> ClassifiedMap:
    """Collapse raw hit counts into single-bit magnitude buckets."""
    return ClassifiedMap(BUCKET_LUT[cov.counters])


def has_new_bits(classified: ClassifiedMap, cumulative: CumulativeMap) -> NoveltyLevel:
    """Triage one execution against the accumulated history.

    Returns NEW_EDGE if any byte is nonzero where the cumulative map is
    still zero, NEW_COUNT if only new bucket bits appeared on known edges,
    NONE otherwise. The cumulative map absorbs every new bit in place, so
    a second call with the same input always returns NONE.
    """
    if len(classified) != len(cumulative):
        raise MapSizeMismatch(
            f"classified map has {len(classified)} bytes, cumulative has {len(cumulative)}"
        )
    buckets = classified.buckets
    seen = cumulative.seen
    new_bits = buckets & ~seen
    if not new_bits.any():
        return NoveltyLevel.NONE
    if ((seen == 0) & (buckets != 0)).any():
        level = NoveltyLevel.NEW_EDGE
    else:
        level = NoveltyLevel.NEW_COUNT
    np.bitwise_or(seen, buckets, out=seen)
    return level


def fnv1a32(data: bytes) -> int:
    """FNV-1a over a byte string, 32-bit."""
    h = FNV32_OFFSET
    for b in data:
        h = ((h ^ b) * FNV32_PRIME) % _U32
    return h


def checksum(classified: ClassifiedMap) -> int:
    """FNV-1a/32 of the classified bytes in index order.

    Classified maps are almost entirely zero, and a run of k zero bytes
    multiplies the hash by prime**k (mod 2^32), so only the nonzero bytes
    and the gap lengths between them need touching. Identical output to
    fnv1a32(classified.tobytes()).
    """
    buckets = classified.buckets
    nonzero = np.flatnonzero(buckets)
    h = FNV32_OFFSET
    pos = 0
    for idx in nonzero:
        gap = int(idx) - pos
        if gap:
            h = (h * pow(FNV32_PRIME, gap, _U32)) % _U32
        h = ((h ^ int(buckets[idx])) * FNV32_PRIME) % _U32
        pos = int(idx) + 1
    tail = len(buckets) - pos
    if tail:
        h = (h * pow(FNV32_PRIME, tail, _U32)) % _U32
    return h
