"""Instruction fetch path: flash lines, prefetch queue, LRU caches, wait states.

Every halfword the core executes is served from the prefetch queue (PFQ), a
single 128-bit line buffer. When the pc leaves the buffered line the PFQ is
refilled, from the instruction cache on a hit (no wait state) or from flash
on a miss (6 cycles); a flash refill also installs the line in the cache.
"""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field
from typing import Iterable

from .isa.assembler import LINE_BYTES, Program

__all__ = [
    "CYCLE_NS",
    "CPU_HZ",
    "CacheConfig",
    "DCache",
    "FetchEvent",
    "FetchKind",
    "FetchPath",
    "FLASH_WAIT_CYCLES",
    "ICache",
    "InvalidConfiguration",
    "LruCache",
    "OutOfImage",
    "PrefetchQueue",
    "StalePrefetch",
    "cycles_to_ns",
    "events_to_csv",
    "ns_to_cycles",
]

CPU_HZ = 168_000_000
CYCLE_NS = 1e9 / CPU_HZ
FLASH_WAIT_CYCLES = 6
ICACHE_LINES = 64
DCACHE_LINES = 8


def ns_to_cycles(delay_ns: int) -> int:
    """Whole cycles elapsed after `delay_ns` nanoseconds (floored)."""
    if delay_ns < 0:
        raise ValueError("delay must be non-negative")
    return int(delay_ns) * CPU_HZ // 1_000_000_000


def cycles_to_ns(cycles: int) -> int:
    """Smallest whole-ns delay whose floored cycle index equals `cycles`."""
    return -(-cycles * 1_000_000_000 // CPU_HZ)


class OutOfImage(Exception):
    def __init__(self, address: int):
        self.address = address
        super().__init__(f"fetch outside flash image at {address:#010x}")


class StalePrefetch(Exception):
    """Fetch served by a prefetch queue that never held valid data."""

    def __init__(self, address: int):
        self.address = address
        super().__init__(f"fetch at {address:#010x} from an invalid prefetch buffer")


class InvalidConfiguration(ValueError):
    pass


@dataclass(frozen=True)
class CacheConfig:
    i_cache_enabled: bool = True
    d_cache_enabled: bool = True
    prefetch_enabled: bool = False

    NAMES = {"all-on": (True, True), "i-only": (True, False), "all-off": (False, False)}

    @classmethod
    def named(cls, name: str) -> "CacheConfig":
        try:
            i, d = cls.NAMES[name]
        except KeyError:
            raise InvalidConfiguration(f"unknown configuration {name!r}; "
                                       f"choose from {', '.join(cls.NAMES)}") from None
        return cls(i, d)

    @property
    def name(self) -> str:
        for name, flags in self.NAMES.items():
            if flags == (self.i_cache_enabled, self.d_cache_enabled):
                return name
        return "d-only"

    @property
    def caches_on(self) -> bool:
        return self.i_cache_enabled and self.d_cache_enabled

    def validate(self) -> "CacheConfig":
        """Reject settings the campaign protocol never uses."""
        if self.d_cache_enabled and not self.i_cache_enabled:
            raise InvalidConfiguration("D-cache-only configuration is excluded from campaigns")
        if self.prefetch_enabled:
            raise InvalidConfiguration("the prefetch mechanism must be disabled for campaigns")
        return self


class FetchKind(enum.Enum):
    PFQ_HIT = "PfqHit"
    REFILL_FROM_CACHE = "RefillFromCache"
    REFILL_FROM_FLASH = "RefillFromFlash"

    @property
    def is_refill(self) -> bool:
        return self is not FetchKind.PFQ_HIT


@dataclass(frozen=True)
class FetchEvent:
    kind: FetchKind
    line_base: int
    cycle: int
    sequence_index: int
    suppressed: bool = False


@dataclass
class PrefetchQueue:
    """One 128-bit line buffer.

    `base` is the line the fetch unit believes is buffered; `source` is the
    line the payload actually came from. They differ only after a suppressed
    refill.
    """

    payload: bytes | None = None
    base: int | None = None
    source: int | None = None

    @property
    def valid(self) -> bool:
        return self.payload is not None

    def load(self, base: int, payload: bytes) -> None:
        assert base % LINE_BYTES == 0 and len(payload) == LINE_BYTES
        self.payload = payload
        self.base = base
        self.source = base

    def retag(self, base: int) -> None:
        """Advance the buffered-line tag without replacing the payload."""
        self.base = base


@dataclass
class LruCache:
    """Fully associative line cache with least-recently-used replacement.

    Each entry is ``[tag, payload, stamp]``; an empty slot has tag None.
    The stamp is a use counter, so the smallest stamp is the LRU entry.
    """

    n_lines: int
    entries: list[list] = field(default_factory=list)
    hits: int = 0
    misses: int = 0
    _clock: int = 0

    def __post_init__(self):
        if not self.entries:
            self.entries = [[None, b"", 0] for _ in range(self.n_lines)]

    def index_of(self, tag: int) -> int | None:
        for i, entry in enumerate(self.entries):
            if entry[0] == tag:
                return i
        return None

    def __contains__(self, tag: int) -> bool:
        return self.index_of(tag) is not None

    def tags(self) -> list[int]:
        return [e[0] for e in self.entries if e[0] is not None]

    def lru_touch(self, tag: int) -> "LruCache":
        i = self.index_of(tag)
        if i is None:
            raise KeyError(f"line {tag:#x} not cached")
        self._clock += 1
        self.entries[i][2] = self._clock
        return self

    def lru_victim(self) -> int:
        """Index of the slot to replace: first empty slot, else oldest stamp."""
        for i, entry in enumerate(self.entries):
            if entry[0] is None:
                return i
        return min(range(self.n_lines), key=lambda i: self.entries[i][2])

    def lookup(self, tag: int) -> bytes | None:
        """Payload on hit (promoting the line), None on miss; updates counters."""
        i = self.index_of(tag)
        if i is None:
            self.misses += 1
            return None
        self.hits += 1
        self._clock += 1
        self.entries[i][2] = self._clock
        return self.entries[i][1]

    def insert(self, tag: int, payload: bytes) -> int | None:
        """Install a line; returns the evicted tag, if any."""
        i = self.index_of(tag)
        evicted = None
        if i is None:
            i = self.lru_victim()
            evicted = self.entries[i][0]
        self._clock += 1
        self.entries[i] = [tag, payload, self._clock]
        return evicted


def ICache() -> LruCache:
    return LruCache(ICACHE_LINES)


def DCache() -> LruCache:
    return LruCache(DCACHE_LINES)


@dataclass
class _Arm:
    cycle: int
    fire: bool
    target: FetchEvent | None = None


class FetchPath:
    """Flash image + prefetch queue + I-cache, with cycle-stamped refill events.

    A fault may be armed at a cycle: the first refill starting at or after
    that cycle becomes the target, and if the fault fires the refill is
    suppressed (payload left stale, tag advanced).
    """

    def __init__(self, program: Program, config: CacheConfig = CacheConfig(), *,
                 record_hits: bool = False):
        self.program = program
        self.config = config
        self.flash = program.padded_image()
        self.base = program.base_address
        self.pfq = PrefetchQueue()
        self.icache = ICache()
        self.dcache = DCache()
        self.refills = 0
        self.flash_refills = 0
        self.wait_cycles = 0
        self.events: list[FetchEvent] = []
        self.record_hits = record_hits
        self._arm: _Arm | None = None

    # -- flash ----------------------------------------------------------------

    def line_read(self, addr: int) -> bytes:
        assert addr % LINE_BYTES == 0, f"unaligned line read at {addr:#x}"
        off = addr - self.base
        if off < 0 or off + LINE_BYTES > len(self.flash):
            raise OutOfImage(addr)
        return self.flash[off:off + LINE_BYTES]

    # -- faults ---------------------------------------------------------------

    def arm(self, cycle: int, fire: bool = True) -> None:
        self._arm = _Arm(cycle, fire)

    @property
    def fault_target(self) -> FetchEvent | None:
        return self._arm.target if self._arm else None

    # -- fetch ----------------------------------------------------------------

    def fetch_halfword(self, pc: int, cycle: int) -> tuple[int, FetchEvent, int]:
        """Serve the halfword at `pc`; returns (halfword, event, wait_cycles)."""
        line = pc & ~(LINE_BYTES - 1)
        pfq = self.pfq
        if pfq.base == line:
            event = FetchEvent(FetchKind.PFQ_HIT, line, cycle, self.refills - 1)
            if self.record_hits:
                self.events.append(event)
            wait = 0
        else:
            event, wait = self._refill(line, cycle)
        if pfq.payload is None:
            raise StalePrefetch(pc)
        off = pc & (LINE_BYTES - 1)
        return pfq.payload[off] | pfq.payload[off + 1] << 8, event, wait

    def _refill(self, line: int, cycle: int) -> tuple[FetchEvent, int]:
        off = line - self.base
        if off < 0 or off >= len(self.flash):
            raise OutOfImage(line)
        payload = None
        if self.config.i_cache_enabled:
            payload = self.icache.lookup(line)
        kind = FetchKind.REFILL_FROM_CACHE if payload is not None else FetchKind.REFILL_FROM_FLASH
        wait = 0 if payload is not None else FLASH_WAIT_CYCLES
        seq = self.refills
        self.refills += 1
        if kind is FetchKind.REFILL_FROM_FLASH:
            self.flash_refills += 1
        self.wait_cycles += wait

        arm = self._arm
        suppressed = False
        if arm is not None and arm.target is None and cycle >= arm.cycle:
            suppressed = arm.fire
            arm.target = FetchEvent(kind, line, cycle, seq, suppressed)
        event = FetchEvent(kind, line, cycle, seq, suppressed)
        self.events.append(event)

        if suppressed:
            self.pfq.retag(line)
            return event, wait
        if payload is None:
            payload = self.line_read(line)
            if self.config.i_cache_enabled:
                self.icache.insert(line, payload)
        self.pfq.load(line, payload)
        return event, wait

    def source_of(self, pc: int) -> int:
        """Flash address whose bytes the PFQ serves for `pc`."""
        src = self.pfq.source if self.pfq.source is not None else (pc & ~(LINE_BYTES - 1))
        return src + (pc & (LINE_BYTES - 1))


def fetch_halfword(pc: int, state: FetchPath, cycle: int = 0) -> tuple[int, FetchEvent, int]:
    return state.fetch_halfword(pc, cycle)


def events_to_csv(events: Iterable[FetchEvent]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["sequence_index", "kind", "line_base", "cycle"])
    for ev in events:
        writer.writerow([ev.sequence_index, ev.kind.value, f"{ev.line_base:#010x}", ev.cycle])
    return buf.getvalue()
