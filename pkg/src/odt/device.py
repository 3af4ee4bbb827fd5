"""Deterministic simulation of devices, process memory and traffic routing.

Memory is a sparse map from 8-byte aligned 48-bit virtual addresses to 64-bit
words. Interrupts are scheduled by (session, read index) instead of wall-clock
time so that every attack replays exactly.
"""
from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

ADDRESS_BITS = 48
WORD_BYTES = 8
WORD_MASK = (1 << 64) - 1


class RegionOverflow(ValueError):
    """Requested process image does not fit inside the measurable ranges."""


def check_address(addr: int) -> int:
    if not 0 <= addr < 1 << ADDRESS_BITS:
        raise ValueError(f"address {addr:#x} outside the 48-bit space")
    if addr % WORD_BYTES:
        raise ValueError(f"address {addr:#x} is not 8-byte aligned")
    return addr


@dataclass(frozen=True)
class Omega:
    """Ordered, disjoint [start, end) address ranges open to measurement."""

    ranges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if not self.ranges:
            raise ValueError("Omega needs at least one range")
        prev_end = -1
        for start, end in self.ranges:
            check_address(start)
            if end != 1 << ADDRESS_BITS:
                check_address(end)
            if end <= start:
                raise ValueError(f"empty range [{start:#x}, {end:#x})")
            if start < prev_end:
                raise ValueError("ranges must be sorted and disjoint")
            prev_end = end
        sizes = [(end - start) // WORD_BYTES for start, end in self.ranges]
        object.__setattr__(self, "_offsets", np.cumsum([0] + sizes).tolist())

    @property
    def total_words(self) -> int:
        return self._offsets[-1]

    def address_of(self, index: int) -> int:
        """Address of the ``index``-th word of the concatenated ranges."""
        if not 0 <= index < self.total_words:
            raise IndexError(index)
        r = bisect.bisect_right(self._offsets, index) - 1
        return self.ranges[r][0] + (index - self._offsets[r]) * WORD_BYTES

    def __contains__(self, addr: int) -> bool:
        return any(start <= addr < end for start, end in self.ranges)


# 1 MiB heap, 2^17 words
DEFAULT_OMEGA = Omega(((0x100_0000_0000, 0x100_0010_0000),))


@dataclass(frozen=True)
class MemoryException:
    """A faulting read, the simulator's stand-in for a hardware exit record."""

    kind: str  # "unmapped" or "interrupt"
    addr: int
    read_index: int


Word = int
ReadResult = Union[Word, MemoryException]


@dataclass
class ProcessImage:
    pid: str
    device: str
    memory: dict[int, Word] = field(default_factory=dict, repr=False)

    def read(self, addr: int) -> ReadResult:
        """Direct read without any device in the way (used for reconstructions)."""
        word = self.memory.get(addr)
        return MemoryException("unmapped", addr, 0) if word is None else word


@dataclass
class MeasurementContext:
    session: int
    reads: int = 0
    exceptions: list[MemoryException] = field(default_factory=list)

    @property
    def faulted(self) -> bool:
        return bool(self.exceptions)


class DeviceSim:
    def __init__(self, device_id: str, has_otee: bool = False):
        self.id = device_id
        self.has_otee = has_otee
        self.processes: dict[str, ProcessImage] = {}
        self.interrupt_schedule: set[tuple[int, int]] = set()
        self._sessions = 0

    def __repr__(self):
        return f"DeviceSim({self.id!r}, has_otee={self.has_otee})"

    def add_process(self, process: ProcessImage) -> ProcessImage:
        if process.device != self.id:
            raise ValueError(f"{process.pid} belongs to device {process.device}")
        self.processes[process.pid] = process
        return process

    def schedule_interrupt(self, session: int, read_index: int) -> None:
        """Fire one interrupt at the 1-based ``read_index`` of ``session``."""
        if session < 1 or read_index < 1:
            raise ValueError("sessions and read indices start at 1")
        self.interrupt_schedule.add((session, read_index))

    def new_session(self) -> MeasurementContext:
        self._sessions += 1
        return MeasurementContext(self._sessions)

    def read_word(
        self, process: ProcessImage, addr: int, ctx: MeasurementContext
    ) -> ReadResult:
        ctx.reads += 1
        key = (ctx.session, ctx.reads)
        if key in self.interrupt_schedule:
            self.interrupt_schedule.discard(key)
            exc = MemoryException("interrupt", addr, ctx.reads)
        elif process.device != self.id or addr not in process.memory:
            exc = MemoryException("unmapped", addr, ctx.reads)
        else:
            return process.memory[addr]
        ctx.exceptions.append(exc)
        return exc

    def view(self, process: ProcessImage, ctx: MeasurementContext) -> "ProcessView":
        return ProcessView(self, process, ctx)


@dataclass
class ProcessView:
    """Reads of one process routed through a device under one session."""

    device: DeviceSim
    process: ProcessImage
    ctx: MeasurementContext

    def read(self, addr: int) -> ReadResult:
        return self.device.read_word(self.process, addr, self.ctx)


def seeded_words(seed: int, count: int) -> np.ndarray:
    # PCG64 raw output is a stable stream across numpy releases
    return np.random.PCG64(seed).random_raw(count).astype(np.uint64)


def load_process(
    device: DeviceSim,
    seed: int,
    size_words: int,
    pid: Optional[str] = None,
    omega: Omega = DEFAULT_OMEGA,
) -> ProcessImage:
    """Fill the first ``size_words`` words of ``omega`` from a seeded stream.

    Equal (seed, size, omega) give bit-identical images on any device, which
    is what lets a verifier rebuild its agent's memory offline.
    """
    if size_words < 1:
        raise ValueError("size_words must be >= 1")
    if size_words > omega.total_words:
        raise RegionOverflow(
            f"{size_words} words exceed the {omega.total_words}-word region"
        )
    words = seeded_words(seed, size_words).tolist()
    if len(omega.ranges) == 1:
        base = omega.ranges[0][0]
        addrs = range(base, base + size_words * WORD_BYTES, WORD_BYTES)
    else:
        addrs = (omega.address_of(i) for i in range(size_words))
    image = ProcessImage(pid or f"p{seed}", device.id, dict(zip(addrs, words)))
    return device.add_process(image)


def clone_memory_subset(
    src: ProcessImage,
    dst_device: DeviceSim,
    fraction: float,
    rng,
    pid: Optional[str] = None,
) -> ProcessImage:
    """Copy a uniformly chosen ``fraction`` of the mapped words to a new image."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    addrs = sorted(src.memory)
    chosen = rng.sample(addrs, round(fraction * len(addrs)))
    image = ProcessImage(
        pid or f"{src.pid}-clone", dst_device.id, {a: src.memory[a] for a in chosen}
    )
    return dst_device.add_process(image)


@dataclass(frozen=True)
class RoutingRule:
    """Traffic of ``source_pid`` on ``source_device`` leaves through
    ``egress_device``, where ``proxy_pid`` fronts the connection."""

    source_device: str
    source_pid: str
    egress_device: str
    proxy_pid: str

    def __post_init__(self):
        if self.source_device == self.egress_device:
            raise ValueError("a routing rule must cross devices")


class Network:
    def __init__(self):
        self.devices: dict[str, DeviceSim] = {}
        self.routes: dict[tuple[str, str], RoutingRule] = {}

    def add_device(self, device: DeviceSim) -> DeviceSim:
        self.devices[device.id] = device
        return device

    def set_route(self, rule: RoutingRule) -> None:
        egress = self.devices[rule.egress_device]
        if rule.proxy_pid not in egress.processes:
            raise KeyError(f"no process {rule.proxy_pid} on {rule.egress_device}")
        self.routes[(rule.source_device, rule.source_pid)] = rule

    def resolve_endpoint(self, process: ProcessImage) -> tuple[DeviceSim, ProcessImage]:
        """Device and process that terminate a connection opened by ``process``."""
        rule = self.routes.get((process.device, process.pid))
        if rule is None:
            return self.devices[process.device], process
        egress = self.devices[rule.egress_device]
        return egress, egress.processes[rule.proxy_pid]
