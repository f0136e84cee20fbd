"""Tagged values, machine state, and the equivalence relations over them.

Every data word in the simulated machine carries a one-bit sensitivity tag:
a word is either *clear* (ordinary data the outside world may observe) or
*blinded* (secret data whose payload must never influence anything
observable).  Two states are considered equivalent when they agree on
everything an observer could see: program counter, cache line assignments,
halt/fault status, the tag bits themselves, and the payloads of clear
words.  Blinded payloads are free to differ.

All state types here are immutable; updates return new values that share
unmodified structure with the originals.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterator, Sequence

MASK64 = (1 << 64) - 1

#: Number of general-purpose registers in the model machine.
REG_COUNT = 32


class FaultKind(Enum):
    """Why a machine trapped or stopped with a fault.

    The first four arise from the tag policy; DECODE_ERROR and OUT_OF_RANGE
    are ordinary machine faults that never depend on blinded payloads.
    """

    BLINDED_INSTRUCTION_FETCH = "blinded-instruction-fetch"
    BLINDED_BRANCH = "blinded-branch"
    BLINDED_ADDRESS = "blinded-address"
    BLINDED_STORE_TO_UNBLINDABLE = "blinded-store-to-unblindable"
    DECODE_ERROR = "decode-error"
    OUT_OF_RANGE = "out-of-range"


class Status(Enum):
    RUNNING = "running"
    HALTED = "halted"
    FAULTED = "faulted"


@dataclass(frozen=True, slots=True)
class TaggedWord:
    """A 64-bit value plus its blindedness bit."""

    value: int
    blinded: bool = False

    def __post_init__(self) -> None:
        if not 0 <= self.value <= MASK64:
            raise ValueError(f"word out of range: {self.value:#x}")


def clear(value: int) -> TaggedWord:
    """An observable word."""
    return TaggedWord(value & MASK64, False)


def blinded(value: int) -> TaggedWord:
    """A secret word; its payload is invisible to equivalence."""
    return TaggedWord(value & MASK64, True)


ZERO = TaggedWord(0, False)


@dataclass(frozen=True, slots=True)
class RegisterFile:
    """Fixed-length array of tagged words; length is set at construction."""

    regs: tuple[TaggedWord, ...]

    @classmethod
    def zeros(cls, count: int = REG_COUNT) -> RegisterFile:
        return cls((ZERO,) * count)

    def __len__(self) -> int:
        return len(self.regs)

    def __iter__(self) -> Iterator[TaggedWord]:
        return iter(self.regs)

    def __getitem__(self, index: int) -> TaggedWord:
        return self.regs[index]

    def write(self, index: int, word: TaggedWord) -> RegisterFile:
        if not 0 <= index < len(self.regs):
            raise IndexError(f"register index {index} out of range")
        r = self.regs
        return RegisterFile(r[:index] + (word,) + r[index + 1:])


@dataclass(frozen=True, slots=True)
class MemoryImage:
    """Word-addressed tagged memory.

    Addresses are word indices in [0, len); callers are responsible for
    bounds checks (the machine turns violations into faults, never wraps).
    """

    words: tuple[TaggedWord, ...]

    @classmethod
    def zeros(cls, count: int) -> MemoryImage:
        return cls((ZERO,) * count)

    def __len__(self) -> int:
        return len(self.words)

    def __iter__(self) -> Iterator[TaggedWord]:
        return iter(self.words)

    def __getitem__(self, address: int) -> TaggedWord:
        return self.words[address]

    def store(self, address: int, word: TaggedWord) -> MemoryImage:
        if not 0 <= address < len(self.words):
            raise IndexError(f"address {address:#x} out of range")
        w = self.words
        return MemoryImage(w[:address] + (word,) + w[address + 1:])

    def retag(self, address: int, blinded: bool) -> MemoryImage:
        """Set or clear the tag of one word, payload untouched."""
        return self.store(address, TaggedWord(self.words[address].value, blinded))


@dataclass(frozen=True, slots=True)
class CacheAssignments:
    """Per-line address assignments; addresses only, never data payloads."""

    addresses: tuple[int, ...]
    valid: tuple[bool, ...]

    @classmethod
    def empty(cls, lines: int) -> CacheAssignments:
        return cls((0,) * lines, (False,) * lines)

    def __len__(self) -> int:
        return len(self.addresses)

    def assign(self, line: int, address: int) -> CacheAssignments:
        a, v = self.addresses, self.valid
        return CacheAssignments(
            a[:line] + (address,) + a[line + 1:],
            v[:line] + (True,) + v[line + 1:],
        )


@dataclass(frozen=True, slots=True)
class SystemState:
    """Complete machine state between steps.

    ``pc`` is a plain integer, deliberately untaggable: control flow is
    visible state and may never hold secrets.  ``status`` transitions are
    monotone (RUNNING may become HALTED or FAULTED, never the reverse);
    ``fault`` is set exactly when status is FAULTED.
    """

    pc: int
    registers: RegisterFile
    memory: MemoryImage
    cache: CacheAssignments
    status: Status = Status.RUNNING
    fault: FaultKind | None = None

    @classmethod
    def initial(
        cls,
        memory_words: int,
        cache_lines: int = 16,
        registers: int = REG_COUNT,
        pc: int = 0,
    ) -> SystemState:
        return cls(
            pc=pc,
            registers=RegisterFile.zeros(registers),
            memory=MemoryImage.zeros(memory_words),
            cache=CacheAssignments.empty(cache_lines),
        )


# ---------------------------------------------------------------------------
# Equivalence relations
# ---------------------------------------------------------------------------


def value_equiv(a: TaggedWord, b: TaggedWord) -> bool:
    """Words are equivalent when both are blinded, or both clear and equal."""
    if a.blinded:
        return b.blinded
    return not b.blinded and a.value == b.value


def list_equiv(xs: Sequence[TaggedWord], ys: Sequence[TaggedWord]) -> bool:
    """Pointwise value equivalence; lengths must match."""
    if len(xs) != len(ys):
        return False
    return all(
        b.blinded if a.blinded else (not b.blinded and a.value == b.value)
        for a, b in zip(xs, ys)
    )


def state_equiv(s1: SystemState, s2: SystemState) -> bool:
    """States are equivalent when an observer could not tell them apart.

    Equal pc, status, and cache assignments (address-for-address, including
    validity); registers and memory pointwise value-equivalent.  Only
    blinded payloads may differ.
    """
    return (
        s1.pc == s2.pc
        and s1.status == s2.status
        and s1.fault == s2.fault
        and s1.cache == s2.cache
        and list_equiv(s1.registers.regs, s2.registers.regs)
        and list_equiv(s1.memory.words, s2.memory.words)
    )


def redact(s: SystemState) -> SystemState:
    """Canonical representative of a state's equivalence class.

    Every blinded payload is replaced by zero; everything else is kept.
    Idempotent, and equal inputs under state_equiv redact to identical
    values.
    """
    def scrub(words: tuple[TaggedWord, ...]) -> tuple[TaggedWord, ...]:
        return tuple(
            TaggedWord(0, True) if w.blinded else w for w in words
        )

    return replace(
        s,
        registers=RegisterFile(scrub(s.registers.regs)),
        memory=MemoryImage(scrub(s.memory.words)),
    )


# ---------------------------------------------------------------------------
# Snapshot text format
# ---------------------------------------------------------------------------


def snapshot(s: SystemState) -> str:
    """Deterministic text serialization for golden tests and CLI output.

    One record per line; zero clear words and empty cache lines are
    omitted.  Order: pc, registers ascending, memory ascending, cache
    ascending, status.
    """
    lines = [f"pc={s.pc:#x}"]
    for i, w in enumerate(s.registers):
        if w.blinded or w.value != 0:
            lines.append(f"r{i}={'B' if w.blinded else 'C'}:{w.value:#x}")
    for a, w in enumerate(s.memory):
        if w.blinded or w.value != 0:
            lines.append(f"m{a}={'B' if w.blinded else 'C'}:{w.value:#x}")
    for line, (addr, valid) in enumerate(zip(s.cache.addresses, s.cache.valid)):
        if valid or addr != 0:
            lines.append(f"cache{line}={1 if valid else 0}:{addr:#x}")
    if s.status is Status.FAULTED:
        assert s.fault is not None
        lines.append(f"status=faulted:{s.fault.value}")
    else:
        lines.append(f"status={s.status.value}")
    return "\n".join(lines) + "\n"
