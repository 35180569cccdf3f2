"""Per-step bus observations handed to the hardware monitors."""

from __future__ import annotations

import enum
from dataclasses import dataclass


class Kind(str, enum.Enum):
    READ = "read"
    WRITE = "write"


class Agent(str, enum.Enum):
    CORE = "core"
    DMA = "dma"


@dataclass(frozen=True)
class MemAccess:
    addr: int
    kind: Kind
    agent: Agent = Agent.CORE

    @property
    def is_write(self) -> bool:
        return self.kind is Kind.WRITE

    def to_dict(self) -> dict:
        return {"addr": self.addr, "kind": self.kind.value, "agent": self.agent.value}


@dataclass(frozen=True)
class BusSignals:
    """One record per executed instruction, serviced interrupt or DMA word.

    ``accesses`` lists the data accesses of the step in bus order (a DMA word
    transfer is a read followed by a write). ``mem_access`` is the last one,
    which is the write whenever the step writes.
    """

    pc: int
    accesses: tuple[MemAccess, ...] = ()
    irq: bool = False
    pmem_write: bool = False
    cycle: int = 0

    @property
    def mem_access(self) -> MemAccess | None:
        return self.accesses[-1] if self.accesses else None

    @property
    def dma(self) -> bool:
        return any(a.agent is Agent.DMA for a in self.accesses)

    def writes(self):
        return (a for a in self.accesses if a.kind is Kind.WRITE)

    def to_dict(self) -> dict:
        return {
            "cycle": self.cycle,
            "pc": self.pc,
            "irq": self.irq,
            "pmem_write": self.pmem_write,
            "accesses": [a.to_dict() for a in self.accesses],
        }
