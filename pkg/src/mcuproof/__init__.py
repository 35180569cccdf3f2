"""mcuproof: co-simulator of hardware-assisted attestation for low-end MCUs."""

from .asm import AsmProgram, assemble, disassemble, parse
from .bus import BusSignals, MemAccess
from .ief import AbortedByReset, AttReport, AttScope, Challenge, canonical_encode, ief_run
from .mcu import Mcu, McuState, load_program
from .memmap import DEFAULT_MAP, MemoryMap, Region
from .monitors import ApexConfig, MonitorBank, Violation

__version__ = "0.1.0"
