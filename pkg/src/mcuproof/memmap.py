"""Memory map of the emulated MCU and the raw image + sidecar map format.

Addresses are 16-bit and index a flat 64 KiB space. Regions are half-open
``[start, end)`` byte ranges. The peripheral page and the monitor-owned page
have fixed layouts; their register addresses are module constants.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path


class MapError(ValueError):
    pass


@dataclass(frozen=True)
class Region:
    start: int
    length: int

    @property
    def end(self) -> int:
        return self.start + self.length

    def __contains__(self, addr: object) -> bool:
        return isinstance(addr, int) and self.start <= addr < self.end

    def overlaps(self, start: int, length: int) -> bool:
        return start < self.end and self.start < start + length


# Peripheral registers (word addresses inside the periph region).
GPIO_IN = 0xF000
GPIO_OUT = 0xF002
RTC = 0xF004
IRQ_CTL = 0xF006
IRQ_VEC = 0xF008
DMA_SRC = 0xF010
DMA_DST = 0xF012
DMA_LEN = 0xF014
DMA_CTL = 0xF016
ATT_OUT = 0xF020

# Monitor-owned page.
CHAL = 0xFF00
CHAL_LEN = 16
LMT = 0xFF10
LMT_LEN = 16
EXEC = 0xFF20
ER_MIN = 0xFF22
ER_MAX = 0xFF24
OR_MIN = 0xFF26
OR_MAX = 0xFF28
META = ER_MIN
META_LEN = 8

# ROM layout.
BOOT_VECTOR = 0x0000
ISR_STUB = 0x0004
SWATT_ENTRY = 0x0100
SWATT_SWEEP = 0x0102
SWATT_EXIT = 0x0104
K_ADDR = 0x0FE0
K_LEN = 32

PERIPH_SYMBOLS = {
    "GPIO_IN": GPIO_IN,
    "GPIO_OUT": GPIO_OUT,
    "RTC": RTC,
    "IRQ_CTL": IRQ_CTL,
    "IRQ_VEC": IRQ_VEC,
    "DMA_SRC": DMA_SRC,
    "DMA_DST": DMA_DST,
    "DMA_LEN": DMA_LEN,
    "DMA_CTL": DMA_CTL,
    "ATT_OUT": ATT_OUT,
    "CHAL": CHAL,
    "LMT": LMT,
    "EXEC": EXEC,
    "ER_MIN": ER_MIN,
    "ER_MAX": ER_MAX,
    "OR_MIN": OR_MIN,
    "OR_MAX": OR_MAX,
    "SWATT_ENTRY": SWATT_ENTRY,
}


@dataclass(frozen=True)
class MemoryMap:
    rom: Region = Region(0x0000, 0x1000)
    pmem: Region = Region(0x1000, 0x2000)
    dmem: Region = Region(0x3000, 0x1000)
    periph: Region = Region(0xF000, 0x0100)
    monitor: Region = Region(0xFF00, 0x0100)
    k_region: Region = Region(K_ADDR, K_LEN)
    swatt_region: Region = Region(SWATT_ENTRY, SWATT_EXIT + 2 - SWATT_ENTRY)
    chal: Region = field(default=Region(CHAL, CHAL_LEN))
    lmt: Region = field(default=Region(LMT, LMT_LEN))
    meta: Region = field(default=Region(EXEC, 2 + META_LEN))

    def __post_init__(self) -> None:
        top = [self.rom, self.pmem, self.dmem, self.periph, self.monitor]
        for r in top:
            if r.start < 0 or r.end > 0x10000:
                raise MapError(f"region {r} leaves the 64 KiB space")
        for i, r in enumerate(top):
            for s in top[i + 1:]:
                if r.overlaps(s.start, s.length):
                    raise MapError(f"regions {r} and {s} overlap")
        for inner, outer in ((self.k_region, self.rom), (self.swatt_region, self.rom),
                             (self.chal, self.monitor), (self.lmt, self.monitor),
                             (self.meta, self.monitor)):
            if inner.start < outer.start or inner.end > outer.end:
                raise MapError(f"{inner} must lie inside {outer}")
        if self.k_region.overlaps(self.swatt_region.start, self.swatt_region.length):
            raise MapError("K and SW-Att overlap")

    @property
    def regions(self) -> dict[str, Region]:
        return {"rom": self.rom, "pmem": self.pmem, "dmem": self.dmem,
                "periph": self.periph, "monitor": self.monitor}

    def is_mapped(self, addr: int) -> bool:
        return any(addr in r for r in self.regions.values())

    def region_of(self, addr: int) -> str | None:
        for name, r in self.regions.items():
            if addr in r:
                return name
        return None

    def range_mapped(self, start: int, length: int) -> bool:
        if length <= 0:
            return True
        return any(start in r and start + length <= r.end for r in self.regions.values())

    @property
    def stack_top(self) -> int:
        return self.dmem.end

    def with_pmem_size(self, size: int) -> "MemoryMap":
        return replace(self, pmem=Region(self.pmem.start, size))


DEFAULT_MAP = MemoryMap()


def write_map_file(path: str | Path, mmap: MemoryMap) -> None:
    """Sidecar map: one ``name start length`` line per region, hex numbers."""
    lines = ["# region start length"]
    named = dict(mmap.regions, k=mmap.k_region, swatt=mmap.swatt_region)
    for name, r in named.items():
        lines.append(f"{name} 0x{r.start:04x} 0x{r.length:04x}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_map_file(path: str | Path) -> MemoryMap:
    kw: dict[str, Region] = {}
    keys = {"rom": "rom", "pmem": "pmem", "dmem": "dmem", "periph": "periph",
            "monitor": "monitor", "k": "k_region", "swatt": "swatt_region"}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3 or parts[0] not in keys:
            raise MapError(f"{path}:{n}: bad map line {line!r}")
        kw[keys[parts[0]]] = Region(int(parts[1], 0), int(parts[2], 0))
    return MemoryMap(**kw)


def save_image(path: str | Path, image: bytes, mmap: MemoryMap = DEFAULT_MAP) -> None:
    """Write ``image`` (pmem contents) to ``path`` and its map to ``path.map``."""
    path = Path(path)
    path.write_bytes(image)
    write_map_file(path.with_suffix(path.suffix + ".map"), mmap)


def load_image(path: str | Path) -> tuple[bytes, MemoryMap]:
    path = Path(path)
    sidecar = path.with_suffix(path.suffix + ".map")
    mmap = read_map_file(sidecar) if sidecar.exists() else DEFAULT_MAP
    return path.read_bytes(), mmap
