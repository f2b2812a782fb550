"""Minimal ELF64 reader: sections, symbols, and RELA relocations.

Covers exactly what the toolchain needs from little-endian x86-64
relocatable objects and executables produced by mainstream compilers.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

from .errors import ExtractionError

_EHDR = struct.Struct("<16sHHIQQQIHHHHHH")
_SHDR = struct.Struct("<IIQQQQIIQQ")
_SYM = struct.Struct("<IBBHQQ")
_RELA = struct.Struct("<QQq")

SHT_SYMTAB = 2
SHT_RELA = 4
STT_FUNC = 2
STB_LOCAL = 0

# Field widths (bytes patched at link time) for x86-64 relocation types.
# Unknown types fall back to 4 bytes; mainstream compilers emit these.
RELOC_FIELD_WIDTHS = {
    1: 8,   # R_X86_64_64
    2: 4,   # R_X86_64_PC32
    3: 4,   # R_X86_64_GOT32
    4: 4,   # R_X86_64_PLT32
    9: 4,   # R_X86_64_GOTPCREL
    10: 4,  # R_X86_64_32
    11: 4,  # R_X86_64_32S
    12: 2,  # R_X86_64_16
    13: 2,  # R_X86_64_PC16
    14: 1,  # R_X86_64_8
    15: 1,  # R_X86_64_PC8
    19: 4,  # R_X86_64_TLSGD
    20: 4,  # R_X86_64_TLSLD
    21: 4,  # R_X86_64_DTPOFF32
    22: 4,  # R_X86_64_GOTTPOFF
    23: 4,  # R_X86_64_TPOFF32
    24: 8,  # R_X86_64_PC64
    25: 8,  # R_X86_64_GOTOFF64
    26: 4,  # R_X86_64_GOTPC32
    41: 4,  # R_X86_64_GOTPCRELX
    42: 4,  # R_X86_64_REX_GOTPCRELX
}
DEFAULT_RELOC_WIDTH = 4


@dataclass(frozen=True)
class Section:
    name: str
    sh_type: int
    addr: int
    offset: int
    size: int
    link: int
    info: int
    entsize: int


@dataclass(frozen=True)
class Symbol:
    name: str
    value: int
    size: int
    info: int
    shndx: int

    @property
    def sym_type(self) -> int:
        return self.info & 0xF

    @property
    def binding(self) -> int:
        return self.info >> 4

    @property
    def is_function(self) -> bool:
        return self.sym_type == STT_FUNC

    @property
    def is_defined(self) -> bool:
        return self.shndx != 0


@dataclass(frozen=True)
class Relocation:
    offset: int  # within the target section
    rtype: int
    symbol_index: int
    addend: int

    @property
    def field_width(self) -> int:
        return RELOC_FIELD_WIDTHS.get(self.rtype, DEFAULT_RELOC_WIDTH)


class ElfFile:
    def __init__(self, path):
        self.path = Path(path)
        data = self.path.read_bytes()
        if data[:4] != b"\x7fELF":
            raise ExtractionError(f"{self.path}: not an ELF file")
        if data[4] != 2 or data[5] != 1:
            raise ExtractionError(f"{self.path}: only little-endian ELF64 is supported")
        self._data = data
        (_, _, _, _, _, _, shoff, _, _, _, _, shentsize, shnum, shstrndx) = _EHDR.unpack_from(
            data, 0
        )
        raw_sections = []
        for i in range(shnum):
            fields = _SHDR.unpack_from(data, shoff + i * shentsize)
            raw_sections.append(fields)
        shstr_off = raw_sections[shstrndx][4]
        shstr_size = raw_sections[shstrndx][5]
        shstrtab = data[shstr_off : shstr_off + shstr_size]
        self.sections: list[Section] = []
        for name_off, sh_type, _, addr, offset, size, link, info, _, entsize in raw_sections:
            self.sections.append(
                Section(
                    name=_cstr(shstrtab, name_off),
                    sh_type=sh_type,
                    addr=addr,
                    offset=offset,
                    size=size,
                    link=link,
                    info=info,
                    entsize=entsize,
                )
            )

    def section_data(self, section: Section) -> bytes:
        return self._data[section.offset : section.offset + section.size]

    def section_by_name(self, name: str):
        for s in self.sections:
            if s.name == name:
                return s
        return None

    def symbols(self) -> list[Symbol]:
        out: list[Symbol] = []
        for idx, s in enumerate(self.sections):
            if s.sh_type != SHT_SYMTAB:
                continue
            strtab = self.section_data(self.sections[s.link])
            raw = self.section_data(s)
            count = s.size // s.entsize if s.entsize else 0
            for i in range(count):
                name_off, info, _, shndx, value, size = _SYM.unpack_from(raw, i * s.entsize)
                out.append(
                    Symbol(
                        name=_cstr(strtab, name_off),
                        value=value,
                        size=size,
                        info=info,
                        shndx=shndx,
                    )
                )
        return out

    def defined_functions(self) -> list[Symbol]:
        return [s for s in self.symbols() if s.is_function and s.is_defined and s.name]

    def find_symbol(self, name: str):
        for s in self.symbols():
            if s.name == name:
                return s
        return None

    def relocations_for(self, section_name: str) -> list[Relocation]:
        """RELA entries targeting the named section (e.g. ``.text``)."""
        rela = self.section_by_name(f".rela{section_name}")
        if rela is None or rela.sh_type != SHT_RELA:
            return []
        raw = self.section_data(rela)
        out = []
        count = rela.size // rela.entsize if rela.entsize else 0
        for i in range(count):
            offset, info, addend = _RELA.unpack_from(raw, i * rela.entsize)
            out.append(
                Relocation(
                    offset=offset,
                    rtype=info & 0xFFFFFFFF,
                    symbol_index=info >> 32,
                    addend=addend,
                )
            )
        return out

    def section_of_symbol(self, sym: Symbol) -> Section:
        if not sym.is_defined or sym.shndx >= len(self.sections):
            raise ExtractionError(f"symbol {sym.name!r} has no backing section")
        return self.sections[sym.shndx]


def _cstr(table: bytes, offset: int) -> str:
    end = table.find(b"\x00", offset)
    return table[offset : end if end != -1 else len(table)].decode("utf-8", errors="replace")
