"""Byte and disassembly listings for one extracted function.

Shared by the task corpus (tasks may ship reference bytes), the toolchain
(which produces listings from compiled objects), and the metrics layer.
"""

from __future__ import annotations

import base64
from dataclasses import dataclass


@dataclass(frozen=True)
class ByteListing:
    """Machine code of one function plus its relocation wildcard mask.

    ``wildcard_mask[i]`` is true when byte ``i`` is covered by a pending
    relocation and therefore semantically indeterminate before linking.
    """

    bytes: bytes
    wildcard_mask: tuple[bool, ...]
    symbol: str = ""
    origin_profile: str = ""

    def __post_init__(self):
        if len(self.bytes) != len(self.wildcard_mask):
            raise ValueError(
                f"mask length {len(self.wildcard_mask)} != byte length {len(self.bytes)}"
            )

    @classmethod
    def plain(cls, data: bytes, symbol: str = "", origin_profile: str = "") -> "ByteListing":
        """Listing with no wildcard positions."""
        return cls(bytes(data), (False,) * len(data), symbol, origin_profile)

    def to_json(self) -> dict:
        return {
            "bytes_b64": base64.b64encode(self.bytes).decode("ascii"),
            "mask_b64": base64.b64encode(
                bytes(1 if m else 0 for m in self.wildcard_mask)
            ).decode("ascii"),
            "symbol": self.symbol,
            "origin_profile": self.origin_profile,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ByteListing":
        data = base64.b64decode(obj["bytes_b64"])
        mask = tuple(b != 0 for b in base64.b64decode(obj["mask_b64"]))
        return cls(data, mask, obj.get("symbol", ""), obj.get("origin_profile", ""))


@dataclass(frozen=True)
class DisassemblyListing:
    """Raw disassembler output for one function plus its canonical form.

    The canonical text carries no absolute virtual addresses: in-function
    branch targets become local ``L<k>`` labels and relocation-resolved
    immediates are masked, so listings of the same code at different load
    addresses compare equal.
    """

    raw: str
    canonical: str
    symbol: str = ""
    stripped_view: bool = False

    def to_json(self) -> dict:
        return {
            "raw": self.raw,
            "canonical": self.canonical,
            "symbol": self.symbol,
            "stripped_view": self.stripped_view,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DisassemblyListing":
        return cls(
            raw=obj["raw"],
            canonical=obj["canonical"],
            symbol=obj.get("symbol", ""),
            stripped_view=obj.get("stripped_view", False),
        )
