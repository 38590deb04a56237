from __future__ import annotations

import re
from dataclasses import dataclass

DEFAULT_SPLIT_THRESHOLD = 2000

_WS = re.compile(r"\s+")
_HEX = re.compile(r"[0-9a-fA-F]*")


class HexError(ValueError):
    pass


@dataclass(frozen=True)
class SplitBuffer:
    head: bytes
    tail: bytes


def split_buffer(payload: bytes, threshold: int = DEFAULT_SPLIT_THRESHOLD) -> SplitBuffer:
    if threshold <= 0:
        raise ValueError("threshold must be > 0")
    return SplitBuffer(bytes(payload[:threshold]), bytes(payload[threshold:]))


def hex_encode(data: bytes) -> str:
    return data.hex()


def normalize_hex(text: str) -> str:
    return _WS.sub("", text).lower()


def hex_decode_lenient(text: str) -> bytes:
    """Decode hex, padding an odd-length string with a trailing ``0``."""
    s = _WS.sub("", text)
    if not _HEX.fullmatch(s):
        raise HexError(f"non-hex characters in {s[:40]!r}")
    if len(s) % 2:
        s += "0"
    return bytes.fromhex(s)


def recombine(split: SplitBuffer, mutated_head: bytes) -> bytes:
    return bytes(mutated_head) + split.tail
