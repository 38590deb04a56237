"""RESP2 framing: command encoding and an incremental reply/command parser."""

from __future__ import annotations

from typing import Sequence, Union

CRLF = b"\r\n"

Arg = Union[bytes, bytearray, memoryview, str, int]


class ProtocolError(Exception):
    pass


class RespError(Exception):
    """An error reply (``-ERR ...``); returned by the parser, raised by clients."""

    def __eq__(self, other: object) -> bool:
        return isinstance(other, RespError) and self.args == other.args

    def __hash__(self) -> int:
        return hash(self.args)


class _Incomplete(Exception):
    pass


def _as_bytes(arg: Arg) -> bytes:
    if isinstance(arg, (bytes, bytearray, memoryview)):
        return bytes(arg)
    if isinstance(arg, str):
        return arg.encode()
    if isinstance(arg, int):
        return str(arg).encode()
    raise TypeError(f"cannot encode {type(arg).__name__} as a bulk string")


def encode_command(args: Sequence[Arg]) -> bytes:
    if not args:
        raise ValueError("command must have at least one argument")
    parts = [b"*%d\r\n" % len(args)]
    for a in args:
        b = _as_bytes(a)
        parts.append(b"$%d\r\n" % len(b))
        parts.append(b)
        parts.append(CRLF)
    return b"".join(parts)


wire_encode = encode_command


def encode_simple(text: str) -> bytes:
    return b"+" + text.encode() + CRLF


def encode_error(text: str) -> bytes:
    return b"-" + text.encode() + CRLF


def encode_integer(n: int) -> bytes:
    return b":%d\r\n" % n


def encode_bulk(value) -> bytes:
    if value is None:
        return b"$-1\r\n"
    return b"$%d\r\n" % len(value) + bytes(value) + CRLF


def encode_array(items) -> bytes:
    if items is None:
        return b"*-1\r\n"
    return b"*%d\r\n" % len(items) + b"".join(encode_bulk(i) for i in items)


class RespParser:
    """Feed bytes in, pull complete values out.

    ``get()`` returns ``RespParser.INCOMPLETE`` until a full value is buffered.
    """

    INCOMPLETE = object()

    def __init__(self, max_buffer: int = 0):
        self._buf = bytearray()
        self._pos = 0
        self.max_buffer = max_buffer

    def feed(self, data: bytes) -> None:
        if self._pos:
            del self._buf[: self._pos]
            self._pos = 0
        self._buf += data
        if self.max_buffer and len(self._buf) > self.max_buffer:
            raise ProtocolError("read buffer limit exceeded")

    @property
    def buffered(self) -> int:
        return len(self._buf) - self._pos

    def get(self):
        pos = self._pos
        try:
            value, end = self._parse(pos)
        except _Incomplete:
            return self.INCOMPLETE
        self._pos = end
        return value

    def _line(self, pos: int) -> tuple[bytes, int]:
        end = self._buf.find(CRLF, pos)
        if end < 0:
            if len(self._buf) - pos > 64 * 1024:
                raise ProtocolError("header line too long")
            raise _Incomplete
        return bytes(self._buf[pos:end]), end + 2

    def _int(self, raw: bytes) -> int:
        try:
            return int(raw)
        except ValueError:
            raise ProtocolError(f"bad integer {raw!r}") from None

    def _parse(self, pos: int):
        if pos >= len(self._buf):
            raise _Incomplete
        kind = self._buf[pos]
        line, pos = self._line(pos + 1)
        if kind == 0x2B:  # +
            return line.decode("utf-8", "replace"), pos
        if kind == 0x2D:  # -
            return RespError(line.decode("utf-8", "replace")), pos
        if kind == 0x3A:  # :
            return self._int(line), pos
        if kind == 0x24:  # $
            n = self._int(line)
            if n == -1:
                return None, pos
            if n < 0:
                raise ProtocolError(f"bad bulk length {n}")
            if len(self._buf) < pos + n + 2:
                raise _Incomplete
            if self._buf[pos + n : pos + n + 2] != CRLF:
                raise ProtocolError("bulk string not terminated by CRLF")
            return bytes(self._buf[pos : pos + n]), pos + n + 2
        if kind == 0x2A:  # *
            n = self._int(line)
            if n == -1:
                return None, pos
            if n < 0:
                raise ProtocolError(f"bad array length {n}")
            items = []
            for _ in range(n):
                item, pos = self._parse(pos)
                items.append(item)
            return items, pos
        raise ProtocolError(f"unknown type byte {bytes([kind])!r}")


def wire_decode(data: bytes):
    """Decode exactly one complete value from ``data``."""
    p = RespParser()
    p.feed(data)
    value = p.get()
    if value is RespParser.INCOMPLETE:
        raise ProtocolError("incomplete frame")
    if p.buffered:
        raise ProtocolError("trailing bytes after frame")
    return value
