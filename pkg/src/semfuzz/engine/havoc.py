"""AFL-style havoc mutation."""

from __future__ import annotations

import random
from typing import Sequence

MAX_STACK = 64
ARITH_MAX = 35
MAX_LEN = 1 << 14

INTERESTING_8 = (-128, -1, 0, 1, 16, 32, 64, 100, 127)
INTERESTING_16 = INTERESTING_8 + (-32768, -129, 128, 255, 256, 512, 1000, 1024, 4096, 32767)
INTERESTING_32 = INTERESTING_16 + (
    -2147483648, -100663046, -32769, 32768, 65535, 65536, 100663045, 2147483647,
)
INTERESTING = {1: INTERESTING_8, 2: INTERESTING_16, 4: INTERESTING_32}

OPS = (
    "flip_bit",
    "random_byte",
    "arith",
    "interesting",
    "delete_block",
    "duplicate_block",
    "dict_overwrite",
    "dict_insert",
)


def flip_bit(buf: bytearray, bit: int) -> None:
    buf[bit >> 3] ^= 1 << (bit & 7)


def set_byte(buf: bytearray, pos: int, value: int) -> None:
    buf[pos] = value & 0xFF


def arith(buf: bytearray, pos: int, width: int, delta: int) -> None:
    """Add ``delta`` to the little-endian field of ``width`` bytes at ``pos``."""
    mask = (1 << (8 * width)) - 1
    v = (int.from_bytes(buf[pos : pos + width], "little") + delta) & mask
    buf[pos : pos + width] = v.to_bytes(width, "little")


def put_interesting(buf: bytearray, pos: int, width: int, value: int) -> None:
    mask = (1 << (8 * width)) - 1
    buf[pos : pos + width] = (value & mask).to_bytes(width, "little")


def delete_block(buf: bytearray, pos: int, length: int) -> None:
    del buf[pos : pos + length]


def duplicate_block(buf: bytearray, src: int, length: int, dst: int) -> None:
    buf[dst:dst] = buf[src : src + length]


def overwrite_token(buf: bytearray, pos: int, token: bytes) -> None:
    buf[pos : pos + len(token)] = token


def insert_token(buf: bytearray, pos: int, token: bytes) -> None:
    buf[pos:pos] = token


def _block_len(rng: random.Random, limit: int) -> int:
    # Bias towards short blocks, as AFL does.
    cap = min(limit, rng.choice((8, 32, 128, 1500)))
    return rng.randint(1, max(1, cap))


def apply_random_op(buf: bytearray, rng: random.Random, dictionary: Sequence[bytes]) -> None:
    n_ops = len(OPS) if dictionary else len(OPS) - 2
    op = OPS[rng.randrange(n_ops)]
    n = len(buf)
    if op == "flip_bit":
        flip_bit(buf, rng.randrange(n * 8))
    elif op == "random_byte":
        # xor with 1..255 so the byte always changes
        pos = rng.randrange(n)
        buf[pos] ^= rng.randint(1, 255)
    elif op == "arith":
        width = rng.choice((1, 2, 4))
        if width > n:
            width = 1
        delta = rng.randint(1, ARITH_MAX)
        if rng.random() < 0.5:
            delta = -delta
        arith(buf, rng.randrange(n - width + 1), width, delta)
    elif op == "interesting":
        width = rng.choice((1, 2, 4))
        if width > n:
            width = 1
        put_interesting(buf, rng.randrange(n - width + 1), width, rng.choice(INTERESTING[width]))
    elif op == "delete_block":
        if n < 2:
            return
        length = _block_len(rng, n - 1)
        delete_block(buf, rng.randrange(n - length + 1), length)
    elif op == "duplicate_block":
        if n >= MAX_LEN:
            return
        length = _block_len(rng, n)
        src = rng.randrange(n - length + 1)
        duplicate_block(buf, src, length, rng.randrange(n + 1))
    elif op == "dict_overwrite":
        token = rng.choice(dictionary)
        if len(token) > n:
            return
        overwrite_token(buf, rng.randrange(n - len(token) + 1), token)
    elif op == "dict_insert":
        if n >= MAX_LEN:
            return
        insert_token(buf, rng.randrange(n + 1), rng.choice(dictionary))


def mutate_builtin(payload: bytes, rng: random.Random, dictionary: Sequence[bytes] = ()) -> bytes:
    """Return a havoc-mutated copy of ``payload`` (stack of 1..64 random operators)."""
    buf = bytearray(payload)
    if not buf:
        buf.append(rng.randrange(256))
    for _ in range(rng.randint(1, MAX_STACK)):
        apply_random_op(buf, rng, dictionary)
        if not buf:
            buf.append(rng.randrange(256))
    return bytes(buf)
