"""Base-128 varints (low 7 bits first) and zigzag mapping for signed values."""

MAX_VARINT_BYTES = 10


class Incomplete(Exception):
    """Ran out of bytes in the middle of a value."""


class MalformedVarint(Exception):
    def __init__(self, offset: int):
        self.offset = offset
        super().__init__(f"malformed varint at offset {offset}")


def encode_varint(n: int) -> bytes:
    if n < 0:
        raise ValueError("varint must be non-negative; zigzag signed values first")
    out = bytearray()
    while True:
        part = n & 0x7F
        n >>= 7
        if n:
            out.append(part | 0x80)
        else:
            out.append(part)
            return bytes(out)


def decode_varint(buf, pos: int):
    """Return ``(value, new_pos)``; raises :class:`Incomplete` at end of buffer."""
    start = pos
    value = 0
    shift = 0
    while True:
        if pos >= len(buf):
            raise Incomplete()
        if pos - start >= MAX_VARINT_BYTES:
            raise MalformedVarint(start)
        b = buf[pos]
        pos += 1
        value |= (b & 0x7F) << shift
        if not b & 0x80:
            return value, pos
        shift += 7


def zigzag(v: int) -> int:
    return (v << 1) if v >= 0 else ((-v) << 1) - 1


def unzigzag(z: int) -> int:
    return (z >> 1) if not z & 1 else -((z + 1) >> 1)
