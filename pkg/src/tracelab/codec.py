"""Compressed trace wire format (``.etr``): encoder, incremental decoder, size report.

Packet layout, one header byte followed by the payload::

    0x00 OVERFLOW
    0x01 SYNC    varint addr, varint thread, varint cycle
    0x02 ATOMS   u8 count (1..64), ceil(count/8) bytes, bit i LSB-first = i-th outcome
    0x03 TARGET  varint addr
    0x04 CTX     varint thread, varint cycle (the current thread stops here)
    0x05 ITM     varint (channel << 1 | is_float), value
    0x06 DATA    varint skip, varint mem-addr, zigzag varint value
    0x07 OUTPUT  varint (port << 1 | is_float), value

A value is a zigzag varint, or an 8-byte little-endian double when ``is_float``.
``skip`` counts untraced stores since the previous DATA or SYNC. A SYNC is
emitted on every thread switch, every ``sync_period`` instructions and at
any cycle discontinuity.
"""
from __future__ import annotations

import struct
from collections import deque
from dataclasses import dataclass
from typing import FrozenSet, Iterable, Iterator, List, NamedTuple, Optional, Tuple, Union

from .program import BinaryImage
from .sim import ExecRecord
from .varint import Incomplete, MalformedVarint, decode_varint, encode_varint, unzigzag, zigzag

OVERFLOW, SYNC, ATOMS, TARGET, CTX, ITM, DATA, OUTPUT = range(8)
PACKET_NAMES = ["OVERFLOW", "SYNC", "ATOMS", "TARGET", "CTX", "ITM", "DATA", "OUTPUT"]
MAX_ATOMS = 64


class DecodeError(Exception):
    def __init__(self, offset: int, message: str = ""):
        self.offset = offset
        super().__init__(f"{type(self).__name__} at offset {offset}" + (f": {message}" if message else ""))


class UnknownHeader(DecodeError):
    pass


class TruncatedPacket(DecodeError):
    pass


class MalformedPacket(DecodeError):
    pass


class Desync(DecodeError):
    pass


class AtomUnderflow(DecodeError):
    pass


class TraceImageMismatch(Exception):
    pass


@dataclass
class EncoderConfig:
    sync_period: int = 4096
    data_trace: Union[str, FrozenSet[int]] = "off"  # "off" | "full" | set of watched addrs
    outputs_in_trace: bool = True

    def __post_init__(self):
        if self.sync_period < 1:
            raise ValueError("sync_period must be >= 1")
        if not isinstance(self.data_trace, str):
            self.data_trace = frozenset(self.data_trace)
        elif self.data_trace not in ("off", "full"):
            raise ValueError(f"bad data_trace {self.data_trace!r}")

    def traced(self, addr: int) -> bool:
        if self.data_trace == "off":
            return False
        if self.data_trace == "full":
            return True
        return addr in self.data_trace


def _value_bytes(tag: int, value) -> bytes:
    if isinstance(value, float):
        return encode_varint(tag << 1 | 1) + struct.pack("<d", value)
    return encode_varint(tag << 1) + encode_varint(zigzag(int(value)))


class Packet(NamedTuple):
    kind: int
    offset: int
    a: object = None
    b: object = None
    c: object = None

    def describe(self) -> str:
        name = PACKET_NAMES[self.kind]
        if self.kind == ATOMS:
            bits = "".join("1" if x else "0" for x in self.a)
            return f"{name} {len(self.a)} {bits}"
        args = [x for x in (self.a, self.b, self.c) if x is not None]
        return " ".join([name] + [str(x) for x in args])


# ---------------------------------------------------------------------------
# encoder

_SELF_TERMINATING = ("halt", "ret")


class TraceEncoder:
    """Single-pass encoder. ``feed`` one record at a time, then ``finish``.

    Emitted packets are kept as ``(cycle, bytes)`` in :attr:`packets` unless a
    ``sink`` callable is given.
    """

    def __init__(self, image: BinaryImage, config: Optional[EncoderConfig] = None, sink=None):
        self.image = image
        self.config = config or EncoderConfig()
        self.kinds = [ins.kind for ins in image.instructions]
        self.packets: List[Tuple[int, bytes]] = []
        self._sink = sink if sink is not None else self.packets.append
        self.atoms: List[bool] = []
        self.thread: Optional[int] = None
        self.since_sync = 0
        self.untraced_stores = 0
        self.count = 0
        self.nbytes = 0
        self.last: Optional[ExecRecord] = None
        self._atom_cycle = 0

    def _emit(self, cycle: int, data: bytes):
        self.nbytes += len(data)
        self._sink((cycle, data))

    def _flush_atoms(self):
        if self.atoms:
            bits = self.atoms
            payload = bytearray((len(bits) + 7) // 8)
            for i, bit in enumerate(bits):
                if bit:
                    payload[i >> 3] |= 1 << (i & 7)
            self._emit(self._atom_cycle, bytes((ATOMS, len(bits))) + bytes(payload))
            self.atoms = []

    def _atom(self, cycle: int, bit: bool):
        self.atoms.append(bit)
        self._atom_cycle = cycle
        if len(self.atoms) == MAX_ATOMS:
            self._flush_atoms()

    def _packet(self, cycle: int, data: bytes):
        self._flush_atoms()
        self._emit(cycle, data)

    def feed(self, rec: ExecRecord):
        if not 0 <= rec.addr < len(self.kinds):
            raise TraceImageMismatch(f"record addr {rec.addr} outside image")
        cycle = rec.cycle
        stall = self.last is not None and cycle != self.last.cycle + 1  # e.g. charged by an intrusive probe
        if stall:
            self._stop_marker(self.last)
        if self.thread is None or rec.thread != self.thread or self.since_sync >= self.config.sync_period or stall:
            self._packet(cycle, bytes((SYNC,)) + encode_varint(rec.addr)
                         + encode_varint(rec.thread) + encode_varint(cycle))
            self.thread = rec.thread
            self.since_sync = 0
            self.untraced_stores = 0
        self.since_sync += 1
        self.count += 1
        self.last = rec

        kind = rec.kind
        if kind == "plain":
            return
        if kind == "branch":
            self._atom(cycle, bool(rec.a))
        elif kind == "indirect":
            self._packet(cycle, bytes((TARGET,)) + encode_varint(rec.a))
        elif kind == "store":
            if self.config.traced(rec.a):
                self._packet(cycle, bytes((DATA,)) + encode_varint(self.untraced_stores)
                             + encode_varint(rec.a) + encode_varint(zigzag(rec.b)))
                self.untraced_stores = 0
            else:
                self.untraced_stores += 1
        elif kind == "output":
            if self.config.outputs_in_trace:
                self._packet(cycle, bytes((OUTPUT,)) + _value_bytes(rec.a, rec.b))
        elif kind == "itm":
            self._packet(cycle, bytes((ITM,)) + _value_bytes(rec.a, rec.b))
        elif kind == "lock_acq":
            self._atom(cycle, True)
        elif kind == "lock_req":
            self._atom(cycle, False)
        elif kind in ("lock_rel", "trap"):
            pass
        else:
            raise TraceImageMismatch(f"unknown record kind {kind!r}")

    def finish(self):
        self._flush_atoms()
        last = self.last
        if last is None:
            return
        ends_itself = (last.kind == "lock_req"
                       or (last.kind == "plain" and self.kinds[last.addr] in _SELF_TERMINATING))
        if not ends_itself:
            self._stop_marker(last)

    def _stop_marker(self, last: ExecRecord):
        # the decoder stops walking the current thread exactly here
        self._packet(last.cycle + 1, bytes((CTX,)) + encode_varint(last.thread) + encode_varint(last.cycle + 1))

    def encode(self, records: Iterable[ExecRecord]) -> bytes:
        for rec in records:
            self.feed(rec)
        self.finish()
        return b"".join(data for _, data in self.packets)


def encode(trace: Iterable[ExecRecord], image: BinaryImage, config: Optional[EncoderConfig] = None) -> bytes:
    return TraceEncoder(image, config).encode(trace)


# ---------------------------------------------------------------------------
# packet parsing


def _read_value(buf, pos):
    tagged, pos = decode_varint(buf, pos)
    tag = tagged >> 1
    if tagged & 1:
        if pos + 8 > len(buf):
            raise Incomplete()
        return tag, struct.unpack_from("<d", buf, pos)[0], pos + 8
    z, pos = decode_varint(buf, pos)
    return tag, unzigzag(z), pos


def parse_packet(buf, pos: int) -> Tuple[Packet, int]:
    """Parse one packet at ``pos``. Raises :class:`Incomplete` if it is cut short."""
    if pos >= len(buf):
        raise Incomplete()
    h = buf[pos]
    p = pos + 1
    if h == OVERFLOW:
        return Packet(OVERFLOW, pos), p
    if h == SYNC:
        addr, p = decode_varint(buf, p)
        thread, p = decode_varint(buf, p)
        cycle, p = decode_varint(buf, p)
        return Packet(SYNC, pos, addr, thread, cycle), p
    if h == ATOMS:
        if p >= len(buf):
            raise Incomplete()
        n = buf[p]
        p += 1
        if not 1 <= n <= MAX_ATOMS:
            raise MalformedPacket(pos, f"atom count {n}")
        nb = (n + 7) // 8
        if p + nb > len(buf):
            raise Incomplete()
        raw = buf[p:p + nb]
        bits = tuple(bool(raw[i >> 3] >> (i & 7) & 1) for i in range(n))
        if n % 8 and raw[-1] >> (n % 8):
            raise MalformedPacket(pos, "non-zero atom padding")
        return Packet(ATOMS, pos, bits), p + nb
    if h == TARGET:
        addr, p = decode_varint(buf, p)
        return Packet(TARGET, pos, addr), p
    if h == CTX:
        thread, p = decode_varint(buf, p)
        cycle, p = decode_varint(buf, p)
        return Packet(CTX, pos, thread, cycle), p
    if h in (ITM, OUTPUT):
        tag, value, p = _read_value(buf, p)
        return Packet(h, pos, tag, value), p
    if h == DATA:
        skip, p = decode_varint(buf, p)
        addr, p = decode_varint(buf, p)
        z, p = decode_varint(buf, p)
        return Packet(DATA, pos, skip, addr, unzigzag(z)), p
    raise UnknownHeader(pos, f"header 0x{h:02x}")


def iter_packets(data: bytes) -> Iterator[Packet]:
    pos = 0
    while pos < len(data):
        try:
            pkt, pos = parse_packet(data, pos)
        except Incomplete:
            raise TruncatedPacket(pos) from None
        yield pkt


# ---------------------------------------------------------------------------
# decoder


class Gap(NamedTuple):
    """Observation loss: flow resumes at the SYNC at ``cycle``."""
    cycle: int
    thread: int
    addr: int
    kind: str = "gap"


FlowItem = Union[ExecRecord, Gap]
_GAP = object()


class TraceDecoder:
    """Incremental decoder; chunked feeding gives the same flow as one buffer.

    ``until`` bounds reconstruction for a stream cut off without a closing
    marker (a clip's raw region): walking stops past that cycle at end of input.
    """

    def __init__(self, image: BinaryImage, until: Optional[int] = None):
        self.image = image
        self.until = until
        self.kinds = [ins.kind for ins in image.instructions]
        self.ops = [ins.operands for ins in image.instructions]
        self.buf = bytearray()
        self.base = 0  # stream offset of buf[0]
        self.pos = 0
        self.queue: deque = deque()
        self.finished = False
        self.flow: List[FlowItem] = []
        self.started = False
        self.skipping = False  # after OVERFLOW until the next SYNC
        # walker state
        self.thread: Optional[int] = None
        self.pc: Optional[int] = None
        self.cycle = 0
        self.running = False
        self.atoms: deque = deque()
        self.atom_bits_consumed = 0
        self.store_counter = 0
        self.last_ctx = False
        self.pending_gap = False

    # -- input -----------------------------------------------------------
    def feed(self, chunk: bytes) -> List[FlowItem]:
        n0 = len(self.flow)
        self.buf += chunk
        self._parse()
        self._walk()
        return self.flow[n0:]

    def finish(self) -> List[FlowItem]:
        n0 = len(self.flow)
        self._parse()
        if self.pos < len(self.buf):
            raise TruncatedPacket(self.base + self.pos)
        self.finished = True
        self._walk()
        return self.flow[n0:]

    def _parse(self):
        buf = self.buf
        while self.pos < len(buf):
            try:
                pkt, end = parse_packet(buf, self.pos)
            except Incomplete:
                break
            except MalformedVarint as e:
                raise MalformedVarint(self.base + e.offset) from None
            except DecodeError as e:
                raise type(e)(self.base + e.offset) from None
            if self.base:
                pkt = pkt._replace(offset=pkt.offset + self.base)
            self.pos = end
            if not self.started:
                if pkt.kind != SYNC:
                    raise Desync(pkt.offset, "stream does not begin with SYNC")
                self.started = True
            if pkt.kind == OVERFLOW:
                self.skipping = True
                self.queue.append(_GAP)
                continue
            if self.skipping:
                if pkt.kind != SYNC:
                    continue
                self.skipping = False
            self.queue.append(pkt)
        if self.pos > 1 << 16:
            del self.buf[:self.pos]
            self.base += self.pos
            self.pos = 0

    # -- walking ---------------------------------------------------------
    def _peek(self):
        """Next packet, None at end of stream, or raise _Wait when more input may come."""
        if self.queue:
            return self.queue[0]
        if self.finished:
            return None
        raise _Wait()

    def _walk(self):
        try:
            while True:
                if not self._step():
                    return
        except _Wait:
            return

    def _take(self):
        self.last_ctx = False
        return self.queue.popleft()

    def _position(self, pkt: Packet):
        self._take()
        if pkt.kind == SYNC:
            addr, thread, cycle = pkt.a, pkt.b, pkt.c
            if not 0 <= addr < len(self.kinds):
                raise Desync(pkt.offset, f"SYNC address {addr} outside image")
            if self.running and thread == self.thread and self.cycle == cycle and self.pc != addr:
                raise Desync(pkt.offset, f"reconstructed pc {self.pc} != SYNC address {addr}")
            if self.atoms:
                raise Desync(pkt.offset, "unconsumed atoms at SYNC")
            if self.pending_gap:
                self.flow.append(Gap(cycle, thread, addr))
                self.pending_gap = False
            self.thread, self.pc, self.cycle = thread, addr, cycle
            self.store_counter = 0
            self.running = True
        else:  # CTX: the current thread stops; a SYNC or the end of stream follows
            self.cycle = pkt.b
            self.running = False
            self.last_ctx = True

    def _step(self) -> bool:
        """Try to reconstruct one instruction; False when blocked on input/end."""
        pkt = self._peek()
        if pkt is _GAP:
            self._take()
            self.atoms.clear()
            self.running = False
            self.pending_gap = True
            return True
        if pkt is None and (self.last_ctx or (self.until is not None and self.cycle > self.until)):
            return False
        if pkt is not None and pkt.kind in (SYNC, CTX):
            pcycle = pkt.c if pkt.kind == SYNC else pkt.b
            if not self.running or pcycle == self.cycle:
                self._position(pkt)
                return True
            if pcycle < self.cycle:
                raise Desync(pkt.offset, f"walked past cycle {pcycle}")
        if not self.running:
            if pkt is None:
                return False
            raise Desync(pkt.offset, f"unexpected {PACKET_NAMES[pkt.kind]} with no position")

        pc, kind, ops = self.pc, self.kinds[self.pc], self.ops[self.pc]
        cycle, tid = self.cycle, self.thread
        nxt = pc + 1
        rec = None
        if kind == "brc" or kind == "lock":
            if not self.atoms:
                if pkt is None:
                    return False
                if pkt.kind != ATOMS:
                    raise AtomUnderflow(pkt.offset, f"at address {pc}")
                self._take()
                self.atoms.extend(pkt.a)
            bit = self.atoms.popleft()
            self.atom_bits_consumed += 1
            if kind == "brc":
                if bit:
                    nxt = ops[1]
                rec = ExecRecord(cycle, tid, pc, "branch", bit)
            elif bit:
                rec = ExecRecord(cycle, tid, pc, "lock_acq", ops[0])
            else:
                rec = ExecRecord(cycle, tid, pc, "lock_req", ops[0])
                self.running = False
        elif kind == "br" or kind == "call":
            nxt = ops[0]
        elif kind == "calli" or kind == "ret":
            if pkt is not None and pkt.kind == TARGET:
                self._take()
                nxt = pkt.a
                if not 0 <= nxt < len(self.kinds):
                    raise Desync(pkt.offset, f"TARGET {nxt} outside image")
                rec = ExecRecord(cycle, tid, pc, "indirect", nxt)
            elif pkt is None and kind == "calli":
                return False
            elif kind == "ret" or pkt.kind in (SYNC, CTX):
                # ret from the thread entry function, or a trapping calli
                self.running = False
            else:
                raise Desync(pkt.offset, f"calli at {pc} without TARGET")
        elif kind == "store":
            if pkt is not None and pkt.kind == DATA and pkt.a == self.store_counter:
                self._take()
                rec = ExecRecord(cycle, tid, pc, "store", pkt.b, pkt.c)
                self.store_counter = 0
            else:
                self.store_counter += 1
        elif kind == "out":
            if pkt is not None and pkt.kind == OUTPUT:
                self._take()
                rec = ExecRecord(cycle, tid, pc, "output", pkt.a, pkt.b)
        elif kind == "emit":
            if pkt is None:
                return False
            if pkt.kind != ITM:
                raise Desync(pkt.offset, f"emit at {pc} without ITM")
            self._take()
            rec = ExecRecord(cycle, tid, pc, "itm", pkt.a, pkt.b)
        elif kind == "unlock":
            rec = ExecRecord(cycle, tid, pc, "lock_rel", ops[0])
        elif kind == "halt":
            self.running = False
        self.flow.append(rec if rec is not None else ExecRecord(cycle, tid, pc))
        self.cycle += 1
        if self.running:
            if not 0 <= nxt < len(self.kinds):
                raise Desync(self.base + self.pos, f"walked off the image at {nxt}")
            self.pc = nxt
        return True


class _Wait(Exception):
    pass


def decode(data: bytes, image: BinaryImage, until: Optional[int] = None) -> List[FlowItem]:
    dec = TraceDecoder(image, until)
    dec.feed(data)
    dec.finish()
    return dec.flow


# ---------------------------------------------------------------------------
# size report


@dataclass(frozen=True)
class CompressionReport:
    instruction_count: int
    naive_bits: int
    compressed_bits: int
    ratio: float

    def as_dict(self) -> dict:
        return {"instruction_count": self.instruction_count, "naive_bits": self.naive_bits,
                "compressed_bits": self.compressed_bits, "ratio": self.ratio}


def measure(trace, data: Union[bytes, int]) -> CompressionReport:
    """Naive 32 bits/instruction versus the encoded size.

    ``trace`` may be a record sequence or an instruction count; ``data`` the
    encoded bytes or their length.
    """
    n = trace if isinstance(trace, int) else len(trace)
    nbytes = data if isinstance(data, int) else len(data)
    naive = 32 * n
    compressed = 8 * nbytes
    if n == 0:
        ratio = 1.0
    elif compressed == 0:
        ratio = float("inf")
    else:
        ratio = round(naive / compressed, 2)
    return CompressionReport(n, naive, compressed, ratio)
