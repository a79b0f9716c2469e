"""Save-on-trigger capture: a ring buffer of raw packets and events that freezes
into a TraceClip when a monitor reports a violation.

``.clip`` layout (all integers are unsigned LEB128 varints unless noted)::

    magic   b"ETCL"
    version u8 (1)
    image   32 bytes sha256 of the program source
    spec    32 bytes sha256 of the RVL-1 source
    config  len, UTF-8 JSON
    raw     n_pre, n_post, blob_len, blob (concatenated .etr packets),
            then per packet: length, cycle
    events  n_pre, n_post, then per event:
            cycle, seq, thread, kind index, n_args, tagged values
    trigger name_len, name, cycle, seq code (0 = end of cycle, else seq + 1),
            summary_len, summary
    crc     u32 little-endian CRC-32 of every preceding byte

Tagged value: tag byte then 0=int (zigzag varint), 1=float (8-byte LE double),
2=false, 3=true, 4=str (len, UTF-8), 5=unit.
"""
from __future__ import annotations

import json
import struct
import zlib
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .codec import SYNC, decode
from .events import FIELDS, Event
from .rvl.bindings import bind
from .rvl.engine import Monitor
from .rvl.semantics import INF_SEQ, Violation
from .varint import Incomplete, MalformedVarint, decode_varint, encode_varint, unzigzag, zigzag

MAGIC = b"ETCL"
VERSION = 1
KINDS = sorted(FIELDS)


class Frozen(Exception):
    pass


class NotArmed(Exception):
    pass


class CorruptClip(Exception):
    def __init__(self, offset: int, message: str = ""):
        self.offset = offset
        super().__init__(f"corrupt clip at byte {offset}" + (f": {message}" if message else ""))


class HashMismatch(Exception):
    pass


Item = Tuple[Tuple, object]  # (ts, bytes packet | Event)


@dataclass(frozen=True)
class TraceClip:
    pre_raw: Tuple[Tuple[int, bytes], ...]
    post_raw: Tuple[Tuple[int, bytes], ...]
    pre_events: Tuple[Event, ...]
    post_events: Tuple[Event, ...]
    trigger: Violation
    image_hash: bytes = bytes(32)
    spec_hash: bytes = bytes(32)
    config: Dict = field(default_factory=dict)

    @property
    def raw(self) -> bytes:
        """The raw region as a standalone .etr stream."""
        return b"".join(d for _, d in self.pre_raw + self.post_raw)

    @property
    def raw_until(self) -> Optional[int]:
        packets = self.pre_raw + self.post_raw
        return max(c for c, _ in packets) if packets else None

    @property
    def events(self) -> Tuple[Event, ...]:
        return self.pre_events + self.post_events

    def decode_raw(self, image):
        if not self.pre_raw and not self.post_raw:
            return []
        return decode(self.raw, image, until=self.raw_until)

    def summary(self) -> dict:
        return {
            "trigger": self.trigger.assertion,
            "ts": [self.trigger.ts[0], "inf" if self.trigger.ts[1] == INF_SEQ else self.trigger.ts[1]],
            "raw_packets": [len(self.pre_raw), len(self.post_raw)],
            "raw_bytes": len(self.raw),
            "events": [len(self.pre_events), len(self.post_events)],
            "image_sha256": self.image_hash.hex(),
            "spec_sha256": self.spec_hash.hex(),
            "config": self.config,
        }


class RingBuffer:
    """Two ring lanes (raw packets, events) under one control state.

    States: ``armed`` -> ``capturing-post`` -> ``frozen``. Each lane keeps at
    most ``capacity`` pre-trigger items. After a violation, ``post_trigger``
    further records (counted across both lanes) complete the clip.
    """

    def __init__(self, capacity: int = 65536, post_trigger: int = 256, image_hash: bytes = bytes(32),
                 spec_hash: bytes = bytes(32), config: Optional[dict] = None):
        if capacity < 1 or post_trigger < 0:
            raise ValueError("capacity must be >= 1 and post_trigger >= 0")
        self.capacity = capacity
        self.post_trigger = post_trigger
        self.meta = (image_hash, spec_hash, dict(config or {}))
        self.raw: deque = deque(maxlen=capacity)
        self.events: deque = deque(maxlen=capacity)
        self.post: List[Tuple[int, Tuple, object]] = []
        self.state = "armed"
        self.trigger: Optional[Violation] = None
        self.clip: Optional[TraceClip] = None
        self._n = 0

    def __len__(self):
        return len(self.raw) + len(self.events)

    def record(self, ts, payload) -> Optional[TraceClip]:
        """Append one item; returns the clip when this record completes it."""
        if self.state == "frozen":
            raise Frozen("buffer is frozen")
        self._n += 1
        if self.state == "capturing-post":
            self.post.append((self._n, ts, payload))
            if len(self.post) >= self.post_trigger:
                return self._freeze()
            return None
        lane = self.raw if isinstance(payload, (bytes, bytearray)) else self.events
        lane.append((self._n, ts, payload))
        return None

    def record_packet(self, cycle: int, data: bytes):
        return self.record((cycle, 0), bytes(data))

    def record_event(self, ev: Event):
        return self.record(ev.ts, ev)

    def on_violation(self, v: Violation) -> Optional[TraceClip]:
        if self.state != "armed":
            raise NotArmed(f"buffer is {self.state}")
        self.trigger = v
        self.state = "capturing-post"
        # items already recorded but later than the trigger belong after it
        late = []
        for lane in (self.raw, self.events):
            while lane and lane[-1][1] > v.ts:
                late.append(lane.pop())
        late.sort()
        self.post = late[:self.post_trigger]
        if len(self.post) >= self.post_trigger:
            return self._freeze()
        return None

    def finalize(self) -> Optional[TraceClip]:
        """End of input: freeze a clip with a short post window."""
        if self.state == "capturing-post":
            return self._freeze()
        return self.clip

    def _freeze(self) -> TraceClip:
        pre_raw = [(ts[0], p) for _, ts, p in self.raw]
        post_raw = [(ts[0], p) for _, ts, p in self.post if isinstance(p, (bytes, bytearray))]
        # the raw region must start at a SYNC to decode standalone
        while pre_raw and pre_raw[0][1][0] != SYNC:
            pre_raw.pop(0)
        if not pre_raw:
            while post_raw and post_raw[0][1][0] != SYNC:
                post_raw.pop(0)
        image_hash, spec_hash, config = self.meta
        self.clip = TraceClip(
            tuple(pre_raw), tuple(post_raw),
            tuple(p for _, _, p in self.events),
            tuple(p for _, _, p in self.post if isinstance(p, Event)),
            self.trigger, image_hash, spec_hash, config)
        self.state = "frozen"
        return self.clip


# ---------------------------------------------------------------------------
# export / import


def _put_value(out: bytearray, v):
    if isinstance(v, bool):
        out.append(3 if v else 2)
    elif isinstance(v, int):
        out.append(0)
        out += encode_varint(zigzag(v))
    elif isinstance(v, float):
        out.append(1)
        out += struct.pack("<d", v)
    elif isinstance(v, str):
        b = v.encode()
        out.append(4)
        out += encode_varint(len(b)) + b
    elif v == ():
        out.append(5)
    else:
        raise TypeError(f"cannot serialize {v!r}")


def _put_bytes(out: bytearray, b: bytes):
    out += encode_varint(len(b)) + b


def export_clip(clip: TraceClip) -> bytes:
    out = bytearray(MAGIC)
    out.append(VERSION)
    out += clip.image_hash + clip.spec_hash
    _put_bytes(out, json.dumps(clip.config, sort_keys=True).encode())
    raw = clip.pre_raw + clip.post_raw
    out += encode_varint(len(clip.pre_raw)) + encode_varint(len(clip.post_raw))
    _put_bytes(out, b"".join(d for _, d in raw))
    for cycle, d in raw:
        out += encode_varint(len(d)) + encode_varint(cycle)
    out += encode_varint(len(clip.pre_events)) + encode_varint(len(clip.post_events))
    for ev in clip.events:
        out += encode_varint(ev.cycle) + encode_varint(ev.seq) + encode_varint(ev.thread)
        out += encode_varint(KINDS.index(ev.kind)) + encode_varint(len(ev.args))
        for a in ev.args:
            _put_value(out, a)
    t = clip.trigger
    _put_bytes(out, t.assertion.encode())
    out += encode_varint(t.ts[0]) + encode_varint(0 if t.ts[1] == INF_SEQ else t.ts[1] + 1)
    _put_bytes(out, t.trigger.encode())
    out += struct.pack("<I", zlib.crc32(out))
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes, end: int):
        self.data, self.pos, self.end = data, 0, end

    def need(self, n: int):
        if self.pos + n > self.end:
            raise CorruptClip(self.pos, "truncated")

    def take(self, n: int) -> bytes:
        self.need(n)
        b = self.data[self.pos:self.pos + n]
        self.pos += n
        return b

    def varint(self) -> int:
        try:
            v, pos = decode_varint(self.data[:self.end], self.pos)
        except Incomplete:
            raise CorruptClip(self.pos, "truncated varint") from None
        except MalformedVarint:
            raise CorruptClip(self.pos, "malformed varint") from None
        self.pos = pos
        return v

    def blob(self) -> bytes:
        return self.take(self.varint())

    def value(self):
        at = self.pos
        tag = self.take(1)[0]
        if tag == 0:
            return unzigzag(self.varint())
        if tag == 1:
            return struct.unpack("<d", self.take(8))[0]
        if tag in (2, 3):
            return tag == 3
        if tag == 4:
            return self.blob().decode()
        if tag == 5:
            return ()
        raise CorruptClip(at, f"bad value tag {tag}")


def import_clip(data: bytes) -> TraceClip:
    data = bytes(data)
    if len(data) < 4 or data[:4] != MAGIC:
        raise CorruptClip(0, "bad magic")
    if len(data) < 4 + 1 + 64 + 4:
        raise CorruptClip(len(data), "truncated")
    body = len(data) - 4
    r = _Reader(data, body)
    r.pos = 4
    version = r.take(1)[0]
    if version != VERSION:
        raise CorruptClip(4, f"unsupported version {version}")
    image_hash, spec_hash = r.take(32), r.take(32)
    try:
        config = json.loads(r.blob().decode())
        n_pre, n_post = r.varint(), r.varint()
        blob = r.blob()
        raw, off = [], 0
        for _ in range(n_pre + n_post):
            n, cycle = r.varint(), r.varint()
            if off + n > len(blob):
                raise CorruptClip(r.pos, "raw index exceeds region")
            raw.append((cycle, blob[off:off + n]))
            off += n
        if off != len(blob):
            raise CorruptClip(r.pos, "raw index does not cover region")
        e_pre, e_post = r.varint(), r.varint()
        events = []
        for _ in range(e_pre + e_post):
            cycle, seq, thread, k, nargs = (r.varint() for _ in range(5))
            if k >= len(KINDS):
                raise CorruptClip(r.pos, f"bad event kind {k}")
            events.append(Event(cycle, seq, thread, KINDS[k], tuple(r.value() for _ in range(nargs))))
        name = r.blob().decode()
        cycle, seq = r.varint(), r.varint()
        summary = r.blob().decode()
    except (UnicodeDecodeError, ValueError) as e:
        raise CorruptClip(r.pos, str(e)) from None
    if r.pos != body:
        raise CorruptClip(r.pos, "trailing bytes")
    if struct.unpack("<I", data[body:])[0] != zlib.crc32(data[:body]):
        raise CorruptClip(body, "checksum mismatch")
    trig = Violation(name, (cycle, INF_SEQ if seq == 0 else seq - 1), summary)
    return TraceClip(tuple(raw[:n_pre]), tuple(raw[n_pre:]), tuple(events[:e_pre]),
                     tuple(events[e_pre:]), trig, image_hash, spec_hash, config)


# ---------------------------------------------------------------------------
# replay


def replay(clip: TraceClip, graph, bindings, image=None) -> List[Violation]:
    """Run the clip's event section through ``graph``; returns every violation."""
    if graph.digest() != clip.spec_hash:
        raise HashMismatch("spec hash differs from the clip")
    if image is not None and image.digest() != clip.image_hash:
        raise HashMismatch("image hash differs from the clip")
    mon = Monitor(graph)
    ts, vals = None, {}
    for t, name, value in bind(clip.events, bindings):
        if ts is not None and t != ts:
            mon.push(ts, vals)
            vals = {}
        ts = t
        vals[name] = value
    if ts is not None:
        mon.push(ts, vals)
    mon.finish()
    return mon.violations


def reproduces(clip: TraceClip, graph, bindings, image=None) -> bool:
    key = (clip.trigger.assertion, clip.trigger.ts)
    return any((v.assertion, v.ts) == key for v in replay(clip, graph, bindings, image))
