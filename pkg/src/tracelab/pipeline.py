"""End-to-end loop: simulate -> encode -> decode -> extract -> monitor -> capture.

Stages hand chunks of work downstream in order. With ``serial=False`` each
stage runs in its own thread connected by bounded queues; with ``serial=True``
the same stage functions run inline over the same chunks, so both modes give
identical results.
"""
from __future__ import annotations

import queue
import threading
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional

from .capture import RingBuffer, TraceClip
from .codec import CompressionReport, EncoderConfig, TraceDecoder, TraceEncoder, measure
from .events import Event, EventExtractor, WatchConfig
from .program import BinaryImage
from .rvl.bindings import Selector, check_bindings
from .rvl.engine import Monitor
from .rvl.parser import StreamGraph
from .rvl.semantics import Violation, format_ts
from .sim import SimConfig, Simulator

CHUNK = 512  # records per hand-off


class ConfigError(ValueError):
    pass


class PipelineError(Exception):
    def __init__(self, stage: str, err: Exception):
        self.stage, self.err = stage, err
        super().__init__(f"{stage}: {type(err).__name__}: {err}")


@dataclass
class PipelineConfig:
    sim: SimConfig = field(default_factory=SimConfig)
    encoder: Optional[EncoderConfig] = None  # None: trace exactly the watched addresses
    watch: Optional[WatchConfig] = None  # None: derived from the bindings
    capacity: int = 65536
    post_trigger: int = 256
    serial: bool = False


@dataclass
class PipelineResult:
    status: str
    instructions: int
    nbytes: int
    events: int
    violations: List[Violation]
    outputs: Dict[str, list]
    clip: Optional[TraceClip]
    compression: CompressionReport
    transitions: List = field(default_factory=list)  # (cycle, function) of FuncEnter events

    @property
    def exit_code(self) -> int:
        return 1 if self.violations else 0

    def report_lines(self) -> List[dict]:
        lines = []
        for v in self.violations:
            lines.append({"record": "violation", "assertion": v.assertion, "ts": format_ts(v.ts),
                          "trigger": v.trigger})
        lines.append({
            "record": "summary",
            "status": self.status,
            "instructions": self.instructions,
            "events": self.events,
            "violations": len(self.violations),
            "compression": self.compression.as_dict(),
            "clip": self.clip is not None,
        })
        return lines


def watch_for(bindings: Dict[str, Selector], locks: bool = True) -> WatchConfig:
    """Smallest WatchConfig that produces every bound event kind."""
    addrs, branches = set(), False
    for sel in bindings.values():
        if sel.kind == "VarWrite":
            f = dict(sel.filters)
            if "addr" not in f:
                raise ConfigError("VarWrite bindings need an addr= filter")
            addrs.add(f["addr"])
        elif sel.kind == "Branch":
            branches = True
    return WatchConfig(frozenset(addrs), None, branches, locks)


def _validate(image, graph, bindings, cfg: PipelineConfig):
    try:
        check_bindings(graph, bindings)
    except Exception as e:
        raise ConfigError(str(e)) from None
    watch = cfg.watch if cfg.watch is not None else watch_for(bindings)
    try:
        watch.validate(cfg.sim.memory_size)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    enc = cfg.encoder if cfg.encoder is not None else EncoderConfig(data_trace=frozenset(watch.addrs))
    for sel in bindings.values():
        if sel.kind == "VarWrite":
            addr = dict(sel.filters)["addr"]
            if addr not in watch.addrs:
                raise ConfigError(f"binding watches addr {addr} outside the WatchConfig")
            if not enc.traced(addr):
                raise ConfigError(f"binding watches addr {addr} but data trace does not cover it")
        if sel.kind == "Branch" and not watch.branches:
            raise ConfigError("Branch binding requires branch events")
    return watch, enc


def _chunks(sim: Simulator) -> Iterator[list]:
    buf = []
    for rec in sim.records():
        buf.append(rec)
        if len(buf) == CHUNK:
            yield buf
            buf = []
    if buf:
        yield buf


class _Stages:
    """The three stage bodies; each consumes one chunk and returns the next."""

    def __init__(self, image, watch, enc):
        self.encoder = TraceEncoder(image, enc, sink=self._sink)
        self.decoder = TraceDecoder(image)
        self.extractor = EventExtractor(image, watch)
        self._pending: list = []
        self.count = 0

    def _sink(self, pkt):
        self._pending.append(pkt)

    def encode(self, records, last: bool) -> list:
        for rec in records:
            self.encoder.feed(rec)
        self.count += len(records)
        if last:
            self.encoder.finish()
        out, self._pending = self._pending, []
        return out

    def decode(self, packets, last: bool) -> list:
        items = [("raw", c, d) for c, d in packets]
        flow = self.decoder.feed(b"".join(d for _, d in packets)) if packets else []
        if last:
            flow = flow + self.decoder.finish()
        for f in flow:
            for ev in self.extractor.feed(f):
                items.append(("ev", ev))
        return items


class _Sink:
    """Monitor plus ring buffer; the single consumer of stage output."""

    def __init__(self, graph, bindings, ring: RingBuffer, on_output=None):
        self.mon = Monitor(graph, on_output)
        self.sel = list(bindings.items())
        self.ring = ring
        self.events = 0
        self.transitions = []

    def _violations(self, vs):
        for v in vs:
            if self.ring.state == "armed":
                self.ring.on_violation(v)

    def _record(self, ts, payload):
        if self.ring.state != "frozen":
            self.ring.record(ts, payload)

    def consume(self, items):
        for item in items:
            if item[0] == "raw":
                self._record((item[1], 0), item[2])
                continue
            ev: Event = item[1]
            self.events += 1
            if ev.kind == "FuncEnter":
                self.transitions.append((ev.cycle, ev.thread, ev.args[0]))
            self._violations(self.mon.advance(ev.ts))
            self._record(ev.ts, ev)
            vals = {}
            for name, s in self.sel:
                if s.matches(ev):
                    vals[name] = ev.value
            if vals:
                self._violations(self.mon.push(ev.ts, vals, ev.dump()))

    def finish(self):
        self._violations(self.mon.finish())
        return self.ring.finalize()


_DONE = object()


def _with_last(src) -> Iterator:
    """Yield ``(chunk, is_last)``; an empty source yields one empty last chunk."""
    prev = None
    for chunk in src:
        if prev is not None:
            yield prev, False
        prev = chunk
    yield (prev if prev is not None else []), True


def _pump(src, fn, out: queue.Queue, errs: list, stage: str):
    try:
        for chunk, last in _with_last(src):
            out.put(fn(chunk, last))
    except Exception as e:  # handed to the consumer
        errs.append(PipelineError(stage, e))
        if isinstance(src, _Drain):
            for _ in src:  # keep the upstream stage from blocking on a full queue
                pass
    finally:
        out.put(_DONE)


class _Drain:
    def __init__(self, q: queue.Queue):
        self.q = q

    def __iter__(self):
        while True:
            item = self.q.get()
            if item is _DONE:
                return
            yield item


def run_pipeline(image: BinaryImage, graph: StreamGraph, bindings: Dict[str, Selector],
                 config: PipelineConfig = PipelineConfig(), meta: Optional[dict] = None) -> PipelineResult:
    watch, enc = _validate(image, graph, bindings, config)
    sim = Simulator(image, config.sim)
    stages = _Stages(image, watch, enc)
    ring = RingBuffer(config.capacity, config.post_trigger, image.digest(), graph.digest(), meta or {})
    sink = _Sink(graph, bindings, ring)

    if config.serial:
        src = _with_last(_chunks(sim))
        while True:
            try:
                chunk, last = next(src)
            except StopIteration:
                break
            except Exception as e:
                raise PipelineError("sim", e) from e
            try:
                packets = stages.encode(chunk, last)
            except Exception as e:
                raise PipelineError("encode", e) from e
            try:
                items = stages.decode(packets, last)
            except Exception as e:
                raise PipelineError("decode", e) from e
            try:
                sink.consume(items)
            except Exception as e:
                raise PipelineError("monitor", e) from e
    else:
        q1: queue.Queue = queue.Queue(maxsize=64)
        q2: queue.Queue = queue.Queue(maxsize=64)
        errs: list = []
        t1 = threading.Thread(target=_pump, args=(_chunks(sim), stages.encode, q1, errs, "sim/encode"), daemon=True)
        t2 = threading.Thread(target=_pump, args=(_Drain(q1), stages.decode, q2, errs, "decode"), daemon=True)
        t1.start()
        t2.start()
        out = iter(_Drain(q2))
        try:
            for items in out:
                sink.consume(items)
        except Exception as e:
            for _ in out:
                pass
            raise PipelineError("monitor", e) from e
        finally:
            t1.join()
            t2.join()
        if errs:
            raise errs[0]
    try:
        clip = sink.finish()
    except Exception as e:
        raise PipelineError("monitor", e) from e
    return PipelineResult(
        status=sim.status,
        instructions=stages.count,
        nbytes=stages.encoder.nbytes,
        events=sink.events,
        violations=list(sink.mon.violations),
        outputs=sink.mon.outputs,
        clip=clip,
        compression=measure(stages.count, stages.encoder.nbytes),
        transitions=sink.transitions,
    )
