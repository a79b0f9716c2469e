"""Lift a reconstructed instruction flow into timestamped higher-level events."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, List, NamedTuple, Optional, Tuple

from .program import BinaryImage
from .sim import bits_to_float

UNIT = ()

# payload field names per event kind
FIELDS = {
    "FuncEnter": ("name",),
    "FuncExit": ("name",),
    "UnbalancedExit": ("name",),
    "Branch": ("addr", "taken"),
    "VarWrite": ("addr", "value"),
    "Output": ("port", "value"),
    "Itm": ("channel", "value"),
    "LockReq": ("m",),
    "LockAcq": ("m",),
    "LockRel": ("m",),
    "Gap": (),
}


class Event(NamedTuple):
    cycle: int
    seq: int
    thread: int
    kind: str
    args: Tuple = ()

    @property
    def ts(self) -> Tuple[int, int]:
        return (self.cycle, self.seq)

    def field(self, name: str):
        if name == "thread":
            return self.thread
        try:
            return self.args[FIELDS[self.kind].index(name)]
        except ValueError:
            raise KeyError(f"{self.kind} has no field {name!r}") from None

    @property
    def value(self):
        """The value a monitor input stream sees for this event."""
        if self.kind in ("VarWrite", "Output", "Itm"):
            return self.args[1]
        if self.kind == "Branch":
            return self.args[1]
        return UNIT

    def dump(self) -> str:
        args = " ".join(_fmt(a) for a in self.args)
        return f"{self.cycle}.{self.seq} {self.thread} {self.kind}" + (f" {args}" if args else "")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass(frozen=True)
class WatchConfig:
    addrs: FrozenSet[int] = frozenset()
    functions: Optional[FrozenSet[str]] = None  # None: every function
    branches: bool = False
    locks: bool = True

    def validate(self, memory_size: int):
        bad = [a for a in self.addrs if not 0 <= a < memory_size]
        if bad:
            raise ValueError(f"watched addresses outside memory: {sorted(bad)}")


class EventExtractor:
    """Single-pass extractor over flow items (ground-truth records or decoded flow)."""

    def __init__(self, image: BinaryImage, watch: WatchConfig = WatchConfig()):
        self.image = image
        self.watch = watch
        self.kinds = [ins.kind for ins in image.instructions]
        # stores from a float register carry IEEE bits; events carry the float
        self.float_store = [ins.kind == "store" and ins.operands[0][0] == "f" for ins in image.instructions]
        self.func_of = [None] * len(image.instructions)
        for name, (lo, hi) in image.functions.items():
            for a in range(lo, hi):
                self.func_of[a] = name
        self.stacks: Dict[int, List[str]] = {}
        self.after_call: Dict[int, bool] = {}
        self.saw_gap = False
        self._cycle = -1
        self._seq = 0

    def _ev(self, out, cycle, thread, kind, args=()):
        if cycle == self._cycle:
            self._seq += 1
        else:
            self._cycle, self._seq = cycle, 0
        out.append(Event(cycle, self._seq, thread, kind, args))

    def _func_ok(self, name) -> bool:
        return self.watch.functions is None or name in self.watch.functions

    def feed(self, item) -> List[Event]:
        out: List[Event] = []
        if item.kind == "gap":
            self.stacks.clear()
            self.after_call.clear()
            self.saw_gap = True
            self._ev(out, item.cycle, item.thread, "Gap")
            return out
        cycle, tid, addr, kind = item.cycle, item.thread, item.addr, item.kind
        stack = self.stacks.setdefault(tid, [])
        if self.after_call.get(tid):
            name = self.func_of[addr]
            stack.append(name)
            if self._func_ok(name):
                self._ev(out, cycle, tid, "FuncEnter", (name,))
        ikind = self.kinds[addr]
        self.after_call[tid] = ikind in ("call", "calli") and kind != "trap"

        w = self.watch
        if kind == "branch":
            if w.branches:
                self._ev(out, cycle, tid, "Branch", (addr, bool(item.a)))
        elif kind == "store":
            if item.a in w.addrs:
                val = bits_to_float(item.b) if self.float_store[addr] else item.b
                self._ev(out, cycle, tid, "VarWrite", (item.a, val))
        elif kind == "output":
            self._ev(out, cycle, tid, "Output", (item.a, item.b))
        elif kind == "itm":
            self._ev(out, cycle, tid, "Itm", (item.a, item.b))
        elif kind in ("lock_req", "lock_acq", "lock_rel"):
            if w.locks:
                if kind != "lock_rel":
                    self._ev(out, cycle, tid, "LockReq", (item.a,))
                if kind == "lock_acq":
                    self._ev(out, cycle, tid, "LockAcq", (item.a,))
                elif kind == "lock_rel":
                    self._ev(out, cycle, tid, "LockRel", (item.a,))

        if ikind == "ret" and kind != "trap":
            name = self.func_of[addr]
            if stack:
                stack.pop()
                if self._func_ok(name):
                    self._ev(out, cycle, tid, "FuncExit", (name,))
            elif self.saw_gap and kind == "indirect":
                # the matching enter was lost in a gap
                self._ev(out, cycle, tid, "UnbalancedExit", (name,))
        return out


def extract(flow: Iterable, image: BinaryImage, watch: WatchConfig = WatchConfig()) -> List[Event]:
    ex = EventExtractor(image, watch)
    events: List[Event] = []
    for item in flow:
        events.extend(ex.feed(item))
    return events


def dump_events(events: Iterable[Event]) -> str:
    return "".join(e.dump() + "\n" for e in events)
