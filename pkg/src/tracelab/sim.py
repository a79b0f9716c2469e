"""Deterministic multi-threaded interpreter producing ground-truth execution traces."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, NamedTuple, Optional, Tuple, Union

from .program import BinaryImage, N_FLOAT_REGS, N_INT_REGS

MASK64 = (1 << 64) - 1
FIXED_FRAC_BITS = 24

ALL_HALTED = "all-halted"
TRUNCATED = "watchdog-truncated"
ALL_BLOCKED = "all-blocked"

RUNNABLE, BLOCKED, HALTED = "runnable", "blocked", "halted"


class SplitMix64:
    """SplitMix64 generator; the quantum sequence must be identical across ports."""

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)


def wrap64(v: int) -> int:
    v &= MASK64
    return v - (1 << 64) if v >> 63 else v


def float_to_bits(x: float) -> int:
    return struct.unpack("<q", struct.pack("<d", x))[0]


def bits_to_float(v: int) -> float:
    return struct.unpack("<d", struct.pack("<q", wrap64(v)))[0]


def trunc_fixed(x: float, frac_bits: int = FIXED_FRAC_BITS) -> float:
    """Truncate toward zero onto the 2**-frac_bits grid; inf/nan pass through."""
    if not math.isfinite(x):
        return x
    scale = 1 << frac_bits
    return math.trunc(x * scale) / scale


def divf(a: float, b: float) -> float:
    if b == 0.0:
        if a == 0.0 or math.isnan(a):
            return math.nan
        neg = (math.copysign(1.0, a) < 0) != (math.copysign(1.0, b) < 0)
        return -math.inf if neg else math.inf
    return a / b


class MemoryFault(Exception):
    def __init__(self, addr: int):
        self.addr = addr
        super().__init__(f"memory fault at {addr}")


class IllegalState(Exception):
    pass


class ExecRecord(NamedTuple):
    """One executed instruction. ``kind`` selects the payload meaning of ``a``/``b``.

    plain | branch(a=taken) | indirect(a=target) | store(a=mem addr, b=value) |
    output(a=port, b=value) | itm(a=channel, b=value) | lock_req/lock_acq/lock_rel(a=mutex) |
    trap(a=reason, b=detail)
    """
    cycle: int
    thread: int
    addr: int
    kind: str = "plain"
    a: object = None
    b: object = None

    def dump(self) -> str:
        parts = [str(self.cycle), str(self.thread), str(self.addr), self.kind]
        if self.a is not None:
            parts.append(_fmt_value(self.a))
        if self.b is not None:
            parts.append(_fmt_value(self.b))
        return " ".join(parts)


def _fmt_value(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    return repr(v) if isinstance(v, float) else str(v)


class ExecutionTrace(List[ExecRecord]):
    def dump(self) -> str:
        return "".join(r.dump() + "\n" for r in self)


class RunResult(NamedTuple):
    trace: ExecutionTrace
    outputs: List[Tuple[int, int, Union[int, float]]]  # (cycle, port, value)
    status: str


@dataclass
class SimConfig:
    seed: int = 0
    qmin: int = 20
    qmax: int = 60
    memory_size: int = 4096
    max_cycles: int = 10 ** 8
    probe_mode: str = "off"  # off | printf
    probe_cost: int = 10000
    inputs: Dict[int, Union[int, float]] = field(default_factory=dict)

    def __post_init__(self):
        if self.qmin < 1 or self.qmin > self.qmax:
            raise ValueError(f"invalid quantum range [{self.qmin}, {self.qmax}]")
        if self.probe_cost < 0:
            raise ValueError("probe_cost must be >= 0")
        if self.probe_mode not in ("off", "printf"):
            raise ValueError(f"unknown probe_mode {self.probe_mode!r}")
        for idx in self.inputs:
            if not 0 <= idx < self.memory_size:
                raise ValueError(f"input cell {idx} outside memory")


@dataclass
class ThreadState:
    name: str
    pc: int
    regs: List[int]
    fregs: List[float]
    status: str = RUNNABLE
    waiting_on: Optional[int] = None
    stack: List[int] = field(default_factory=list)
    held: List[int] = field(default_factory=list)


# opcode numbering for the hot loop
_OPS = {k: i for i, k in enumerate(
    ["set", "add", "sub", "mul", "addf", "fixmul", "divf", "load", "store", "br", "brc",
     "call", "calli", "ret", "out", "emit", "lock", "unlock", "yield", "halt"])}


def _compile(image: BinaryImage):
    code = []
    for ins in image.instructions:
        ops = []
        for o in ins.operands:
            ops.append(o[1] if isinstance(o, tuple) else o)
        # float-ness of the value register of load/store/out/emit
        isf = False
        if ins.kind in ("load", "store"):
            isf = ins.operands[0][0] == "f"
        elif ins.kind in ("out", "emit"):
            isf = ins.operands[1][0] == "f"
        code.append((_OPS[ins.kind], tuple(ops), isf))
    return code


CONSOLE = "console"


class Simulator:
    """Owns one machine state and runs it under the seeded round-robin scheduler."""

    def __init__(self, image: BinaryImage, config: SimConfig):
        self.image = image
        self.config = config
        self.code = _compile(image)
        self.memory = [0] * config.memory_size
        for idx, val in config.inputs.items():
            self.memory[idx] = float_to_bits(val) if isinstance(val, float) else wrap64(int(val))
        self.threads = [
            ThreadState(name, image.entry_of(func), [0] * N_INT_REGS, [0.0] * N_FLOAT_REGS)
            for name, func in image.threads
        ]
        self.mutexes: Dict[object, Optional[int]] = {}
        self.cycle = 0
        self.rng = SplitMix64(config.seed)
        self.outputs: List[Tuple[int, int, Union[int, float]]] = []
        self.status: Optional[str] = None
        self.current = -1
        self._reschedule = False
        self.printf = config.probe_mode == "printf"

    # -- scheduling -------------------------------------------------------
    def draw_quantum(self) -> int:
        c = self.config
        return c.qmin + self.rng.next64() % (c.qmax - c.qmin + 1)

    def _pick(self) -> Optional[int]:
        n = len(self.threads)
        for k in range(1, n + 1):
            t = (self.current + k) % n
            if self.threads[t].status == RUNNABLE:
                return t
        return None

    def wait_for_graph(self) -> Dict[int, int]:
        """Blocked thread -> thread holding the mutex it waits on."""
        g = {}
        for i, th in enumerate(self.threads):
            if th.status == BLOCKED:
                holder = self.mutexes.get(th.waiting_on)
                if holder is not None:
                    g[i] = holder
        return g

    def deadlock_cycle(self) -> Optional[List[int]]:
        g = self.wait_for_graph()
        for start in g:
            seen, t = [], start
            while t in g and t not in seen:
                seen.append(t)
                t = g[t]
            if t in seen:
                return seen[seen.index(t):]
        return None

    def records(self) -> Iterator[ExecRecord]:
        """Run to termination, yielding every executed instruction."""
        max_cycles = self.config.max_cycles
        threads = self.threads
        remaining = 0
        need_pick = True
        step = self.step
        while True:
            if self.cycle >= max_cycles:
                self.status = TRUNCATED
                return
            if need_pick:
                t = self._pick()
                if t is None:
                    if all(th.status == HALTED for th in threads):
                        self.status = ALL_HALTED
                    else:
                        self.status = ALL_BLOCKED
                    return
                self.current = t
                remaining = self.draw_quantum()
                need_pick = False
            rec = step(self.current)
            yield rec
            remaining -= 1
            if remaining == 0 or self._reschedule or threads[self.current].status != RUNNABLE:
                self._reschedule = False
                need_pick = True

    def run(self) -> RunResult:
        trace = ExecutionTrace(self.records())
        return RunResult(trace, self.outputs, self.status)

    # -- execution --------------------------------------------------------
    def _release_all(self, th: ThreadState):
        for m in th.held:
            self._free(m)
        th.held.clear()

    def _free(self, m):
        self.mutexes[m] = None
        for other in self.threads:
            if other.status == BLOCKED and other.waiting_on == m:
                other.status = RUNNABLE
                other.waiting_on = None

    def _trap(self, tid: int, th: ThreadState, addr: int, reason: str, detail) -> ExecRecord:
        th.status = HALTED
        self._release_all(th)
        return ExecRecord(self.cycle, tid, addr, "trap", reason, detail)

    def step(self, tid: int) -> ExecRecord:
        """Execute exactly one instruction of thread ``tid``."""
        th = self.threads[tid]
        if th.status != RUNNABLE:
            raise IllegalState(f"thread {tid} is {th.status}")
        pc = th.pc
        if not 0 <= pc < len(self.code):
            raise IllegalState(f"thread {tid} pc {pc} outside image")
        op, o, isf = self.code[pc]
        cycle = self.cycle
        r = th.regs
        rec = None
        nxt = pc + 1

        if op == 0:  # set
            r[o[0]] = o[1]
        elif op == 1:
            r[o[0]] = wrap64(r[o[1]] + r[o[2]])
        elif op == 2:
            r[o[0]] = wrap64(r[o[1]] - r[o[2]])
        elif op == 3:
            r[o[0]] = wrap64(r[o[1]] * r[o[2]])
        elif op == 4:  # addf
            f = th.fregs
            f[o[0]] = f[o[1]] + f[o[2]]
        elif op == 5:  # fixmul
            f = th.fregs
            f[o[0]] = trunc_fixed(f[o[1]] * f[o[2]])
        elif op == 6:  # divf
            f = th.fregs
            f[o[0]] = divf(f[o[1]], f[o[2]])
        elif op == 7:  # load
            addr = r[o[1]]
            if not 0 <= addr < len(self.memory):
                self.cycle += 1
                return self._trap(tid, th, pc, "memory_fault", addr)
            if isf:
                th.fregs[o[0]] = bits_to_float(self.memory[addr])
            else:
                r[o[0]] = self.memory[addr]
        elif op == 8:  # store
            addr = r[o[1]]
            if not 0 <= addr < len(self.memory):
                self.cycle += 1
                return self._trap(tid, th, pc, "memory_fault", addr)
            val = float_to_bits(th.fregs[o[0]]) if isf else r[o[0]]
            self.memory[addr] = val
            rec = ExecRecord(cycle, tid, pc, "store", addr, val)
        elif op == 9:  # br
            nxt = o[0]
        elif op == 10:  # brc
            taken = r[o[0]] != 0
            if taken:
                nxt = o[1]
            rec = ExecRecord(cycle, tid, pc, "branch", taken)
        elif op == 11:  # call
            th.stack.append(pc + 1)
            nxt = o[0]
        elif op == 12:  # calli
            target = r[o[0]]
            if target not in self.image.entries:
                self.cycle += 1
                return self._trap(tid, th, pc, "bad_indirect", target)
            th.stack.append(pc + 1)
            nxt = target
            rec = ExecRecord(cycle, tid, pc, "indirect", target)
        elif op == 13:  # ret
            if th.stack:
                nxt = th.stack.pop()
                rec = ExecRecord(cycle, tid, pc, "indirect", nxt)
            else:
                th.status = HALTED
                self._release_all(th)
        elif op == 14:  # out
            val = th.fregs[o[1]] if isf else r[o[1]]
            self.outputs.append((cycle, o[0], val))
            rec = ExecRecord(cycle, tid, pc, "output", o[0], val)
        elif op == 15:  # emit
            val = th.fregs[o[1]] if isf else r[o[1]]
            rec = ExecRecord(cycle, tid, pc, "itm", o[0], val)
            if self.printf:
                # shared console: taken and released around the write, then the
                # blocking write gives up the processor
                self.mutexes[CONSOLE] = tid
                self.cycle += self.config.probe_cost
                self.mutexes[CONSOLE] = None
                self._reschedule = True
        elif op == 16:  # lock
            m = o[0]
            if self.mutexes.get(m) is None:
                self.mutexes[m] = tid
                th.held.append(m)
                rec = ExecRecord(cycle, tid, pc, "lock_acq", m)
            else:
                th.status = BLOCKED
                th.waiting_on = m
                nxt = pc
                rec = ExecRecord(cycle, tid, pc, "lock_req", m)
        elif op == 17:  # unlock
            m = o[0]
            if self.mutexes.get(m) != tid:
                self.cycle += 1
                return self._trap(tid, th, pc, "bad_unlock", m)
            th.held.remove(m)
            self._free(m)
            rec = ExecRecord(cycle, tid, pc, "lock_rel", m)
        elif op == 18:  # yield
            self._reschedule = True
        else:  # halt
            th.status = HALTED
            self._release_all(th)
            nxt = pc

        th.pc = nxt
        self.cycle += 1
        return rec if rec is not None else ExecRecord(cycle, tid, pc)


def run(image: BinaryImage, config: SimConfig) -> RunResult:
    return Simulator(image, config).run()


def run_with_probe(image: BinaryImage, config: SimConfig) -> RunResult:
    """Run with printf-style instrumentation: every emit costs ``probe_cost`` extra
    cycles and goes through the shared console."""
    from dataclasses import replace
    return Simulator(image, replace(config, probe_mode="printf")).run()
