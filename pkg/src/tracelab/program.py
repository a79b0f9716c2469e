"""Mini-ISA, assembly loader and static analyses over a loaded binary image."""
from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Tuple, Union

N_INT_REGS = 16
N_FLOAT_REGS = 8
N_MUTEXES = 16

Reg = Tuple[str, int]  # ("r", 3) or ("f", 1)

# kinds whose only successor is the next address
SEQUENTIAL = frozenset(
    {"set", "add", "sub", "mul", "divf", "addf", "fixmul", "load", "store",
     "out", "emit", "lock", "unlock", "yield"}
)
ALL_KINDS = SEQUENTIAL | {"br", "brc", "call", "calli", "ret", "halt"}


class AsmError(Exception):
    """Base class for assembly loading errors."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class UnknownMnemonic(AsmError):
    pass


class UndefinedLabel(AsmError):
    def __init__(self, name: str, line: Optional[int] = None):
        self.name = name
        super().__init__(f"undefined label {name!r}", line)


class DuplicateLabel(AsmError):
    def __init__(self, name: str, line: Optional[int] = None):
        self.name = name
        super().__init__(f"duplicate label {name!r}", line)


class NoThreads(AsmError):
    def __init__(self):
        super().__init__("program declares no threads")


class OutOfRangeOperand(AsmError):
    pass


class AddressOutOfRange(Exception):
    def __init__(self, addr: int):
        self.addr = addr
        super().__init__(f"address {addr} outside image")


@dataclass(frozen=True)
class Instruction:
    address: int
    kind: str
    operands: Tuple = ()
    line: int = 0

    @property
    def target(self) -> Optional[int]:
        """Resolved branch/call target, for br, brc and call."""
        if self.kind in ("br", "call"):
            return self.operands[0]
        if self.kind == "brc":
            return self.operands[1]
        return None

    def __str__(self) -> str:
        def fmt(op):
            if isinstance(op, tuple):
                return f"{op[0]}{op[1]}"
            return str(op)
        ops = ", ".join(fmt(o) for o in self.operands)
        return f"{self.kind} {ops}".strip()


@dataclass(frozen=True)
class BinaryImage:
    instructions: Tuple[Instruction, ...]
    functions: Dict[str, Tuple[int, int]]  # name -> (entry, end exclusive)
    threads: Tuple[Tuple[str, str], ...]  # (thread name, entry function)
    labels: Dict[str, int] = field(default_factory=dict)
    source: str = ""

    @property
    def entry(self) -> str:
        """Name of the main thread (the first declared)."""
        return self.threads[0][0]

    def __len__(self) -> int:
        return len(self.instructions)

    def function_at(self, addr: int) -> Optional[str]:
        for name, (lo, hi) in self.functions.items():
            if lo <= addr < hi:
                return name
        return None

    def entry_of(self, func: str) -> int:
        return self.functions[func][0]

    @property
    def entries(self) -> Dict[int, str]:
        return {lo: name for name, (lo, _) in self.functions.items()}

    def digest(self) -> bytes:
        return hashlib.sha256(self.source.encode()).digest()


_LABEL_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_.]*$")
_INT_RE = re.compile(r"^[+-]?(0x[0-9a-fA-F]+|\d+)$")

# operand signature per mnemonic: R=int reg, F=float reg, A=any reg,
# I=immediate, L=label, M=[int reg], P=port/channel, X=mutex
_SIGNATURES = {
    "set": "RI", "add": "RRR", "sub": "RRR", "mul": "RRR",
    "addf": "FFF", "fixmul": "FFF", "divf": "FFF",
    "load": "AM", "store": "AM",
    "br": "L", "brc": "RL", "call": "L", "calli": "R", "ret": "",
    "out": "PA", "emit": "PA", "lock": "X", "unlock": "X",
    "yield": "", "halt": "",
}


def _split_operands(text: str) -> List[str]:
    text = text.strip()
    if not text:
        return []
    return [t.strip() for t in text.split(",")]


def _reg(tok: str, allowed: str, line: int) -> Reg:
    m = re.fullmatch(r"([rf])(\d+)", tok)
    if not m or m.group(1) not in allowed:
        raise AsmError(f"expected {'/'.join(allowed)} register, got {tok!r}", line)
    bank, idx = m.group(1), int(m.group(2))
    limit = N_INT_REGS if bank == "r" else N_FLOAT_REGS
    if idx >= limit:
        raise OutOfRangeOperand(f"register {tok} out of range", line)
    return (bank, idx)


def _int(tok: str, line: int) -> int:
    if not _INT_RE.match(tok):
        raise AsmError(f"expected integer, got {tok!r}", line)
    return int(tok, 0)


def load_image(source: str) -> BinaryImage:
    """Parse assembly text into a validated :class:`BinaryImage`."""
    pending: List[Tuple[str, List[str], int]] = []  # (mnemonic, operand tokens, line)
    labels: Dict[str, int] = {}
    label_lines: Dict[str, int] = {}
    func_starts: List[Tuple[str, int, int]] = []
    threads: List[Tuple[str, str, int]] = []

    for lineno, raw in enumerate(source.splitlines(), start=1):
        text = raw.split(";", 1)[0].strip()
        while text:
            m = re.match(r"^func\s+([A-Za-z_][\w.]*)\s*:(.*)$", text)
            if m:
                name = m.group(1)
                if name in labels:
                    raise DuplicateLabel(name, lineno)
                labels[name] = len(pending)
                label_lines[name] = lineno
                func_starts.append((name, len(pending), lineno))
                text = m.group(2).strip()
                continue
            m = re.match(r"^([A-Za-z_][\w.]*)\s*:(.*)$", text)
            if m:
                name = m.group(1)
                if name in labels:
                    raise DuplicateLabel(name, lineno)
                labels[name] = len(pending)
                label_lines[name] = lineno
                text = m.group(2).strip()
                continue
            m = re.match(r"^thread\s+([A-Za-z_][\w.]*)\s+entry\s+([A-Za-z_][\w.]*)$", text)
            if m:
                threads.append((m.group(1), m.group(2), lineno))
                break
            parts = text.split(None, 1)
            mnemonic = parts[0].lower()
            if mnemonic not in _SIGNATURES:
                raise UnknownMnemonic(f"unknown mnemonic {parts[0]!r}", lineno)
            if not func_starts:
                raise AsmError("instruction outside of any function", lineno)
            pending.append((mnemonic, _split_operands(parts[1] if len(parts) > 1 else ""), lineno))
            break

    if not threads:
        raise NoThreads()

    n = len(pending)
    functions: Dict[str, Tuple[int, int]] = {}
    for i, (name, start, lineno) in enumerate(func_starts):
        end = func_starts[i + 1][1] if i + 1 < len(func_starts) else n
        if end <= start:
            raise AsmError(f"function {name!r} has no instructions", lineno)
        functions[name] = (start, end)
    entries = {lo for lo, _ in functions.values()}

    def resolve(tok: str, line: int) -> int:
        if tok not in labels:
            raise UndefinedLabel(tok, line)
        addr = labels[tok]
        if addr >= n:
            raise OutOfRangeOperand(f"label {tok!r} points past the last instruction", line)
        return addr

    instructions = []
    for addr, (mnemonic, toks, line) in enumerate(pending):
        sig = _SIGNATURES[mnemonic]
        if len(toks) != len(sig):
            raise AsmError(f"{mnemonic} takes {len(sig)} operands, got {len(toks)}", line)
        ops: List[Union[int, Reg]] = []
        for code, tok in zip(sig, toks):
            if code == "R":
                ops.append(_reg(tok, "r", line))
            elif code == "F":
                ops.append(_reg(tok, "f", line))
            elif code == "A":
                ops.append(_reg(tok, "rf", line))
            elif code == "M":
                m = re.fullmatch(r"\[\s*(\w+)\s*\]", tok)
                if not m:
                    raise AsmError(f"expected [rX], got {tok!r}", line)
                ops.append(_reg(m.group(1), "r", line))
            elif code == "I":
                v = _int(tok, line)
                if not -(1 << 63) <= v < (1 << 63):
                    raise OutOfRangeOperand(f"immediate {v} exceeds 64 bits", line)
                ops.append(v)
            elif code == "P":
                v = _int(tok, line)
                if not 0 <= v <= 255:
                    raise OutOfRangeOperand(f"port/channel {v} not in 0..255", line)
                ops.append(v)
            elif code == "X":
                v = _int(tok, line)
                if not 0 <= v < N_MUTEXES:
                    raise OutOfRangeOperand(f"mutex {v} not in 0..{N_MUTEXES - 1}", line)
                ops.append(v)
            elif code == "L":
                target = resolve(tok, line)
                if mnemonic == "call" and target not in entries:
                    raise AsmError(f"call target {tok!r} is not a function entry", line)
                ops.append(target)
        instructions.append(Instruction(addr, mnemonic, tuple(ops), line))

    for tname, func, line in threads:
        if func not in functions:
            raise UndefinedLabel(func, line)
    names = [t[0] for t in threads]
    if len(set(names)) != len(names):
        raise DuplicateLabel(next(x for x in names if names.count(x) > 1))

    return BinaryImage(
        instructions=tuple(instructions),
        functions=functions,
        threads=tuple((t, f) for t, f, _ in threads),
        labels=dict(labels),
        source=source,
    )


def _call_sites(image: BinaryImage, func_entry: int) -> List[int]:
    sites = []
    for ins in image.instructions:
        if ins.kind == "call" and ins.operands[0] == func_entry:
            sites.append(ins.address)
        elif ins.kind == "calli":
            sites.append(ins.address)
    return sites


def static_successors(image: BinaryImage, addr: int) -> FrozenSet[int]:
    """Addresses that may execute right after ``addr`` in the same thread."""
    if not 0 <= addr < len(image.instructions):
        raise AddressOutOfRange(addr)
    ins = image.instructions[addr]
    k = ins.kind
    if k in SEQUENTIAL:
        return frozenset({addr + 1})
    if k in ("br", "call"):
        return frozenset({ins.operands[0]})
    if k == "brc":
        return frozenset({addr + 1, ins.operands[1]})
    if k == "calli":
        return frozenset(lo for lo, _ in image.functions.values())
    if k == "ret":
        func = image.function_at(addr)
        if func is None:
            return frozenset()
        return frozenset(s + 1 for s in _call_sites(image, image.entry_of(func)))
    return frozenset()  # halt


# ---------------------------------------------------------------------------
# call graph

DIRECT = "D"


@dataclass(frozen=True, order=True)
class CallEdge:
    caller: str
    callee: str
    guards: Tuple[int, ...] = ()  # empty means direct

    @property
    def label(self) -> str:
        if not self.guards:
            return DIRECT
        return ",".join(f"X@{g}" for g in self.guards)

    @property
    def direct(self) -> bool:
        return not self.guards


@dataclass(frozen=True)
class CallGraph:
    nodes: Tuple[str, ...]
    edges: Tuple[CallEdge, ...]

    def out_edges(self, name: str) -> List[CallEdge]:
        return [e for e in self.edges if e.caller == name]


def _local_successors(ins: Instruction, lo: int, hi: int) -> List[int]:
    k = ins.kind
    if k in ("ret", "halt"):
        succ = []
    elif k == "br":
        succ = [ins.operands[0]]
    elif k == "brc":
        succ = [ins.address + 1, ins.operands[1]]
    else:  # sequential, call and calli fall through after the callee returns
        succ = [ins.address + 1]
    return [s for s in succ if lo <= s < hi]


def derive_call_graph(image: BinaryImage) -> CallGraph:
    """Label each call edge Direct or with the conditional branch sites guarding it.

    A call is Direct when every path from the function entry to an exit runs
    through it. Otherwise its guards are the ``brc`` sites it is (transitively)
    control dependent on: it post-dominates one successor of the branch but
    not the branch itself.
    """
    edges = set()
    for name, (lo, hi) in image.functions.items():
        ins_at = image.instructions
        succ = {a: _local_successors(ins_at[a], lo, hi) for a in range(lo, hi)}
        exits = {a for a in range(lo, hi) if ins_at[a].kind in ("ret", "halt")}

        def escapes(x: int, avoid: int) -> bool:
            """An exit is reachable from ``x`` without passing ``avoid``."""
            seen, stack = set(), [x]
            while stack:
                b = stack.pop()
                if b == avoid or b in seen:
                    continue
                if b in exits:
                    return True
                seen.add(b)
                stack.extend(succ[b])
            return False

        def control_deps(a: int) -> List[int]:
            return [b for b in range(lo, hi) if ins_at[b].kind == "brc" and b != a and escapes(b, a)
                    and any(not escapes(s, a) for s in succ[b])]

        reachable, stack = set(), [lo]
        while stack:
            b = stack.pop()
            if b not in reachable:
                reachable.add(b)
                stack.extend(succ[b])

        for a in sorted(reachable):
            if ins_at[a].kind != "call":
                continue
            callee = image.function_at(ins_at[a].operands[0])
            if not escapes(lo, a):
                edges.add(CallEdge(name, callee))
                continue
            guards, todo = set(), [a]
            while todo:
                for b in control_deps(todo.pop()):
                    if b not in guards:
                        guards.add(b)
                        todo.append(b)
            edges.add(CallEdge(name, callee, tuple(sorted(guards))))
    return CallGraph(tuple(sorted(image.functions)), tuple(sorted(edges)))
