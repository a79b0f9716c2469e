"""RVL-1 front end: tokenizer, parser, name resolution and type checking.

Grammar::

    in NAME : events<TYPE>
    def NAME = EXPR
    out NAME
    assert NAME

Statements may share a line. ``#`` starts a comment.
"""
from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

TYPES = ("int", "float", "bool", "unit")
ARITH = ("+", "-", "*")
COMPARE = ("<", "<=")
LOGIC = ("&&", "||")
BUILTINS = {"time": 1, "last": 2, "merge": 2, "filter": 2, "count": 1, "const": 2, "within": 3}


class RvlError(Exception):
    pass


class RvlSyntaxError(RvlError):
    def __init__(self, message: str, line: int):
        self.line = line
        super().__init__(f"line {line}: {message}")


class UnknownIdentifier(RvlError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"unknown identifier {name!r}")


class RvlTypeError(RvlError):
    def __init__(self, expr: str, expected: str, got: str):
        self.expr, self.expected, self.got = expr, expected, got
        super().__init__(f"{expr}: expected {expected}, got {got}")


class IllegalCycle(RvlError):
    def __init__(self, names):
        self.names = tuple(names)
        super().__init__(f"cycle not broken by last(): {', '.join(self.names)}")


_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r]+) | (?P<nl>\n) | (?P<comment>\#[^\n]*)
  | (?P<float>\d+\.\d*(?:[eE][+-]?\d+)?|\d+[eE][+-]?\d+)
  | (?P<int>\d+)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>&&|\|\||<=|==|[-+*<>!(),:=])
""", re.VERBOSE)


@dataclass
class Token:
    kind: str
    text: str
    line: int


def tokenize(text: str) -> List[Token]:
    toks, pos, line = [], 0, 1
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise RvlSyntaxError(f"unexpected character {text[pos]!r}", line)
        kind = m.lastgroup
        if kind == "nl":
            line += 1
        elif kind not in ("ws", "comment"):
            toks.append(Token(kind, m.group(), line))
        pos = m.end()
    toks.append(Token("eof", "", line))
    return toks


# ---------------------------------------------------------------------------
# AST: tuples ("lit", value) | ("id", name) | ("unit",) | ("call", fn, args) |
#             ("bin", op, a, b) | ("not", a)


class _Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def next(self) -> Token:
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, text: str) -> Token:
        t = self.next()
        if t.text != text:
            raise RvlSyntaxError(f"expected {text!r}, got {t.text or 'end of input'!r}", t.line)
        return t

    def name(self) -> Token:
        t = self.next()
        if t.kind != "name":
            raise RvlSyntaxError(f"expected a name, got {t.text or 'end of input'!r}", t.line)
        return t

    def statements(self):
        while self.tok.kind != "eof":
            t = self.next()
            if t.text == "in":
                name = self.name()
                self.expect(":")
                self.expect("events")
                self.expect("<")
                ty = self.name()
                if ty.text not in TYPES:
                    raise RvlSyntaxError(f"unknown type {ty.text!r}", ty.line)
                self.expect(">")
                yield ("in", name.text, ty.text, t.line)
            elif t.text == "def":
                name = self.name()
                self.expect("=")
                yield ("def", name.text, self.expr(), t.line)
            elif t.text in ("out", "assert"):
                yield (t.text, self.name().text, None, t.line)
            else:
                raise RvlSyntaxError(f"expected in/def/out/assert, got {t.text!r}", t.line)

    # precedence climbing: || < && < == < (< <=) < (+ -) < *
    _LEVELS = [("||",), ("&&",), ("==",), ("<", "<="), ("+", "-"), ("*",)]

    def expr(self, level: int = 0):
        if level == len(self._LEVELS):
            return self.unary()
        lhs = self.expr(level + 1)
        while self.tok.text in self._LEVELS[level]:
            op = self.next().text
            rhs = self.expr(level + 1)
            lhs = ("bin", op, lhs, rhs)
        return lhs

    def unary(self):
        t = self.tok
        if t.text == "!":
            self.next()
            return ("not", self.unary())
        if t.text == "-" and self.toks[self.i + 1].kind in ("int", "float"):
            self.next()
            lit = self.primary()
            return ("lit", -lit[1])
        return self.primary()

    def primary(self):
        t = self.next()
        if t.kind == "int":
            return ("lit", int(t.text))
        if t.kind == "float":
            return ("lit", float(t.text))
        if t.text == "(":
            e = self.expr()
            self.expect(")")
            return e
        if t.kind == "name":
            if t.text in ("true", "false"):
                return ("lit", t.text == "true")
            if t.text == "unit":
                return ("unit",)
            if t.text in BUILTINS and self.tok.text == "(":
                self.next()
                args = []
                if self.tok.text != ")":
                    args.append(self.expr())
                    while self.tok.text == ",":
                        self.next()
                        args.append(self.expr())
                self.expect(")")
                if len(args) != BUILTINS[t.text]:
                    raise RvlSyntaxError(f"{t.text} takes {BUILTINS[t.text]} arguments", t.line)
                return ("call", t.text, args)
            return ("id", t.text)
        raise RvlSyntaxError(f"unexpected {t.text or 'end of input'!r}", t.line)


# ---------------------------------------------------------------------------
# graph


@dataclass
class Node:
    op: str  # in unit const time merge last filter count within not + - * < <= == && ||
    args: Tuple[int, ...] = ()
    param: object = None  # input name, const value, within distance
    type: Optional[str] = None
    name: Optional[str] = None  # def/in name bound to this node, if any

    def label(self) -> str:
        if self.op == "in":
            return self.param
        return self.name or self.op


@dataclass
class StreamGraph:
    nodes: List[Node]
    inputs: Dict[str, int]  # in name -> node
    input_types: Dict[str, str]
    defs: Dict[str, int]  # def name -> node
    outputs: List[str]
    assertions: List[str]
    order: List[int] = field(default_factory=list)  # evaluation order
    source: str = ""

    def node_of(self, name: str) -> int:
        if name in self.defs:
            return self.defs[name]
        return self.inputs[name]

    def digest(self) -> bytes:
        return hashlib.sha256(self.source.encode()).digest()


def parse_spec(text: str) -> StreamGraph:
    """Parse and type-check an RVL-1 specification."""
    stmts = list(_Parser(text).statements())
    nodes: List[Node] = []
    inputs: Dict[str, int] = {}
    input_types: Dict[str, str] = {}
    def_ast: Dict[str, tuple] = {}
    outputs, assertions = [], []
    for kind, name, payload, line in stmts:
        if kind in ("in", "def") and (name in inputs or name in def_ast):
            raise RvlSyntaxError(f"{name!r} declared twice", line)
        if kind == "in":
            inputs[name] = len(nodes)
            input_types[name] = payload
            nodes.append(Node("in", param=name, type=payload, name=name))
        elif kind == "def":
            def_ast[name] = payload
        elif kind == "out":
            outputs.append(name)
        else:
            assertions.append(name)

    unit_node: List[int] = []

    def unit() -> int:
        if not unit_node:
            unit_node.append(len(nodes))
            nodes.append(Node("unit", type="unit"))
        return unit_node[0]

    def add(node: Node) -> int:
        nodes.append(node)
        return len(nodes) - 1

    def build(e) -> object:
        tag = e[0]
        if tag == "lit":
            return add(Node("const", (unit(),), e[1], _lit_type(e[1])))
        if tag == "unit":
            return unit()
        if tag == "id":
            return ("ref", e[1])
        if tag == "not":
            return add(Node("not", (build(e[1]),)))
        if tag == "bin":
            return add(Node(e[1], (build(e[2]), build(e[3]))))
        fn, args = e[1], e[2]
        if fn == "const":
            if args[0][0] != "lit":
                raise RvlTypeError("const", "literal first argument", args[0][0])
            return add(Node("const", (build(args[1]),), args[0][1], _lit_type(args[0][1])))
        if fn == "within":
            if args[0][0] != "lit" or type(args[0][1]) is not int or args[0][1] < 0:
                raise RvlTypeError("within", "non-negative integer literal distance", str(args[0]))
            return add(Node("within", (build(args[1]), build(args[2])), args[0][1]))
        return add(Node(fn, tuple(build(a) for a in args)))

    roots: Dict[str, object] = {}
    for name, ast in def_ast.items():
        roots[name] = build(ast)

    # resolve identifiers, following pure aliases
    def resolve(name: str, seen=()) -> int:
        if name in inputs:
            return inputs[name]
        if name not in roots:
            raise UnknownIdentifier(name)
        r = roots[name]
        if isinstance(r, tuple):
            if name in seen:
                raise IllegalCycle(seen)
            return resolve(r[1], seen + (name,))
        return r

    defs = {name: resolve(name) for name in roots}
    for n in nodes:
        n.args = tuple(resolve(a[1]) if isinstance(a, tuple) else a for a in n.args)
    for name, idx in defs.items():
        if nodes[idx].name is None:
            nodes[idx].name = name
    for name in outputs + assertions:
        if name not in defs and name not in inputs:
            raise UnknownIdentifier(name)

    graph = StreamGraph(nodes, inputs, input_types, defs, outputs, assertions, source=text)
    graph.order = _topo_order(graph)
    _infer_types(graph)
    for name in assertions:
        t = nodes[graph.node_of(name)].type
        if t != "bool":
            raise RvlTypeError(f"assert {name}", "bool", t)
    return graph


def _lit_type(v) -> str:
    if isinstance(v, bool):
        return "bool"
    if isinstance(v, int):
        return "int"
    return "float"


def _deps(node: Node) -> Tuple[int, ...]:
    """Same-timestamp dependencies: last() reads only strictly earlier values of its first argument."""
    if node.op == "last":
        return (node.args[1],)
    return node.args


def _topo_order(graph: StreamGraph) -> List[int]:
    nodes = graph.nodes
    state = [0] * len(nodes)  # 0 new, 1 on stack, 2 done
    order: List[int] = []
    for start in range(len(nodes)):
        if state[start]:
            continue
        stack = [(start, iter(_deps(nodes[start])))]
        state[start] = 1
        path = [start]
        while stack:
            idx, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                stack.pop()
                path.pop()
                state[idx] = 2
                order.append(idx)
            elif state[nxt] == 1:
                cyc = path[path.index(nxt):]
                raise IllegalCycle([nodes[i].label() for i in cyc])
            elif state[nxt] == 0:
                state[nxt] = 1
                path.append(nxt)
                stack.append((nxt, iter(_deps(nodes[nxt]))))
    return order


def _infer_types(graph: StreamGraph):
    nodes = graph.nodes

    def result(n: Node, ts: List[Optional[str]]) -> Optional[str]:
        op = n.op
        if op in ("in", "unit", "const"):
            return n.type
        if op in ("time", "count"):
            return "int"
        if op in ("within", "not", "==", "&&", "||") + COMPARE:
            return "bool"
        if op in ARITH or op == "merge":
            return ts[0] or ts[1]
        if op in ("last", "filter"):
            return ts[0]
        raise RvlError(f"unknown operator {op}")

    changed = True
    while changed:
        changed = False
        for n in nodes:
            if n.type is None:
                t = result(n, [nodes[a].type for a in n.args])
                if t is not None:
                    n.type = t
                    changed = True

    for n in nodes:
        ts = [nodes[a].type for a in n.args]
        where = n.label()
        if n.type is None:
            raise RvlTypeError(where, "an inferable type", "unknown")
        op = n.op
        if op in ARITH:
            for t in ts:
                if t not in ("int", "float"):
                    raise RvlTypeError(where, "int or float", t)
            if ts[0] != ts[1]:
                raise RvlTypeError(where, ts[0], ts[1])
        elif op in COMPARE:
            if ts[0] not in ("int", "float"):
                raise RvlTypeError(where, "int or float", ts[0])
            if ts[0] != ts[1]:
                raise RvlTypeError(where, ts[0], ts[1])
        elif op == "==" or op == "merge":
            if ts[0] != ts[1]:
                raise RvlTypeError(where, ts[0], ts[1])
        elif op in LOGIC:
            for t in ts:
                if t != "bool":
                    raise RvlTypeError(where, "bool", t)
        elif op == "not" and ts[0] != "bool":
            raise RvlTypeError(where, "bool", ts[0])
        elif op == "filter" and ts[1] != "bool":
            raise RvlTypeError(where, "bool", ts[1])
