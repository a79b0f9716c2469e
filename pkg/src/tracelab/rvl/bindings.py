"""Input binding files: map RVL-1 ``in`` streams to event selectors.

One binding per line::

    i3 := VarWrite(addr=7)
    e2 := Output(port=2)
    enter := FuncEnter(name=trans1)

Field values are integers, ``true``/``false`` or bare names.
"""
from __future__ import annotations

import re
from typing import Dict, Iterable, Iterator, List, NamedTuple, Tuple

from ..events import FIELDS, Event


class BindingError(Exception):
    def __init__(self, message: str, line: int = 0):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


class Selector(NamedTuple):
    kind: str
    filters: Tuple[Tuple[str, object], ...] = ()

    def matches(self, ev: Event) -> bool:
        if ev.kind != self.kind:
            return False
        for name, want in self.filters:
            got = ev.field(name)
            if got != want or isinstance(got, bool) != isinstance(want, bool):
                return False
        return True

    def __str__(self):
        inner = ",".join(f"{k}={_fmt(v)}" for k, v in self.filters)
        return f"{self.kind}({inner})"


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


_LINE_RE = re.compile(r"^\s*([A-Za-z_]\w*)\s*:=\s*([A-Za-z]\w*)\s*\((.*)\)\s*$")
_FIELD_RE = re.compile(r"^\s*([A-Za-z_]\w*)\s*=\s*(-?\d+|0x[0-9a-fA-F]+|[A-Za-z_]\w*)\s*$")


def _value(text: str):
    if text == "true":
        return True
    if text == "false":
        return False
    try:
        return int(text, 0)
    except ValueError:
        return text


def parse_bindings(text: str) -> Dict[str, Selector]:
    out: Dict[str, Selector] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _LINE_RE.match(line)
        if not m:
            raise BindingError(f"cannot parse binding {line!r}", lineno)
        name, kind, body = m.groups()
        if kind not in FIELDS:
            raise BindingError(f"unknown event kind {kind!r}", lineno)
        if name in out:
            raise BindingError(f"duplicate binding {name!r}", lineno)
        filters: List[Tuple[str, object]] = []
        if body.strip():
            for part in body.split(","):
                fm = _FIELD_RE.match(part)
                if not fm:
                    raise BindingError(f"bad field filter {part.strip()!r}", lineno)
                field, val = fm.groups()
                if field != "thread" and field not in FIELDS[kind]:
                    raise BindingError(f"{kind} has no field {field!r}", lineno)
                filters.append((field, _value(val)))
        out[name] = Selector(kind, tuple(filters))
    return out


def check_bindings(graph, bindings: Dict[str, Selector]):
    missing = [n for n in graph.inputs if n not in bindings]
    if missing:
        raise BindingError(f"unbound inputs: {', '.join(missing)}")


def bind(events: Iterable[Event], bindings: Dict[str, Selector]) -> Iterator[Tuple]:
    """Yield ``(ts, input name, value)`` triples in event order."""
    sel = list(bindings.items())
    for ev in events:
        for name, s in sel:
            if s.matches(ev):
                yield ev.ts, name, ev.value
