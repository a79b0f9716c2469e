"""Brute-force oracle: whole-timeline evaluation by global fixpoint iteration.

Every node is a pure function of the complete timelines of its arguments. The
evaluator recomputes all nodes from the previous round until nothing changes.
It shares no code with the online engine except the operator table.
"""
from __future__ import annotations

from bisect import bisect_left, bisect_right
from typing import Dict, Iterable, List, Tuple

from .engine import InputTypeMismatch, value_type
from .parser import StreamGraph
from .semantics import BINOPS, INF_SEQ, START, UNIT, Violation, same_timeline

Timeline = List[Tuple[Tuple, object]]


class NoFixpoint(Exception):
    pass


def _current(tl: Timeline, keys: List, ts):
    """Value of the latest event at or before ts, or (False, None)."""
    k = bisect_right(keys, ts)
    if k == 0:
        return False, None
    return True, tl[k - 1][1]


def _strictly_before(tl: Timeline, keys: List, ts):
    k = bisect_left(keys, ts)
    if k == 0:
        return False, None
    return True, tl[k - 1][1]


def _node(op, param, argtls, inputs):
    if op == "in":
        return inputs.get(param, [])
    if op == "unit":
        return [(START, UNIT)]
    if op == "const":
        return [(t, param) for t, _ in argtls[0]]
    if op == "time":
        return [(t, t[0]) for t, _ in argtls[0]]
    if op == "count":
        return [(t, k + 1) for k, (t, _) in enumerate(argtls[0])]
    if op == "not":
        return [(t, not v) for t, v in argtls[0]]
    if op == "merge":
        a, b = argtls
        seen = {t: v for t, v in b}
        seen.update(dict(a))
        return sorted(seen.items())
    if op == "last":
        v, t = argtls
        keys = [x for x, _ in v]
        out = []
        for ts, _ in t:
            ok, val = _strictly_before(v, keys, ts)
            if ok:
                out.append((ts, val))
        return out
    if op == "filter":
        s, c = argtls
        keys = [x for x, _ in c]
        out = []
        for ts, val in s:
            ok, cv = _current(c, keys, ts)
            if ok and cv is True:
                out.append((ts, val))
        return out
    if op == "within":
        return _within(param, *argtls)
    # signal lift
    x, y = argtls
    kx = [t for t, _ in x]
    ky = [t for t, _ in y]
    fn = BINOPS[op]
    out = []
    for ts in sorted(set(kx) | set(ky)):
        okx, vx = _current(x, kx, ts)
        oky, vy = _current(y, ky, ts)
        if okx and oky:
            out.append((ts, fn(vx, vy)))
    return out


def _within(d, a: Timeline, b: Timeline) -> Timeline:
    verdicts: Dict[Tuple, List[bool]] = {}
    for ta, _ in a:
        hit = None
        for tb, _ in b:
            if tb > ta and tb[0] <= ta[0] + d:
                hit = tb
                break
            if tb[0] > ta[0] + d:
                break
        if hit is not None:
            verdicts.setdefault(hit, []).append(True)
        else:
            verdicts.setdefault((ta[0] + d, INF_SEQ), []).append(False)
    return sorted((t, all(vs)) for t, vs in verdicts.items())


def _check_inputs(graph: StreamGraph, events) -> Dict[str, Timeline]:
    inputs: Dict[str, Timeline] = {name: [] for name in graph.inputs}
    for ts, name, value in events:
        expected = graph.input_types[name]
        if value_type(value) != expected:
            raise InputTypeMismatch(name, expected, value)
        inputs[name].append((ts, value))
    return inputs


def timelines(graph: StreamGraph, events: Iterable[Tuple], max_rounds: int = 0) -> List[Timeline]:
    events = list(events)
    inputs = _check_inputs(graph, events)
    nodes = graph.nodes
    tls: List[Timeline] = [[] for _ in nodes]
    limit = max_rounds or (len(events) + 2) * (len(nodes) + 2)
    for _ in range(limit):
        new = [_node(nd.op, nd.param, [tls[a] for a in nd.args], inputs) for nd in nodes]
        if all(same_timeline(p, q) for p, q in zip(tls, new)):
            return new
        tls = new
    raise NoFixpoint(f"no fixpoint after {limit} rounds")


def evaluate_reference(graph: StreamGraph, events: Iterable[Tuple]):
    """Same contract as :func:`evaluate_online`."""
    tls = timelines(graph, events)
    outputs = {name: tls[graph.node_of(name)] for name in graph.outputs}
    violations = []
    for name in graph.assertions:
        for ts, v in tls[graph.node_of(name)]:
            if v is False:
                violations.append(Violation(name, ts))
    violations.sort(key=lambda v: v.ts)
    return outputs, violations
