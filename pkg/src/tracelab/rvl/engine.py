"""Online single-pass evaluation of a StreamGraph with bounded state."""
from __future__ import annotations

from collections import deque
from typing import Callable, Dict, Iterable, List, Optional, Tuple

from .parser import StreamGraph
from .semantics import BINOPS, INF_SEQ, START, UNIT, Violation

_NONE = object()


class InputTypeMismatch(Exception):
    def __init__(self, name: str, expected: str, value):
        self.name, self.expected, self.value = name, expected, value
        super().__init__(f"input {name!r} declared events<{expected}> but got {value!r}")


class OrderError(Exception):
    pass


def value_type(v) -> str:
    if v == UNIT and isinstance(v, tuple):
        return "unit"
    if isinstance(v, bool):
        return "bool"
    if isinstance(v, int):
        return "int"
    if isinstance(v, float):
        return "float"
    return type(v).__name__


class Monitor:
    """Feeds timestamped input values through the graph one timestamp at a time.

    ``push(ts, {input: value})`` with strictly increasing ``ts``; ``finish()`` at
    end of stream resolves pending ``within`` deadlines. Both return the
    violations produced. Output streams go to ``on_output(name, ts, value)``
    when given, else they accumulate in :attr:`outputs`.
    """

    def __init__(self, graph: StreamGraph, on_output: Optional[Callable] = None):
        self.graph = graph
        nodes = graph.nodes
        self.n = len(nodes)
        self.ops = [nd.op for nd in nodes]
        self.args = [nd.args for nd in nodes]
        self.params = [nd.param for nd in nodes]
        self.order = list(graph.order)
        self.cur: List[object] = [_NONE] * self.n  # latest value at or before the current ts
        self.held: Dict[int, object] = {}  # last(): latest value strictly before the current ts
        self.counts: Dict[int, int] = {}
        self.pending: Dict[int, deque] = {i: deque() for i, op in enumerate(self.ops) if op == "within"}
        self.last_ids = [i for i, op in enumerate(self.ops) if op == "last"]
        self.out_nodes = [(name, graph.node_of(name)) for name in graph.outputs]
        self.assert_nodes = [(name, graph.node_of(name)) for name in graph.assertions]
        self.has_unit = any(op == "unit" for op in self.ops)
        self.outputs: Dict[str, List[Tuple]] = {name: [] for name in graph.outputs}
        self.on_output = on_output
        self.violations: List[Violation] = []
        self.started = False
        self.watermark: Optional[Tuple] = None
        self.finished = False
        self.peak_state = 0
        self.steps = 0

    # -- public ----------------------------------------------------------
    def state_size(self) -> int:
        """Retained items: per-node slots plus pending within deadlines."""
        return self.n + sum(len(q) for q in self.pending.values())

    def next_deadline(self) -> Optional[int]:
        best = None
        for q in self.pending.values():
            if q and (best is None or q[0] < best):
                best = q[0]
        return best

    def push(self, ts, values: Dict[str, object], trigger: str = "") -> List[Violation]:
        if self.finished:
            raise OrderError("monitor already finished")
        if self.watermark is not None and ts <= self.watermark:
            raise OrderError(f"timestamp {ts} not after {self.watermark}")
        for name, v in values.items():
            expected = self.graph.input_types[name]
            if value_type(v) != expected:
                raise InputTypeMismatch(name, expected, v)
        n0 = len(self.violations)
        if not self.started:
            self.started = True
            if ts != START and self.has_unit:
                self._step(START, {}, "start")
        self.advance(ts)
        self._step(ts, values, trigger)
        self.watermark = ts
        return self.violations[n0:]

    def advance(self, ts) -> List[Violation]:
        """Resolve every deadline strictly before ``ts``."""
        n0 = len(self.violations)
        while True:
            d = self.next_deadline()
            if d is None or (d, INF_SEQ) >= ts:
                break
            self._step((d, INF_SEQ), {}, f"deadline {d}")
            self.watermark = (d, INF_SEQ)
        return self.violations[n0:]

    def finish(self) -> List[Violation]:
        if self.finished:
            return []
        n0 = len(self.violations)
        if not self.started:
            self.started = True
            if self.has_unit:
                self._step(START, {}, "start")
        while True:
            d = self.next_deadline()
            if d is None:
                break
            self._step((d, INF_SEQ), {}, f"deadline {d}")
        self.finished = True
        return self.violations[n0:]

    # -- core ------------------------------------------------------------
    def _step(self, ts, inputs: Dict[str, object], trigger: str):
        self.steps += 1
        ops, args, params, cur = self.ops, self.args, self.params, self.cur
        vals = [_NONE] * self.n
        cycle = ts[0]
        at_deadline = ts[1] == INF_SEQ
        for i in self.order:
            op = ops[i]
            a = args[i]
            v = _NONE
            if op == "in":
                v = inputs.get(params[i], _NONE)
            elif op == "unit":
                if ts == START:
                    v = UNIT
            elif op == "const":
                if vals[a[0]] is not _NONE:
                    v = params[i]
            elif op == "time":
                if vals[a[0]] is not _NONE:
                    v = cycle
            elif op == "merge":
                v = vals[a[0]] if vals[a[0]] is not _NONE else vals[a[1]]
            elif op == "last":
                if vals[a[1]] is not _NONE and i in self.held:
                    v = self.held[i]
            elif op == "not":
                if vals[a[0]] is not _NONE:
                    v = not vals[a[0]]
            elif op == "filter":
                if vals[a[0]] is not _NONE and cur[a[1]] is True:
                    v = vals[a[0]]
            elif op == "count":
                if vals[a[0]] is not _NONE:
                    c = self.counts.get(i, 0) + 1
                    self.counts[i] = c
                    v = c
            elif op == "within":
                v = self._within(i, vals[a[0]], vals[a[1]], cycle, at_deadline)
            else:
                x, y = a
                if (vals[x] is not _NONE or vals[y] is not _NONE) and cur[x] is not _NONE and cur[y] is not _NONE:
                    v = BINOPS[op](cur[x], cur[y])
            if v is not _NONE:
                vals[i] = v
                cur[i] = v
        for i in self.last_ids:
            src = vals[args[i][0]]
            if src is not _NONE:
                self.held[i] = src
        for name, i in self.out_nodes:
            if vals[i] is not _NONE:
                if self.on_output is not None:
                    self.on_output(name, ts, vals[i])
                else:
                    self.outputs[name].append((ts, vals[i]))
        for name, i in self.assert_nodes:
            if vals[i] is False:
                self.violations.append(Violation(name, ts, trigger))
        size = self.state_size()
        if size > self.peak_state:
            self.peak_state = size

    def _within(self, i, a_val, b_val, cycle, at_deadline):
        q = self.pending[i]
        verdicts = []
        if b_val is not _NONE and q:
            q.clear()
            verdicts.append(True)
        if at_deadline:
            expired = False
            while q and q[0] <= cycle:
                q.popleft()
                expired = True
            if expired:
                verdicts.append(False)
        if a_val is not _NONE:
            deadline = cycle + self.params[i]
            if at_deadline and deadline == cycle:
                verdicts.append(False)
            else:
                q.append(deadline)
        if not verdicts:
            return _NONE
        return all(verdicts)


def _group(events: Iterable) -> Iterable[Tuple[Tuple, Dict[str, object]]]:
    """Group ``(ts, name, value)`` triples by timestamp."""
    cur_ts, vals = None, {}
    for ts, name, value in events:
        if cur_ts is not None and ts != cur_ts:
            yield cur_ts, vals
            vals = {}
        cur_ts = ts
        vals[name] = value
    if cur_ts is not None:
        yield cur_ts, vals


def evaluate_online(graph: StreamGraph, events: Iterable[Tuple]):
    """Evaluate over ``(ts, input name, value)`` triples sorted by ts.

    Returns ``(outputs, violations)`` with outputs as ``{name: [(ts, value), ...]}``.
    """
    mon = Monitor(graph)
    for ts, vals in _group(events):
        mon.push(ts, vals)
    mon.finish()
    return mon.outputs, mon.violations
