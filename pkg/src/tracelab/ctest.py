"""t-way combinatorial test generation (AETG-style greedy) and suite execution.

Model file, one parameter per line::

    # name = comma-separated domain -> mem[cell]
    p1 = 0, 1, 2, 5 -> mem[100]
    mode = off, on -> mem[102]     # enum tags are written as their domain index
"""
from __future__ import annotations

import csv
import io
import math
import random
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import combinations, product
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

from .sim import RunResult, SimConfig, run

Value = Union[int, float, str]
TestCase = Tuple[Value, ...]
CANDIDATES = 50


class StrengthOutOfRange(ValueError):
    pass


class AdapterError(Exception):
    def __init__(self, test, message: str):
        self.test = test
        super().__init__(f"test {test}: {message}")


class ModelError(ValueError):
    def __init__(self, message: str, line: int = 0):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


@dataclass(frozen=True)
class Parameter:
    name: str
    domain: Tuple[Value, ...]
    cell: Optional[int] = None  # adapter target mem[cell]


@dataclass(frozen=True)
class ParameterModel:
    params: Tuple[Parameter, ...]

    def __post_init__(self):
        if not self.params:
            raise ModelError("model needs at least one parameter")
        for p in self.params:
            if not p.domain:
                raise ModelError(f"parameter {p.name!r} has an empty domain")

    @classmethod
    def of(cls, **domains) -> "ParameterModel":
        return cls(tuple(Parameter(k, tuple(v)) for k, v in domains.items()))

    @property
    def names(self) -> List[str]:
        return [p.name for p in self.params]

    @property
    def sizes(self) -> List[int]:
        return [len(p.domain) for p in self.params]

    def to_inputs(self, test: TestCase) -> Dict[int, Union[int, float]]:
        """Adapter: TestCase -> SimConfig input vector."""
        if len(test) != len(self.params):
            raise AdapterError(test, f"expected {len(self.params)} values")
        out = {}
        for p, v in zip(self.params, test):
            if p.cell is None:
                raise AdapterError(test, f"parameter {p.name!r} has no mem[] target")
            if v not in p.domain:
                raise AdapterError(test, f"{v!r} not in domain of {p.name!r}")
            out[p.cell] = p.domain.index(v) if isinstance(v, str) else v
        return out


@dataclass
class CoveringArray:
    t: int
    model: ParameterModel
    suite: List[TestCase]

    def __len__(self):
        return len(self.suite)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.model.names)
        w.writerows(self.suite)
        return buf.getvalue()


# ---------------------------------------------------------------------------
# generation


def _all_tuples(sizes: Sequence[int], t: int):
    for cols in combinations(range(len(sizes)), t):
        for vals in product(*(range(sizes[c]) for c in cols)):
            yield tuple(zip(cols, vals))


def _covered_by(test: Sequence[int], t: int):
    return (tuple((c, test[c]) for c in cols) for cols in combinations(range(len(test)), t))


def generate(model: ParameterModel, t: int, seed: int = 0) -> CoveringArray:
    k = len(model.params)
    if not 1 <= t <= k:
        raise StrengthOutOfRange(f"strength {t} outside 1..{k}")
    sizes = model.sizes
    uncovered = set(_all_tuples(sizes, t))
    by_pv: Dict[Tuple[int, int], set] = {}
    for tup in uncovered:
        for pv in tup:
            by_pv.setdefault(pv, set()).add(tup)
    rng = random.Random(seed)
    rows: List[List[int]] = []
    while uncovered:
        # (param, value) occurring in the most uncovered tuples
        first = min((pv for pv in by_pv if by_pv[pv]), key=lambda pv: (-len(by_pv[pv]), pv))
        best, best_gain = None, -1
        for _ in range(CANDIDATES):
            row = _candidate(first, sizes, by_pv, rng)
            gain = sum(1 for tup in _covered_by(row, t) if tup in uncovered)
            if gain > best_gain:
                best, best_gain = row, gain
        rows.append(best)
        for tup in _covered_by(best, t):
            if tup in uncovered:
                uncovered.discard(tup)
                for pv in tup:
                    by_pv[pv].discard(tup)
    suite = [tuple(model.params[i].domain[v] for i, v in enumerate(row)) for row in rows]
    missing = verify_coverage(suite, model, t)
    assert not missing, missing
    return CoveringArray(t, model, suite)


def _candidate(first, sizes, by_pv, rng) -> List[int]:
    p0, v0 = first
    row: List[Optional[int]] = [None] * len(sizes)
    row[p0] = v0
    order = [p for p in range(len(sizes)) if p != p0]
    rng.shuffle(order)
    for p in order:
        best_v, best_key = 0, (-1, -1)
        for v in range(sizes[p]):
            full = partial = 0
            for tup in by_pv.get((p, v), ()):
                ok, complete = True, True
                for c, x in tup:
                    if c == p:
                        continue
                    if row[c] is None:
                        complete = False
                    elif row[c] != x:
                        ok = False
                        break
                if ok:
                    partial += 1
                    full += complete
            # newly covered tuples first; still-coverable partial tuples break ties
            if (full, partial) > best_key:
                best_v, best_key = v, (full, partial)
        row[p] = best_v
    return row  # type: ignore[return-value]


def verify_coverage(suite: Sequence[TestCase], model: ParameterModel, t: int) -> List[Tuple]:
    """All t-way (name, value) combinations missing from ``suite``."""
    idx = [{v: i for i, v in enumerate(p.domain)} for p in model.params]
    seen = set()
    for test in suite:
        row = [idx[c][v] for c, v in enumerate(test)]
        seen.update(_covered_by(row, t))
    missing = []
    for tup in _all_tuples(model.sizes, t):
        if tup not in seen:
            missing.append(tuple((model.params[c].name, model.params[c].domain[v]) for c, v in tup))
    return missing


# ---------------------------------------------------------------------------
# execution


@dataclass
class Failure:
    index: int
    test: TestCase
    verdict: str
    outputs: List[Tuple]
    violations: List = field(default_factory=list)


@dataclass
class FailureReport:
    total: int
    failures: List[Failure]

    @property
    def failed(self) -> int:
        return len(self.failures)

    @property
    def failing_tests(self) -> List[TestCase]:
        return [f.test for f in self.failures]

    def summary(self) -> dict:
        return {"total": self.total, "failed": self.failed, "passed": self.total - self.failed}


Oracle = Callable[[RunResult], Optional[str]]  # None = pass, else a verdict string


def finite_outputs(result: RunResult) -> Optional[str]:
    """Fails on Infinity/NaN outputs and on traps."""
    for _, port, v in result.outputs:
        if isinstance(v, float) and not math.isfinite(v):
            return "nan" if math.isnan(v) else "infinity"
    return no_trap(result)


def no_trap(result: RunResult) -> Optional[str]:
    for rec in result.trace:
        if rec.kind == "trap":
            return f"trap:{rec.a}"
    if result.status == "watchdog-truncated":
        return "watchdog"
    return None


def expect_outputs(expected: Dict[int, object]) -> Oracle:
    """Oracle requiring the last value on each listed port."""
    def check(result: RunResult) -> Optional[str]:
        last = {}
        for _, port, v in result.outputs:
            last[port] = v
        for port, want in expected.items():
            if last.get(port) != want:
                return f"port {port}: expected {want!r}, got {last.get(port)!r}"
        return None
    return check


def run_suite(ca: CoveringArray, image, oracle: Oracle = finite_outputs,
              base: SimConfig = SimConfig(), workers: int = 1, monitor=None) -> FailureReport:
    """One run per test with the base config's fixed seed; results in suite order.

    ``monitor(result)`` may return a violation list; any violation fails the test.
    """
    configs = []
    for test in ca.suite:
        inputs = dict(base.inputs)
        inputs.update(ca.model.to_inputs(test))
        try:
            configs.append(replace(base, inputs=inputs))
        except ValueError as e:
            raise AdapterError(test, str(e)) from None

    def one(cfg):
        res = run(image, cfg)
        verdict = oracle(res)
        viols = monitor(res) if monitor is not None else []
        if verdict is None and viols:
            verdict = "violation"
        return res, verdict, viols

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            results = list(ex.map(one, configs))
    else:
        results = [one(c) for c in configs]
    failures = [Failure(i, test, verdict, list(res.outputs), viols)
                for i, (test, (res, verdict, viols)) in enumerate(zip(ca.suite, results))
                if verdict is not None]
    return FailureReport(len(ca.suite), failures)


# ---------------------------------------------------------------------------
# model files

_MODEL_RE = re.compile(r"^([A-Za-z_]\w*)\s*=\s*(.+?)\s*->\s*mem\[\s*(\d+)\s*\]$")


def _domain_value(text: str) -> Value:
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def parse_model(text: str) -> ParameterModel:
    params = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _MODEL_RE.match(line)
        if not m:
            raise ModelError(f"cannot parse {line!r}", lineno)
        name, dom, cell = m.groups()
        values = tuple(_domain_value(v.strip()) for v in dom.split(",") if v.strip())
        if not values:
            raise ModelError(f"empty domain for {name!r}", lineno)
        if len(set(values)) != len(values):
            raise ModelError(f"duplicate values in domain of {name!r}", lineno)
        params.append(Parameter(name, values, int(cell)))
    return ParameterModel(tuple(params))


def read_suite_csv(text: str, model: ParameterModel) -> List[TestCase]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != model.names:
        raise ModelError("suite header does not match model parameters")
    return [tuple(_domain_value(v) for v in r) for r in rows[1:] if r]
