"""Value-level operator table and timestamp conventions shared by both evaluators."""
import math
import operator
from typing import NamedTuple, Tuple

INF_SEQ = math.inf  # seq component of deadline timestamps: after every event of that cycle
START = (0, 0)
UNIT = ()

BINOPS = {
    "+": operator.add,
    "-": operator.sub,
    "*": operator.mul,
    "<": operator.lt,
    "<=": operator.le,
    "==": operator.eq,
    "&&": lambda a, b: a and b,
    "||": lambda a, b: a or b,
}


class Violation(NamedTuple):
    assertion: str
    ts: Tuple[int, float]
    trigger: str = ""

    def dump(self) -> str:
        return f"{format_ts(self.ts)} {self.assertion} {self.trigger}".rstrip()


def format_ts(ts) -> str:
    seq = "inf" if ts[1] == INF_SEQ else str(ts[1])
    return f"{ts[0]}.{seq}"


def same_value(a, b) -> bool:
    if isinstance(a, float) and isinstance(b, float) and math.isnan(a) and math.isnan(b):
        return True
    return type(a) is type(b) and a == b


def same_timeline(x, y) -> bool:
    return len(x) == len(y) and all(
        ta == tb and same_value(va, vb) for (ta, va), (tb, vb) in zip(x, y))
