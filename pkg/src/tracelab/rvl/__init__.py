"""RVL-1: a small stream specification language with online and reference evaluators."""
from .parser import (IllegalCycle, Node, RvlError, RvlSyntaxError, RvlTypeError, StreamGraph,
                     UnknownIdentifier, parse_spec)
from .semantics import INF_SEQ, START, UNIT, Violation, format_ts
from .engine import InputTypeMismatch, Monitor, OrderError, evaluate_online
from .reference import evaluate_reference
from .bindings import BindingError, Selector, bind, parse_bindings

__all__ = [
    "IllegalCycle", "Node", "RvlError", "RvlSyntaxError", "RvlTypeError", "StreamGraph",
    "UnknownIdentifier", "parse_spec", "INF_SEQ", "START", "UNIT", "Violation", "format_ts",
    "InputTypeMismatch", "Monitor", "OrderError", "evaluate_online", "evaluate_reference",
    "BindingError", "Selector", "bind", "parse_bindings",
]
