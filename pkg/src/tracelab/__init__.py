"""Trace-based debugging lab: a deterministic multi-threaded target, a compressed
trace codec, event extraction, stream runtime verification, trigger capture,
combinatorial test generation and a bug-taxonomy lab."""

__version__ = "0.1.0"
