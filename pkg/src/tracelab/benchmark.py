"""The loop benchmark used for the compression claim.

One thread, nine set-up instructions, then ``iterations`` passes over a
ten-instruction body whose last instruction is the only conditional branch,
then ``halt``. With the default 999,999 iterations the run is exactly 10**7
instructions.
"""
from __future__ import annotations

from typing import Optional

from .codec import CompressionReport, EncoderConfig, TraceEncoder, measure
from .program import BinaryImage, load_image
from .sim import SimConfig, Simulator

PROLOGUE = 9
BODY = 10
DEFAULT_ITERATIONS = 999_999


def loop_source(iterations: int = DEFAULT_ITERATIONS) -> str:
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    setup = "\n".join(f"  set r{r}, 0" for r in range(3, 10))
    body = "\n".join(f"  add r{r}, r{r}, r2" for r in range(3, 11))
    return f"""\
func main:
  set r1, {iterations}
  set r2, 1
{setup}
loop:
  sub r1, r1, r2
{body}
  brc r1, loop
  halt
thread t0 entry main
"""


def loop_image(iterations: int = DEFAULT_ITERATIONS) -> BinaryImage:
    return load_image(loop_source(iterations))


def instruction_count(iterations: int = DEFAULT_ITERATIONS) -> int:
    return PROLOGUE + BODY * iterations + 1


def run_loop_benchmark(iterations: int = DEFAULT_ITERATIONS, sync_period: int = 4096,
                       sim: Optional[SimConfig] = None) -> CompressionReport:
    """Stream the run through the encoder without keeping records or packets."""
    img = loop_image(iterations)
    enc = TraceEncoder(img, EncoderConfig(sync_period=sync_period, data_trace="off"), sink=lambda p: None)
    feed = enc.feed
    for rec in Simulator(img, sim or SimConfig()).records():
        feed(rec)
    enc.finish()
    return measure(enc.count, enc.nbytes)
