"""The six shipped scenarios: program, specs, fixed inputs and manifestation oracles."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Callable, Dict, Optional, Tuple

from ..program import BinaryImage, load_image
from ..rvl.bindings import Selector, parse_bindings
from ..rvl.parser import StreamGraph, parse_spec
from ..sim import RunResult


def data_path(*parts: str):
    return resources.files(__package__).joinpath(*parts)


def read_text(*parts: str) -> str:
    return data_path(*parts).read_text()


def _last_outputs(result: RunResult) -> Dict[int, object]:
    last = {}
    for _, port, v in result.outputs:
        last[port] = v
    return last


@dataclass(frozen=True)
class Scenario:
    name: str
    description: str
    specs: Tuple[str, ...]  # spec file stems under specs/ (with matching .bind)
    inputs: Dict[int, object]
    manifests: Callable[[RunResult], bool]
    expected: str  # golden class string, e.g. "Mandelbug+heisen"
    seed: int = 0  # seed for single demonstration runs
    passing_inputs: Optional[Dict[int, object]] = None  # mistakes disabled
    transitions: Tuple[str, ...] = ()  # function names; index = transition number
    sweep: Optional[Tuple[int, Tuple[int, ...]]] = None  # (length cell, run lengths)
    model: Optional[str] = None  # ctest model file stem under models/
    notes: str = ""

    @property
    def image(self) -> BinaryImage:
        return _image(self.name)

    @property
    def source(self) -> str:
        return read_text("asm", f"{self.name}.asm")

    def spec(self, stem: str) -> Tuple[StreamGraph, Dict[str, Selector]]:
        if stem not in self.specs:
            raise KeyError(f"{self.name} has no spec {stem!r}; known: {', '.join(self.specs)}")
        return _spec(stem)

    def spec_text(self, stem: str) -> Tuple[str, str]:
        return read_text("specs", f"{stem}.rvl"), read_text("specs", f"{stem}.bind")

    def golden(self) -> dict:
        return json.loads(read_text("golden", f"{self.name}.json"))


@lru_cache(maxsize=None)
def _image(name: str) -> BinaryImage:
    return load_image(read_text("asm", f"{name}.asm"))


@lru_cache(maxsize=None)
def _spec(stem: str):
    return parse_spec(read_text("specs", f"{stem}.rvl")), parse_bindings(read_text("specs", f"{stem}.bind"))


# -- manifestation oracles (black-box: outputs and termination only) ---------

def _figure2_fails(r: RunResult) -> bool:
    out = _last_outputs(r)
    return out.get(1) != 29 or out.get(2) != 8


RACE_ITERS = 20


def _race_fails(r: RunResult) -> bool:
    return _last_outputs(r).get(0) != 2 * RACE_ITERS


def _deadlock_fails(r: RunResult) -> bool:
    return r.status == "all-blocked"


AGING_THRESHOLD = 0.0002  # seconds of clock drift


def _aging_fails(r: RunResult) -> bool:
    out = _last_outputs(r)
    return out[2] - out[1] >= AGING_THRESHOLD


def _div_fails(r: RunResult) -> bool:
    y = _last_outputs(r).get(0)
    return not (isinstance(y, float) and math.isfinite(y))


I2C_DEVICE = 80


def _i2c_fails(r: RunResult) -> bool:
    return _last_outputs(r).get(0) != I2C_DEVICE


_I2C_MSG = {510 + i: 0xA0 + i for i in range(16)}

SCENARIOS: Tuple[Scenario, ...] = (
    Scenario(
        name="figure2_infection",
        description="state machine z1..z6; code A infects i3 from an unlocked sensor read, "
                    "the infection reaches i2, i3 is overwritten, e1 exposes it at z6",
        specs=("figure2_white", "figure2_black"),
        inputs={20: 5, 21: 8, 30: 1, 31: 0},
        passing_inputs={20: 5, 21: 8, 30: 0, 31: 0},
        manifests=_figure2_fails,
        expected="Mandelbug",
        seed=3,
        transitions=("init", "trans1", "trans2", "trans3", "trans4", "trans5"),
        notes="mem[31]=1 enables code B (wrong e2 at z2), a deterministic output defect",
    ),
    Scenario(
        name="race_heisenbug",
        description="two workers increment a shared counter with unprotected load/add/store",
        specs=("race_white", "race_black"),
        inputs={102: RACE_ITERS},
        manifests=_race_fails,
        expected="Mandelbug+heisen",
        seed=0,
    ),
    Scenario(
        name="deadlock_mandelbug",
        description="two components take mutexes 0 and 1 in opposite order",
        specs=("deadlock_white",),
        inputs={200: 8},
        manifests=_deadlock_fails,
        expected="Mandelbug",
        seed=3,
    ),
    Scenario(
        name="aging_patriot",
        description="0.1 s tick accumulated in 24-bit-fraction fixed point drifts from the reference clock",
        specs=("aging_black",),
        inputs={300: 0.1, 301: 1.0, 302: 8000, 303: 500},
        manifests=_aging_fails,
        expected="Mandelbug+aging",
        sweep=(302, (1000, 3000, 8000, 12000)),
    ),
    Scenario(
        name="div_bohrbug",
        description="gain / (ref + offset) yields Infinity or NaN when ref + offset == 0",
        specs=("div_black",),
        inputs={400: 2.0, 401: 1.0, 402: -1.0, 403: 0},
        passing_inputs={400: 2.0, 401: 1.0, 402: 1.0, 403: 0},
        manifests=_div_fails,
        expected="Bohrbug",
        model="div_bohrbug",
    ),
    Scenario(
        name="i2c_overflow",
        description="a 16-entry message is copied into an 8-cell buffer without a bounds check "
                    "and clobbers the device address stored next to it",
        specs=("i2c_white", "i2c_black"),
        inputs={500: 16, 548: I2C_DEVICE, **_I2C_MSG},
        passing_inputs={500: 8, 548: I2C_DEVICE, **_I2C_MSG},
        manifests=_i2c_fails,
        expected="Bohrbug",
        model="i2c_overflow",
        notes="deterministic given the corner-case length, hence Bohrbug under manifestation-based "
              "classification although it is often described as a Heisenbug",
    ),
)


def scenarios() -> Tuple[Scenario, ...]:
    return SCENARIOS


def get(name: str) -> Scenario:
    for s in SCENARIOS:
        if s.name == name:
            return s
    raise KeyError(f"unknown scenario {name!r}; known: {', '.join(s.name for s in SCENARIOS)}")
