"""Manifestation-based bug classification and detection-latency measurement."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

from ..pipeline import PipelineConfig, run_pipeline
from ..program import BinaryImage
from ..sim import RunResult, SimConfig, run, run_with_probe
from .scenarios import Scenario

HEISEN_GAP = 0.5
AGING_RATE = 0.9


class OracleMissing(ValueError):
    pass


class NoViolation(Exception):
    pass


class BugClass(NamedTuple):
    base: str  # Bohrbug | Mandelbug
    heisen: bool = False
    aging: bool = False

    def __str__(self):
        flags = [f for f, on in (("heisen", self.heisen), ("aging", self.aging)) if on]
        return "+".join([self.base] + flags)

    @classmethod
    def parse(cls, text: str) -> "BugClass":
        base, *flags = text.split("+")
        return cls(base, "heisen" in flags, "aging" in flags)


class NotManifested(NamedTuple):
    runs: int

    def __str__(self):
        return "NotManifested"


@dataclass
class Classification:
    result: object  # BugClass | NotManifested
    manifesting_seeds: List[int]
    probed_manifesting_seeds: List[int]
    sweep_rates: List[Tuple[int, float]]

    def as_dict(self) -> dict:
        return {
            "class": str(self.result),
            "manifesting_seeds": self.manifesting_seeds,
            "probed_manifesting_seeds": self.probed_manifesting_seeds,
            "sweep_rates": [[n, r] for n, r in self.sweep_rates],
        }


def _manifesting(image, base: SimConfig, seeds, oracle, probe: bool, workers: int) -> List[int]:
    runner = run_with_probe if probe else run

    def one(seed):
        return oracle(runner(image, replace(base, seed=seed)))

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            hits = list(ex.map(one, seeds))
    else:
        hits = [one(s) for s in seeds]
    return [s for s, h in zip(seeds, hits) if h]


def classify_detail(image: BinaryImage, inputs: Dict[int, object], oracle: Optional[Callable[[RunResult], bool]],
                    R: int = 20, seeds: Optional[Sequence[int]] = None,
                    sweep: Optional[Tuple[int, Sequence[int]]] = None, sim: SimConfig = SimConfig(),
                    heisen_gap: float = HEISEN_GAP, aging_rate: float = AGING_RATE,
                    workers: int = 1) -> Classification:
    if oracle is None:
        raise OracleMissing("a manifestation predicate is required")
    if R < 2:
        raise ValueError("R must be at least 2")
    seeds = list(seeds) if seeds is not None else list(range(R))
    if len(seeds) != R:
        raise ValueError(f"need {R} seeds, got {len(seeds)}")
    base = replace(sim, inputs={**sim.inputs, **inputs})
    bare = _manifesting(image, base, seeds, oracle, False, workers)
    probed = _manifesting(image, base, seeds, oracle, True, workers)

    rates: List[Tuple[int, float]] = []
    aging = False
    if sweep is not None:
        cell, lengths = sweep
        if len(lengths) != 4 or list(lengths) != sorted(lengths):
            raise ValueError("length sweep needs 4 increasing run lengths")
        for n in lengths:
            cfg = replace(base, inputs={**base.inputs, cell: n})
            rates.append((n, len(_manifesting(image, cfg, seeds, oracle, False, workers)) / R))
        r = [x for _, x in rates]
        aging = any(all(v == 0 for v in r[:j]) and all(v >= aging_rate for v in r[j:]) for j in range(1, 4))

    k = len(bare)
    if k == 0 and not any(x for _, x in rates):
        result = NotManifested(R)
    else:
        heisen = abs(k - len(probed)) / R >= heisen_gap
        base_cls = "Bohrbug" if k == R and not aging else "Mandelbug"
        result = BugClass(base_cls, heisen, aging)
    return Classification(result, bare, probed, rates)


def classify(image, inputs, oracle, R: int = 20, seeds=None, sweep=None, **kw):
    """BugClass (or NotManifested) from R seed-varied runs at fixed input."""
    return classify_detail(image, inputs, oracle, R, seeds, sweep, **kw).result


def classify_scenario(sc: Scenario, R: int = 20, seeds=None, workers: int = 1) -> Classification:
    return classify_detail(sc.image, sc.inputs, sc.manifests, R, seeds, sc.sweep, workers=workers)


class Latency(NamedTuple):
    cycle: int
    transition: Optional[int]
    assertion: str


def transition_at(table: Sequence[Tuple[int, int, str]], names: Sequence[str], cycle: int) -> Optional[int]:
    """Index of the last transition function entered at or before ``cycle``."""
    idx = None
    for c, _, fn in table:
        if c > cycle:
            break
        if fn in names:
            idx = names.index(fn)
    return idx


def detection_latency(sc: Scenario, spec: str, seed: Optional[int] = None,
                      inputs: Optional[Dict[int, object]] = None) -> Latency:
    graph, bindings = sc.spec(spec)
    cfg = PipelineConfig(sim=SimConfig(seed=sc.seed if seed is None else seed,
                                       inputs=dict(sc.inputs if inputs is None else inputs)), serial=True)
    res = run_pipeline(sc.image, graph, bindings, cfg)
    if not res.violations:
        raise NoViolation(f"{sc.name}/{spec}: no violation")
    v = res.violations[0]
    return Latency(v.ts[0], transition_at(res.transitions, sc.transitions, v.ts[0]) if sc.transitions else None,
                   v.assertion)


def golden_record(sc: Scenario, R: int = 20) -> dict:
    """Everything the golden file pins for a scenario, recomputed from scratch."""
    rec = {"scenario": sc.name, "expected_class": sc.expected, "R": R, "seeds": list(range(R))}
    rec.update(classify_scenario(sc, R).as_dict())
    lat = {}
    for spec in sc.specs:
        try:
            l = detection_latency(sc, spec)
            lat[spec] = {"cycle": l.cycle, "transition": l.transition, "assertion": l.assertion}
        except NoViolation:
            lat[spec] = None
    rec["detection"] = {"seed": sc.seed, "latency": lat}
    return rec
