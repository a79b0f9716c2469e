import random

import pytest

from progs import random_program
from tracelab.codec import EncoderConfig, Gap, decode, encode
from tracelab.events import Event, WatchConfig, dump_events, extract
from tracelab.program import load_image
from tracelab.sim import SimConfig, run

SRC = """\
func main:
  set r1, 100
  set r2, 7
  set r3, 1
  call helper
  store r2, [r1]
  brc r3, done
done:
  lock 2
  unlock 2
  out 0, r2
  emit 4, r2
  set r1, 101
  load f0, [r1]
  store f0, [r1]
  halt
func helper:
  ret
thread t entry main
"""


def _events(watch, **cfg):
    img = load_image(SRC)
    return extract(run(img, SimConfig(**cfg)).trace, img, watch)


def test_kinds_and_order():
    evs = _events(WatchConfig(frozenset({100, 101}), None, True, True), inputs={101: 2.5})
    assert [(e.kind, e.args) for e in evs] == [
        ("FuncEnter", ("helper",)),
        ("FuncExit", ("helper",)),
        ("VarWrite", (100, 7)),
        ("Branch", (5, True)),
        ("LockReq", (2,)),
        ("LockAcq", (2,)),
        ("LockRel", (2,)),
        ("Output", (0, 7)),
        ("Itm", (4, 7)),
        ("VarWrite", (101, 2.5)),
    ]
    # request and acquire share a cycle and are ordered by seq
    req, acq = evs[4], evs[5]
    assert req.cycle == acq.cycle and (req.seq, acq.seq) == (0, 1)
    assert req.ts < acq.ts


def test_filters():
    evs = _events(WatchConfig(frozenset(), frozenset({"main"}), False, False))
    assert [e.kind for e in evs] == ["Output", "Itm"]


def test_value_and_field():
    e = Event(5, 0, 1, "VarWrite", (100, 3))
    assert e.value == 3 and e.field("addr") == 100 and e.field("thread") == 1
    assert Event(5, 0, 1, "LockAcq", (0,)).value == ()
    with pytest.raises(KeyError):
        e.field("port")
    assert dump_events([e]) == "5.0 1 VarWrite 100 3\n"


def test_watch_validation():
    with pytest.raises(ValueError):
        WatchConfig(frozenset({5000})).validate(4096)


@pytest.mark.parametrize("seed", range(15))
def test_decoded_flow_gives_same_events(seed):
    rng = random.Random(seed)
    img, inputs = random_program(rng)
    res = run(img, SimConfig(seed=seed, qmin=2, qmax=9, inputs=inputs))
    watch = WatchConfig(frozenset({100, 101, 102}), None, True, True)
    flow = decode(encode(res.trace, img, EncoderConfig(data_trace=watch.addrs)), img)
    assert dump_events(extract(flow, img, watch)) == dump_events(extract(res.trace, img, watch))


def test_gap_resets_and_unbalanced_exit():
    img = load_image(SRC)
    trace = run(img, SimConfig()).trace
    enter = next(i for i, r in enumerate(trace) if r.addr == img.entry_of("helper"))
    # lose everything up to the helper body, so its return has no matching enter
    flow = [Gap(trace[enter].cycle, 0, trace[enter].addr)] + list(trace[enter:])
    evs = extract(flow, img)
    assert evs[0].kind == "Gap"
    assert evs[1].kind == "UnbalancedExit" and evs[1].args == ("helper",)
