import random

import pytest

from progs import random_program
from tracelab.codec import (ATOMS, CTX, OVERFLOW, SYNC, AtomUnderflow, Desync, EncoderConfig, Gap, MalformedPacket,
                            TraceDecoder, TraceEncoder, TraceImageMismatch, TruncatedPacket, UnknownHeader, decode,
                            encode, iter_packets, measure)
from tracelab.program import load_image
from tracelab.sim import ExecRecord, SimConfig, run, run_with_probe

TINY = """\
func m:
  set r1, 5
  brc r1, l
l:
  out 3, r1
  halt
thread t entry m
"""


def dumps(flow):
    """Comparable form of a flow; NaN payloads compare equal through their text."""
    return [f.dump() if hasattr(f, "dump") else f for f in flow]


def _random_run(seed):
    rng = random.Random(seed)
    img, inputs = random_program(rng)
    q = rng.randint(1, 8)
    cfg = SimConfig(seed=rng.randrange(1 << 32), qmin=q, qmax=q + rng.randint(0, 10), inputs=inputs)
    return img, run(img, cfg), rng


def test_tiny_bytes_exact():
    img = load_image(TINY)
    data = encode(run(img, SimConfig()).trace, img)
    # SYNC(0,0,0) | ATOMS 1 [taken] | OUTPUT port 3 int zigzag(5) ; halt needs no closing marker
    assert data == bytes([SYNC, 0, 0, 0, ATOMS, 1, 1, 7, 6, 10])


def test_tiny_closing_marker_when_cut():
    img = load_image(TINY)
    trace = run(img, SimConfig()).trace[:2]
    data = encode(trace, img)
    assert data[-3:] == bytes([CTX, 0, 2])
    assert decode(data, img) == list(trace)


@pytest.mark.parametrize("seed", range(40))
def test_random_round_trip(seed):
    img, res, rng = _random_run(seed)
    cfg = EncoderConfig(data_trace="full", sync_period=rng.choice([1, 5, 64, 4096]))
    assert dumps(decode(encode(res.trace, img, cfg), img)) == dumps(res.trace)


@pytest.mark.parametrize("seed", range(10))
def test_chunked_feed_matches(seed):
    img, res, rng = _random_run(seed)
    data = encode(res.trace, img, EncoderConfig(data_trace="full"))
    dec = TraceDecoder(img)
    out = []
    pos = 0
    while pos < len(data):
        step = rng.randint(1, 7)
        out += dec.feed(data[pos:pos + step])
        pos += step
    out += dec.finish()
    assert dumps(out) == dumps(decode(data, img)) == dumps(res.trace)


def test_untraced_stores_decode_as_plain():
    img, res, _ = _random_run(3)
    flow = decode(encode(res.trace, img, EncoderConfig(data_trace="off")), img)
    want = [r if r.kind != "store" else ExecRecord(r.cycle, r.thread, r.addr) for r in res.trace]
    assert dumps(flow) == dumps(want)


def test_partial_data_trace():
    img, res, _ = _random_run(5)
    watched = frozenset({100, 103})
    flow = decode(encode(res.trace, img, EncoderConfig(data_trace=watched)), img)
    want = [r if r.kind != "store" or r.a in watched else ExecRecord(r.cycle, r.thread, r.addr)
            for r in res.trace]
    assert dumps(flow) == dumps(want)


def test_probe_stalls_resync():
    img, _, rng = _random_run(7)
    res = run_with_probe(img, SimConfig(seed=1, probe_cost=50, inputs={}))
    assert any(b.cycle != a.cycle + 1 for a, b in zip(res.trace, res.trace[1:]))
    assert dumps(decode(encode(res.trace, img, EncoderConfig(data_trace="full")), img)) == dumps(res.trace)


def _sync_positions(data):
    return [p.offset for p in iter_packets(data) if p.kind == SYNC]


@pytest.mark.parametrize("seed", range(8))
def test_decode_from_any_sync(seed):
    img, res, _ = _random_run(seed)
    data = encode(res.trace, img, EncoderConfig(data_trace="full", sync_period=16))
    for off in _sync_positions(data)[1:]:
        pkt = next(iter_packets(data[off:]))
        suffix = [r for r in res.trace if r.cycle >= pkt.c]
        assert dumps(decode(data[off:], img)) == dumps(suffix)


def test_overflow_yields_gap_then_resumes():
    img, res, _ = _random_run(11)
    enc = TraceEncoder(img, EncoderConfig(data_trace="full", sync_period=8))
    enc.encode(res.trace)
    pkts = enc.packets
    syncs = [i for i, (_, d) in enumerate(pkts) if d[0] == SYNC]
    assert len(syncs) >= 3
    lost_from, resume = syncs[1] + 1, syncs[2]
    data = b"".join(d for _, d in pkts[:lost_from]) + bytes([OVERFLOW]) + b"".join(d for _, d in pkts[resume:])
    flow = decode(data, img)
    gaps = [i for i, f in enumerate(flow) if isinstance(f, Gap)]
    assert len(gaps) == 1
    gap = flow[gaps[0]]
    assert gap.cycle == pkts[resume][0]
    assert dumps(flow[gaps[0] + 1:]) == dumps(r for r in res.trace if r.cycle >= gap.cycle)
    truth = set(dumps(res.trace))
    assert all(f in truth for f in dumps(flow[:gaps[0]]))


def test_errors():
    img = load_image(TINY)
    data = encode(run(img, SimConfig()).trace, img)
    with pytest.raises(TruncatedPacket):
        decode(data[:-1], img)
    with pytest.raises(UnknownHeader):
        decode(data[:4] + b"\x09", img)
    with pytest.raises(Desync):
        decode(data[4:], img)
    with pytest.raises(MalformedPacket):
        decode(data[:4] + bytes([ATOMS, 0]), img)
    with pytest.raises(MalformedPacket):
        decode(data[:4] + bytes([ATOMS, 1, 3]), img)  # padding bit set
    with pytest.raises(AtomUnderflow):
        decode(data[:4] + data[7:], img)  # OUTPUT where the branch needs an atom


def test_record_outside_image():
    img = load_image(TINY)
    with pytest.raises(TraceImageMismatch):
        encode([ExecRecord(0, 0, 99)], img)


def test_measure():
    r = measure(1000, 125)
    assert (r.naive_bits, r.compressed_bits, r.ratio) == (32000, 1000, 32.0)
    assert measure([], b"").ratio == 1.0
    assert measure(10, 0).ratio == float("inf")


def test_config_validation():
    with pytest.raises(ValueError):
        EncoderConfig(sync_period=0)
    with pytest.raises(ValueError):
        EncoderConfig(data_trace="some")
