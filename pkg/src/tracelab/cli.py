"""Command-line interface: every stage as a subcommand, plus the full pipeline.

Exit codes: 0 ok / no violation, 1 violation captured, 2 usage error,
3 input or configuration error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from typing import List, Optional

from . import __version__
from .capture import CorruptClip, HashMismatch, export_clip, import_clip, replay
from .codec import PACKET_NAMES, DecodeError, EncoderConfig, TraceEncoder, TraceImageMismatch, decode, iter_packets, measure
from .ctest import (AdapterError, CoveringArray, ModelError, StrengthOutOfRange, expect_outputs, finite_outputs,
                    generate, parse_model, read_suite_csv, run_suite, verify_coverage)
from .events import WatchConfig, dump_events, extract
from .pipeline import ConfigError, PipelineConfig, PipelineError, run_pipeline
from .program import AsmError, derive_call_graph, load_image
from .rvl import RvlError, evaluate_online, parse_bindings, parse_spec
from .rvl.bindings import BindingError, bind, check_bindings
from .rvl.engine import InputTypeMismatch
from .rvl.semantics import format_ts
from .sim import SimConfig, Simulator
from .varint import MalformedVarint

SEED_ENV = "TRACELAB_SEED"


class InputError(Exception):
    """Bad input file or configuration; exit status 3."""


INPUT_ERRORS = (OSError, AsmError, RvlError, BindingError, ModelError, ConfigError, DecodeError, MalformedVarint,
                CorruptClip, HashMismatch, TraceImageMismatch, InputTypeMismatch, AdapterError, StrengthOutOfRange,
                InputError, ValueError)


def _emit(obj, out=None):
    print(json.dumps(obj, default=_jsonable), file=out or sys.stdout)


def _jsonable(v):
    if isinstance(v, (bytes, bytearray)):
        return v.hex()
    if isinstance(v, (set, frozenset)):
        return sorted(v)
    return str(v)


def _read(path: str) -> str:
    with open(path) as fh:
        return fh.read()


def _num(text: str):
    try:
        return int(text, 0)
    except ValueError:
        return float(text)


def _inputs(pairs: List[str]) -> dict:
    out = {}
    for p in pairs or []:
        cell, sep, val = p.partition("=")
        if not sep:
            raise InputError(f"--input expects CELL=VALUE, got {p!r}")
        try:
            out[int(cell, 0)] = _num(val)
        except ValueError:
            raise InputError(f"bad --input {p!r}") from None
    return out


def _addrs(text: Optional[str]):
    if not text:
        return frozenset()
    try:
        return frozenset(int(a, 0) for a in text.split(","))
    except ValueError:
        raise InputError(f"bad address list {text!r}") from None


def _seed(args) -> int:
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            return int(env, 0)
        except ValueError:
            raise InputError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return args.seed


def _sim_config(args, inputs=None) -> SimConfig:
    ins = dict(inputs or {})
    ins.update(_inputs(args.input))
    return SimConfig(seed=_seed(args), qmin=args.qmin, qmax=args.qmax, memory_size=args.memory,
                     max_cycles=args.max_cycles, probe_mode="printf" if args.probe else "off",
                     probe_cost=args.probe_cost, inputs=ins)


def _enc_config(args) -> EncoderConfig:
    dt = args.data_trace
    data = dt if dt in ("off", "full") else _addrs(dt)
    return EncoderConfig(sync_period=args.sync_period, data_trace=data)


def _image(path):
    return load_image(_read(path))


# -- subcommands --------------------------------------------------------------

def cmd_check(args):
    img = _image(args.image)
    _emit({"record": "image", "instructions": len(img.instructions), "functions": sorted(img.functions),
           "threads": [list(t) for t in img.threads], "sha256": img.digest().hex()})
    if args.callgraph:
        g = derive_call_graph(img)
        for e in g.edges:
            _emit({"record": "call", "caller": e.caller, "callee": e.callee, "label": e.label})
    return 0


def cmd_sim(args):
    img = _image(args.image)
    sim = Simulator(img, _sim_config(args))
    n = 0
    out = open(args.records, "w") if args.records else None
    try:
        for rec in sim.records():
            n += 1
            if out:
                out.write(rec.dump() + "\n")
    finally:
        if out:
            out.close()
    for cycle, port, val in sim.outputs:
        _emit({"record": "output", "cycle": cycle, "port": port, "value": val})
    _emit({"record": "summary", "status": sim.status, "instructions": n, "cycles": sim.cycle})
    return 0


def cmd_trace_encode(args):
    img = _image(args.image)
    sim = Simulator(img, _sim_config(args))
    with open(args.output, "wb") as fh:
        enc = TraceEncoder(img, _enc_config(args), sink=lambda p: fh.write(p[1]))
        for rec in sim.records():
            enc.feed(rec)
        enc.finish()
    _emit({"record": "summary", "status": sim.status, "compression": measure(enc.count, enc.nbytes).as_dict()})
    return 0


def _load_trace(path) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def cmd_trace_decode(args):
    img = _image(args.image)
    for item in decode(_load_trace(args.trace), img):
        print(item.dump() if hasattr(item, "dump") else f"{item.cycle} {item.thread} {item.addr} gap")
    return 0


def cmd_trace_stats(args):
    img = _image(args.image)
    data = _load_trace(args.trace)
    counts = {}
    for pkt in iter_packets(data):
        name = PACKET_NAMES[pkt.kind]
        counts[name] = counts.get(name, 0) + 1
    n = sum(1 for _ in decode(data, img))
    _emit({"record": "summary", "bytes": len(data), "packets": counts, "compression": measure(n, data).as_dict()})
    return 0


def _watch(args) -> WatchConfig:
    funcs = frozenset(args.functions.split(",")) if args.functions else None
    return WatchConfig(_addrs(args.watch), funcs, args.branches, not args.no_locks)


def cmd_events(args):
    img = _image(args.image)
    sys.stdout.write(dump_events(extract(decode(_load_trace(args.trace), img), img, _watch(args))))
    return 0


def cmd_monitor(args):
    graph = parse_spec(_read(args.spec))
    bindings = parse_bindings(_read(args.bindings))
    check_bindings(graph, bindings)
    img = _image(args.image)
    watch = _watch(args)
    if not args.watch:
        watch = replace(watch, addrs=frozenset(dict(s.filters)["addr"] for s in bindings.values()
                                               if s.kind == "VarWrite" and "addr" in dict(s.filters)))
    events = extract(decode(_load_trace(args.trace), img), img, watch)
    outputs, violations = evaluate_online(graph, bind(events, bindings))
    for name, tl in outputs.items():
        for ts, v in tl:
            _emit({"record": "output", "stream": name, "ts": format_ts(ts), "value": v})
    for v in violations:
        _emit({"record": "violation", "assertion": v.assertion, "ts": format_ts(v.ts)})
    _emit({"record": "summary", "events": len(events), "violations": len(violations)})
    return 1 if violations else 0


def _run_pipeline_cmd(img, graph, bindings, sim_cfg, args, meta):
    enc = _enc_config(args) if args.data_trace != "auto" else None
    cfg = PipelineConfig(sim=sim_cfg, encoder=enc, capacity=args.capacity, post_trigger=args.post,
                         serial=args.serial)
    res = run_pipeline(img, graph, bindings, cfg, meta)
    report = open(args.report, "w") if args.report else None
    try:
        for line in res.report_lines():
            _emit(line)
            if report:
                _emit(line, report)
    finally:
        if report:
            report.close()
    if res.clip is not None and args.clip:
        with open(args.clip, "wb") as fh:
            fh.write(export_clip(res.clip))
    return res


def _meta(args, sim_cfg, spec_text, bind_text):
    return {"seed": sim_cfg.seed, "qmin": sim_cfg.qmin, "qmax": sim_cfg.qmax,
            "inputs": {str(k): v for k, v in sorted(sim_cfg.inputs.items())},
            "spec": spec_text, "bindings": bind_text}


def cmd_pipeline(args):
    img = _image(args.image)
    spec_text, bind_text = _read(args.spec), _read(args.bindings)
    graph, bindings = parse_spec(spec_text), parse_bindings(bind_text)
    sim_cfg = _sim_config(args)
    res = _run_pipeline_cmd(img, graph, bindings, sim_cfg, args, _meta(args, sim_cfg, spec_text, bind_text))
    return res.exit_code


def _model_and_suite(args):
    model = parse_model(_read(args.model))
    suite = read_suite_csv(_read(args.suite), model)
    return model, suite


def cmd_ctest_gen(args):
    model = parse_model(_read(args.model))
    ca = generate(model, args.t, _seed(args))
    text = ca.to_csv()
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    print(json.dumps({"record": "summary", "t": args.t, "tests": len(ca)}), file=sys.stderr)
    return 0


def cmd_ctest_verify(args):
    model, suite = _model_and_suite(args)
    missing = verify_coverage(suite, model, args.t)
    for m in missing:
        _emit({"record": "missing", "tuple": [list(x) for x in m]})
    _emit({"record": "summary", "tests": len(suite), "missing": len(missing)})
    return 1 if missing else 0


def _oracle(text: str):
    if text == "finite":
        return finite_outputs
    if text.startswith("port:"):
        expected = {}
        for part in text[5:].split(","):
            port, _, val = part.partition("=")
            expected[int(port)] = _num(val)
        return expect_outputs(expected)
    raise InputError(f"unknown oracle {text!r} (finite | port:P=V[,P=V])")


def cmd_ctest_run(args):
    model, suite = _model_and_suite(args)
    img = _image(args.image)
    base = _sim_config(args)
    report = run_suite(CoveringArray(args.t, model, suite), img, _oracle(args.oracle), base, workers=args.workers)
    for f in report.failures:
        _emit({"record": "failure", "index": f.index, "test": list(f.test), "verdict": f.verdict,
               "outputs": [list(o) for o in f.outputs]})
    _emit({"record": "summary", **report.summary()})
    return 1 if report.failed else 0


def cmd_lab_list(args):
    from . import lab
    for sc in lab.scenarios():
        _emit({"record": "scenario", "name": sc.name, "expected": sc.expected, "specs": list(sc.specs),
               "description": sc.description})
    return 0


def cmd_lab_run(args):
    from . import lab
    sc = lab.get(args.name)
    spec = args.spec or sc.specs[0]
    graph, bindings = sc.spec(spec)
    spec_text, bind_text = sc.spec_text(spec)
    inputs = sc.passing_inputs if args.passing else sc.inputs
    if args.passing and inputs is None:
        raise InputError(f"{sc.name} has no passing variant")
    if args.seed is None:
        args.seed = sc.seed
    sim_cfg = _sim_config(args, inputs)
    res = _run_pipeline_cmd(sc.image, graph, bindings, sim_cfg, args, _meta(args, sim_cfg, spec_text, bind_text))
    if res.violations and sc.transitions:
        v = res.violations[0]
        idx = lab.taxonomy.transition_at(res.transitions, sc.transitions, v.ts[0])
        _emit({"record": "detection", "assertion": v.assertion, "cycle": v.ts[0], "transition": idx})
    return res.exit_code


def cmd_lab_classify(args):
    from . import lab
    names = [s.name for s in lab.scenarios()] if args.name == "all" else [args.name]
    seeds = list(range(args.first_seed, args.first_seed + args.R))
    rc = 0
    for name in names:
        sc = lab.get(name)
        c = lab.classify_scenario(sc, args.R, seeds, workers=args.workers)
        ok = str(c.result) == sc.expected
        rc = rc or (0 if ok else 1)
        _emit({"record": "classification", "scenario": name, "expected": sc.expected, "match": ok, **c.as_dict()})
    return rc


def cmd_clip_show(args):
    clip = import_clip(_load_trace(args.clip))
    _emit({"record": "clip", **clip.summary()})
    if args.events:
        for ev in clip.pre_events:
            print("pre  " + ev.dump())
        print(f"TRIGGER {format_ts(clip.trigger.ts)} {clip.trigger.assertion} {clip.trigger.trigger}")
        for ev in clip.post_events:
            print("post " + ev.dump())
    return 0


def cmd_clip_replay(args):
    clip = import_clip(_load_trace(args.clip))
    spec_text = _read(args.spec) if args.spec else clip.config.get("spec")
    bind_text = _read(args.bindings) if args.bindings else clip.config.get("bindings")
    if spec_text is None or bind_text is None:
        raise InputError("clip carries no spec; pass --spec and --bindings")
    graph, bindings = parse_spec(spec_text), parse_bindings(bind_text)
    img = _image(args.image) if args.image else None
    vs = replay(clip, graph, bindings, img)
    key = (clip.trigger.assertion, clip.trigger.ts)
    hit = any((v.assertion, v.ts) == key for v in vs)
    for v in vs:
        _emit({"record": "violation", "assertion": v.assertion, "ts": format_ts(v.ts)})
    _emit({"record": "summary", "trigger": clip.trigger.assertion, "ts": format_ts(clip.trigger.ts),
           "reproduced": hit})
    if clip.decode_raw is not None and img is not None:
        _emit({"record": "raw", "instructions": len(clip.decode_raw(img))})
    return 1 if hit else 0


# -- parser -------------------------------------------------------------------

def _add_sim(p, seed_default: Optional[int] = 0):
    g = p.add_argument_group("simulation")
    g.add_argument("--seed", type=int, default=seed_default, help=f"scheduler seed ({SEED_ENV} overrides)")
    g.add_argument("--qmin", type=int, default=20)
    g.add_argument("--qmax", type=int, default=60)
    g.add_argument("--memory", type=int, default=4096)
    g.add_argument("--max-cycles", type=int, default=10 ** 8)
    g.add_argument("--probe", action="store_true", help="printf-style intrusive instrumentation")
    g.add_argument("--probe-cost", type=int, default=10000)
    g.add_argument("--input", action="append", metavar="CELL=VALUE", help="initial memory cell (repeatable)")


def _add_enc(p, default="off"):
    p.add_argument("--sync-period", type=int, default=4096)
    p.add_argument("--data-trace", default=default, help="off | full | comma-separated addresses")


def _add_watch(p):
    p.add_argument("--watch", help="comma-separated watched addresses")
    p.add_argument("--functions", help="comma-separated functions for enter/exit events")
    p.add_argument("--branches", action="store_true")
    p.add_argument("--no-locks", action="store_true")


def _add_capture(p):
    p.add_argument("--clip", help="write the frozen clip here")
    p.add_argument("--report", help="also write the report lines here")
    p.add_argument("--capacity", type=int, default=65536)
    p.add_argument("--post", type=int, default=256)
    p.add_argument("--serial", action="store_true", help="run stages sequentially")
    _add_enc(p, default="auto")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tracelab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("check", help="parse and validate a program image")
    p.add_argument("image")
    p.add_argument("--callgraph", action="store_true")
    p.set_defaults(fn=cmd_check)

    p = sub.add_parser("sim", help="run a program")
    p.add_argument("image")
    p.add_argument("--records", help="write the execution trace here")
    _add_sim(p)
    p.set_defaults(fn=cmd_sim)

    tr = sub.add_parser("trace", help="trace codec").add_subparsers(dest="sub", required=True)
    p = tr.add_parser("encode", help="simulate and write a .etr trace")
    p.add_argument("image")
    p.add_argument("-o", "--output", required=True)
    _add_sim(p)
    _add_enc(p)
    p.set_defaults(fn=cmd_trace_encode)
    p = tr.add_parser("decode", help="reconstruct the instruction flow")
    p.add_argument("image")
    p.add_argument("trace")
    p.set_defaults(fn=cmd_trace_decode)
    p = tr.add_parser("stats", help="packet counts and compression ratio")
    p.add_argument("image")
    p.add_argument("trace")
    p.set_defaults(fn=cmd_trace_stats)

    p = sub.add_parser("events", help="extract events from a trace")
    p.add_argument("image")
    p.add_argument("trace")
    _add_watch(p)
    p.set_defaults(fn=cmd_events)

    p = sub.add_parser("monitor", help="evaluate an RVL-1 spec over a trace")
    p.add_argument("spec")
    p.add_argument("bindings")
    p.add_argument("image")
    p.add_argument("trace")
    _add_watch(p)
    p.set_defaults(fn=cmd_monitor)

    p = sub.add_parser("pipeline", help="simulate, trace, monitor and capture")
    p.add_argument("image")
    p.add_argument("spec")
    p.add_argument("bindings")
    _add_sim(p)
    _add_capture(p)
    p.set_defaults(fn=cmd_pipeline)

    ct = sub.add_parser("ctest", help="combinatorial testing").add_subparsers(dest="sub", required=True)
    p = ct.add_parser("gen", help="generate a t-way covering array")
    p.add_argument("model")
    p.add_argument("-t", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output")
    p.set_defaults(fn=cmd_ctest_gen)
    p = ct.add_parser("verify", help="list uncovered t-way tuples")
    p.add_argument("model")
    p.add_argument("suite")
    p.add_argument("-t", type=int, default=2)
    p.set_defaults(fn=cmd_ctest_verify)
    p = ct.add_parser("run", help="run a suite against a program")
    p.add_argument("model")
    p.add_argument("suite")
    p.add_argument("image")
    p.add_argument("-t", type=int, default=2)
    p.add_argument("--oracle", default="finite", help="finite | port:P=V[,P=V]")
    p.add_argument("--workers", type=int, default=1)
    _add_sim(p)
    p.set_defaults(fn=cmd_ctest_run)

    lb = sub.add_parser("lab", help="scenario corpus").add_subparsers(dest="sub", required=True)
    p = lb.add_parser("list", help="list scenarios")
    p.set_defaults(fn=cmd_lab_list)
    p = lb.add_parser("run", help="run a scenario through the pipeline")
    p.add_argument("name")
    p.add_argument("--spec")
    p.add_argument("--passing", action="store_true", help="use the variant with mistakes disabled")
    _add_sim(p, seed_default=None)
    _add_capture(p)
    p.set_defaults(fn=cmd_lab_run)
    p = lb.add_parser("classify", help="classify a scenario (or all)")
    p.add_argument("name")
    p.add_argument("-R", type=int, default=20)
    p.add_argument("--first-seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(fn=cmd_lab_classify)

    cl = sub.add_parser("clip", help="inspect and replay .clip files").add_subparsers(dest="sub", required=True)
    p = cl.add_parser("show", help="print clip metadata")
    p.add_argument("clip")
    p.add_argument("--events", action="store_true")
    p.set_defaults(fn=cmd_clip_show)
    p = cl.add_parser("replay", help="replay the event section through the spec")
    p.add_argument("clip")
    p.add_argument("--spec")
    p.add_argument("--bindings")
    p.add_argument("--image")
    p.set_defaults(fn=cmd_clip_replay)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except PipelineError as e:
        print(f"tracelab: {e}", file=sys.stderr)
        return 3
    except INPUT_ERRORS as e:
        print(f"tracelab: {type(e).__name__}: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
