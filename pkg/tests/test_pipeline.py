import pytest

from tracelab.capture import export_clip
from tracelab.codec import EncoderConfig
from tracelab.events import WatchConfig, extract
from tracelab.lab import scenarios
from tracelab.pipeline import ConfigError, PipelineConfig, PipelineError, run_pipeline, watch_for
from tracelab.program import load_image
from tracelab.rvl import evaluate_online, bind, parse_bindings, parse_spec
from tracelab.sim import SimConfig, run

CASES = [(sc, spec) for sc in scenarios() for spec in sc.specs]


def _run(sc, spec, serial, **kw):
    g, b = sc.spec(spec)
    cfg = PipelineConfig(sim=SimConfig(seed=sc.seed, inputs=sc.inputs), serial=serial, **kw)
    return run_pipeline(sc.image, g, b, cfg, {"scenario": sc.name})


@pytest.mark.parametrize("sc, spec", CASES, ids=[s for _, s in CASES])
def test_serial_equals_threaded(sc, spec):
    a, b = _run(sc, spec, True), _run(sc, spec, False)
    assert a.violations == b.violations
    assert a.outputs == b.outputs
    assert (a.instructions, a.nbytes, a.events) == (b.instructions, b.nbytes, b.events)
    assert (a.clip is None) == (b.clip is None)
    if a.clip is not None:
        assert export_clip(a.clip) == export_clip(b.clip)
    assert a.report_lines() == b.report_lines()


@pytest.mark.parametrize("sc, spec", CASES, ids=[s for _, s in CASES])
def test_matches_offline_ground_truth(sc, spec):
    """The traced pipeline sees what offline monitoring of the bare run sees."""
    g, b = sc.spec(spec)
    res = _run(sc, spec, True)
    truth = run(sc.image, SimConfig(seed=sc.seed, inputs=sc.inputs))
    events = extract(truth.trace, sc.image, watch_for(b))
    outs, viols = evaluate_online(g, bind(events, b))
    assert [(v.assertion, v.ts) for v in viols] == [(v.assertion, v.ts) for v in res.violations]
    assert res.instructions == len(truth.trace)
    assert res.status == truth.status


def test_exit_code_and_report():
    sc = next(s for s in scenarios() if s.name == "div_bohrbug")
    bad = _run(sc, "div_black", True)
    assert bad.exit_code == 1 and bad.clip is not None
    lines = bad.report_lines()
    assert lines[0]["record"] == "violation" and lines[-1]["record"] == "summary"
    assert lines[-1]["compression"]["instruction_count"] == bad.instructions
    g, b = sc.spec("div_black")
    good = run_pipeline(sc.image, g, b, PipelineConfig(sim=SimConfig(inputs=sc.passing_inputs)))
    assert good.exit_code == 0 and good.clip is None


SRC = """\
func main:
  set r1, 4
  set r2, 100
  store r1, [r2]
  out 0, r1
  halt
thread t entry main
"""


def test_config_errors():
    img = load_image(SRC)
    g = parse_spec("in x: events<int>\nout x\n")
    with pytest.raises(ConfigError):
        run_pipeline(img, g, parse_bindings("x := VarWrite()"))
    with pytest.raises(ConfigError):
        run_pipeline(img, g, parse_bindings("y := VarWrite(addr=100)"))
    with pytest.raises(ConfigError):
        run_pipeline(img, g, parse_bindings("x := VarWrite(addr=100)"),
                     PipelineConfig(encoder=EncoderConfig(data_trace="off")))
    with pytest.raises(ConfigError):
        run_pipeline(img, g, parse_bindings("x := VarWrite(addr=100)"),
                     PipelineConfig(watch=WatchConfig(frozenset({101}))))
    with pytest.raises(ConfigError):
        run_pipeline(img, g, parse_bindings("x := VarWrite(addr=100)"),
                     PipelineConfig(watch=WatchConfig(frozenset({100, 9000}))))
    gb = parse_spec("in x: events<bool>\nout x\n")
    with pytest.raises(ConfigError):
        run_pipeline(img, gb, parse_bindings("x := Branch()"), PipelineConfig(watch=WatchConfig()))


@pytest.mark.parametrize("serial", [True, False])
def test_stage_error_is_wrapped(serial):
    img = load_image(SRC)
    # the output carries an int, the spec expects a float: the monitor stage fails
    g = parse_spec("in x: events<float>\nout x\n")
    with pytest.raises(PipelineError) as ei:
        run_pipeline(img, g, parse_bindings("x := Output(port=0)"), PipelineConfig(serial=serial))
    assert ei.value.stage == "monitor"


@pytest.mark.parametrize("serial", [True, False])
def test_sim_error_is_wrapped(serial, monkeypatch):
    from tracelab import pipeline

    class Boom(pipeline.Simulator):
        def records(self):
            yield from list(super().records())[:3]
            raise RuntimeError("boom")

    monkeypatch.setattr(pipeline, "Simulator", Boom)
    g = parse_spec("in x: events<int>\nout x\n")
    with pytest.raises(PipelineError) as ei:
        run_pipeline(load_image(SRC), g, parse_bindings("x := Output(port=0)"), PipelineConfig(serial=serial))
    assert ei.value.stage in ("sim", "sim/encode")
    assert isinstance(ei.value.err, RuntimeError)


def test_empty_program_run():
    img = load_image("func m:\n  halt\nthread t entry m\n")
    res = run_pipeline(img, parse_spec("def one = const(1, unit)\nout one\n"), {}, PipelineConfig(serial=True))
    assert res.instructions == 1
    assert res.outputs["one"] == [((0, 0), 1)]
