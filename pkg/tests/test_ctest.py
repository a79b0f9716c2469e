import math
from itertools import product

import pytest

from tracelab.ctest import (AdapterError, CoveringArray, ModelError, Parameter, ParameterModel, StrengthOutOfRange,
                            expect_outputs, finite_outputs, generate, no_trap, parse_model, read_suite_csv,
                            run_suite, verify_coverage)
from tracelab.lab import get
from tracelab.program import load_image
from tracelab.sim import RunResult, SimConfig


def test_small_pairwise_size():
    m = ParameterModel.of(a=[0, 1], b=[0, 1], c=[0, 1])
    ca = generate(m, 2, seed=0)
    assert len(ca) == 4  # the optimum for three binary parameters
    assert verify_coverage(ca.suite, m, 2) == []


@pytest.mark.parametrize("t", [1, 2, 3])
@pytest.mark.parametrize("sizes", [(2, 2, 2, 2), (3, 2, 4), (4, 4, 4, 4, 4), (2, 3, 4, 2, 3, 4)])
def test_coverage_and_bound(sizes, t):
    if t > len(sizes):
        return
    m = ParameterModel(tuple(Parameter(f"p{i}", tuple(range(n))) for i, n in enumerate(sizes)))
    ca = generate(m, t, seed=7)
    assert verify_coverage(ca.suite, m, t) == []
    assert len(ca) <= math.prod(sizes)


def test_t_equal_k_is_cartesian():
    m = ParameterModel.of(a=[1, 2], b=["x", "y", "z"])
    ca = generate(m, 2)
    assert sorted(ca.suite, key=str) == sorted(product([1, 2], ["x", "y", "z"]), key=str)


def test_deterministic_per_seed():
    m = ParameterModel.of(a=range(4), b=range(4), c=range(3), d=range(2))
    assert generate(m, 2, 3).suite == generate(m, 2, 3).suite


def test_verify_reports_missing():
    m = ParameterModel.of(a=[0, 1], b=[0, 1])
    missing = verify_coverage([(0, 0), (1, 1)], m, 2)
    assert missing == [(("a", 0), ("b", 1)), (("a", 1), ("b", 0))]


def test_strength_range():
    m = ParameterModel.of(a=[0, 1], b=[0, 1])
    with pytest.raises(StrengthOutOfRange):
        generate(m, 3)
    with pytest.raises(StrengthOutOfRange):
        generate(m, 0)


def test_model_validation():
    with pytest.raises(ModelError):
        ParameterModel(())
    with pytest.raises(ModelError):
        ParameterModel.of(a=[])


def test_model_file_and_csv():
    text = "# demo\ngain = 0.0, 2.0 -> mem[400]\nmode = off, on -> mem[403]   # enum\n"
    m = parse_model(text)
    assert m.names == ["gain", "mode"]
    assert m.params[0].domain == (0.0, 2.0)
    assert m.to_inputs((2.0, "on")) == {400: 2.0, 403: 1}
    ca = generate(m, 2)
    assert read_suite_csv(ca.to_csv(), m) == ca.suite
    with pytest.raises(ModelError) as ei:
        parse_model("a = 1 -> mem[1]\nb = 1, 1 -> mem[2]\n")
    assert ei.value.line == 2
    with pytest.raises(ModelError):
        parse_model("a = 1\n")
    with pytest.raises(ModelError):
        read_suite_csv("x,y\n1,2\n", m)


def test_adapter_errors():
    m = ParameterModel.of(a=[1, 2])
    with pytest.raises(AdapterError):
        m.to_inputs((1,))  # no mem target
    m = parse_model("a = 1, 2 -> mem[5]")
    with pytest.raises(AdapterError):
        m.to_inputs((3,))
    with pytest.raises(AdapterError):
        m.to_inputs((1, 2))
    big = parse_model("a = 1, 2 -> mem[9999]")
    with pytest.raises(AdapterError):
        run_suite(CoveringArray(1, big, [(1,)]), load_image("func m:\n halt\nthread t entry m\n"))


def test_oracles():
    ok = RunResult([], [(1, 0, 1.5)], "all-halted")
    assert finite_outputs(ok) is None
    assert finite_outputs(RunResult([], [(1, 0, math.inf)], "all-halted")) == "infinity"
    assert finite_outputs(RunResult([], [(1, 0, math.nan)], "all-halted")) == "nan"
    assert no_trap(RunResult([], [], "watchdog-truncated")) == "watchdog"
    assert expect_outputs({0: 1.5})(ok) is None
    assert expect_outputs({0: 2})(ok) is not None


def test_div_pairwise_finds_nonfinite():
    sc = get("div_bohrbug")
    from tracelab.lab.scenarios import read_text
    model = parse_model(read_text("models", "div_bohrbug.model"))
    ca = generate(model, 2, seed=0)
    report = run_suite(ca, sc.image, finite_outputs, SimConfig(), workers=2)
    assert report.failed >= 1
    assert {f.verdict for f in report.failures} <= {"infinity", "nan"}
    serial = run_suite(ca, sc.image, finite_outputs, SimConfig(), workers=1)
    assert serial.failing_tests == report.failing_tests
    assert report.summary()["total"] == len(ca)
