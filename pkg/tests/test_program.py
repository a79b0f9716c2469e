import pytest

from tracelab.program import (AddressOutOfRange, AsmError, DuplicateLabel, NoThreads, OutOfRangeOperand,
                              UndefinedLabel, UnknownMnemonic, derive_call_graph, load_image, static_successors)

SRC = """\
; two functions and a guarded call
func main:
  set r1, 3
  brc r1, skip      ; addr 1
  call helper
skip:
  call helper
  halt
func helper:
  set r2, 1
  ret
thread t0 entry main
"""


def test_load_basic():
    img = load_image(SRC)
    assert len(img) == 7
    assert img.functions == {"main": (0, 5), "helper": (5, 7)}
    assert img.threads == (("t0", "main"),)
    assert img.labels["skip"] == 3
    assert img.instructions[1].kind == "brc"
    assert img.instructions[1].operands[1] == 3
    assert img.function_at(6) == "helper"
    assert img.entry_of("helper") == 5


def test_digest_is_sha256_of_source():
    import hashlib
    assert load_image(SRC).digest() == hashlib.sha256(SRC.encode()).digest()


def test_static_successors():
    img = load_image(SRC)
    assert static_successors(img, 0) == {1}
    assert static_successors(img, 1) == {2, 3}
    assert static_successors(img, 2) == {5}
    with pytest.raises(AddressOutOfRange):
        static_successors(img, 99)


def test_call_graph_labels():
    g = derive_call_graph(load_image(SRC))
    labels = sorted(e.label for e in g.out_edges("main"))
    # the call at addr 2 runs only when the branch at addr 1 falls through
    assert labels == ["D", "X@1"]
    assert g.nodes == ("helper", "main")


@pytest.mark.parametrize("src, err", [
    ("func m:\n  frob r1\nthread t entry m\n", UnknownMnemonic),
    ("func m:\n  br nowhere\nthread t entry m\n", UndefinedLabel),
    ("func m:\n  halt\nfunc m:\n  halt\nthread t entry m\n", DuplicateLabel),
    ("func m:\n  halt\n", NoThreads),
    ("func m:\n  out 300, r1\n  halt\nthread t entry m\n", OutOfRangeOperand),
    ("func m:\n  lock 16\n  halt\nthread t entry m\n", OutOfRangeOperand),
    ("func m:\n  set r16, 1\n  halt\nthread t entry m\n", AsmError),
    ("func m:\n  add r1, r2\n  halt\nthread t entry m\n", AsmError),
    ("func m:\n  halt\nthread t entry nothere\n", UndefinedLabel),
    ("func m:\n  br x\nx:\nthread t entry m\n", OutOfRangeOperand),
])
def test_load_errors(src, err):
    with pytest.raises(err):
        load_image(src)


def test_error_carries_line():
    with pytest.raises(UnknownMnemonic) as ei:
        load_image("func m:\n  set r1, 1\n  bogus\nthread t entry m\n")
    assert ei.value.line == 3


def test_call_must_target_function_entry():
    with pytest.raises(AsmError):
        load_image("func m:\n  call inner\ninner:\n  halt\nthread t entry m\n")


def test_call_graph_loop_and_skip():
    src = """\
func main:
  set r1, 3
  set r2, 1
top:
  call h          ; runs at least once
  sub r1, r1, r2
  brc r1, top
  brc r1, out     ; addr 5
  call g
out:
  halt
func h:
  ret
func g:
  ret
thread t entry main
"""
    edges = {(e.callee, e.label) for e in derive_call_graph(load_image(src)).edges}
    assert edges == {("h", "D"), ("g", "X@5")}


def test_call_graph_nested_guards():
    src = """\
func main:
  brc r1, a       ; addr 0
  brc r2, a       ; addr 1
  call h
a:
  halt
func h:
  ret
thread t entry main
"""
    (edge,) = derive_call_graph(load_image(src)).edges
    assert edge.guards == (0, 1)
    assert not edge.direct
