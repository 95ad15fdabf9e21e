import pytest

from classify import (
    HEURISTIC,
    LLM,
    LLM_OVERRIDDEN,
    LOGIC,
    TIMING,
    classify_error,
    classify_heuristic,
    coi_mismatch,
    find_passing_shift,
    guard_mismatch,
    matching_drivers,
    shift_order,
    waveforms,
)
from conftest import TRAP_FIX_TEXT
from exceptions import MockUnmatched, NoFailure, NoTraces
from hdl_frontend import parse_assertion
from llm_client import MockBackend
from mutation_harness import GUARD_CONSTANT, REGISTER_SWAP, TIMING_LABEL


def test_shift_order():
    assert shift_order(2) == [1, -1, 2, -2]


def test_trap_has_a_passing_shift(trap_assertion, i2c_trace):
    assert find_passing_shift(trap_assertion, [i2c_trace]) == 1


def test_trap_driver_is_guarded_by_another_address(trap_assertion, i2c_cdfg):
    [match] = matching_drivers(trap_assertion, i2c_cdfg)
    assert match.signal == "wb_dat_o"
    assert match.depth == 1 and match.aligned
    mismatch = guard_mismatch(trap_assertion, i2c_cdfg)
    assert mismatch["signal"] == "wb_adr_i"
    assert mismatch["assertion_value"] == 4
    assert mismatch["rtl_value"] == 5
    assert mismatch["target"] == "wb_dat_o"


def test_guard_mismatch_absent_for_consistent_guard(i2c_cdfg):
    assert guard_mismatch(parse_assertion(TRAP_FIX_TEXT), i2c_cdfg) is None


def test_trap_classified_as_logic_despite_shift(trap_assertion, i2c_trace, i2c_cdfg):
    result = classify_heuristic(trap_assertion, [i2c_trace], i2c_cdfg)
    assert result.kind == LOGIC
    assert result.source == HEURISTIC
    assert result.evidence["misleading_shift"] == 1
    assert result.shift is None
    assert "wb_adr_i" in result.rationale


def test_coi_mismatch(i2c_cdfg):
    assertion = parse_assertion("(status == 8'h00) |-> ##1 (txr == 8'h00)")
    assert coi_mismatch(assertion, i2c_cdfg) == ["status"]


def test_waveforms_include_cone_signals(trap_assertion, i2c_trace, i2c_cdfg):
    [table] = waveforms(trap_assertion, [i2c_trace], i2c_cdfg)
    rows = [line.split("|")[0].strip() for line in table.split("\n")[2:]]
    assert rows[:3] == ["wb_adr_i", "wb_dat_o", "txr"]
    assert "sr" in rows and "wb_dat_i" in rows


def test_llm_timing_answer_is_overridden(trap_assertion, i2c_trace, i2c_cdfg):
    llm = MockBackend([("Is this a timing error", "<answer>Timing</answer>")])
    prompts = []
    result = classify_error(trap_assertion, [i2c_trace], [], i2c_cdfg, llm, prompts=prompts)
    assert result.kind == LOGIC
    assert result.source == LLM_OVERRIDDEN
    assert prompts[0].stage == "classify"
    assert "wb_dat_o" in prompts[0].user


def test_unusable_llm_answer_falls_back(trap_assertion, i2c_trace, i2c_cdfg):
    llm = MockBackend([(".", "It depends.")])
    result = classify_error(trap_assertion, [i2c_trace], [], i2c_cdfg, llm)
    assert result.kind == LOGIC and result.source == HEURISTIC


def test_fixture_errors_propagate(trap_assertion, i2c_trace, i2c_cdfg):
    with pytest.raises(MockUnmatched):
        classify_error(trap_assertion, [i2c_trace], [], i2c_cdfg, MockBackend())


def test_preconditions(trap_assertion, i2c_trace, i2c_cdfg):
    with pytest.raises(NoTraces):
        classify_error(trap_assertion, [], [], i2c_cdfg)
    with pytest.raises(NoFailure):
        classify_error(parse_assertion(TRAP_FIX_TEXT), [i2c_trace], [], i2c_cdfg)
    with pytest.raises(ValueError):
        classify_error(trap_assertion, [i2c_trace], [], i2c_cdfg, K=0)


def test_corpus_labels(corpus, corpus_graphs):
    checked = 0
    for mutant in corpus:
        g = corpus_graphs[mutant.design.name]
        result = classify_error(mutant.mutated, [mutant.trace], [], g)
        if mutant.label == TIMING_LABEL:
            assert result.kind == TIMING, mutant.name
            assert result.shift is not None
            checked += 1
        elif mutant.mutation in (GUARD_CONSTANT, REGISTER_SWAP):
            assert result.kind == LOGIC, mutant.name
            checked += 1
    assert checked > 0


def test_llm_logic_answer_is_kept(corpus, corpus_graphs):
    mutant = next(m for m in corpus if m.label == TIMING_LABEL)
    llm = MockBackend([("Is this a timing error", "<answer>logic</answer>")])
    result = classify_error(mutant.mutated, [mutant.trace], [], corpus_graphs[mutant.design.name], llm)
    assert result.kind == LOGIC and result.source == LLM
    assert result.evidence == {}
