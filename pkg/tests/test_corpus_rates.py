import pytest

from cdfg import build_cdfg
from classify import LOGIC, TIMING, classify_error
from fix import FIXED, fix_logic_bar, fix_timing
from mutation_harness import LOGIC_LABEL, TIMING_LABEL, generate_corpus

MUTANTS_PER_KIND = 100


@pytest.fixture(scope="module")
def large_corpus():
    return generate_corpus(timing=MUTANTS_PER_KIND, logic=MUTANTS_PER_KIND, seed=0, designs=10)


@pytest.fixture(scope="module")
def large_graphs(large_corpus):
    return {m.design.name: build_cdfg(m.design.parse()) for m in large_corpus}


def of_label(corpus, label):
    mutants = [m for m in corpus if m.label == label]
    assert len(mutants) >= 0.95 * MUTANTS_PER_KIND
    return mutants


def test_classifier_agrees_with_injected_labels(large_corpus, large_graphs):
    expected = {TIMING_LABEL: TIMING, LOGIC_LABEL: LOGIC}
    correct = 0
    for mutant in large_corpus:
        result = classify_error(mutant.mutated, [mutant.trace], [], large_graphs[mutant.design.name])
        correct += result.kind == expected[mutant.label]
    assert correct >= 0.95 * len(large_corpus)


def test_every_timing_mutant_is_fixed(large_corpus):
    timing = of_label(large_corpus, TIMING_LABEL)
    exact = 0
    for mutant in timing:
        outcome = fix_timing(mutant.mutated, [mutant.trace], [], K=3)
        assert outcome.status == FIXED, mutant.name
        exact += outcome.accepted.assertion.delays == mutant.original.delays
    assert exact >= 0.95 * len(timing)


def test_logic_mutants_fixed_from_both_ends(large_corpus, large_graphs):
    logic = of_label(large_corpus, LOGIC_LABEL)
    fixed = sum(
        fix_logic_bar(mutant.mutated, large_graphs[mutant.design.name], [mutant.trace], []).status == FIXED
        for mutant in logic
    )
    assert fixed >= 0.90 * len(logic)
