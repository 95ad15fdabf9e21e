import json
import os

import numpy as np
import pytest

from cdfg import build_cdfg
from exceptions import UnsupportedConstruct
from hdl_frontend import load_assertion_list, parse_design
from mutation_harness import (
    DELAY,
    DROPPED_GUARD,
    GUARD_CONSTANT,
    LOGIC_LABEL,
    REGISTER_SWAP,
    TIMING_LABEL,
    CycleSimulator,
    generate_corpus,
    mutate_logic,
    random_stimulus,
    shift_delay,
    write_corpus,
)
from pipeline import load_config, run_pipeline
from traces import evaluate_assertion, validate


def test_simulator_reproduces_fixture_trace(i2c_cdfg, i2c_trace):
    simulator = CycleSimulator(i2c_cdfg)
    assert simulator.clock == "wb_clk_i"
    assert "wb_clk_i" not in simulator.inputs
    stimulus = [{name: i2c_trace.values[name][i] for name in simulator.inputs} for i in range(i2c_trace.length)]
    simulated = simulator.run(stimulus)
    assert simulated.length == i2c_trace.length
    for name in simulator.names:
        assert simulated.values[name] == i2c_trace.values[name], name


def write_then_read(design, register, value):
    idle = {"we": 0, "re": 0, "adr": 0, "din": 0}
    return [
        dict(idle, we=1, adr=register, din=value),
        dict(idle, re=1, adr=register),
    ] + [idle] * (design.latency + 2)


def test_pipelined_read_latency(piped_regfile):
    simulator = CycleSimulator(build_cdfg(piped_regfile.parse()))
    trace = simulator.run(write_then_read(piped_regfile, 1, 5))
    assert trace.values["r1"][:2] == (0, 5)
    assert trace.values["dout"][2] == 5
    assert trace.values["dout_2"].index(5) == 4
    assert evaluate_assertion(piped_regfile.good_assertion(1), trace).passed


def test_simulator_rejects_multiple_clocks():
    text = """
    module two (input c1, input c2, input d, output reg q1, output reg q2);
        always @(posedge c1) q1 <= d;
        always @(posedge c2) q2 <= d;
    endmodule
    """
    with pytest.raises(UnsupportedConstruct):
        CycleSimulator(build_cdfg(parse_design([text])))


def test_synthetic_design_shape(regfile, piped_regfile):
    assert regfile.registers == 4
    assert (regfile.output, regfile.latency) == ("dout", 1)
    assert (piped_regfile.output, piped_regfile.latency) == ("dout_2", 3)
    assert "2'd3: r3 <= din;" in regfile.verilog()
    assert "dout_2 <= dout_1;" in piped_regfile.verilog()
    [module] = piped_regfile.parse().modules
    assert module.name == "regfile_p"


def test_good_assertions_hold_on_random_traffic(regfile):
    simulator = CycleSimulator(build_cdfg(regfile.parse()))
    trace = simulator.run(random_stimulus(simulator, 200, np.random.default_rng(1)))
    for register in range(regfile.registers):
        assertion = regfile.good_assertion(register)
        assert assertion.delays == (1,)
        assert assertion.clock.signal == "clk"
        assert validate(assertion, [trace]).accepted, register


def test_logic_mutations(regfile):
    original = regfile.good_assertion(1)
    constant = mutate_logic(regfile, original, 1, GUARD_CONSTANT, 2)
    assert constant.antecedent != original.antecedent
    assert constant.consequent == original.consequent

    dropped = mutate_logic(regfile, original, 1, DROPPED_GUARD, 2)
    assert dropped.antecedent_signals() == ("adr",)

    swapped = mutate_logic(regfile, original, 1, REGISTER_SWAP, 3)
    assert "r3" in swapped.consequent_signals() and "r1" not in swapped.consequent_signals()
    assert swapped.antecedent == original.antecedent

    with pytest.raises(ValueError):
        mutate_logic(regfile, original, 1, "bit-flip", 2)


def test_shift_delay(piped_regfile):
    original = piped_regfile.good_assertion(0)
    assert shift_delay(original, -2).delays == (1,)
    assert shift_delay(original, 2).delays == (5,)


def test_corpus_properties(corpus):
    assert corpus
    assert len({m.name for m in corpus}) == len(corpus)
    for mutant in corpus:
        assert validate(mutant.original, [mutant.trace]).accepted, mutant.name
        assert not evaluate_assertion(mutant.mutated, mutant.trace).passed, mutant.name
        assert mutant.mutated.name == mutant.name
        if mutant.label == TIMING_LABEL:
            assert mutant.mutation == DELAY
            assert mutant.shift != 0
            assert mutant.mutated.delays[0] == mutant.original.delays[0] + mutant.shift
        else:
            assert mutant.label == LOGIC_LABEL
            assert mutant.shift is None


def test_corpus_is_seeded():
    first = generate_corpus(timing=2, logic=2, seed=11, designs=1, length=64)
    second = generate_corpus(timing=2, logic=2, seed=11, designs=1, length=64)
    assert [(m.name, m.mutated, m.trace) for m in first] == [(m.name, m.mutated, m.trace) for m in second]


def test_written_corpus_runs_through_the_pipeline(corpus, tmp_path):
    paths = write_corpus(corpus, str(tmp_path))
    designs = {m.design.name for m in corpus}
    assert set(paths) == designs

    for name in sorted(designs):
        assert os.path.isfile(tmp_path / f"{name}.v")
        entries = json.loads((tmp_path / f"{name}.assertions.json").read_text())
        mutants = [m for m in corpus if m.design.name == name]
        assert [e["name"] for e in entries] == [m.name for m in mutants]
        assert [a.name for a in load_assertion_list(paths[name])] == [m.name for m in mutants]
        for mutant in mutants:
            assert os.path.isfile(tmp_path / "traces" / f"{mutant.name}.vcd")

        cfg = load_config(str(tmp_path / f"{name}.ini"), {"jobs": 2})
        assert cfg.out == str(tmp_path / "out" / name)
        report = run_pipeline(cfg)
        assert len(report.outcomes) == len(mutants)
        assert all(row.error is None for row in report.outcomes)
        [row] = report.rows
        assert row.te_fixed == row.te_attempted
        assert row.te_attempted == sum(1 for m in mutants if m.label == TIMING_LABEL)
