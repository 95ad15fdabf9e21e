"""
Synthetic register-file designs, known-good assertions over them, mutated
assertions with known error labels, and counterexample traces produced by a
cycle-based simulation of the (golden) RTL.
"""
import json
import logging
import os
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence

import networkx as nx
import numpy as np

from cdfg import COMBINATIONAL, SEQUENTIAL, DesignCdfg, GuardedAssignment, build_cdfg
from exceptions import UnsupportedConstruct
from expressions import Binary, Concat, Const, Evaluator, Expr, Ident, Index, Slice, map_expr, mask
from hdl_frontend import AlwaysBlock, DesignAst, Instance, SourceFile, SvaAssertion, parse_assertion, parse_design, render_assertion
from traces import CounterexampleTrace, evaluate_assertion, make_trace, validate, write_vcd

TIMING_LABEL = "TE"
LOGIC_LABEL = "LE"

DELAY = "delay"
GUARD_CONSTANT = "guard-constant"
DROPPED_GUARD = "dropped-guard"
REGISTER_SWAP = "register-swap"
LOGIC_MUTATIONS = (GUARD_CONSTANT, DROPPED_GUARD, REGISTER_SWAP)

MAX_SHIFT = 3
TRACE_LENGTH = 128


# --- Simulation ---

class _Snapshot(Evaluator):
    def __init__(self, values: Dict[str, int], widths: Dict[str, int]):
        self.values = values
        self.widths = widths

    def read(self, name: str, cycle: int) -> Optional[int]:
        return self.values.get(name)

    def signal_width(self, name: str) -> int:
        return self.widths[name]


class CycleSimulator:
    """
    Two-state, cycle-based simulation of one module. Sample i holds the
    inputs applied in cycle i, the registers as edge i-1 left them and the
    settled combinational signals, i.e. what a VCD shows at edge i.
    Registers start at zero.
    """

    def __init__(self, g: DesignCdfg, module: Optional[str] = None):
        top = g.ast.module(module) if module else g.ast.top
        for item in top.items:
            if isinstance(item, Instance):
                raise UnsupportedConstruct("module instance in simulated module", item.span)
        clocks = {
            item.sensitivity.clock
            for item in top.items
            if isinstance(item, AlwaysBlock) and item.sensitivity.is_sequential
        }
        if len(clocks) > 1:
            raise UnsupportedConstruct(f"multiple clocks ({', '.join(sorted(clocks))})")
        self.module = top
        self.clock = clocks.pop() if clocks else "clk"
        self.widths = top.widths
        self.inputs = [p.name for p in top.ports if p.direction == "input" and p.name != self.clock]
        self.names = sorted(name for name in self.widths if name != self.clock)

        local = [a for a in g.assignments if a.module == top.name]
        self.sequential = [a for a in local if a.timing == SEQUENTIAL]
        combinational: Dict[str, List[GuardedAssignment]] = {}
        for assignment in local:
            if assignment.timing == COMBINATIONAL:
                combinational.setdefault(assignment.target, []).append(assignment)
        order = nx.DiGraph()
        order.add_nodes_from(combinational)
        order.add_edges_from(
            (src, dst)
            for src, dst, timing in g.graph.edges(data="timing")
            if timing == COMBINATIONAL and src in combinational and dst in combinational
        )
        self.combinational = [(target, combinational[target]) for target in nx.lexicographical_topological_sort(order)]

    def _write(self, values: Dict[str, int], lhs: Expr, value: Optional[int], evaluator: _Snapshot):
        value = value or 0
        if isinstance(lhs, Ident):
            values[lhs.name] = value & mask(self.widths[lhs.name])
        elif isinstance(lhs, Index) and isinstance(lhs.base, Ident):
            bit = evaluator.evaluate(lhs.index, 0) or 0
            current = values.get(lhs.base.name, 0)
            values[lhs.base.name] = (current & ~(1 << bit)) | ((value & 1) << bit)
        elif isinstance(lhs, Slice) and isinstance(lhs.base, Ident):
            field_mask = mask(lhs.msb - lhs.lsb + 1) << lhs.lsb
            current = values.get(lhs.base.name, 0)
            values[lhs.base.name] = (current & ~field_mask) | ((value << lhs.lsb) & field_mask)
        elif isinstance(lhs, Concat):
            for item in reversed(lhs.items):
                width = evaluator.width(item)
                self._write(values, item, value & mask(width), evaluator)
                value >>= width
        else:
            raise UnsupportedConstruct(f"assignment target {lhs!r}")

    def _apply(self, values: Dict[str, int], assignments: Sequence[GuardedAssignment], reads: Dict[str, int]):
        evaluator = _Snapshot(reads, self.widths)
        updates = []
        for assignment in assignments:
            if all(evaluator.truth(predicate, 0) for predicate in assignment.guard):
                updates.append((assignment.lhs, evaluator.evaluate(assignment.rhs, 0)))
        for lhs, value in updates:
            self._write(values, lhs, value, evaluator)

    def run(self, stimulus: Sequence[Dict[str, int]]) -> CounterexampleTrace:
        state = {name: 0 for name in self.names}
        columns: Dict[str, List[int]] = {name: [] for name in self.names}
        for applied in stimulus:
            values = dict(state)
            for name in self.inputs:
                values[name] = int(applied.get(name, 0)) & mask(self.widths[name])
            for _, assignments in self.combinational:
                self._apply(values, assignments, values)
            for name in self.names:
                columns[name].append(values[name])
            state = dict(values)
            self._apply(state, self.sequential, values)
        return make_trace(self.clock, columns, {name: self.widths[name] for name in self.names})


def random_stimulus(simulator: CycleSimulator, length: int, rng: np.random.Generator) -> List[Dict[str, int]]:
    return [
        {name: int(rng.integers(0, 1 << simulator.widths[name])) for name in simulator.inputs}
        for _ in range(length)
    ]


# --- Synthetic designs ---

@dataclass(frozen=True)
class SyntheticDesign:
    """
    A register file: `we` writes `din` to register `adr`, `re` loads register
    `adr` into `dout` one cycle later, and `pipeline` more registers delay
    `dout`.
    """
    name: str
    address_bits: int
    width: int
    pipeline: int

    @property
    def registers(self) -> int:
        return 1 << self.address_bits

    @property
    def output(self) -> str:
        return "dout" if self.pipeline == 0 else f"dout_{self.pipeline}"

    @property
    def latency(self) -> int:
        return 1 + self.pipeline

    @property
    def path(self) -> str:
        return f"{self.name}.v"

    def verilog(self) -> str:
        a, w = self.address_bits, self.width
        lines = [
            f"module {self.name} (",
            "    input clk,",
            "    input we,",
            "    input re,",
            f"    input [{a - 1}:0] adr,",
            f"    input [{w - 1}:0] din,",
            f"    output reg [{w - 1}:0] dout",
            ");",
        ]
        lines += [f"    reg [{w - 1}:0] r{j};" for j in range(self.registers)]
        lines += [f"    reg [{w - 1}:0] dout_{p};" for p in range(1, self.pipeline + 1)]
        lines += ["", "    // register writes", "    always @(posedge clk) begin", "        if (we) begin", "            case (adr)"]
        lines += [f"                {a}'d{j}: r{j} <= din;" for j in range(self.registers)]
        lines += ["            endcase", "        end", "    end", "", "    // register reads"]
        lines += ["    always @(posedge clk) begin", "        if (re) begin", "            case (adr)"]
        lines += [f"                {a}'d{j}: dout <= r{j};" for j in range(self.registers)]
        lines += ["            endcase", "        end", "    end"]
        if self.pipeline:
            lines += ["", "    always @(posedge clk) begin"]
            previous = "dout"
            for p in range(1, self.pipeline + 1):
                lines.append(f"        dout_{p} <= {previous};")
                previous = f"dout_{p}"
            lines.append("    end")
        lines.append("endmodule")
        return "\n".join(lines) + "\n"

    def parse(self) -> DesignAst:
        return parse_design([SourceFile(self.path, self.verilog())])

    def good_assertion(self, register: int, name: Optional[str] = None) -> SvaAssertion:
        text = (
            f"assert property (@(posedge clk) (re && adr == {self.address_bits}'d{register}) "
            f"|-> ##{self.latency} ({self.output} == $past(r{register}, {self.latency})));"
        )
        return parse_assertion(text, name)


def make_design(index: int, rng: np.random.Generator) -> SyntheticDesign:
    return SyntheticDesign(
        name=f"regfile_{index}",
        address_bits=int(rng.integers(2, 4)),
        width=int(rng.choice([4, 8])),
        pipeline=int(rng.integers(0, 3)),
    )


# --- Mutations ---

@dataclass(frozen=True)
class Mutant:
    name: str
    design: SyntheticDesign
    original: SvaAssertion
    mutated: SvaAssertion
    label: str
    mutation: str
    trace: CounterexampleTrace
    shift: Optional[int] = None


def shift_delay(a: SvaAssertion, k: int) -> SvaAssertion:
    return replace(a, delays=(a.delays[0] + k,) + a.delays[1:])


def mutate_logic(design: SyntheticDesign, original: SvaAssertion, register: int, mutation: str, other: int) -> SvaAssertion:
    """Applies one logic mutation; `other` is the substitute register index."""
    if mutation == GUARD_CONSTANT:
        antecedent = map_expr(
            original.antecedent,
            lambda node: Const(node.width, other) if isinstance(node, Const) and node.value == register else None,
        )
        return replace(original, antecedent=antecedent)
    if mutation == DROPPED_GUARD:
        return replace(original, antecedent=Binary("==", Ident("adr"), Const(design.address_bits, register)))
    if mutation == REGISTER_SWAP:
        consequent = tuple(
            map_expr(term, lambda node: Ident(f"r{other}") if node == Ident(f"r{register}") else None)
            for term in original.consequent
        )
        return replace(original, consequent=consequent)
    raise ValueError(f"Unknown mutation '{mutation}'")


def _reads_every_register(design: SyntheticDesign, trace: CounterexampleTrace) -> bool:
    usable = trace.length - design.latency - MAX_SHIFT
    read = {trace.values["adr"][i] for i in range(max(usable, 0)) if trace.values["re"][i] == 1}
    return len(read) == design.registers


def _counterexample(
    simulator: CycleSimulator,
    design: SyntheticDesign,
    original: SvaAssertion,
    mutated: SvaAssertion,
    rng: np.random.Generator,
    length: int,
    retries: int,
) -> Optional[CounterexampleTrace]:
    """A trace on which the original passes and is covered, the mutant fails and every register is read."""
    for _ in range(retries):
        trace = simulator.run(random_stimulus(simulator, length, rng))
        if not _reads_every_register(design, trace):
            continue
        if validate(original, [trace]).accepted and not evaluate_assertion(mutated, trace).passed:
            return trace
    return None


def generate_corpus(
    timing: int = 100,
    logic: int = 100,
    seed: int = 0,
    designs: int = 10,
    length: int = TRACE_LENGTH,
    retries: int = 8,
) -> List[Mutant]:
    """
    `timing` delay mutants and `logic` guard/register mutants spread over
    `designs` synthetic designs. Mutants for which no distinguishing trace
    is found within `retries` simulations are dropped with a warning.
    """
    rng = np.random.default_rng(seed)
    shapes = [make_design(i, rng) for i in range(designs)]
    simulators = {design.name: CycleSimulator(build_cdfg(design.parse())) for design in shapes}
    mutants: List[Mutant] = []

    for index in range(timing + logic):
        design = shapes[index % designs]
        register = int(rng.integers(0, design.registers))
        original = design.good_assertion(register)
        name = f"{design.name}_m{index}"
        if index < timing:
            shifts = [k for k in range(-min(MAX_SHIFT, design.latency), MAX_SHIFT + 1) if k != 0]
            shift = int(rng.choice(shifts))
            mutated, label, mutation = shift_delay(original, shift), TIMING_LABEL, DELAY
        else:
            shift = None
            mutation = LOGIC_MUTATIONS[(index - timing) % len(LOGIC_MUTATIONS)]
            other = int(rng.choice([j for j in range(design.registers) if j != register]))
            mutated, label = mutate_logic(design, original, register, mutation, other), LOGIC_LABEL
        mutated = replace(mutated, name=name)
        trace = _counterexample(simulators[design.name], design, original, mutated, rng, length, retries)
        if trace is None:
            logging.warning(f"No distinguishing trace for {name} ({mutation}); dropped")
            continue
        mutants.append(Mutant(name, design, original, mutated, label, mutation, trace, shift))
    logging.info(f"Generated {len(mutants)} mutant(s) over {designs} design(s)")
    return mutants


def _corpus_config(design: SyntheticDesign) -> str:
    return "\n".join([
        "[design]",
        f"name = {design.name}",
        f"sources = {design.path}",
        "",
        "[inputs]",
        f"assertions = {design.name}.assertions.json",
        "traces = traces",
        "clock = clk",
        "",
        "[run]",
        f"out = out/{design.name}",
        "",
    ])


def write_corpus(mutants: Sequence[Mutant], directory: str) -> Dict[str, str]:
    """
    Writes one Verilog file per design, one assertion list per design (JSON,
    with injected labels), `traces/<name>.vcd` per mutant and a `<design>.ini`
    config for `svafix fix`.

    Returns:
        Dict[str, str]: design name -> assertion list path.
    """
    os.makedirs(os.path.join(directory, "traces"), exist_ok=True)
    lists: Dict[str, List[dict]] = {}
    designs: Dict[str, SyntheticDesign] = {}
    for mutant in mutants:
        designs[mutant.design.name] = mutant.design
        lists.setdefault(mutant.design.name, []).append(
            {
                "name": mutant.name,
                "text": render_assertion(mutant.mutated),
                "label": mutant.label,
                "mutation": mutant.mutation,
                "original": render_assertion(mutant.original),
            }
        )
        with open(os.path.join(directory, "traces", f"{mutant.name}.vcd"), "w", encoding="utf-8") as f:
            f.write(write_vcd(mutant.trace))
    paths = {}
    for name, design in designs.items():
        with open(os.path.join(directory, design.path), "w", encoding="utf-8") as f:
            f.write(design.verilog())
        path = os.path.join(directory, f"{name}.assertions.json")
        with open(path, "w", encoding="utf-8") as f:
            json.dump(lists[name], f, indent=2)
            f.write("\n")
        with open(os.path.join(directory, f"{name}.ini"), "w", encoding="utf-8") as f:
            f.write(_corpus_config(design))
        paths[name] = path
    logging.info(f"Wrote corpus of {len(mutants)} mutant(s) to {directory}")
    return paths
