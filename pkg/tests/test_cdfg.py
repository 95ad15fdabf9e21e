import random

import pytest

from cdfg import (
    BACKWARD,
    CONTROL,
    DATA,
    FORWARD,
    SEQUENTIAL,
    build_cdfg,
    cone_of_influence,
    effective_drivers,
    forwarding_chain,
    guard_conditions,
    sequential_depth,
    to_dot,
)
from exceptions import CombinationalLoop, UnknownSignal
from expressions import Binary, Const, Ident, Unary
from hdl_frontend import parse_design


def q(name):
    return f"i2c_regs.{name}"


def test_nodes_and_widths(i2c_cdfg):
    assert q("txr") in i2c_cdfg.nodes
    assert i2c_cdfg.width(q("wb_adr_i")) == 3
    assert i2c_cdfg.resolve("txr") == q("txr")
    assert i2c_cdfg.leaf(q("txr")) == "txr"
    assert i2c_cdfg.widths["wb_dat_o"] == 8
    assert i2c_cdfg.widths["wb_we_i"] == 1
    with pytest.raises(UnknownSignal):
        i2c_cdfg.resolve("ghost")


def test_edges_carry_kind_and_timing(i2c_cdfg):
    kinds = {
        (src, kind) for src, dst, kind in i2c_cdfg.graph.edges(data="kind") if dst == q("txr")
    }
    assert (q("wb_dat_i"), DATA) in kinds
    assert (q("wb_adr_i"), CONTROL) in kinds
    assert (q("wb_rst_i"), CONTROL) in kinds
    timings = {timing for _, dst, timing in i2c_cdfg.graph.edges(data="timing") if dst == q("txr")}
    assert timings == {SEQUENTIAL}


def test_guard_conditions_of_txr(i2c_cdfg):
    assignments = guard_conditions(i2c_cdfg, "txr")
    assert len(assignments) == 2
    reset, write = assignments
    assert reset.guard == (Ident("wb_rst_i"),)
    assert reset.rhs == Const(8, 0)
    assert write.guard[0] == Unary("!", Ident("wb_rst_i"))
    assert write.guard[1] == Ident("wb_we_i")
    assert write.guard[2] == Binary("==", Ident("wb_adr_i"), Const(3, 3))
    assert write.rhs == Ident("wb_dat_i")
    assert write.depth == 1
    assert write.guard_signals() == {"wb_rst_i", "wb_we_i", "wb_adr_i"}


def test_default_case_guard_excludes_every_label(i2c_cdfg):
    default = guard_conditions(i2c_cdfg, "wb_dat_o")[-1]
    assert default.rhs == Const(8, 0)
    assert len(default.guard) == 5
    assert all(isinstance(g, Binary) and g.op == "!=" for g in default.guard)


def test_backward_cone_counts_register_stages(i2c_cdfg):
    cone = cone_of_influence(i2c_cdfg, ["wb_dat_o"], BACKWARD)
    assert cone[q("wb_dat_o")] == 0
    assert cone[q("txr")] == 1
    assert cone[q("wb_adr_i")] == 1
    assert cone[q("wb_dat_i")] == 2
    assert cone[q("rx_byte")] == 2
    assert q("wb_clk_i") not in cone


def test_forward_cone_and_depth_cutoff(i2c_cdfg):
    cone = cone_of_influence(i2c_cdfg, ["wb_dat_i"], FORWARD)
    assert cone == {q("cr"): 1, q("ctr"): 1, q("txr"): 1, q("wb_dat_i"): 0, q("wb_dat_o"): 2}
    assert cone_of_influence(i2c_cdfg, ["wb_dat_i"], FORWARD, max_depth=1) == {
        q("cr"): 1,
        q("ctr"): 1,
        q("txr"): 1,
        q("wb_dat_i"): 0,
    }
    assert cone_of_influence(i2c_cdfg, [], BACKWARD) == {}
    with pytest.raises(UnknownSignal):
        cone_of_influence(i2c_cdfg, ["ghost"])


def test_sequential_depth(i2c_cdfg):
    assert sequential_depth(i2c_cdfg, "wb_dat_i", "wb_dat_o") == (2, 2)
    assert sequential_depth(i2c_cdfg, "txr", "wb_dat_o") == (1, 1)
    assert sequential_depth(i2c_cdfg, "txr", "txr") == (0, 0)
    assert sequential_depth(i2c_cdfg, "wb_dat_o", "txr") is None


def test_effective_drivers_and_forwarding(i2c_cdfg):
    drivers = effective_drivers(i2c_cdfg, "wb_dat_o")
    assert [d.rhs for d, _ in drivers][:5] == [Ident(n) for n in ("ctr", "rxr", "sr", "txr", "cr")]
    assert {depth for _, depth in drivers} == {1}
    assert forwarding_chain(i2c_cdfg, "rx_byte") == [(q("rxr"), 1)]
    assert forwarding_chain(i2c_cdfg, "wb_dat_i") == []


def test_effective_drivers_look_through_copies():
    text = """
    module pipe (input clk, input en, input [3:0] d, output reg [3:0] q);
        reg [3:0] s0;
        reg [3:0] s1;
        always @(posedge clk) if (en) s0 <= d;
        always @(posedge clk) s1 <= s0;
        always @(posedge clk) q <= s1;
    endmodule
    """
    g = build_cdfg(parse_design([text]))
    [(driver, depth)] = effective_drivers(g, "q")
    assert driver.signal == "s0"
    assert driver.guard == (Ident("en"),)
    assert depth == 3
    assert forwarding_chain(g, "s0") == [("pipe.s1", 1), ("pipe.q", 2)]


def test_dot_output(i2c_cdfg):
    dot = to_dot(i2c_cdfg)
    assert dot.startswith("digraph cdfg {")
    assert '"i2c_regs.txr" [label="txr [8]"];' in dot
    assert '"i2c_regs.wb_adr_i" -> "i2c_regs.txr" [kind="control", timing="sequential"' in dot


def test_combinational_loop_detected():
    text = """
    module loop (input a, output x);
        wire y;
        assign x = y & a;
        assign y = x;
    endmodule
    """
    with pytest.raises(CombinationalLoop) as excinfo:
        build_cdfg(parse_design([text]))
    assert set(excinfo.value.cycle) >= {"loop.x", "loop.y"}


def test_instances_connect_through_ports():
    text = """
    module leaf (input i, output o);
        assign o = ~i;
    endmodule
    module top (input clk, input x, output reg y);
        wire w;
        leaf u0 (.i(x), .o(w));
        always @(posedge clk) y <= w;
    endmodule
    """
    g = build_cdfg(parse_design([text]))
    cone = cone_of_influence(g, ["y"], BACKWARD)
    assert cone["top.w"] == 1
    assert cone["leaf.o"] == 1
    assert cone["leaf.i"] == 1
    assert cone["top.x"] == 1


# --- Graph queries against brute force over the source dependencies ---

def _random_design(rng: random.Random, count: int):
    """Random module plus its dependency edges as (source, target, register stages)."""
    inputs = ["i0", "i1", "i2"]
    lines = ["module r (input clk, input [3:0] i0, input [3:0] i1, input [3:0] i2);"]
    flags = [rng.random() < 0.5 for _ in range(count)]
    lines += [f"    {'reg' if registered else 'wire'} [3:0] s{k};" for k, registered in enumerate(flags)]
    edges = []
    for k, registered in enumerate(flags):
        name = f"s{k}"
        pool = inputs + [f"s{j}" for j in range(count if registered else k)]
        reads = rng.sample(pool, rng.randint(1, min(3, len(pool))))
        stage = 1 if registered else 0
        edges += [(src, name, stage) for src in reads]
        rhs = " ^ ".join(reads)
        if registered:
            if rng.random() < 0.5:
                guard = rng.choice(pool)
                edges.append((guard, name, 1))
                lines.append(f"    always @(posedge clk) if ({guard} == 4'd3) {name} <= {rhs};")
            else:
                lines.append(f"    always @(posedge clk) {name} <= {rhs};")
        else:
            lines.append(f"    assign {name} = {rhs};")
    lines.append("endmodule")
    return "\n".join(lines) + "\n", edges


def _fixpoint_cone(edges, seed, backward=True):
    depth = {seed: 0}
    changed = True
    while changed:
        changed = False
        for src, dst, stage in edges:
            near, far = (dst, src) if backward else (src, dst)
            if near in depth and depth.get(far, float("inf")) > depth[near] + stage:
                depth[far] = depth[near] + stage
                changed = True
    return {f"r.{name}": d for name, d in depth.items()}


def _simple_path_depths(edges, source, target, cap):
    if source == target:
        return (0, 0)
    out = {}
    for src, dst, stage in edges:
        out.setdefault(src, {}).setdefault(dst, set()).add(stage)
    totals = []

    def walk(node, low, high, visited):
        for succ, stages in out.get(node, {}).items():
            if succ in visited:
                continue
            if succ == target:
                totals.append((low + min(stages), high + max(stages)))
            else:
                walk(succ, low + min(stages), high + max(stages), visited | {succ})

    walk(source, 0, 0, {source})
    if not totals:
        return None
    return (min(min(t[0] for t in totals), cap), min(max(t[1] for t in totals), cap))


def test_random_graph_queries_match_brute_force():
    rng = random.Random(11)
    for _ in range(300):
        count = rng.randint(1, 9)
        text, edges = _random_design(rng, count)
        g = build_cdfg(parse_design([text]))
        names = ["i0", "i1", "i2"] + [f"s{k}" for k in range(count)]
        seed = rng.choice(names)
        assert cone_of_influence(g, [seed], BACKWARD) == _fixpoint_cone(edges, seed), text
        assert cone_of_influence(g, [seed], FORWARD) == _fixpoint_cone(edges, seed, backward=False), text
        source, target = rng.choice(names), rng.choice(names)
        assert sequential_depth(g, source, target, cap=4) == _simple_path_depths(edges, source, target, 4), text


def test_cone_monotone_and_dual(i2c_cdfg):
    small = set(cone_of_influence(i2c_cdfg, ["txr"]))
    large = set(cone_of_influence(i2c_cdfg, ["txr", "wb_dat_o"]))
    assert small <= large
    assert set(cone_of_influence(i2c_cdfg, large)) == large
    for node in large:
        forward = cone_of_influence(i2c_cdfg, [node], FORWARD)
        assert q("wb_dat_o") in forward or q("txr") in forward
