"""
Signal-level control and data flow graph.

Nodes are module-qualified signal names (`module.signal`). Every assignment
adds a data edge from each signal it reads to its target and a control edge
from each signal of its guard; an edge is sequential when the assignment is
a nonblocking assignment in a clocked always-block.
"""
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, Iterable, List, Optional, Set, Tuple

import networkx as nx

from exceptions import CombinationalLoop, UnknownSignal
from expressions import Binary, Expr, Ident, Span, conjoin, negate, signals
from hdl_frontend import (
    AlwaysBlock,
    Assign,
    Block,
    Case,
    ContinuousAssign,
    Declaration,
    DesignAst,
    If,
    Instance,
    ModuleAst,
    lhs_reads,
    lhs_targets,
)

DATA = "data"
CONTROL = "control"
SEQUENTIAL = "sequential"
COMBINATIONAL = "combinational"

BACKWARD = "backward"
FORWARD = "forward"

DEFAULT_DEPTH_CAP = 8


@dataclass(frozen=True)
class GuardedAssignment:
    target: str
    lhs: Expr
    rhs: Expr
    guard: Tuple[Expr, ...]
    timing: str
    module: str
    span: Optional[Span] = None

    @property
    def signal(self) -> str:
        return self.target.split(".", 1)[1]

    @property
    def depth(self) -> int:
        """Register stages between the right-hand side and the target."""
        return 1 if self.timing == SEQUENTIAL else 0

    @property
    def guard_expr(self) -> Expr:
        return conjoin(self.guard)

    def guard_signals(self) -> Set[str]:
        return {name for predicate in self.guard for name in signals(predicate)}


@dataclass
class DesignCdfg:
    ast: DesignAst
    graph: nx.MultiDiGraph
    flow: nx.DiGraph
    assignments: List[GuardedAssignment] = field(default_factory=list)
    top: Optional[str] = None

    @property
    def nodes(self) -> List[str]:
        return list(self.graph.nodes)

    def width(self, node: str) -> int:
        return self.graph.nodes[node]["width"]

    @cached_property
    def widths(self) -> Dict[str, int]:
        """Signal widths keyed by the plain names `resolve` accepts."""
        by_name: Dict[str, List[str]] = {}
        for node, attrs in self.graph.nodes(data=True):
            by_name.setdefault(attrs["signal"], []).append(node)
        widths = {}
        for name, nodes in by_name.items():
            top = f"{self.top}.{name}" if self.top is not None else None
            if top in nodes:
                widths[name] = self.width(top)
            elif len(nodes) == 1:
                widths[name] = self.width(nodes[0])
        return widths

    def resolve(self, name: str) -> str:
        """Maps a signal name to its node: qualified names, then top-module names, then unique leaf names."""
        if name in self.graph:
            return name
        if self.top is not None and f"{self.top}.{name}" in self.graph:
            return f"{self.top}.{name}"
        matches = [node for node in self.graph if self.graph.nodes[node]["signal"] == name]
        if len(matches) == 1:
            return matches[0]
        raise UnknownSignal(name)

    def leaf(self, node: str) -> str:
        return self.graph.nodes[node]["signal"]


# --- Construction ---

def _case_guard(stmt: Case, labels: Tuple[Expr, ...]) -> Expr:
    terms = [Binary("==", stmt.selector, label) for label in labels]
    result = terms[0]
    for term in terms[1:]:
        result = Binary("||", result, term)
    return result


def _collect(stmt, guard: Tuple[Expr, ...], spans: Tuple[Span, ...], out: List[Tuple[Assign, Tuple[Expr, ...], Tuple[Span, ...]]]):
    if isinstance(stmt, Assign):
        out.append((stmt, guard, spans))
    elif isinstance(stmt, Block):
        for inner in stmt.stmts:
            _collect(inner, guard, spans, out)
    elif isinstance(stmt, If):
        inner_spans = spans + ((stmt.span,) if stmt.span else ())
        _collect(stmt.then, guard + (stmt.cond,), inner_spans, out)
        if stmt.other is not None:
            _collect(stmt.other, guard + (negate(stmt.cond),), inner_spans, out)
    elif isinstance(stmt, Case):
        inner_spans = spans + ((stmt.span,) if stmt.span else ())
        labelled = [item for item in stmt.items if not item.is_default]
        for item in stmt.items:
            if item.is_default:
                others = tuple(
                    Binary("!=", stmt.selector, label) for other in labelled for label in other.labels
                )
                _collect(item.body, guard + others, inner_spans, out)
            else:
                _collect(item.body, guard + (_case_guard(stmt, item.labels),), inner_spans, out)


class _Builder:
    def __init__(self, ast: DesignAst):
        self.ast = ast
        self.graph = nx.MultiDiGraph()
        self.assignments: List[GuardedAssignment] = []

    def node(self, module: str, signal: str) -> str:
        return f"{module}.{signal}"

    def add_edge(self, src: str, dst: str, kind: str, timing: str, span: Optional[Span]):
        for end in (src, dst):
            if end not in self.graph:
                raise UnknownSignal(end)
        self.graph.add_edge(src, dst, kind=kind, timing=timing, span=span)

    def add_assignment(self, module: ModuleAst, assign: Assign, guard: Tuple[Expr, ...], guard_spans: Tuple[Span, ...], timing: str):
        data_sources = signals(assign.rhs) + lhs_reads(assign.lhs)
        control_sources = {name for predicate in guard for name in signals(predicate)}
        control_span = guard_spans[-1] if guard_spans else assign.span
        for target in lhs_targets(assign.lhs):
            dst = self.node(module.name, target)
            for name in data_sources:
                self.add_edge(self.node(module.name, name), dst, DATA, timing, assign.span)
            for name in sorted(control_sources):
                self.add_edge(self.node(module.name, name), dst, CONTROL, timing, control_span)
            self.assignments.append(
                GuardedAssignment(dst, assign.lhs, assign.rhs, guard, timing, module.name, assign.span)
            )

    def build(self) -> None:
        for module in self.ast.modules:
            for net in module.nets:
                self.graph.add_node(self.node(module.name, net.name), width=net.width, module=module.name, signal=net.name)

        for module in self.ast.modules:
            for item in module.items:
                if isinstance(item, Declaration):
                    for name, value in item.inits:
                        assign = Assign(Ident(name), value, True, item.span)
                        self.add_assignment(module, assign, (), (), COMBINATIONAL)
                elif isinstance(item, ContinuousAssign):
                    for assign in item.assignments:
                        self.add_assignment(module, assign, (), (), COMBINATIONAL)
                elif isinstance(item, AlwaysBlock):
                    collected: List[Tuple[Assign, Tuple[Expr, ...], Tuple[Span, ...]]] = []
                    _collect(item.body, (), (), collected)
                    for assign, guard, guard_spans in collected:
                        clocked = item.sensitivity.is_sequential and not assign.blocking
                        self.add_assignment(module, assign, guard, guard_spans, SEQUENTIAL if clocked else COMBINATIONAL)
                elif isinstance(item, Instance):
                    self.add_instance(module, item)

    def add_instance(self, module: ModuleAst, instance: Instance):
        child = self.ast.module(instance.module)
        for port_name, value in instance.connections:
            if value is None:
                continue
            port = child.port(port_name)
            port_node = self.node(child.name, port_name)
            if port.direction == "output":
                for target in lhs_targets(value):
                    self.add_edge(port_node, self.node(module.name, target), DATA, COMBINATIONAL, instance.span)
            else:
                for name in signals(value):
                    self.add_edge(self.node(module.name, name), port_node, DATA, COMBINATIONAL, instance.span)


def _flow_graph(graph: nx.MultiDiGraph) -> nx.DiGraph:
    """Collapses parallel edges: `weight` is the fewest register stages, `max_weight` the most."""
    flow = nx.DiGraph()
    flow.add_nodes_from(graph.nodes)
    for src, dst, attrs in graph.edges(data=True):
        stage = 1 if attrs["timing"] == SEQUENTIAL else 0
        if flow.has_edge(src, dst):
            edge = flow[src][dst]
            edge["weight"] = min(edge["weight"], stage)
            edge["max_weight"] = max(edge["max_weight"], stage)
        else:
            flow.add_edge(src, dst, weight=stage, max_weight=stage)
    return flow


def build_cdfg(ast: DesignAst) -> DesignCdfg:
    """
    Builds the CDFG of a parsed design.

    Raises:
        CombinationalLoop: If the combinational edges form a cycle.
    """
    builder = _Builder(ast)
    builder.build()
    graph = builder.graph

    combinational = nx.DiGraph()
    combinational.add_nodes_from(graph.nodes)
    combinational.add_edges_from(
        (src, dst) for src, dst, timing in graph.edges(data="timing") if timing == COMBINATIONAL
    )
    try:
        cycle = nx.find_cycle(combinational)
    except nx.NetworkXNoCycle:
        cycle = None
    if cycle:
        nodes = [src for src, _ in cycle] + [cycle[0][0]]
        logging.error(f"Combinational loop found: {' -> '.join(nodes)}")
        raise CombinationalLoop(nodes)

    top = ast.top.name if ast.top is not None else None
    cdfg = DesignCdfg(ast=ast, graph=graph, flow=_flow_graph(graph), assignments=builder.assignments, top=top)
    logging.info(f"Built CDFG: {graph.number_of_nodes()} node(s), {graph.number_of_edges()} edge(s)")
    return cdfg


# --- Queries ---

def cone_of_influence(g: DesignCdfg, seeds: Iterable[str], direction: str = BACKWARD, max_depth: Optional[int] = None) -> Dict[str, int]:
    """
    Transitive fan-in (backward) or fan-out (forward) of `seeds`.

    Returns:
        Dict[str, int]: node -> fewest sequential edges on any path to/from a seed.
            Nodes deeper than `max_depth` register stages are left out.

    Raises:
        UnknownSignal: If a seed is not a node of the graph.
    """
    sources = {g.resolve(seed) for seed in seeds}
    if not sources:
        return {}
    graph = g.flow.reverse(copy=False) if direction == BACKWARD else g.flow
    lengths = nx.multi_source_dijkstra_path_length(graph, sources, cutoff=max_depth, weight="weight")
    return dict(sorted(lengths.items()))


def guard_conditions(g: DesignCdfg, target: str) -> List[GuardedAssignment]:
    """Every assignment to `target` with its full guard, in source order."""
    node = g.resolve(target)
    return [assignment for assignment in g.assignments if assignment.target == node]


def sequential_depth(g: DesignCdfg, source: str, target: str, cap: int = DEFAULT_DEPTH_CAP) -> Optional[Tuple[int, int]]:
    """
    Register stages on simple paths from `source` to `target` as (min, max),
    with max capped at `cap`; None when `target` is unreachable.
    """
    src, dst = g.resolve(source), g.resolve(target)
    if src == dst:
        return (0, 0)
    try:
        low = nx.dijkstra_path_length(g.flow, src, dst, weight="weight")
    except nx.NetworkXNoPath:
        return None

    relevant = nx.ancestors(g.flow, dst) | {dst}
    best = -1
    stack = [(src, 0, iter(g.flow.successors(src)))]
    on_path = {src}
    while stack:
        node, weight, successors = stack[-1]
        advanced = False
        for succ in successors:
            if succ in on_path or succ not in relevant:
                continue
            total = weight + g.flow[node][succ]["max_weight"]
            if succ == dst:
                best = max(best, total)
                if best >= cap:
                    return (min(low, cap), cap)
                continue
            stack.append((succ, total, iter(g.flow.successors(succ))))
            on_path.add(succ)
            advanced = True
            break
        if not advanced:
            stack.pop()
            on_path.discard(node)
    return (min(low, cap), min(best, cap))


def to_dot(g: DesignCdfg) -> str:
    """DOT text with one node per signal and `kind`/`timing` edge attributes."""
    lines = ["digraph cdfg {", "  node [shape=box];"]
    for node in sorted(g.graph.nodes):
        attrs = g.graph.nodes[node]
        lines.append(f'  "{node}" [label="{attrs["signal"]} [{attrs["width"]}]"];')
    edges = sorted(
        (src, dst, attrs["kind"], attrs["timing"]) for src, dst, attrs in g.graph.edges(data=True)
    )
    for src, dst, kind, timing in dict.fromkeys(edges):
        style = "dashed" if kind == CONTROL else "solid"
        color = "blue" if timing == SEQUENTIAL else "black"
        lines.append(f'  "{src}" -> "{dst}" [kind="{kind}", timing="{timing}", style={style}, color={color}];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def _forwarding_source(g: DesignCdfg, drivers: List[GuardedAssignment]) -> Optional[str]:
    """The signal copied by a lone unguarded `x <= y` / `assign x = y`, if that is all that drives x."""
    if len(drivers) != 1 or drivers[0].guard or not isinstance(drivers[0].rhs, Ident):
        return None
    source = f"{drivers[0].module}.{drivers[0].rhs.name}"
    return source if source in g.graph else None


def effective_drivers(g: DesignCdfg, target: str, cap: int = DEFAULT_DEPTH_CAP) -> List[Tuple[GuardedAssignment, int]]:
    """
    Assignments that decide the value of `target`, looking through pure
    forwarding stages, each with the register stages between its right-hand
    side and `target`.
    """
    node = g.resolve(target)
    crossed = 0
    seen = {node}
    while True:
        drivers = guard_conditions(g, node)
        source = _forwarding_source(g, drivers)
        if source is None or source in seen or crossed + drivers[0].depth > cap:
            return [(driver, crossed + driver.depth) for driver in drivers]
        crossed += drivers[0].depth
        node = source
        seen.add(node)


def forwarding_chain(g: DesignCdfg, source: str, cap: int = DEFAULT_DEPTH_CAP) -> List[Tuple[str, int]]:
    """Signals that only copy `source` (directly or through other copies), with their stage counts."""
    start = g.resolve(source)
    copies: Dict[str, List[GuardedAssignment]] = {}
    for assignment in g.assignments:
        copies.setdefault(assignment.target, []).append(assignment)
    chain: List[Tuple[str, int]] = []
    frontier = [(start, 0)]
    seen = {start}
    while frontier:
        node, depth = frontier.pop(0)
        for succ in sorted(g.flow.successors(node)):
            if succ in seen or _forwarding_source(g, copies.get(succ, [])) != node:
                continue
            stage = depth + copies[succ][0].depth
            if stage > cap:
                continue
            seen.add(succ)
            chain.append((succ, stage))
            frontier.append((succ, stage))
    return chain
