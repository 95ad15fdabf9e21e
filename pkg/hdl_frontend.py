"""
Parsers for a synthesizable Verilog subset and a bounded SVA subset.

Both grammars are built with pyparsing and share one expression grammar.
Parse actions build frozen dataclasses; source spans are attached to
statements and module items and are ignored by structural equality.
"""
import json
import logging
import os
import re
import threading
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import pyparsing as pp

from exceptions import (
    HdlSyntaxError,
    UnresolvedIdentifier,
    UnsupportedConstruct,
    UnsupportedSvaFeature,
)
from expressions import (
    Binary,
    Concat,
    Const,
    Evaluator,
    Expr,
    Ident,
    Index,
    Past,
    Replicate,
    Slice,
    Span,
    SysCall,
    Ternary,
    Unary,
    map_expr,
    render,
    signals,
    walk,
)

pp.ParserElement.enable_packrat()

OVERLAPPED = "|->"
NON_OVERLAPPED = "|=>"

VERILOG_KEYWORDS = {
    "module", "endmodule", "input", "output", "inout", "wire", "reg", "signed",
    "assign", "always", "always_ff", "always_comb", "always_latch", "posedge",
    "negedge", "or", "begin", "end", "if", "else", "case", "casez", "casex",
    "endcase", "default", "parameter", "localparam", "initial", "function",
    "endfunction", "task", "endtask", "generate", "endgenerate", "integer",
    "genvar", "for", "while", "repeat", "forever", "specify", "endspecify",
    "assert", "property", "disable", "iff",
}

UNSUPPORTED_SVA_KEYWORDS = (
    "throughout", "within", "intersect", "until", "s_until", "until_with",
    "eventually", "s_eventually", "nexttime", "s_nexttime", "first_match",
    "always", "and", "or", "not", "implies", "iff", "strong", "weak",
)

DIRECTIVE = pp.Regex(
    r"`(timescale|include|define|undef|ifdef|ifndef|else|elsif|endif|default_nettype|resetall|celldefine|endcelldefine)\b[^\n]*"
)


# --- AST ---

@dataclass(frozen=True)
class SourceFile:
    path: str
    text: str


@dataclass(frozen=True)
class Port:
    name: str
    direction: str
    width: int


@dataclass(frozen=True)
class Net:
    name: str
    kind: str
    width: int
    msb: int = 0
    lsb: int = 0


@dataclass(frozen=True)
class Assign:
    lhs: Expr
    rhs: Expr
    blocking: bool
    span: Optional[Span] = field(default=None, compare=False)


@dataclass(frozen=True)
class If:
    cond: Expr
    then: object
    other: Optional[object] = None
    span: Optional[Span] = field(default=None, compare=False)


@dataclass(frozen=True)
class CaseItem:
    labels: Tuple[Expr, ...]
    body: object

    @property
    def is_default(self) -> bool:
        return not self.labels


@dataclass(frozen=True)
class Case:
    kind: str
    selector: Expr
    items: Tuple[CaseItem, ...]
    span: Optional[Span] = field(default=None, compare=False)


@dataclass(frozen=True)
class Block:
    stmts: Tuple[object, ...]
    label: Optional[str] = None
    span: Optional[Span] = field(default=None, compare=False)


@dataclass(frozen=True)
class Unsupported:
    construct: str
    span: Optional[Span] = field(default=None, compare=False)


@dataclass(frozen=True)
class Declaration:
    kind: str  # port | net | param
    names: Tuple[str, ...]
    inits: Tuple[Tuple[str, Expr], ...] = ()
    span: Optional[Span] = field(default=None, compare=False)


@dataclass(frozen=True)
class ContinuousAssign:
    assignments: Tuple[Assign, ...]
    span: Optional[Span] = field(default=None, compare=False)


@dataclass(frozen=True)
class Sensitivity:
    kind: str  # sequential | combinational
    edge: Optional[str] = None
    clock: Optional[str] = None
    resets: Tuple[Tuple[str, str], ...] = ()

    @property
    def is_sequential(self) -> bool:
        return self.kind == "sequential"


@dataclass(frozen=True)
class AlwaysBlock:
    sensitivity: Sensitivity
    body: object
    span: Optional[Span] = field(default=None, compare=False)


@dataclass(frozen=True)
class Instance:
    module: str
    name: str
    connections: Tuple[Tuple[Optional[str], Optional[Expr]], ...]
    span: Optional[Span] = field(default=None, compare=False)


@dataclass(frozen=True)
class ModuleAst:
    name: str
    file: str
    ports: Tuple[Port, ...]
    nets: Tuple[Net, ...]
    params: Tuple[Tuple[str, int], ...]
    items: Tuple[object, ...]
    span: Optional[Span] = field(default=None, compare=False)

    def net(self, name: str) -> Optional[Net]:
        for net in self.nets:
            if net.name == name:
                return net
        return None

    @property
    def widths(self) -> Dict[str, int]:
        return {net.name: net.width for net in self.nets}

    def port(self, name: str) -> Optional[Port]:
        for port in self.ports:
            if port.name == name:
                return port
        return None


@dataclass(frozen=True)
class DesignAst:
    modules: Tuple[ModuleAst, ...]
    unsupported: Tuple[UnsupportedConstruct, ...] = field(default=(), compare=False)
    sources: Tuple[SourceFile, ...] = field(default=(), compare=False)

    def module(self, name: str) -> ModuleAst:
        for module in self.modules:
            if module.name == name:
                return module
        raise KeyError(name)

    @property
    def top(self) -> Optional[ModuleAst]:
        """The first module that no other module instantiates."""
        instantiated = {
            item.module for module in self.modules for item in module.items if isinstance(item, Instance)
        }
        for module in self.modules:
            if module.name not in instantiated:
                return module
        return self.modules[0] if self.modules else None


@dataclass(frozen=True)
class ClockEvent:
    edge: str
    signal: str


@dataclass(frozen=True)
class SvaAssertion:
    """
    One SVA property: `antecedent IMPL ##d1 c1 ##d2 c2 ...`.

    `delays[i]` is the delay written before consequent term `i`; a bare
    property (no implication) has `antecedent is None`.
    """
    antecedent: Optional[Expr]
    implication: Optional[str]
    delays: Tuple[int, ...]
    consequent: Tuple[Expr, ...]
    clock: Optional[ClockEvent] = None
    disable: Optional[Expr] = None
    name: Optional[str] = field(default=None, compare=False)

    def offsets(self) -> Tuple[int, ...]:
        """Cycle offset of every consequent term relative to the antecedent cycle."""
        total = 1 if self.implication == NON_OVERLAPPED else 0
        result = []
        for delay in self.delays:
            total += delay
            result.append(total)
        return tuple(result)

    @property
    def window(self) -> int:
        return self.offsets()[-1]

    def antecedent_signals(self) -> Tuple[str, ...]:
        return signals(self.antecedent)

    def consequent_signals(self) -> Tuple[str, ...]:
        seen: Dict[str, None] = {}
        for term in self.consequent:
            for name in signals(term):
                seen.setdefault(name, None)
        return tuple(seen)

    def all_signals(self) -> Tuple[str, ...]:
        seen: Dict[str, None] = {}
        for name in self.antecedent_signals() + self.consequent_signals() + signals(self.disable):
            seen.setdefault(name, None)
        return tuple(seen)


# --- Raw parse products (resolved during elaboration) ---

@dataclass(frozen=True)
class _RawSlice(Expr):
    base: Expr
    msb: Expr
    lsb: Expr


@dataclass
class _Range:
    msb: Expr
    lsb: Expr


@dataclass
class _Declarator:
    name: str
    unpacked: bool
    init: Optional[Expr]


@dataclass
class _Event:
    edge: Optional[str]
    name: str


class _Star:
    pass


@dataclass
class _PortItem:
    direction: Optional[str]
    kind: Optional[str]
    rng: Optional[_Range]
    name: str


@dataclass
class _HeaderParam:
    name: str
    expr: Expr


@dataclass
class _Connection:
    port: Optional[str]
    expr: Optional[Expr]


@dataclass
class _Delay:
    cycles: int


@dataclass
class _Label:
    name: str


@dataclass
class _Disable:
    expr: Expr


@dataclass
class _PortDecl:
    direction: str
    kind: Optional[str]
    rng: Optional[_Range]
    names: List[str]
    span: Span


@dataclass
class _NetDecl:
    kind: str
    rng: Optional[_Range]
    declarators: List[_Declarator]
    span: Span


@dataclass
class _ParamDecl:
    assigns: List[Tuple[str, Expr]]
    span: Span


@dataclass
class _RawAlways:
    events: object
    body: object
    span: Span


@dataclass
class _RawModule:
    name: str
    header_params: List[_HeaderParam]
    port_items: List[_PortItem]
    items: List[object]
    span: Span


# --- Grammar ---

def _fold_left(tokens):
    items = tokens[0]
    result = items[0]
    for i in range(1, len(items), 2):
        result = Binary(items[i], result, items[i + 1])
    return result


def _fold_unary(tokens):
    op, operand = tokens[0][0], tokens[0][1]
    return Unary(op, operand)


def _fold_ternary(tokens):
    # c0 ? t0 : c1 ? t1 : e, right associative
    items = list(tokens[0])
    result = items[-1]
    i = len(items) - 5
    while i >= 0:
        result = Ternary(items[i], items[i + 2], result)
        i -= 4
    return result


def _sized_constant(tokens):
    match = re.match(r"(\d+)?\s*'\s*[sS]?([bBoOdDhH])\s*([0-9a-fA-FxXzZ_?]+)", tokens[0])
    width = int(match.group(1)) if match.group(1) else None
    base = {"b": 2, "o": 8, "d": 10, "h": 16}[match.group(2).lower()]
    digits = match.group(3).replace("_", "")
    # 2-state: x/z/? digits read as 0
    digits = re.sub(r"[xXzZ?]", "0", digits)
    value = int(digits, base)
    if width is not None:
        value &= (1 << width) - 1
    return Const(width, value)


class _Grammar:
    """
    Holds the pyparsing elements for one flavour (Verilog or SVA). Parse
    actions need the current file name for spans, so parses are serialised.
    """

    def __init__(self, sva: bool):
        self.sva = sva
        self.file = "<input>"
        self.lock = threading.Lock()
        self._build()

    def span(self, s: str, start: int, end: int) -> Span:
        last = max(start, end - 1)
        return Span(self.file, pp.lineno(start, s), pp.lineno(last, s), start, end)

    def located(self, expr: pp.ParserElement, builder) -> pp.ParserElement:
        def action(s, loc, tokens):
            start, inner, end = tokens[0], tokens[1], tokens[2]
            return builder(list(inner), self.span(s, start, end))

        return pp.Located(expr).set_parse_action(action)

    def _build(self):
        LPAR, RPAR, LBRACK, RBRACK, LBRACE, RBRACE, SEMI, COLON = map(pp.Suppress, "()[]{};:")
        K = {word: pp.Keyword(word) for word in VERILOG_KEYWORDS}
        S = {word: pp.Suppress(pp.Keyword(word)) for word in VERILOG_KEYWORDS}

        ident = pp.Regex(r"[A-Za-z_][A-Za-z0-9_$]*").add_condition(lambda t: t[0] not in VERILOG_KEYWORDS)
        ident.set_name("identifier")
        self.ident = ident

        sized = pp.Regex(r"(\d+)?\s*'\s*[sS]?[bBoOdDhH]\s*[0-9a-fA-FxXzZ_?]+").set_parse_action(_sized_constant)
        unsized = pp.Regex(r"\d[\d_]*").set_parse_action(lambda t: Const(None, int(t[0].replace("_", ""))))
        number = (sized | unsized).set_name("number")

        expr = pp.Forward().set_name("expression")
        select = LBRACK + expr + pp.Opt(COLON + expr) + RBRACK

        def ident_ref_action(tokens):
            base = Ident(tokens[0])
            if len(tokens) == 2:
                return Index(base, tokens[1])
            if len(tokens) == 3:
                return _RawSlice(base, tokens[1], tokens[2])
            return base

        ident_ref = (ident + pp.Opt(select)).set_parse_action(ident_ref_action)
        concat = (LBRACE + pp.DelimitedList(expr) + RBRACE).set_parse_action(lambda t: Concat(tuple(t)))

        def replicate_action(tokens):
            count = tokens[0]
            if not isinstance(count, Const):
                raise pp.ParseException("", 0, "replication count must be a constant")
            return Replicate(count.value, tokens[1])

        replicate = (LBRACE + expr + concat + RBRACE).set_parse_action(replicate_action)

        operands = [number]
        if self.sva:
            sysname = pp.Regex(r"\$[A-Za-z_]\w*")
            syscall = (sysname + LPAR + pp.DelimitedList(expr) + RPAR).set_parse_action(self._system_call)
            operands.append(syscall)
        operands += [replicate, concat, ident_ref]
        primary = pp.MatchFirst(operands)

        unary_op = pp.Regex(r"~&|~\||~\^|~|!(?!=)|&(?!&)|\|(?![|=\-])|\^(?!~)|-|\+")
        expr <<= pp.infix_notation(
            primary,
            [
                (unary_op, 1, pp.OpAssoc.RIGHT, _fold_unary),
                (pp.one_of("* / %"), 2, pp.OpAssoc.LEFT, _fold_left),
                (pp.Regex(r"[+-](?!>)"), 2, pp.OpAssoc.LEFT, _fold_left),
                (pp.one_of("<<< >>> << >>"), 2, pp.OpAssoc.LEFT, _fold_left),
                (pp.one_of("<= >= < >"), 2, pp.OpAssoc.LEFT, _fold_left),
                (pp.one_of("=== !== == !="), 2, pp.OpAssoc.LEFT, _fold_left),
                (pp.Regex(r"&(?!&)"), 2, pp.OpAssoc.LEFT, _fold_left),
                (pp.Regex(r"\^~|~\^|\^"), 2, pp.OpAssoc.LEFT, _fold_left),
                (pp.Regex(r"\|(?![|=\-])"), 2, pp.OpAssoc.LEFT, _fold_left),
                (pp.Literal("&&"), 2, pp.OpAssoc.LEFT, _fold_left),
                (pp.Literal("||"), 2, pp.OpAssoc.LEFT, _fold_left),
                (("?", ":"), 3, pp.OpAssoc.RIGHT, _fold_ternary),
            ],
        )
        self.expr = expr

        if self.sva:
            self._build_sva(expr, ident, LPAR, RPAR, SEMI, COLON, K, S)
        else:
            self._build_verilog(expr, ident, ident_ref, concat, LPAR, RPAR, LBRACK, RBRACK, SEMI, COLON, K, S)

    # --- SVA ---

    def _system_call(self, tokens):
        name, args = tokens[0], list(tokens[1:])
        if name == "$past":
            if len(args) > 2:
                raise UnsupportedSvaFeature("$past with gating clock", name)
            depth = 1
            if len(args) == 2:
                if not isinstance(args[1], Const):
                    raise UnsupportedSvaFeature("non-constant $past depth", name)
                depth = args[1].value
            if depth < 1:
                raise HdlSyntaxError("$past depth must be at least 1", self.file)
            return Past(args[0], depth)
        if name in ("$rose", "$fell", "$stable") and len(args) == 1:
            return SysCall(name, args[0])
        raise UnsupportedSvaFeature(name)

    def _build_sva(self, expr, ident, LPAR, RPAR, SEMI, COLON, K, S):
        AT = pp.Suppress("@")
        clock = (AT + LPAR + (K["posedge"] | K["negedge"]) + ident + RPAR).set_parse_action(
            lambda t: ClockEvent(t[0], t[1])
        )
        disable = (S["disable"] + S["iff"] + LPAR + expr + RPAR).set_parse_action(lambda t: _Disable(t[0]))
        delay = (pp.Suppress("##") + pp.Regex(r"\d+")).set_parse_action(lambda t: _Delay(int(t[0])))
        sequence = pp.Opt(delay) + expr + pp.ZeroOrMore(delay + expr)
        implication = pp.Literal(OVERLAPPED) | pp.Literal(NON_OVERLAPPED)
        body = pp.Opt(expr + implication) + sequence
        prop = pp.Opt(clock) + pp.Opt(disable) + body
        label = (ident + COLON).set_parse_action(lambda t: _Label(t[0]))
        wrapped = pp.Opt(label) + S["assert"] + S["property"] + LPAR + prop + RPAR + pp.Opt(SEMI)
        bare = prop + pp.Opt(SEMI)
        self.assertion = (wrapped | bare) + pp.StringEnd()
        self.assertion.ignore(pp.cpp_style_comment)

    # --- Verilog ---

    def _build_verilog(self, expr, ident, ident_ref, concat, LPAR, RPAR, LBRACK, RBRACK, SEMI, COLON, K, S):
        EQ = pp.Suppress(pp.Regex(r"=(?!=)"))
        delay = pp.Suppress(pp.Regex(r"#\s*\d+(\.\d+)?"))
        range_ = (LBRACK + expr + COLON + expr + RBRACK).set_parse_action(lambda t: _Range(t[0], t[1]))
        lvalue = ident_ref | concat

        stmt = pp.Forward().set_name("statement")

        nonblocking = self.located(
            lvalue + pp.Suppress("<=") + pp.Opt(delay) + expr + SEMI,
            lambda t, span: Assign(t[0], t[1], False, span),
        )
        blocking = self.located(
            lvalue + EQ + pp.Opt(delay) + expr + SEMI,
            lambda t, span: Assign(t[0], t[1], True, span),
        )
        if_stmt = self.located(
            S["if"] + LPAR + expr + RPAR + stmt + pp.Opt(S["else"] + stmt),
            lambda t, span: If(t[0], t[1], t[2] if len(t) > 2 else None, span),
        )
        default_item = (S["default"] + pp.Opt(COLON) + stmt).set_parse_action(lambda t: CaseItem((), t[0]))
        label_item = (pp.Group(pp.DelimitedList(expr)) + COLON + stmt).set_parse_action(
            lambda t: CaseItem(tuple(t[0]), t[1])
        )
        case_stmt = self.located(
            (K["case"] | K["casez"] | K["casex"]) + LPAR + expr + RPAR
            + pp.OneOrMore(default_item | label_item) + S["endcase"],
            lambda t, span: Case(t[0], t[1], tuple(t[2:]), span),
        )

        def block_builder(tokens, span):
            label = tokens[0] if tokens and isinstance(tokens[0], str) else None
            stmts = tokens[1:] if label is not None else tokens
            return Block(tuple(stmts), label, span)

        block = self.located(
            S["begin"] + pp.Opt(COLON + ident) + pp.ZeroOrMore(stmt) + S["end"],
            block_builder,
        )
        null_stmt = self.located(SEMI, lambda t, span: Block((), None, span))
        loop = self.located(
            (K["for"] | K["while"] | K["repeat"]) + pp.Suppress(pp.nested_expr()) + stmt,
            lambda t, span: Unsupported(f"{t[0]} loop", span),
        )
        forever = self.located(K["forever"] + stmt, lambda t, span: Unsupported("forever", span))
        system_task = self.located(
            pp.Regex(r"\$[A-Za-z_]\w*") + pp.Opt(pp.Suppress(pp.nested_expr())) + SEMI,
            lambda t, span: Unsupported(f"system task {t[0]}", span),
        )
        stmt <<= if_stmt | case_stmt | block | loop | forever | system_task | nonblocking | blocking | null_stmt
        self.statement = stmt + pp.StringEnd()

        direction = K["input"] | K["output"] | K["inout"]
        net_kind = K["wire"] | K["reg"]
        signed = pp.Suppress(K["signed"])

        def port_decl_builder(tokens, span):
            rng = next((t for t in tokens if isinstance(t, _Range)), None)
            kind = next((t for t in tokens[1:] if t in ("wire", "reg")), None)
            names = [t for t in tokens[1:] if isinstance(t, str) and t not in ("wire", "reg")]
            return _PortDecl(tokens[0], kind, rng, names, span)

        port_decl = self.located(
            direction + pp.Opt(net_kind) + pp.Opt(signed) + pp.Opt(range_) + pp.DelimitedList(ident) + SEMI,
            port_decl_builder,
        )

        declarator = (ident + pp.Opt(range_) + pp.Opt(EQ + expr)).set_parse_action(
            lambda t: _Declarator(
                t[0],
                any(isinstance(x, _Range) for x in t[1:]),
                next((x for x in t[1:] if isinstance(x, Expr)), None),
            )
        )

        def net_decl_builder(tokens, span):
            rng = tokens[1] if len(tokens) > 1 and isinstance(tokens[1], _Range) else None
            declarators = [t for t in tokens if isinstance(t, _Declarator)]
            return _NetDecl(tokens[0], rng, declarators, span)

        net_decl = self.located(
            net_kind + pp.Opt(signed) + pp.Opt(range_) + pp.DelimitedList(declarator) + SEMI,
            net_decl_builder,
        )
        param_assign = (ident + EQ + expr).set_parse_action(lambda t: _HeaderParam(t[0], t[1]))
        param_decl = self.located(
            (S["parameter"] | S["localparam"]) + pp.Opt(signed) + pp.Opt(pp.Suppress(range_))
            + pp.DelimitedList(param_assign) + SEMI,
            lambda t, span: _ParamDecl([(p.name, p.expr) for p in t], span),
        )
        assign_pair = (lvalue + EQ + expr).set_parse_action(lambda t: Assign(t[0], t[1], True))
        assign_item = self.located(
            S["assign"] + pp.Opt(delay) + pp.DelimitedList(assign_pair) + SEMI,
            lambda t, span: ContinuousAssign(tuple(replace(a, span=span) for a in t), span),
        )

        AT = pp.Suppress("@")
        event = (pp.Opt(K["posedge"] | K["negedge"]) + ident).set_parse_action(
            lambda t: _Event(t[0], t[1]) if len(t) == 2 else _Event(None, t[0])
        )
        star = ((AT + LPAR + pp.Suppress("*") + RPAR) | (AT + pp.Suppress("*"))).set_parse_action(lambda: _Star())
        event_list = AT + LPAR + event + pp.ZeroOrMore(pp.Suppress(K["or"] | pp.Literal(",")) + event) + RPAR
        always = self.located(
            (S["always"] | S["always_ff"] | S["always_latch"]) + (star | event_list) + stmt,
            lambda t, span: _RawAlways(t[:-1], t[-1], span),
        )
        always_comb = self.located(S["always_comb"] + stmt, lambda t, span: _RawAlways([_Star()], t[0], span))
        always_delay = self.located(
            S["always"] + delay + stmt, lambda t, span: Unsupported("always with delay control", span)
        )
        connection = (pp.Suppress(".") + ident + LPAR + pp.Opt(expr) + RPAR).set_parse_action(
            lambda t: _Connection(t[0], t[1] if len(t) > 1 else None)
        )
        positional = (pp.Empty() + expr).set_parse_action(lambda t: _Connection(None, t[0]))
        instance = self.located(
            ident + pp.Opt(pp.Suppress("#") + pp.Suppress(pp.nested_expr())) + ident + LPAR
            + pp.Opt(pp.DelimitedList(connection) | pp.DelimitedList(positional)) + RPAR + SEMI,
            lambda t, span: Instance(
                t[0], t[1], tuple((c.port, c.expr) for c in t[2:]), span
            ),
        )
        initial = self.located(K["initial"] + stmt, lambda t, span: Unsupported("initial", span))
        skipped = []
        for opener, closer in (("function", "endfunction"), ("task", "endtask"), ("generate", "endgenerate"),
                               ("specify", "endspecify")):
            skipped.append(self.located(
                K[opener] + pp.SkipTo(K[closer]) + K[closer],
                lambda t, span: Unsupported(t[0], span),
            ))
        other_decl = self.located(
            (K["integer"] | K["genvar"]) + pp.SkipTo(SEMI) + SEMI,
            lambda t, span: Unsupported(f"{t[0]} declaration", span),
        )
        item = pp.MatchFirst(
            [port_decl, net_decl, param_decl, assign_item, always_delay, always, always_comb, initial, other_decl]
            + skipped
            + [instance]
        )

        header_param = (pp.Opt(S["parameter"]) + pp.Opt(pp.Suppress(range_)) + ident + EQ + expr).set_parse_action(
            lambda t: _HeaderParam(t[0], t[1])
        )
        param_ports = pp.Suppress("#") + LPAR + pp.DelimitedList(header_param) + RPAR

        def port_item_action(tokens):
            direction = next((t for t in tokens if t in ("input", "output", "inout")), None)
            kind = next((t for t in tokens if t in ("wire", "reg")), None)
            rng = next((t for t in tokens if isinstance(t, _Range)), None)
            return _PortItem(direction, kind, rng, tokens[-1])

        port_item = (pp.Opt(direction) + pp.Opt(net_kind) + pp.Opt(signed) + pp.Opt(range_) + ident).set_parse_action(
            port_item_action
        )
        port_list = LPAR + pp.Opt(pp.DelimitedList(port_item)) + RPAR

        def module_builder(tokens, span):
            name = tokens[0]
            header_params = [t for t in tokens if isinstance(t, _HeaderParam)]
            port_items = [t for t in tokens if isinstance(t, _PortItem)]
            items = [t for t in tokens[1:] if not isinstance(t, (_HeaderParam, _PortItem))]
            return _RawModule(name, header_params, port_items, items, span)

        module = self.located(
            S["module"] + ident - (pp.Opt(param_ports) + pp.Opt(port_list) + SEMI + pp.ZeroOrMore(item) + S["endmodule"]),
            module_builder,
        )
        self.source = pp.ZeroOrMore(module) + pp.StringEnd()
        for element in (self.source, self.statement):
            element.ignore(pp.cpp_style_comment)
            element.ignore(DIRECTIVE)

    def parse(self, element: pp.ParserElement, text: str, file: str):
        with self.lock:
            self.file = file
            try:
                return element.parse_string(text, parse_all=True)
            except pp.ParseBaseException as e:
                logging.error(f"Parse error in {file} at line {e.lineno}, column {e.col}: {e.msg}")
                raise HdlSyntaxError("syntax error", file, e.lineno, e.col, e.msg.replace("Expected ", "")) from e


_grammars: Dict[bool, _Grammar] = {}
_grammar_lock = threading.Lock()


def _grammar(sva: bool) -> _Grammar:
    with _grammar_lock:
        if sva not in _grammars:
            _grammars[sva] = _Grammar(sva)
        return _grammars[sva]


# --- Elaboration ---

class _ConstEvaluator(Evaluator):
    def __init__(self, params: Dict[str, int], module: str):
        self.params = params
        self.module = module

    def read(self, name: str, cycle: int) -> Optional[int]:
        if name not in self.params:
            raise UnresolvedIdentifier(name, self.module)
        return self.params[name]

    def signal_width(self, name: str) -> int:
        return 32


def _const_int(expr: Expr, params: Dict[str, int], module: str) -> int:
    value = _ConstEvaluator(params, module).evaluate(expr, 0)
    if value is None:
        raise HdlSyntaxError(f"constant expression {render(expr)} is not defined", module)
    return value


def _range_bounds(rng: Optional[_Range], params: Dict[str, int], module: str) -> Tuple[int, int]:
    if rng is None:
        return 0, 0
    return _const_int(rng.msb, params, module), _const_int(rng.lsb, params, module)


class _Elaborator:
    """Single-level parameter substitution, declaration tables and identifier checks."""

    def __init__(self, raw: _RawModule, strict: bool):
        self.raw = raw
        self.strict = strict
        self.params: Dict[str, int] = {}
        self.nets: Dict[str, Net] = {}
        self.ports: Dict[str, Port] = {}
        self.port_order: List[str] = []
        self.unsupported: List[UnsupportedConstruct] = []

    def report(self, construct: str, span: Optional[Span]):
        error = UnsupportedConstruct(construct, span)
        if self.strict:
            raise error
        logging.warning(f"Skipping unsupported construct in module '{self.raw.name}': {error}")
        self.unsupported.append(error)

    def substitute(self, expr: Expr) -> Expr:
        def fn(node: Expr) -> Optional[Expr]:
            if isinstance(node, Ident) and node.name in self.params and node.name not in self.nets:
                return Const(None, self.params[node.name])
            if isinstance(node, _RawSlice):
                msb = _const_int(self.substitute(node.msb), self.params, self.raw.name)
                lsb = _const_int(self.substitute(node.lsb), self.params, self.raw.name)
                return Slice(self.substitute(node.base), msb, lsb)
            return None

        return map_expr(expr, fn)

    def declare(self, name: str, kind: str, rng: Optional[_Range]):
        msb, lsb = _range_bounds(rng, self.params, self.raw.name)
        width = abs(msb - lsb) + 1
        existing = self.nets.get(name)
        if existing is not None and rng is None:
            width, msb, lsb = existing.width, existing.msb, existing.lsb
        if existing is not None and existing.kind == "reg":
            kind = "reg"
        self.nets[name] = Net(name, kind, width, msb, lsb)
        return width

    def add_port(self, name: str, direction: str, kind: Optional[str], rng: Optional[_Range]):
        width = self.declare(name, kind or "wire", rng)
        if name not in self.port_order:
            self.port_order.append(name)
        self.ports[name] = Port(name, direction, width)

    def elaborate(self) -> ModuleAst:
        raw = self.raw
        for param in raw.header_params:
            self.params[param.name] = _const_int(param.expr, self.params, raw.name)
        for item in raw.items:
            if isinstance(item, _ParamDecl):
                for name, value in item.assigns:
                    self.params[name] = _const_int(value, self.params, raw.name)

        direction, kind, rng = None, None, None
        for port in raw.port_items:
            if port.direction is not None:
                direction, kind, rng = port.direction, port.kind, port.rng
            elif port.kind is not None or port.rng is not None:
                kind, rng = port.kind, port.rng
            if direction is None:
                self.port_order.append(port.name)
                continue
            self.add_port(port.name, direction, kind, rng)

        items: List[object] = []
        for item in raw.items:
            if isinstance(item, _PortDecl):
                for name in item.names:
                    self.add_port(name, item.direction, item.kind, item.rng)
                items.append(Declaration("port", tuple(item.names), (), item.span))
            elif isinstance(item, _NetDecl):
                inits = []
                for declarator in item.declarators:
                    if declarator.unpacked:
                        self.report("memory declaration", item.span)
                        continue
                    self.declare(declarator.name, item.kind, item.rng)
                    if declarator.init is not None:
                        inits.append((declarator.name, declarator.init))
                names = tuple(d.name for d in item.declarators if not d.unpacked)
                if names:
                    items.append(Declaration("net", names, tuple(inits), item.span))
            elif isinstance(item, _ParamDecl):
                items.append(Declaration("param", tuple(name for name, _ in item.assigns), (), item.span))
            elif isinstance(item, Unsupported):
                self.report(item.construct, item.span)
            else:
                items.append(item)

        missing_ports = [name for name in self.port_order if name not in self.ports]
        if missing_ports:
            raise UnresolvedIdentifier(missing_ports[0], raw.name, raw.span)

        resolved = []
        for item in items:
            resolved_item = self.resolve_item(item)
            if resolved_item is not None:
                resolved.append(resolved_item)

        return ModuleAst(
            name=raw.name,
            file=raw.span.file,
            ports=tuple(self.ports[name] for name in self.port_order),
            nets=tuple(self.nets.values()),
            params=tuple(self.params.items()),
            items=tuple(resolved),
            span=raw.span,
        )

    def check(self, expr: Expr, span: Optional[Span]) -> Expr:
        expr = self.substitute(expr)
        for node in walk(expr):
            if isinstance(node, Ident) and node.name not in self.nets:
                raise UnresolvedIdentifier(node.name, self.raw.name, span)
        return expr

    def resolve_stmt(self, stmt):
        if isinstance(stmt, Assign):
            return replace(stmt, lhs=self.check(stmt.lhs, stmt.span), rhs=self.check(stmt.rhs, stmt.span))
        if isinstance(stmt, If):
            other = self.resolve_stmt(stmt.other) if stmt.other is not None else None
            return replace(stmt, cond=self.check(stmt.cond, stmt.span), then=self.resolve_stmt(stmt.then), other=other)
        if isinstance(stmt, Case):
            items = tuple(
                CaseItem(tuple(self.check(label, stmt.span) for label in item.labels), self.resolve_stmt(item.body))
                for item in stmt.items
            )
            return replace(stmt, selector=self.check(stmt.selector, stmt.span), items=items)
        if isinstance(stmt, Block):
            return replace(stmt, stmts=tuple(self.resolve_stmt(s) for s in stmt.stmts))
        if isinstance(stmt, Unsupported):
            self.report(stmt.construct, stmt.span)
            return Block((), None, stmt.span)
        raise TypeError(f"Unexpected statement {stmt!r}")

    def resolve_item(self, item):
        if isinstance(item, Declaration):
            if item.inits:
                inits = tuple((name, self.check(value, item.span)) for name, value in item.inits)
                return replace(item, inits=inits)
            return item
        if isinstance(item, ContinuousAssign):
            return replace(item, assignments=tuple(self.resolve_stmt(a) for a in item.assignments))
        if isinstance(item, _RawAlways):
            sensitivity = self.classify(item)
            if sensitivity is None:
                return None
            return AlwaysBlock(sensitivity, self.resolve_stmt(item.body), item.span)
        if isinstance(item, Instance):
            connections = tuple(
                (port, self.check(value, item.span) if value is not None else None)
                for port, value in item.connections
            )
            return replace(item, connections=connections)
        raise TypeError(f"Unexpected module item {item!r}")

    def classify(self, item: _RawAlways) -> Optional[Sensitivity]:
        events = list(item.events)
        if any(isinstance(e, _Star) for e in events) or all(e.edge is None for e in events):
            for e in events:
                if isinstance(e, _Event) and e.name not in self.nets:
                    raise UnresolvedIdentifier(e.name, self.raw.name, item.span)
            return Sensitivity("combinational")
        if any(e.edge is None for e in events):
            self.report("mixed edge and level sensitivity", item.span)
            return None
        for e in events:
            if e.name not in self.nets:
                raise UnresolvedIdentifier(e.name, self.raw.name, item.span)
        if len(events) == 1:
            return Sensitivity("sequential", events[0].edge, events[0].name)
        body = item.body
        while isinstance(body, Block) and len(body.stmts) == 1:
            body = body.stmts[0]
        tested = set(signals(body.cond)) if isinstance(body, If) else set()
        resets = [e for e in events if e.name in tested]
        clocks = [e for e in events if e.name not in tested]
        if len(clocks) != 1:
            self.report("multi-clock always block", item.span)
            return None
        return Sensitivity(
            "sequential", clocks[0].edge, clocks[0].name, tuple((e.edge, e.name) for e in resets)
        )


# --- Public API ---

def _as_source(source: Union[str, SourceFile], index: int) -> SourceFile:
    if isinstance(source, SourceFile):
        return source
    return SourceFile(f"<source{index}>", source)


def parse_design(sources: Sequence[Union[str, SourceFile]], strict: bool = False) -> DesignAst:
    """
    Parses Verilog sources into a DesignAst.

    Unsupported constructs raise UnsupportedConstruct when `strict`, otherwise
    they are logged, skipped and listed in `DesignAst.unsupported`.
    """
    grammar = _grammar(sva=False)
    modules: List[ModuleAst] = []
    unsupported: List[UnsupportedConstruct] = []
    files: List[SourceFile] = []
    for index, source in enumerate(sources):
        source = _as_source(source, index)
        files.append(source)
        logging.info(f"Parsing Verilog source {source.path}")
        for raw in grammar.parse(grammar.source, source.text, source.path):
            elaborator = _Elaborator(raw, strict)
            modules.append(elaborator.elaborate())
            unsupported.extend(elaborator.unsupported)

    by_name = {module.name: module for module in modules}
    linked = []
    for module in modules:
        items = []
        for item in module.items:
            if isinstance(item, Instance):
                child = by_name.get(item.module)
                if child is None:
                    raise UnresolvedIdentifier(item.module, module.name, item.span)
                item = _bind_ports(item, child)
            items.append(item)
        linked.append(replace(module, items=tuple(items)))
    logging.info(f"Parsed {len(linked)} module(s), {len(unsupported)} unsupported construct(s)")
    return DesignAst(tuple(linked), tuple(unsupported), tuple(files))


def _bind_ports(instance: Instance, child: ModuleAst) -> Instance:
    bound = []
    for position, (port, value) in enumerate(instance.connections):
        if port is None:
            if position >= len(child.ports):
                raise UnresolvedIdentifier(f"port #{position}", child.name, instance.span)
            port = child.ports[position].name
        elif child.port(port) is None:
            raise UnresolvedIdentifier(port, child.name, instance.span)
        bound.append((port, value))
    return replace(instance, connections=tuple(bound))


def load_design(paths: Iterable[str], strict: bool = False) -> DesignAst:
    sources = []
    for path in paths:
        with open(path, "r", encoding="utf-8") as f:
            sources.append(SourceFile(path, f.read()))
    return parse_design(sources, strict=strict)


def map_statement(stmt, fn):
    """Applies `fn` to every expression of a procedural statement."""
    if isinstance(stmt, Assign):
        return replace(stmt, lhs=fn(stmt.lhs), rhs=fn(stmt.rhs))
    if isinstance(stmt, If):
        other = map_statement(stmt.other, fn) if stmt.other is not None else None
        return replace(stmt, cond=fn(stmt.cond), then=map_statement(stmt.then, fn), other=other)
    if isinstance(stmt, Case):
        items = tuple(
            CaseItem(tuple(fn(label) for label in item.labels), map_statement(item.body, fn)) for item in stmt.items
        )
        return replace(stmt, selector=fn(stmt.selector), items=items)
    if isinstance(stmt, Block):
        return replace(stmt, stmts=tuple(map_statement(s, fn) for s in stmt.stmts))
    return stmt


def parse_statement(text: str, file: str = "<statement>"):
    """Parses one procedural statement (used to re-read a span of source text)."""
    grammar = _grammar(sva=False)
    result = grammar.parse(grammar.statement, text, file)[0]
    return map_statement(result, _resolve_constant_slices)


def _check_sva_subset(text: str):
    if re.search(r"##\s*\[", text):
        raise UnsupportedSvaFeature("ranged delay ##[m:n]", text)
    if re.search(r"\[\s*(\*|=|->)", text):
        raise UnsupportedSvaFeature("repetition operator", text)
    for keyword in UNSUPPORTED_SVA_KEYWORDS:
        # 'disable iff' is part of the subset
        pattern = rf"(?<![\w$]){keyword}(?![\w$])"
        stripped = re.sub(r"disable\s+iff", "", text)
        if re.search(pattern, stripped):
            raise UnsupportedSvaFeature(keyword, text)
    implications = re.findall(r"\|->|\|=>", text)
    if len(implications) > 1:
        raise UnsupportedSvaFeature("nested implication", text)
    if implications:
        head = text[: text.index(implications[0])]
        if "##" in head:
            raise UnsupportedSvaFeature("sequence antecedent", text)


def parse_assertion(text: str, name: Optional[str] = None) -> SvaAssertion:
    _check_sva_subset(text)
    grammar = _grammar(sva=True)
    tokens = list(grammar.parse(grammar.assertion, text.strip(), name or "<assertion>"))

    label, clock, disable = None, None, None
    antecedent, implication = None, None
    delays: List[int] = []
    terms: List[Expr] = []
    pending_delay: Optional[int] = None
    for token in tokens:
        if isinstance(token, ClockEvent):
            clock = token
        elif isinstance(token, _Label):
            label = token.name
        elif isinstance(token, _Disable):
            disable = _resolve_constant_slices(token.expr)
        elif isinstance(token, _Delay):
            pending_delay = token.cycles
        elif isinstance(token, str) and token in (OVERLAPPED, NON_OVERLAPPED):
            antecedent, implication = terms.pop(), token
            delays.clear()
        elif isinstance(token, Expr):
            delays.append(pending_delay or 0)
            terms.append(_resolve_constant_slices(token))
            pending_delay = None
    return SvaAssertion(
        antecedent=antecedent,
        implication=implication,
        delays=tuple(delays),
        consequent=tuple(terms),
        clock=clock,
        disable=disable,
        name=name or label,
    )


def _resolve_constant_slices(expr: Expr) -> Expr:
    def fn(node: Expr) -> Optional[Expr]:
        if isinstance(node, _RawSlice):
            if not isinstance(node.msb, Const) or not isinstance(node.lsb, Const):
                raise HdlSyntaxError("part-select bounds must be constants")
            return Slice(_resolve_constant_slices(node.base), node.msb.value, node.lsb.value)
        return None

    return map_expr(expr, fn)


def _render_term(expr: Expr) -> str:
    text = render(expr)
    return f"({text})" if isinstance(expr, (Binary, Ternary)) else text


def render_property(a: SvaAssertion) -> str:
    if a.antecedent is None and a.delays == (0,):
        return render(a.consequent[0])
    parts = []
    for i, (delay, term) in enumerate(zip(a.delays, a.consequent)):
        prefix = "" if i == 0 and delay == 0 else f"##{delay} "
        parts.append(prefix + _render_term(term))
    sequence = " ".join(parts)
    if a.antecedent is None:
        return sequence
    return f"{_render_term(a.antecedent)} {a.implication} {sequence}"


def render_assertion(a: SvaAssertion) -> str:
    """
    Renders the assertion as `assert property (...)` when it carries a clock,
    as a bare property otherwise.
    """
    body = render_property(a)
    if a.disable is not None:
        body = f"disable iff ({render(a.disable)}) {body}"
    if a.clock is None:
        return body
    label = f"{a.name}: " if a.name else ""
    return f"{label}assert property (@({a.clock.edge} {a.clock.signal}) {body});"


LEADING_LABEL = re.compile(r"^\s*([A-Za-z_][\w$]*)\s*:(?!:)")


@dataclass(frozen=True)
class AssertionEntry:
    """One unparsed entry of an assertion list, already named."""
    name: str
    text: str

    def parse(self) -> SvaAssertion:
        return parse_assertion(self.text, self.name)


def load_assertion_entries(path: str) -> List[AssertionEntry]:
    """
    Reads an assertion list without parsing it: a JSON array of {name, text}
    objects, or one assertion per line (blank lines and // comments skipped).
    Unnamed entries take their `name:` label, else `assert_<position>`.
    """
    with open(path, "r", encoding="utf-8") as f:
        content = f.read()
    raw: List[Tuple[Optional[str], str]] = []
    if content.lstrip().startswith("["):
        for entry in json.loads(content):
            raw.append((entry.get("name"), entry["text"]))
    else:
        for line in content.splitlines():
            line = line.strip()
            if not line or line.startswith("//"):
                continue
            raw.append((None, line))

    entries = []
    for position, (name, text) in enumerate(raw):
        if not name:
            label = LEADING_LABEL.match(text)
            name = label.group(1) if label else f"assert_{position}"
        entries.append(AssertionEntry(name, text))
    return entries


def load_assertion_list(path: str) -> List[SvaAssertion]:
    """Reads and parses a whole assertion list; the first bad entry raises."""
    assertions = [entry.parse() for entry in load_assertion_entries(path)]
    logging.info(f"Loaded {len(assertions)} assertion(s) from {os.path.basename(path)}")
    return assertions


# --- Signal sets for chunking and graph construction ---

def lhs_targets(lhs: Expr) -> Tuple[str, ...]:
    if isinstance(lhs, Ident):
        return (lhs.name,)
    if isinstance(lhs, (Index, Slice)):
        return lhs_targets(lhs.base)
    if isinstance(lhs, Concat):
        return tuple(name for item in lhs.items for name in lhs_targets(item))
    return ()


def lhs_reads(lhs: Expr) -> Tuple[str, ...]:
    """Signals read by index expressions on an assignment target."""
    if isinstance(lhs, Index):
        return signals(lhs.index)
    if isinstance(lhs, Concat):
        return tuple(name for item in lhs.items for name in lhs_reads(item))
    return ()


def statement_signals(stmt) -> Tuple[set, set]:
    defined: set = set()
    used: set = set()
    if isinstance(stmt, Assign):
        defined.update(lhs_targets(stmt.lhs))
        used.update(signals(stmt.rhs))
        used.update(lhs_reads(stmt.lhs))
    elif isinstance(stmt, If):
        used.update(signals(stmt.cond))
        for branch in (stmt.then, stmt.other):
            if branch is not None:
                d, u = statement_signals(branch)
                defined |= d
                used |= u
    elif isinstance(stmt, Case):
        used.update(signals(stmt.selector))
        for item in stmt.items:
            for label in item.labels:
                used.update(signals(label))
            d, u = statement_signals(item.body)
            defined |= d
            used |= u
    elif isinstance(stmt, Block):
        for inner in stmt.stmts:
            d, u = statement_signals(inner)
            defined |= d
            used |= u
    return defined, used


def item_signals(item, design: Optional[DesignAst] = None) -> Tuple[set, set]:
    """(defined, used) signal names of one module item."""
    if isinstance(item, Declaration):
        defined = {name for name, _ in item.inits}
        used = {name for _, value in item.inits for name in signals(value)}
        return defined, used
    if isinstance(item, ContinuousAssign):
        defined, used = set(), set()
        for assign in item.assignments:
            d, u = statement_signals(assign)
            defined |= d
            used |= u
        return defined, used
    if isinstance(item, AlwaysBlock):
        defined, used = statement_signals(item.body)
        if item.sensitivity.clock:
            used.add(item.sensitivity.clock)
        used.update(name for _, name in item.sensitivity.resets)
        return defined, used
    if isinstance(item, Instance):
        defined, used = set(), set()
        child = None
        if design is not None:
            try:
                child = design.module(item.module)
            except KeyError:
                child = None
        for port, value in item.connections:
            if value is None:
                continue
            direction = child.port(port).direction if child is not None and child.port(port) else "input"
            if direction == "output":
                defined.update(lhs_targets(value))
            else:
                used.update(signals(value))
        return defined, used
    return set(), set()
