"""
Expression trees shared by the Verilog frontend, the CDFG, the SVA evaluator
and the repair strategies.

Values are 2-state integers at their declared width; `None` stands for an
unknown (X/Z in a trace, or a `$past` read before the first cycle).
"""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Set, Tuple

# Sized constants render as binary up to this width, hex above it.
BINARY_RENDER_MAX_WIDTH = 8
UNSIZED_WIDTH = 32

COMPARISON_OPS = {"==", "!=", "===", "!==", "<", "<=", ">", ">="}
LOGICAL_OPS = {"&&", "||"}
BITWISE_OPS = {"&", "|", "^", "^~", "~^"}
ARITH_OPS = {"+", "-", "*", "/", "%"}
SHIFT_OPS = {"<<", ">>", "<<<", ">>>"}
REDUCTION_OPS = {"&", "|", "^", "~&", "~|", "~^"}
TEMPORAL_FUNCTIONS = {"$rose", "$fell", "$stable"}


@dataclass(frozen=True)
class Span:
    file: str
    start_line: int
    end_line: int
    start: int = 0
    end: int = 0

    def contains(self, other: "Span") -> bool:
        return self.file == other.file and self.start_line <= other.start_line and other.end_line <= self.end_line

    def __str__(self) -> str:
        return f"{self.file}:{self.start_line}-{self.end_line}"


class Expr:
    """Marker base class for expression nodes."""


@dataclass(frozen=True)
class Ident(Expr):
    name: str


@dataclass(frozen=True)
class Const(Expr):
    width: Optional[int]
    value: int


@dataclass(frozen=True)
class Unary(Expr):
    op: str
    operand: Expr


@dataclass(frozen=True)
class Binary(Expr):
    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Ternary(Expr):
    cond: Expr
    then: Expr
    other: Expr


@dataclass(frozen=True)
class Index(Expr):
    base: Expr
    index: Expr


@dataclass(frozen=True)
class Slice(Expr):
    base: Expr
    msb: int
    lsb: int


@dataclass(frozen=True)
class Concat(Expr):
    items: Tuple[Expr, ...]


@dataclass(frozen=True)
class Replicate(Expr):
    count: int
    item: Concat


@dataclass(frozen=True)
class Past(Expr):
    operand: Expr
    depth: int = 1


@dataclass(frozen=True)
class SysCall(Expr):
    """`$rose`, `$fell` and `$stable`; `$past` has its own node."""
    name: str
    operand: Expr


TRUE = Const(1, 1)
FALSE = Const(1, 0)


def mask(width: int) -> int:
    return (1 << width) - 1


# --- Traversal ---

def children(expr: Expr) -> Tuple[Expr, ...]:
    if isinstance(expr, (Unary, Past, SysCall)):
        return (expr.operand,)
    if isinstance(expr, Binary):
        return (expr.left, expr.right)
    if isinstance(expr, Ternary):
        return (expr.cond, expr.then, expr.other)
    if isinstance(expr, Index):
        return (expr.base, expr.index)
    if isinstance(expr, Slice):
        return (expr.base,)
    if isinstance(expr, Concat):
        return expr.items
    if isinstance(expr, Replicate):
        return (expr.item,)
    return ()


def map_expr(expr: Expr, fn: Callable[[Expr], Optional[Expr]]) -> Expr:
    """
    Rebuilds `expr` top-down. `fn` may return a replacement node (which is not
    descended into) or None to keep the node and rewrite its children.
    """
    replaced = fn(expr)
    if replaced is not None:
        return replaced
    if isinstance(expr, Unary):
        return Unary(expr.op, map_expr(expr.operand, fn))
    if isinstance(expr, Binary):
        return Binary(expr.op, map_expr(expr.left, fn), map_expr(expr.right, fn))
    if isinstance(expr, Ternary):
        return Ternary(map_expr(expr.cond, fn), map_expr(expr.then, fn), map_expr(expr.other, fn))
    if isinstance(expr, Index):
        return Index(map_expr(expr.base, fn), map_expr(expr.index, fn))
    if isinstance(expr, Slice):
        return Slice(map_expr(expr.base, fn), expr.msb, expr.lsb)
    if isinstance(expr, Concat):
        return Concat(tuple(map_expr(item, fn) for item in expr.items))
    if isinstance(expr, Replicate):
        return Replicate(expr.count, map_expr(expr.item, fn))
    if isinstance(expr, Past):
        return Past(map_expr(expr.operand, fn), expr.depth)
    if isinstance(expr, SysCall):
        return SysCall(expr.name, map_expr(expr.operand, fn))
    return expr


def walk(expr: Expr) -> Iterable[Expr]:
    yield expr
    for child in children(expr):
        yield from walk(child)


def signals(expr: Optional[Expr]) -> Tuple[str, ...]:
    """Signal names read by `expr`, in first-appearance order."""
    if expr is None:
        return ()
    seen: Dict[str, None] = {}
    for node in walk(expr):
        if isinstance(node, Ident):
            seen.setdefault(node.name, None)
    return tuple(seen)


def size(expr: Expr) -> int:
    return sum(1 for _ in walk(expr))


def past_depths(expr: Expr) -> List[int]:
    return [node.depth for node in walk(expr) if isinstance(node, Past)]


# --- Boolean structure ---

def conjuncts(expr: Optional[Expr]) -> List[Expr]:
    """Flattens a `&&` chain; the empty list stands for `true`."""
    if expr is None or expr == TRUE:
        return []
    if isinstance(expr, Binary) and expr.op == "&&":
        return conjuncts(expr.left) + conjuncts(expr.right)
    return [expr]


def conjoin(parts: Iterable[Expr]) -> Expr:
    result: Optional[Expr] = None
    for part in parts:
        result = part if result is None else Binary("&&", result, part)
    return TRUE if result is None else result


def negate(expr: Expr) -> Expr:
    if isinstance(expr, Unary) and expr.op == "!":
        return expr.operand
    if isinstance(expr, Binary) and expr.op == "==":
        return Binary("!=", expr.left, expr.right)
    if isinstance(expr, Binary) and expr.op == "!=":
        return Binary("==", expr.left, expr.right)
    return Unary("!", expr)


def equality_fact(expr: Expr, widths: Optional[Mapping[str, int]] = None) -> Optional[Tuple[str, int, bool]]:
    """
    Reads `sig == C`, `sig != C`, `sig` and `!sig` as (signal, value, is_equal).
    A bare identifier reads as `sig == 1` only for 1-bit signals; a vector
    named in `widths` reads as `sig != 0`. Without `widths` every bare
    identifier is taken as 1 bit.
    """
    if isinstance(expr, Ident):
        if widths is not None and widths.get(expr.name, 1) > 1:
            return (expr.name, 0, False)
        return (expr.name, 1, True)
    if isinstance(expr, Unary) and expr.op == "!" and isinstance(expr.operand, Ident):
        return (expr.operand.name, 0, True)
    if isinstance(expr, Binary) and expr.op in ("==", "!="):
        left, right = expr.left, expr.right
        if isinstance(left, Const) and isinstance(right, Ident):
            left, right = right, left
        if isinstance(left, Ident) and isinstance(right, Const):
            return (left.name, right.value, expr.op == "==")
    return None


def canonical(expr: Expr, widths: Optional[Mapping[str, int]] = None) -> str:
    """
    A width-insensitive normal form used to compare predicates: constants
    compare by value, `C == sig` becomes `sig == C`, negations are pushed into
    (in)equalities and `&&`/`||` operands are sorted.
    """
    fact = equality_fact(expr, widths)
    if fact is not None:
        name, value, is_equal = fact
        return f"{name}{'==' if is_equal else '!='}{value}"
    if isinstance(expr, Unary) and expr.op == "!":
        inner = expr.operand
        if isinstance(inner, Unary) and inner.op == "!":
            return canonical(inner.operand, widths)
        inner_fact = equality_fact(inner, widths)
        if inner_fact is not None:
            name, value, is_equal = inner_fact
            return f"{name}{'!=' if is_equal else '=='}{value}"
        return f"!({canonical(inner, widths)})"
    if isinstance(expr, Binary) and expr.op in LOGICAL_OPS:
        parts = _flatten(expr, expr.op)
        return f" {expr.op} ".join(sorted(f"({canonical(p, widths)})" for p in parts))
    if isinstance(expr, Const):
        return f"#{expr.value}"
    return render(map_expr(expr, lambda node: Const(None, node.value) if isinstance(node, Const) else None))


def _flatten(expr: Expr, op: str) -> List[Expr]:
    if isinstance(expr, Binary) and expr.op == op:
        return _flatten(expr.left, op) + _flatten(expr.right, op)
    return [expr]


def implies(antecedent: Iterable[Expr], predicate: Expr, widths: Optional[Mapping[str, int]] = None) -> bool:
    """
    Syntactic implication: the conjunct set of the antecedent contains the
    predicate after normalisation, or decides it through constant equalities.
    """
    facts = list(antecedent)
    keys = {canonical(f, widths) for f in facts}
    if canonical(predicate, widths) in keys:
        return True
    if isinstance(predicate, Binary) and predicate.op == "&&":
        return all(implies(facts, part, widths) for part in _flatten(predicate, "&&"))
    if isinstance(predicate, Binary) and predicate.op == "||":
        return any(implies(facts, part, widths) for part in _flatten(predicate, "||"))
    target = equality_fact(predicate, widths)
    if target is None and isinstance(predicate, Unary) and predicate.op == "!":
        inner = equality_fact(predicate.operand, widths)
        if inner is not None:
            target = (inner[0], inner[1], not inner[2])
    if target is None:
        return False
    name, value, is_equal = target
    for fact in facts:
        known = equality_fact(fact, widths)
        if known is None or known[0] != name or not known[2]:
            continue
        # known: name == v
        if is_equal and known[1] == value:
            return True
        if not is_equal and known[1] != value:
            return True
    return False


# --- Temporal rewriting ---

def past_shift(expr: Expr, depth: int) -> Expr:
    """Reads every signal `depth` cycles earlier: `sig` becomes `$past(sig, depth)`."""
    if depth == 0:
        return expr

    def shift(node: Expr) -> Optional[Expr]:
        if isinstance(node, Ident):
            return Past(node, depth)
        if isinstance(node, Past):
            return Past(node.operand, node.depth + depth)
        return None

    return map_expr(expr, shift)


def strip_past(expr: Expr) -> Expr:
    def strip(node: Expr) -> Optional[Expr]:
        if isinstance(node, Past):
            return strip_past(node.operand)
        return None

    return map_expr(expr, strip)


def read_depths(expr: Expr, depth: int = 0) -> Set[int]:
    """How many cycles back each signal read of `expr` looks; empty for constants."""
    if isinstance(expr, Ident):
        return {depth}
    if isinstance(expr, Past):
        return read_depths(expr.operand, depth + expr.depth)
    result: Set[int] = set()
    for child in children(expr):
        result |= read_depths(child, depth)
    return result


def relation(term: Expr) -> Optional[Tuple[str, Expr]]:
    """Splits `sig == expr` (either side order) into the sampled signal and the expected value."""
    if not (isinstance(term, Binary) and term.op in ("==", "===")):
        return None
    if isinstance(term.left, Ident):
        return term.left.name, term.right
    if isinstance(term.right, Ident):
        return term.right.name, term.left
    return None


# --- Rendering ---

def render_const(const: Const) -> str:
    if const.width is None:
        return str(const.value)
    if const.width <= BINARY_RENDER_MAX_WIDTH:
        return f"{const.width}'b{const.value:0{const.width}b}"
    digits = (const.width + 3) // 4
    return f"{const.width}'h{const.value:0{digits}x}"


def _operand(expr: Expr, in_binary: bool = False) -> str:
    text = render(expr)
    if isinstance(expr, (Binary, Ternary)):
        return f"({text})"
    if isinstance(expr, Unary) and (not in_binary or expr.op not in ("!", "~")):
        return f"({text})"
    return text


def render(expr: Expr) -> str:
    if isinstance(expr, Ident):
        return expr.name
    if isinstance(expr, Const):
        return render_const(expr)
    if isinstance(expr, Unary):
        return f"{expr.op}{_operand(expr.operand)}"
    if isinstance(expr, Binary):
        return f"{_operand(expr.left, True)} {expr.op} {_operand(expr.right, True)}"
    if isinstance(expr, Ternary):
        return f"{_operand(expr.cond, True)} ? {_operand(expr.then, True)} : {_operand(expr.other, True)}"
    if isinstance(expr, Index):
        return f"{_operand(expr.base)}[{render(expr.index)}]"
    if isinstance(expr, Slice):
        return f"{_operand(expr.base)}[{expr.msb}:{expr.lsb}]"
    if isinstance(expr, Concat):
        return "{" + ", ".join(render(item) for item in expr.items) + "}"
    if isinstance(expr, Replicate):
        return "{" + str(expr.count) + render(expr.item) + "}"
    if isinstance(expr, Past):
        if expr.depth == 1:
            return f"$past({render(expr.operand)})"
        return f"$past({render(expr.operand)}, {expr.depth})"
    if isinstance(expr, SysCall):
        return f"{expr.name}({render(expr.operand)})"
    raise TypeError(f"Cannot render {expr!r}")


# --- Evaluation ---

class Evaluator:
    """
    2-state evaluation with unknowns. Subclasses supply `read` (value of a
    signal at a cycle, or None) and `signal_width`.
    """

    def read(self, name: str, cycle: int) -> Optional[int]:
        raise NotImplementedError

    def signal_width(self, name: str) -> int:
        raise NotImplementedError

    def width(self, expr: Expr) -> int:
        if isinstance(expr, Ident):
            return self.signal_width(expr.name)
        if isinstance(expr, Const):
            return expr.width or UNSIZED_WIDTH
        if isinstance(expr, Unary):
            if expr.op in ("~", "-", "+"):
                return self.width(expr.operand)
            return 1
        if isinstance(expr, Binary):
            if expr.op in COMPARISON_OPS or expr.op in LOGICAL_OPS:
                return 1
            if expr.op in SHIFT_OPS:
                return self.width(expr.left)
            return max(self.width(expr.left), self.width(expr.right))
        if isinstance(expr, Ternary):
            return max(self.width(expr.then), self.width(expr.other))
        if isinstance(expr, Index):
            return 1
        if isinstance(expr, Slice):
            return expr.msb - expr.lsb + 1
        if isinstance(expr, Concat):
            return sum(self.width(item) for item in expr.items)
        if isinstance(expr, Replicate):
            return expr.count * self.width(expr.item)
        if isinstance(expr, Past):
            return self.width(expr.operand)
        if isinstance(expr, SysCall):
            return 1
        raise TypeError(f"Cannot size {expr!r}")

    def truth(self, expr: Expr, cycle: int) -> Optional[bool]:
        value = self.evaluate(expr, cycle)
        return None if value is None else value != 0

    def evaluate(self, expr: Expr, cycle: int) -> Optional[int]:
        if isinstance(expr, Ident):
            value = self.read(expr.name, cycle)
            return None if value is None else value & mask(self.signal_width(expr.name))
        if isinstance(expr, Const):
            return expr.value
        if isinstance(expr, Past):
            if cycle - expr.depth < 0:
                return None
            return self.evaluate(expr.operand, cycle - expr.depth)
        if isinstance(expr, SysCall):
            return self._temporal(expr, cycle)
        if isinstance(expr, Unary):
            return self._unary(expr, cycle)
        if isinstance(expr, Binary):
            return self._binary(expr, cycle)
        if isinstance(expr, Ternary):
            cond = self.truth(expr.cond, cycle)
            then = self.evaluate(expr.then, cycle)
            other = self.evaluate(expr.other, cycle)
            if cond is None:
                return then if then == other else None
            return then if cond else other
        if isinstance(expr, Index):
            base = self.evaluate(expr.base, cycle)
            index = self.evaluate(expr.index, cycle)
            if base is None or index is None:
                return None
            return (base >> index) & 1
        if isinstance(expr, Slice):
            base = self.evaluate(expr.base, cycle)
            if base is None:
                return None
            return (base >> expr.lsb) & mask(expr.msb - expr.lsb + 1)
        if isinstance(expr, Concat):
            result = 0
            for item in expr.items:
                value = self.evaluate(item, cycle)
                if value is None:
                    return None
                item_width = self.width(item)
                result = (result << item_width) | (value & mask(item_width))
            return result
        if isinstance(expr, Replicate):
            item = self.evaluate(expr.item, cycle)
            if item is None:
                return None
            item_width = self.width(expr.item)
            result = 0
            for _ in range(expr.count):
                result = (result << item_width) | item
            return result
        raise TypeError(f"Cannot evaluate {expr!r}")

    def _temporal(self, expr: SysCall, cycle: int) -> Optional[int]:
        if cycle < 1:
            return None
        now = self.evaluate(expr.operand, cycle)
        before = self.evaluate(expr.operand, cycle - 1)
        if now is None or before is None:
            return None
        if expr.name == "$stable":
            return int(now == before)
        now_bit, before_bit = now & 1, before & 1
        if expr.name == "$rose":
            return int(before_bit == 0 and now_bit == 1)
        if expr.name == "$fell":
            return int(before_bit == 1 and now_bit == 0)
        raise TypeError(f"Unknown system function {expr.name}")

    def _unary(self, expr: Unary, cycle: int) -> Optional[int]:
        value = self.evaluate(expr.operand, cycle)
        if value is None:
            return None
        width = self.width(expr.operand)
        op = expr.op
        if op == "!":
            return int(value == 0)
        if op == "~":
            return ~value & mask(width)
        if op == "-":
            return -value & mask(width)
        if op == "+":
            return value
        if op in ("&", "~&"):
            result = int(value == mask(width))
        elif op in ("|", "~|"):
            result = int(value != 0)
        elif op in ("^", "~^"):
            result = bin(value).count("1") & 1
        else:
            raise TypeError(f"Unknown unary operator {op}")
        return result ^ 1 if op.startswith("~") else result

    def _binary(self, expr: Binary, cycle: int) -> Optional[int]:
        op = expr.op
        if op in LOGICAL_OPS:
            left = self.truth(expr.left, cycle)
            right = self.truth(expr.right, cycle)
            if op == "&&":
                if left is False or right is False:
                    return 0
                if left is None or right is None:
                    return None
                return 1
            if left is True or right is True:
                return 1
            if left is None or right is None:
                return None
            return 0
        left = self.evaluate(expr.left, cycle)
        right = self.evaluate(expr.right, cycle)
        if left is None or right is None:
            return None
        width = self.width(expr)
        if op in ("==", "==="):
            return int(left == right)
        if op in ("!=", "!=="):
            return int(left != right)
        if op == "<":
            return int(left < right)
        if op == "<=":
            return int(left <= right)
        if op == ">":
            return int(left > right)
        if op == ">=":
            return int(left >= right)
        if op == "&":
            return left & right
        if op == "|":
            return left | right
        if op == "^":
            return left ^ right
        if op in ("^~", "~^"):
            return ~(left ^ right) & mask(width)
        if op == "+":
            return (left + right) & mask(width)
        if op == "-":
            return (left - right) & mask(width)
        if op == "*":
            return (left * right) & mask(width)
        if op in ("/", "%"):
            if right == 0:
                return None
            return (left // right if op == "/" else left % right) & mask(width)
        if op in ("<<", "<<<"):
            return (left << right) & mask(width)
        if op in (">>", ">>>"):
            return left >> right
        logging.error(f"Unsupported binary operator '{op}'")
        raise TypeError(f"Unknown binary operator {op}")
