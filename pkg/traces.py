"""
Counterexample traces: a VCD reader and writer, and bounded evaluation of
SvaAssertion objects over clock-sampled values.
"""
import gzip
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from exceptions import (
    MissingClock,
    SignalMissing,
    UnrepresentableShift,
    VcdSyntaxError,
    WidthMismatch,
)
from expressions import Binary, Const, Evaluator, Expr, Ident, Past, past_depths, past_shift, walk
from hdl_frontend import NON_OVERLAPPED, OVERLAPPED, SvaAssertion
from utils import FileValidator

MAX_PAST_DEPTH = 16

PASS = "pass"
FAIL = "fail"
VACUOUS = "vacuous"


@dataclass(frozen=True)
class CounterexampleTrace:
    """
    Signal values sampled at `length` clock edges. `None` marks a sample
    with an x/z bit. The clock itself is not in `values`.
    """
    clock: str
    length: int
    values: Dict[str, Tuple[Optional[int], ...]]
    widths: Dict[str, int]
    edge: str = "posedge"
    identifiers: Dict[str, str] = field(default_factory=dict, compare=False)
    path: Optional[str] = field(default=None, compare=False)

    def read(self, name: str, cycle: int) -> Optional[int]:
        if cycle < 0 or cycle >= self.length:
            return None
        return self.values[name][cycle]

    @property
    def names(self) -> List[str]:
        return sorted(self.values)


@dataclass(frozen=True)
class Attempt:
    start: int
    verdict: str
    failing_cycle: Optional[int] = None
    failing_term: Optional[int] = None


@dataclass(frozen=True)
class EvalResult:
    attempts: Tuple[Attempt, ...]
    overall: str
    covered: bool

    @property
    def passed(self) -> bool:
        return self.overall == PASS

    @property
    def first_failing_cycle(self) -> Optional[int]:
        cycles = [a.failing_cycle for a in self.attempts if a.verdict == FAIL]
        return min(cycles) if cycles else None

    @property
    def failing_attempts(self) -> List[Attempt]:
        return [a for a in self.attempts if a.verdict == FAIL]


@dataclass(frozen=True)
class Validation:
    """Per-trace results of one assertion; accepted means checked and covered everywhere."""
    results: Tuple[EvalResult, ...]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def covered(self) -> bool:
        return all(r.covered for r in self.results)

    @property
    def accepted(self) -> bool:
        return bool(self.results) and self.passed and self.covered


# --- VCD reading ---

def _bits_to_value(bits: str) -> Optional[int]:
    bits = bits.lower()
    if any(c in "xzu-" for c in bits):
        return None
    try:
        return int(bits, 2)
    except ValueError:
        raise VcdSyntaxError(f"Malformed binary value '{bits}'")


class _VcdReader:
    """Token-level VCD parser: header pass, then change-list sampling."""

    def __init__(self, text: str, clock: str, edge: str):
        self.tokens = text.split()
        self.pos = 0
        self.clock = clock
        self.edge = edge
        self.names: Dict[str, str] = {}
        self.codes_by_name: Dict[str, str] = {}
        self.widths: Dict[str, int] = {}

    def next_token(self) -> str:
        if self.pos >= len(self.tokens):
            raise VcdSyntaxError("Unexpected end of VCD file")
        token = self.tokens[self.pos]
        self.pos += 1
        return token

    def skip_to_end(self) -> List[str]:
        skipped = []
        while True:
            token = self.next_token()
            if token == "$end":
                return skipped
            skipped.append(token)

    def read_header(self):
        scope: List[str] = []
        while True:
            token = self.next_token()
            if token == "$scope":
                body = self.skip_to_end()
                scope.append(body[-1] if body else "")
            elif token == "$upscope":
                self.skip_to_end()
                if scope:
                    scope.pop()
            elif token == "$var":
                body = self.skip_to_end()
                if len(body) < 4:
                    raise VcdSyntaxError(f"Malformed $var declaration: {' '.join(body)}")
                try:
                    width = int(body[1])
                except ValueError:
                    raise VcdSyntaxError(f"Malformed $var width '{body[1]}'")
                code, reference = body[2], body[3]
                name = reference if reference not in self.codes_by_name else ".".join(scope + [reference])
                self.codes_by_name[name] = code
                self.names.setdefault(code, name)
                self.widths[name] = width
            elif token == "$enddefinitions":
                self.skip_to_end()
                return
            elif token.startswith("$"):
                self.skip_to_end()
            else:
                raise VcdSyntaxError(f"Unexpected token '{token}' in VCD header")

    def read(self) -> Tuple[Dict[str, List[Optional[int]]], Dict[str, str]]:
        self.read_header()
        clock_code = self.codes_by_name.get(self.clock)
        if clock_code is None:
            raise MissingClock(self.clock)

        current: Dict[str, Optional[int]] = {code: None for code in self.names}
        samples: Dict[str, List[Optional[int]]] = {
            name: [] for name, code in self.codes_by_name.items() if name != self.clock
        }
        previous_clock: Optional[int] = None
        active = False

        def close_timestamp():
            nonlocal previous_clock
            now = current[clock_code]
            if self.edge == "posedge":
                fired = now == 1 and previous_clock != 1
            else:
                fired = now == 0 and previous_clock == 1
            if fired:
                for name, values in samples.items():
                    values.append(current[self.codes_by_name[name]])
            previous_clock = now

        while self.pos < len(self.tokens):
            token = self.next_token()
            if token.startswith("#"):
                try:
                    int(token[1:])
                except ValueError:
                    raise VcdSyntaxError(f"Malformed timestamp '{token}'")
                if active:
                    close_timestamp()
                active = True
            elif token in ("$dumpvars", "$dumpall", "$dumpon", "$dumpoff", "$end"):
                continue
            elif token == "$comment":
                self.skip_to_end()
            elif token[0] in "bB":
                code = self.next_token()
                self.store(current, code, _bits_to_value(token[1:]))
            elif token[0] in "rR":
                code = self.next_token()
                logging.warning(f"Ignoring real-valued change on VCD identifier '{code}'")
            elif token[0] in "01xXzZ":
                self.store(current, token[1:], _bits_to_value(token[0]))
            else:
                raise VcdSyntaxError(f"Unexpected token '{token}' in VCD value changes")
        if active:
            close_timestamp()
        return samples, {code: name for code, name in self.names.items()}

    def store(self, current: Dict[str, Optional[int]], code: str, value: Optional[int]):
        if code not in current:
            raise VcdSyntaxError(f"Value change for undeclared identifier '{code}'")
        current[code] = value


def parse_vcd(data: Union[bytes, str], clock: str, edge: str = "posedge", path: Optional[str] = None) -> CounterexampleTrace:
    """
    Parses a VCD file into a clock-sampled trace.

    All changes at one timestamp are applied before the clock edge is
    checked, so registered outputs dumped alongside the edge are sampled
    with their new values.

    Raises:
        VcdSyntaxError: If the file is not well-formed VCD.
        MissingClock: If `clock` is not declared in the file.
    """
    if isinstance(data, (bytes, bytearray)):
        if FileValidator.is_gzip(data):
            data = gzip.decompress(bytes(data))
        try:
            text = bytes(data).decode("utf-8")
        except UnicodeDecodeError as e:
            raise VcdSyntaxError(f"VCD is not UTF-8 text: {e}")
    else:
        text = data
    reader = _VcdReader(text, clock, edge)
    samples, identifiers = reader.read()
    widths = {name: width for name, width in reader.widths.items() if name != clock}
    length = len(next(iter(samples.values()))) if samples else 0
    trace = CounterexampleTrace(
        clock=clock,
        length=length,
        values={name: tuple(values) for name, values in samples.items()},
        widths=widths,
        edge=edge,
        identifiers=identifiers,
        path=path,
    )
    logging.info(f"Parsed trace {path or '<memory>'}: {length} cycle(s), {len(trace.values)} signal(s)")
    return trace


def load_trace(path: str, clock: str, edge: str = "posedge") -> CounterexampleTrace:
    with open(path, "rb") as f:
        return parse_vcd(f.read(), clock, edge, path=path)


# --- VCD writing ---

def vcd_identifier(index: int) -> str:
    """Printable-ASCII identifier code, base 94 starting at '!'."""
    code = ""
    while True:
        code += chr(33 + index % 94)
        index //= 94
        if index == 0:
            return code


def _vcd_value(value: Optional[int], width: int, code: str) -> str:
    if width == 1:
        return f"{'x' if value is None else value & 1}{code}"
    if value is None:
        return f"bx {code}"
    return f"b{value:0{width}b} {code}"


def write_vcd(trace: CounterexampleTrace) -> str:
    """
    Renders a trace as VCD: `$timescale 1ns`, one `top` scope, clock period
    10 with the sampling edge at 10i+5 and value changes for cycle i placed
    on that edge.
    """
    names = sorted(trace.values)
    codes = {trace.clock: vcd_identifier(0)}
    for i, name in enumerate(names, start=1):
        codes[name] = vcd_identifier(i)
    active, idle = ("1", "0") if trace.edge == "posedge" else ("0", "1")

    lines = ["$timescale 1ns $end", "$scope module top $end", f"$var wire 1 {codes[trace.clock]} {trace.clock} $end"]
    for name in names:
        lines.append(f"$var wire {trace.widths[name]} {codes[name]} {name} $end")
    lines += ["$upscope $end", "$enddefinitions $end", "#0", "$dumpvars", f"{idle}{codes[trace.clock]}"]
    for name in names:
        first = trace.values[name][0] if trace.length else None
        lines.append(_vcd_value(first, trace.widths[name], codes[name]))
    lines.append("$end")
    for cycle in range(trace.length):
        lines.append(f"#{10 * cycle + 5}")
        lines.append(f"{active}{codes[trace.clock]}")
        if cycle > 0:
            for name in names:
                value = trace.values[name][cycle]
                if value != trace.values[name][cycle - 1]:
                    lines.append(_vcd_value(value, trace.widths[name], codes[name]))
        lines.append(f"#{10 * cycle + 10}")
        lines.append(f"{idle}{codes[trace.clock]}")
    return "\n".join(lines) + "\n"


def make_trace(clock: str, columns: Dict[str, Sequence[Optional[int]]], widths: Dict[str, int], edge: str = "posedge") -> CounterexampleTrace:
    """Builds a trace from per-signal value lists (all of equal length)."""
    lengths = {len(values) for values in columns.values()}
    if len(lengths) > 1:
        raise ValueError(f"Trace columns have different lengths: {sorted(lengths)}")
    length = lengths.pop() if lengths else 0
    return CounterexampleTrace(
        clock=clock,
        length=length,
        values={name: tuple(values) for name, values in columns.items()},
        widths=dict(widths),
        edge=edge,
    )


# --- Evaluation ---

class TraceEvaluator(Evaluator):
    def __init__(self, trace: CounterexampleTrace):
        self.trace = trace

    def read(self, name: str, cycle: int) -> Optional[int]:
        return self.trace.read(name, cycle)

    def signal_width(self, name: str) -> int:
        return self.trace.widths[name]


def _signal_of(expr: Expr) -> Optional[str]:
    while isinstance(expr, Past):
        expr = expr.operand
    return expr.name if isinstance(expr, Ident) else None


def _check_widths(expressions: Iterable[Optional[Expr]], trace: CounterexampleTrace):
    for expr in expressions:
        if expr is None:
            continue
        for node in walk(expr):
            if not (isinstance(node, Binary) and node.op in ("==", "!=", "===", "!==")):
                continue
            for side, other in ((node.left, node.right), (node.right, node.left)):
                name = _signal_of(side)
                if name is None or not isinstance(other, Const) or other.width is None:
                    continue
                if trace.widths[name] != other.width:
                    raise WidthMismatch(name, trace.widths[name], other.width)


def evaluate_assertion(a: SvaAssertion, t: CounterexampleTrace) -> EvalResult:
    """
    Evaluates one attempt per start cycle. Attempts whose window runs past
    the last sample, whose disable condition is known-true within the window
    or whose antecedent is false or unknown are vacuous; a consequent term
    that is false or unknown fails the attempt.

    Raises:
        SignalMissing: If a referenced signal is absent from the trace.
        WidthMismatch: If a sized constant is compared against a signal of another width.
    """
    missing = [name for name in a.all_signals() if name not in t.values]
    if missing:
        raise SignalMissing(missing)
    _check_widths([a.antecedent, a.disable, *a.consequent], t)

    evaluator = TraceEvaluator(t)
    offsets = a.offsets()
    window = offsets[-1]
    attempts: List[Attempt] = []
    for start in range(t.length):
        if start + window > t.length - 1:
            attempts.append(Attempt(start, VACUOUS))
            continue
        if a.disable is not None and any(
            evaluator.truth(a.disable, cycle) is True for cycle in range(start, start + window + 1)
        ):
            attempts.append(Attempt(start, VACUOUS))
            continue
        if a.antecedent is not None and evaluator.truth(a.antecedent, start) is not True:
            attempts.append(Attempt(start, VACUOUS))
            continue
        attempt = Attempt(start, PASS)
        for index, (term, offset) in enumerate(zip(a.consequent, offsets)):
            if evaluator.truth(term, start + offset) is not True:
                attempt = Attempt(start, FAIL, start + offset, index)
                break
        attempts.append(attempt)

    failed = any(attempt.verdict == FAIL for attempt in attempts)
    covered = any(attempt.verdict != VACUOUS for attempt in attempts)
    return EvalResult(tuple(attempts), FAIL if failed else PASS, covered)


def validate(a: SvaAssertion, traces: Sequence[CounterexampleTrace]) -> Validation:
    return Validation(tuple(evaluate_assertion(a, t) for t in traces))


def shift_consequent(a: SvaAssertion, k: int) -> SvaAssertion:
    """
    Moves the whole consequent sequence by `k` cycles relative to the
    antecedent. A negative shift beyond the first delay (and the implicit
    cycle of `|=>`) reads every consequent signal that many cycles further in
    the past instead.

    Raises:
        UnrepresentableShift: If a resulting `$past` depth exceeds MAX_PAST_DEPTH.
    """
    if k == 0:
        return a
    base = 1 if a.implication == NON_OVERLAPPED else 0
    first = a.delays[0] + base + k
    rest = a.delays[1:]
    overlapped = OVERLAPPED if a.implication is not None else None

    if first >= 0:
        if a.implication == NON_OVERLAPPED and first >= 1:
            return replace(a, delays=(first - 1,) + rest)
        return replace(a, implication=overlapped, delays=(first,) + rest)

    shortfall = -first
    consequent = tuple(past_shift(term, shortfall) for term in a.consequent)
    deepest = max((d for term in consequent for d in past_depths(term)), default=0)
    if deepest > MAX_PAST_DEPTH:
        raise UnrepresentableShift(
            f"Shifting by {k} needs $past depth {deepest}, above the limit of {MAX_PAST_DEPTH}"
        )
    return replace(a, implication=overlapped, delays=(0,) + rest, consequent=consequent)


def format_value(value: Optional[int], width: int) -> str:
    """Waveform cell text: binary up to 4 bits, hex above, `x` when unknown."""
    if value is None:
        return "x"
    if width <= 4:
        return f"{value:0{width}b}"
    return f"{value:0{(width + 3) // 4}x}"
