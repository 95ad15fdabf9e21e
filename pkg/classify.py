"""
Timing/logic classification of a failing assertion.

A timing error is one a consequent shift of at most K cycles repairs on every
counterexample trace, unless the RTL guard of the driver the consequent
describes contradicts the antecedent; everything else is a logic error.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

from cdfg import BACKWARD, DesignCdfg, GuardedAssignment, cone_of_influence, effective_drivers
from exceptions import LlmBackendError, NoFailure, NoTraces, SvaFixError, UnknownSignal, UnrepresentableShift
from expressions import canonical, conjuncts, equality_fact, read_depths, relation, strip_past
from hdl_frontend import SvaAssertion, render_assertion
from llm_client import LlmBackend, Prompt
from prompts import extract_tag, render_prompt, waveform_table
from retrieval import RtlChunk
from traces import CounterexampleTrace, evaluate_assertion, shift_consequent, validate

TIMING = "Timing"
LOGIC = "Logic"
KINDS = (TIMING, LOGIC)

HEURISTIC = "heuristic"
LLM = "llm"
LLM_OVERRIDDEN = "llm-overridden-by-heuristic"

DEFAULT_SHIFT_BOUND = 3


@dataclass(frozen=True)
class ErrorClassification:
    kind: str
    evidence: Dict[str, object] = field(default_factory=dict)
    source: str = HEURISTIC
    rationale: str = ""

    @property
    def shift(self) -> Optional[int]:
        return self.evidence.get("shift") if self.kind == TIMING else None

    def to_json(self) -> dict:
        return {"kind": self.kind, "evidence": self.evidence, "source": self.source, "rationale": self.rationale}


@dataclass(frozen=True)
class DriverMatch:
    """An RTL assignment whose right-hand side is the value a consequent term expects."""
    term: int
    signal: str
    assignment: GuardedAssignment
    depth: int
    aligned: bool


def shift_order(bound: int) -> List[int]:
    """+1, -1, +2, -2, ... up to `bound`."""
    order = []
    for magnitude in range(1, bound + 1):
        order += [magnitude, -magnitude]
    return order


def find_passing_shift(a: SvaAssertion, traces: Sequence[CounterexampleTrace], bound: int = DEFAULT_SHIFT_BOUND) -> Optional[int]:
    """Smallest |k| (positive first) whose shifted assertion passes and is covered on every trace."""
    for k in shift_order(bound):
        try:
            shifted = shift_consequent(a, k)
        except UnrepresentableShift:
            continue
        if validate(shifted, traces).accepted:
            return k
    return None


def matching_drivers(a: SvaAssertion, g: DesignCdfg) -> List[DriverMatch]:
    """
    For every consequent term of the form `sig == expr`, the drivers of `sig`
    whose right-hand side equals `expr` once `$past` is removed. `aligned`
    says whether the term's cycle offset and `$past` depths also agree with
    the register stages of the driver.
    """
    matches: List[DriverMatch] = []
    offsets = a.offsets()
    for index, term in enumerate(a.consequent):
        split = relation(term)
        if split is None:
            continue
        signal, expected = split
        try:
            drivers = effective_drivers(g, signal)
        except UnknownSignal:
            logging.warning(f"Consequent signal '{signal}' is not in the CDFG")
            continue
        value = canonical(strip_past(expected))
        for assignment, depth in drivers:
            if canonical(assignment.rhs) != value:
                continue
            aligned = offsets[index] == depth and read_depths(expected) <= {depth}
            matches.append(DriverMatch(index, signal, assignment, depth, aligned))
    return matches


def _antecedent_values(a: SvaAssertion, widths: Mapping[str, int]) -> Dict[str, int]:
    values = {}
    for conjunct in conjuncts(a.antecedent):
        fact = equality_fact(conjunct, widths)
        if fact is not None and fact[2]:
            values[fact[0]] = fact[1]
    return values


def _conflicts(assignment: GuardedAssignment, values: Dict[str, int], widths: Mapping[str, int]) -> List[dict]:
    found = []
    for predicate in assignment.guard:
        fact = equality_fact(predicate, widths)
        if fact is None or fact[0] not in values:
            continue
        name, value, is_equal = fact
        if (values[name] != value) == is_equal:
            found.append({"signal": name, "assertion_value": values[name], "rtl_value": value, "rtl_equal": is_equal})
    return found


def guard_mismatch(a: SvaAssertion, g: DesignCdfg) -> Optional[dict]:
    """
    The RTL guard that contradicts the antecedent, when every driver producing
    the consequent's expected value is guarded by a constant the antecedent
    excludes. None when some matching driver is consistent with the antecedent
    or nothing can be compared.
    """
    values = _antecedent_values(a, g.widths)
    if not values:
        return None
    first: Optional[dict] = None
    for match in matching_drivers(a, g):
        conflicts = _conflicts(match.assignment, values, g.widths)
        if not conflicts:
            return None
        if first is None:
            first = dict(conflicts[0], driver=str(match.assignment.span), target=match.signal)
    return first


def coi_mismatch(a: SvaAssertion, g: DesignCdfg) -> List[str]:
    """Antecedent signals that cannot influence any consequent signal."""
    consequent = []
    for name in a.consequent_signals():
        try:
            consequent.append(g.resolve(name))
        except UnknownSignal:
            continue
    if not consequent:
        return []
    cone = cone_of_influence(g, consequent, BACKWARD)
    outside = []
    for name in a.antecedent_signals():
        try:
            node = g.resolve(name)
        except UnknownSignal:
            continue
        if node not in cone:
            outside.append(name)
    return outside


def _waveform_names(a: SvaAssertion, trace: CounterexampleTrace, g: Optional[DesignCdfg]) -> List[str]:
    names = [name for name in a.all_signals() if name in trace.values]
    if g is None:
        return names
    seeds = []
    for name in a.all_signals():
        try:
            seeds.append(g.resolve(name))
        except UnknownSignal:
            continue
    extra = sorted({g.leaf(node) for node in cone_of_influence(g, seeds, BACKWARD)} - set(names)) if seeds else []
    return names + [name for name in extra if name in trace.values]


def waveforms(a: SvaAssertion, traces: Sequence[CounterexampleTrace], g: Optional[DesignCdfg] = None) -> List[str]:
    """One table per trace, centred on the first failing cycle."""
    tables = []
    for position, trace in enumerate(traces):
        try:
            center = evaluate_assertion(a, trace).first_failing_cycle
        except SvaFixError:
            center = None
        title = trace.path or f"#{position}"
        tables.append(waveform_table(trace, _waveform_names(a, trace, g), center, title))
    return tables


def build_classification_prompt(
    a: SvaAssertion,
    traces: Sequence[CounterexampleTrace],
    chunks: Sequence[RtlChunk],
    g: Optional[DesignCdfg] = None,
) -> Prompt:
    return render_prompt(
        "classify",
        "classify",
        assertion=render_assertion(a),
        waveforms=waveforms(a, traces, g),
        chunks=chunks,
    )


def classify_heuristic(a: SvaAssertion, traces: Sequence[CounterexampleTrace], g: DesignCdfg, bound: int = DEFAULT_SHIFT_BOUND) -> ErrorClassification:
    shift = find_passing_shift(a, traces, bound)
    mismatch = guard_mismatch(a, g)
    if mismatch is not None:
        rationale = (
            f"RTL assigns {mismatch['target']} under {mismatch['signal']} "
            f"{'==' if mismatch['rtl_equal'] else '!='} {mismatch['rtl_value']}, "
            f"the antecedent requires {mismatch['assertion_value']}"
        )
        evidence: Dict[str, object] = {"guard_mismatch": mismatch}
        if shift is not None:
            evidence["misleading_shift"] = shift
        return ErrorClassification(LOGIC, evidence, HEURISTIC, rationale)
    if shift is not None:
        return ErrorClassification(TIMING, {"shift": shift}, HEURISTIC, f"Shifting the consequent by {shift:+d} cycle(s) passes every trace")
    outside = coi_mismatch(a, g)
    if outside:
        return ErrorClassification(
            LOGIC,
            {"coi_mismatch": outside},
            HEURISTIC,
            f"Antecedent signals outside the consequent's cone of influence: {', '.join(outside)}",
        )
    return ErrorClassification(LOGIC, {"shift_bound": bound}, HEURISTIC, f"No consequent shift within ±{bound} passes every trace")


def classify_error(
    a: SvaAssertion,
    traces: Sequence[CounterexampleTrace],
    chunks: Sequence[RtlChunk],
    g: DesignCdfg,
    llm: Optional[LlmBackend] = None,
    K: int = DEFAULT_SHIFT_BOUND,
    prompts: Optional[List[Prompt]] = None,
) -> ErrorClassification:
    """
    Classifies a failing assertion as a timing or a logic error.

    Args:
        a: The failing assertion.
        traces: Its counterexample traces; at least one must fail.
        chunks: Filtered RTL chunks, shown to the model.
        g: The design CDFG, used for guard and cone checks.
        llm: Optional backend; its Timing verdict is overridden when the
            heuristic finds a guard mismatch or no passing shift.
        K: Largest consequent shift tried.
        prompts: Collects the prompts sent, when given.

    Raises:
        NoTraces: If no trace was supplied.
        NoFailure: If the assertion passes every trace.
        LlmFixtureError: If a replay or mock backend cannot answer.
    """
    if K < 1:
        raise ValueError("The shift bound must be at least 1")
    if not traces:
        raise NoTraces(f"No counterexample traces for {a.name or render_assertion(a)}")
    if validate(a, traces).passed:
        raise NoFailure(f"{a.name or render_assertion(a)} passes every trace")

    heuristic = classify_heuristic(a, traces, g, K)
    if llm is None:
        return heuristic

    prompt = build_classification_prompt(a, traces, chunks, g)
    if prompts is not None:
        prompts.append(prompt)
    try:
        answer = extract_tag(llm.complete(prompt).text, "answer")
        if answer is None or answer.capitalize() not in KINDS:
            raise LlmBackendError(f"Classification answer is not Timing or Logic: {answer!r}")
    except LlmBackendError as e:
        logging.warning(f"LLM classification failed ({e}); using the heuristic verdict")
        return heuristic
    kind = answer.capitalize()

    if kind == TIMING and heuristic.kind == LOGIC:
        return ErrorClassification(LOGIC, heuristic.evidence, LLM_OVERRIDDEN, f"Model answered Timing; {heuristic.rationale}")
    if kind == TIMING:
        return ErrorClassification(TIMING, heuristic.evidence, LLM, "Model answered Timing")
    return ErrorClassification(LOGIC, heuristic.evidence if heuristic.kind == LOGIC else {}, LLM, "Model answered Logic")
