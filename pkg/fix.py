"""
Assertion repair: delay search for timing errors, reconstruction from the
RTL drivers (consequent kept) and from the RTL guards (antecedent kept) for
logic errors, and LLM proposals. Every candidate is validated on the
counterexample traces before it is accepted.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

from cdfg import (
    DesignCdfg,
    GuardedAssignment,
    SEQUENTIAL,
    effective_drivers,
    forwarding_chain,
    guard_conditions,
)
from classify import ErrorClassification, matching_drivers, shift_order, waveforms
from exceptions import (
    HdlSyntaxError,
    LlmBackendError,
    NoDriversFound,
    NoFailure,
    NoForwardTargets,
    NoTraces,
    SvaFixError,
    UnknownSignal,
    UnrepresentableShift,
    UnsupportedSvaFeature,
)
from expressions import Binary, Expr, Ident, conjoin, conjuncts, implies, past_shift, relation, render, size
from hdl_frontend import NON_OVERLAPPED, OVERLAPPED, SvaAssertion, parse_assertion, render_assertion, render_property
from llm_client import LlmBackend, Prompt
from prompts import extract_all_tags, render_prompt
from retrieval import RtlChunk
from traces import CounterexampleTrace, Validation, shift_consequent, validate

SHIFT_SEARCH = "shift-search"
BACKWARD_RECONSTRUCTION = "backward-reconstruction"
FORWARD_RECONSTRUCTION = "forward-reconstruction"
LLM_PROPOSAL = "llm"

FIXED = "fixed"
UNFIXED = "unfixed"
SKIPPED = "skipped"

STAGED = "staged"
DIRECT = "direct"

CANDIDATE_CAP = 16


@dataclass(frozen=True)
class FixCandidate:
    assertion: SvaAssertion
    origin: str
    edit: Dict[str, str] = field(default_factory=dict, compare=False)
    confidence: str = field(default="normal", compare=False)

    def to_json(self) -> dict:
        return {
            "assertion": render_assertion(self.assertion),
            "origin": self.origin,
            "edit": self.edit,
            "confidence": self.confidence,
        }


def validation_json(validation: Validation) -> List[dict]:
    return [
        {"verdict": r.overall, "covered": r.covered, "first_failing_cycle": r.first_failing_cycle}
        for r in validation.results
    ]


@dataclass
class FixOutcome:
    name: str
    original: Optional[SvaAssertion] = None
    source: Optional[str] = None
    classification: Optional[ErrorClassification] = None
    candidates: List[FixCandidate] = field(default_factory=list)
    validations: List[Validation] = field(default_factory=list)
    accepted: Optional[FixCandidate] = None
    status: str = UNFIXED
    error: Optional[str] = None
    design: str = ""
    strategy: str = STAGED
    label: Optional[str] = None

    @property
    def kind(self) -> Optional[str]:
        return self.classification.kind if self.classification else None

    @property
    def bucket(self) -> Optional[str]:
        """TE or LE: the injected label when the corpus provides one, else the classification."""
        kind = self.label or self.kind
        if kind is None:
            return None
        return "TE" if kind.upper() in ("TE", "TIMING") else "LE"

    @property
    def original_text(self) -> str:
        """The rendered original, or the raw list text when it never parsed."""
        if self.original is not None:
            return render_assertion(self.original)
        return self.source or ""

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "design": self.design,
            "strategy": self.strategy,
            "label": self.label,
            "original": self.original_text,
            "classification": self.classification.to_json() if self.classification else None,
            "status": self.status,
            "accepted": self.accepted.to_json() if self.accepted else None,
            "candidates": [
                dict(candidate.to_json(), validation=validation_json(validation))
                for candidate, validation in zip(self.candidates, self.validations)
            ],
            "error": self.error,
        }


# --- Shared helpers ---

def _consequent_text(a: SvaAssertion) -> str:
    sequence = render_property(replace(a, antecedent=None, implication=None))
    return f"{a.implication} {sequence}" if a.implication else sequence


def describe_edit(original: SvaAssertion, candidate: SvaAssertion) -> Dict[str, str]:
    antecedent_changed = original.antecedent != candidate.antecedent
    consequent_changed = (original.implication, original.delays, original.consequent) != (
        candidate.implication,
        candidate.delays,
        candidate.consequent,
    )
    if antecedent_changed and consequent_changed:
        return {"side": "both", "old": render_property(original), "new": render_property(candidate)}
    if antecedent_changed:
        old = render(original.antecedent) if original.antecedent is not None else ""
        new = render(candidate.antecedent) if candidate.antecedent is not None else ""
        return {"side": "antecedent", "old": old, "new": new}
    return {"side": "consequent", "old": _consequent_text(original), "new": _consequent_text(candidate)}


def _require_failure(a: SvaAssertion, traces: Sequence[CounterexampleTrace]):
    if not traces:
        raise NoTraces(f"No counterexample traces for {a.name or render_assertion(a)}")
    if validate(a, traces).passed:
        raise NoFailure(f"{a.name or render_assertion(a)} passes every trace")


def _validate_quietly(a: SvaAssertion, traces: Sequence[CounterexampleTrace]) -> Validation:
    try:
        return validate(a, traces)
    except SvaFixError as e:
        logging.warning(f"Candidate {render_property(a)} cannot be checked: {e}")
        return Validation(())


def try_candidates(
    outcome: FixOutcome,
    candidates: Sequence[FixCandidate],
    traces: Sequence[CounterexampleTrace],
    cap: int = CANDIDATE_CAP,
) -> bool:
    """
    Validates candidates in order, skipping duplicates and restatements of
    the original, until one passes and is covered on every trace or `cap`
    candidates have been tried. Appends every trial to `outcome`.
    """
    seen = {outcome.original} | {candidate.assertion for candidate in outcome.candidates}
    for candidate in candidates:
        if len(outcome.candidates) >= cap:
            logging.info(f"{outcome.name}: candidate cap of {cap} reached")
            return False
        if candidate.assertion in seen:
            continue
        seen.add(candidate.assertion)
        validation = _validate_quietly(candidate.assertion, traces)
        outcome.candidates.append(candidate)
        outcome.validations.append(validation)
        if validation.accepted:
            outcome.accepted = candidate
            outcome.status = FIXED
            logging.info(f"{outcome.name}: accepted {candidate.origin} candidate {render_property(candidate.assertion)}")
            return True
    return False


def parse_proposal(text: str, original: SvaAssertion) -> SvaAssertion:
    """Parses a proposed assertion, inheriting clock, disable and name from the original."""
    proposal = parse_assertion(text, original.name)
    if proposal.clock is None:
        proposal = replace(proposal, clock=original.clock, disable=proposal.disable or original.disable)
    return replace(proposal, name=original.name)


def _llm_candidates(llm: LlmBackend, prompt: Prompt, original: SvaAssertion, prompts: Optional[List[Prompt]]) -> List[FixCandidate]:
    if prompts is not None:
        prompts.append(prompt)
    try:
        answer = llm.complete(prompt).text
    except LlmBackendError as e:
        logging.warning(f"LLM repair request failed ({e}); continuing without proposals")
        return []
    proposals = []
    for text in extract_all_tags(answer, "assertion"):
        try:
            assertion = parse_proposal(text, original)
        except (HdlSyntaxError, UnsupportedSvaFeature) as e:
            logging.warning(f"Discarding unparsable LLM proposal: {e}")
            continue
        proposals.append(FixCandidate(assertion, LLM_PROPOSAL, describe_edit(original, assertion)))
    if not proposals:
        logging.warning("LLM answer contained no usable <assertion> proposal")
    return proposals


# --- Timing ---

def shift_candidates(a: SvaAssertion, bound: int) -> List[FixCandidate]:
    candidates = []
    for k in shift_order(bound):
        try:
            shifted = shift_consequent(a, k)
        except UnrepresentableShift:
            continue
        edit = dict(describe_edit(a, shifted), shift=f"{k:+d}")
        candidates.append(FixCandidate(shifted, SHIFT_SEARCH, edit))
    return candidates


def fix_timing(
    a: SvaAssertion,
    traces: Sequence[CounterexampleTrace],
    chunks: Sequence[RtlChunk],
    llm: Optional[LlmBackend] = None,
    K: int = 3,
    classification: Optional[ErrorClassification] = None,
    prompts: Optional[List[Prompt]] = None,
) -> FixOutcome:
    """
    Repairs a timing error. A model proposal, when a backend is present, is
    validated first; otherwise or when it fails, consequent shifts are tried
    in order of |k| with positive shifts first.

    Raises:
        NoTraces: If no trace was supplied.
        NoFailure: If the assertion already passes every trace.
    """
    _require_failure(a, traces)
    outcome = FixOutcome(name=a.name or "", original=a, classification=classification)
    if llm is not None:
        prompt = render_prompt(
            "fix_timing",
            "fix_timing",
            assertion=render_assertion(a),
            waveforms=waveforms(a, traces),
            chunks=chunks,
        )
        if try_candidates(outcome, _llm_candidates(llm, prompt, a, prompts), traces):
            return outcome
    try_candidates(outcome, shift_candidates(a, K), traces, cap=len(outcome.candidates) + 2 * K)
    return outcome


# --- Logic ---

def _chunk_local(items, chunks: Sequence[RtlChunk], span_of=lambda m: m.assignment.span):
    """Items whose RTL lies in one of the chunks, or all of them when none does."""
    spans = [chunk.span for chunk in chunks]
    local = [item for item in items if span_of(item) is not None and any(s.contains(span_of(item)) for s in spans)]
    return local or list(items)


def backward_reconstruct(a: SvaAssertion, g: DesignCdfg, chunks: Sequence[RtlChunk] = ()) -> List[FixCandidate]:
    """
    Keeps the consequent and rebuilds the antecedent from the guard of each
    RTL assignment that produces the consequent's expected value with
    matching timing. Candidates sharing more guard signals with the original
    antecedent come first, then smaller antecedents.

    Raises:
        NoDriversFound: If no consequent signal has a driver in the design.
    """
    has_drivers = False
    for term in a.consequent:
        split = relation(term)
        if split is None:
            continue
        try:
            has_drivers = has_drivers or bool(effective_drivers(g, split[0]))
        except UnknownSignal:
            continue
    if not has_drivers:
        raise NoDriversFound(f"No RTL driver found for the consequent of {a.name or render_property(a)}")

    matches = [m for m in matching_drivers(a, g) if m.aligned]
    if chunks:
        matches = _chunk_local(matches, chunks)
    original_signals = set(a.antecedent_signals())
    ranked: List[Tuple[Tuple[int, int, int], FixCandidate]] = []
    for order, match in enumerate(matches):
        guard = match.assignment.guard
        if not guard:
            candidate = FixCandidate(a, BACKWARD_RECONSTRUCTION, describe_edit(a, a), confidence="low")
            ranked.append(((0, 0, order), candidate))
            continue
        antecedent = conjoin(guard)
        fixed = replace(a, antecedent=antecedent, implication=a.implication or OVERLAPPED)
        overlap = len(original_signals & set(match.assignment.guard_signals()))
        edit = dict(describe_edit(a, fixed), driver=str(match.assignment.span))
        ranked.append(((-overlap, size(antecedent), order), FixCandidate(fixed, BACKWARD_RECONSTRUCTION, edit)))
    ranked.sort(key=lambda item: item[0])
    return [candidate for _, candidate in ranked]


def _forward_consequent(a: SvaAssertion, signal: str, rhs: Expr, depth: int) -> SvaAssertion:
    term = Binary("==", Ident(signal), past_shift(rhs, depth))
    if a.implication == NON_OVERLAPPED and depth >= 1:
        return replace(a, delays=(depth - 1,), consequent=(term,))
    return replace(a, implication=OVERLAPPED, delays=(depth,), consequent=(term,))


def forward_reconstruct(a: SvaAssertion, g: DesignCdfg, chunks: Sequence[RtlChunk] = ()) -> List[FixCandidate]:
    """
    Keeps the antecedent and rebuilds the consequent from every guarded RTL
    assignment whose guard the antecedent implies, plus the signals that
    merely forward its target. With `chunks`, only guards inside them are
    used unless none is. Candidates naming the original consequent signals
    come first, then shallower ones.

    Raises:
        NoForwardTargets: If the antecedent implies no guard in the design.
    """
    facts = conjuncts(a.antecedent)
    if not facts:
        raise NoForwardTargets(f"{a.name or render_property(a)} has no antecedent to trace forward")
    implied = [
        assignment for assignment in g.assignments
        if assignment.guard and all(implies(facts, predicate, g.widths) for predicate in assignment.guard)
    ]
    if chunks:
        implied = _chunk_local(implied, chunks, lambda assignment: assignment.span)
    original_signals = set(a.consequent_signals())
    ranked: List[Tuple[Tuple[int, int, int], FixCandidate]] = []
    order = 0
    for assignment in implied:
        reached = [(assignment.target, assignment.depth)]
        reached += [(node, assignment.depth + stage) for node, stage in forwarding_chain(g, assignment.target)]
        for node, depth in reached:
            fixed = _forward_consequent(a, g.leaf(node), assignment.rhs, depth)
            overlap = len(original_signals & set(fixed.consequent_signals()))
            edit = dict(describe_edit(a, fixed), driver=str(assignment.span))
            ranked.append(((-overlap, depth, order), FixCandidate(fixed, FORWARD_RECONSTRUCTION, edit)))
            order += 1
    if not ranked:
        raise NoForwardTargets(f"The antecedent of {a.name or render_property(a)} implies no RTL guard")
    ranked.sort(key=lambda item: item[0])
    return [candidate for _, candidate in ranked]


def interleave(first: Sequence[FixCandidate], second: Sequence[FixCandidate]) -> List[FixCandidate]:
    merged = []
    for i in range(max(len(first), len(second))):
        merged += [c[i] for c in (first, second) if i < len(c)]
    return merged


def describe_drivers(a: SvaAssertion, g: DesignCdfg) -> List[str]:
    lines = []
    for name in a.consequent_signals():
        try:
            assignments: List[GuardedAssignment] = guard_conditions(g, name)
        except UnknownSignal:
            continue
        for assignment in assignments:
            timing = "registered" if assignment.timing == SEQUENTIAL else "combinational"
            condition = render(assignment.guard_expr)
            lines.append(f"{render(assignment.lhs)} <= {render(assignment.rhs)} when {condition} ({timing}, {assignment.span})")
    return lines


def fix_logic_bar(
    a: SvaAssertion,
    g: DesignCdfg,
    traces: Sequence[CounterexampleTrace],
    chunks: Sequence[RtlChunk],
    llm: Optional[LlmBackend] = None,
    classification: Optional[ErrorClassification] = None,
    prompts: Optional[List[Prompt]] = None,
    cap: int = CANDIDATE_CAP,
) -> FixOutcome:
    """
    Repairs a logic error from both ends. Backward and forward candidates are
    interleaved (backward first) and validated in order; model proposals are
    requested only when none of them is accepted.
    """
    outcome = FixOutcome(name=a.name or "", original=a, classification=classification)
    try:
        backward = backward_reconstruct(a, g, chunks)
    except NoDriversFound as e:
        logging.info(f"{outcome.name}: {e}")
        backward = []
    try:
        forward = forward_reconstruct(a, g, chunks)
    except NoForwardTargets as e:
        logging.info(f"{outcome.name}: {e}")
        forward = []

    if try_candidates(outcome, interleave(backward, forward), traces, cap):
        return outcome
    if llm is not None:
        prompt = render_prompt(
            "fix_logic",
            "fix_logic",
            assertion=render_assertion(a),
            waveforms=waveforms(a, traces, g),
            chunks=chunks,
            drivers=describe_drivers(a, g),
        )
        try_candidates(outcome, _llm_candidates(llm, prompt, a, prompts), traces, cap)
    return outcome


# --- Single-prompt comparison strategy ---

def fix_direct(
    a: SvaAssertion,
    traces: Sequence[CounterexampleTrace],
    llm: Optional[LlmBackend],
    classification: Optional[ErrorClassification] = None,
    prompts: Optional[List[Prompt]] = None,
) -> FixOutcome:
    """One repair prompt with the assertion and its waveform, no RTL guidance."""
    _require_failure(a, traces)
    outcome = FixOutcome(name=a.name or "", original=a, classification=classification, strategy=DIRECT)
    if llm is None:
        return outcome
    prompt = render_prompt("direct", "direct", assertion=render_assertion(a), waveforms=waveforms(a, traces))
    try_candidates(outcome, _llm_candidates(llm, prompt, a, prompts), traces)
    return outcome
