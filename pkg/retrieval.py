"""
Chunking of RTL sources, a BM25 index with a signal-name boost, coarse
retrieval from the consequent signals and fine filtering of the hits.
"""
import json
import logging
import re
from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from cdfg import BACKWARD, FORWARD, DesignCdfg, cone_of_influence
from exceptions import LlmBackendError, UnknownSignal
from expressions import Span
from hdl_frontend import (
    VERILOG_KEYWORDS,
    Declaration,
    DesignAst,
    ModuleAst,
    SvaAssertion,
    item_signals,
    render_assertion,
)
from llm_client import LlmBackend, Prompt
from prompts import extract_tag, numbered, parse_id_list, render_prompt

QUERY_TEMPLATE = "What are the code snippets related to {signal}?"
DEFAULT_TOP_K = 10
BM25_K1 = 1.5
BM25_B = 0.75

DEFINES = 2
USES = 1
LEXICAL = 0

_IDENTIFIER = re.compile(r"[A-Za-z_][A-Za-z0-9_$]*")


@dataclass(frozen=True)
class RtlChunk:
    id: int
    module: str
    span: Span
    text: str
    defined: FrozenSet[str]
    used: FrozenSet[str]
    declared: FrozenSet[str]
    kind: str = "logic"

    @property
    def numbered(self) -> str:
        return numbered(self.text.split("\n"), self.span.start_line)

    @property
    def signals(self) -> FrozenSet[str]:
        return self.defined | self.used | self.declared

    def qualified(self, names: Iterable[str]) -> Set[str]:
        return {f"{self.module}.{name}" for name in names}

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "module": self.module,
            "file": self.span.file,
            "start_line": self.span.start_line,
            "end_line": self.span.end_line,
            "defined": sorted(self.defined),
            "used": sorted(self.used),
        }


def normalize_signal(name: str) -> str:
    """Drops the module qualifier and a trailing `_i`/`_o` port suffix."""
    name = name.rsplit(".", 1)[-1]
    return re.sub(r"_[io]$", "", name)


def tokenize(text: str) -> List[str]:
    """Identifiers (minus Verilog keywords) plus their `_`-separated parts, lower-cased."""
    tokens: List[str] = []
    for identifier in _IDENTIFIER.findall(text):
        if identifier in VERILOG_KEYWORDS:
            continue
        lowered = identifier.lower()
        tokens.append(lowered)
        parts = [part for part in lowered.split("_") if part]
        if len(parts) > 1:
            tokens.extend(parts)
    return tokens


# --- Chunking ---

def _item_kind(item) -> str:
    if isinstance(item, Declaration):
        return "decl"
    return type(item).__name__


def _groups(module: ModuleAst) -> List[List[object]]:
    """Runs of declarations or of continuous assigns stay together; other items stand alone."""
    groups: List[List[object]] = []
    previous_kind: Optional[str] = None
    for item in module.items:
        kind = _item_kind(item)
        same_run = kind == previous_kind and kind in ("decl", "ContinuousAssign")
        shares_line = groups and item.span.start_line <= groups[-1][-1].span.end_line
        if groups and (same_run or shares_line):
            groups[-1].append(item)
        else:
            groups.append([item])
        previous_kind = kind
    return groups


def chunk_design(ast: DesignAst) -> List[RtlChunk]:
    """
    Splits every module into chunks, one per always-block, instance, run of
    continuous assigns or run of declarations. Comment and blank lines go to
    the chunk that follows them, so each source line is in exactly one chunk.
    """
    texts = {source.path: source.text.split("\n") for source in ast.sources}
    pending: Dict[str, List[Tuple[ModuleAst, List[object], int, int]]] = {}
    for module in ast.modules:
        groups = _groups(module)
        start, end = module.span.start_line, module.span.end_line
        entries = pending.setdefault(module.file, [])
        if not groups:
            entries.append((module, [], start, end))
            continue
        bounds = []
        for i, group in enumerate(groups):
            first = start if i == 0 else bounds[-1][1] + 1
            last = group[-1].span.end_line if i < len(groups) - 1 else end
            bounds.append((first, max(last, first)))
        for group, (first, last) in zip(groups, bounds):
            entries.append((module, group, first, last))

    chunks: List[RtlChunk] = []
    for file, entries in pending.items():
        lines = texts.get(file, [])
        for position, (module, group, first, last) in enumerate(entries):
            if position == 0:
                first = 1
            else:
                first = entries[position - 1][3] + 1 if first > entries[position - 1][3] + 1 else first
            if position == len(entries) - 1 and lines:
                last = max(last, len(lines))
            entries[position] = (module, group, first, last)
        for module, group, first, last in entries:
            defined: Set[str] = set()
            used: Set[str] = set()
            declared: Set[str] = set()
            for item in group:
                d, u = item_signals(item, ast)
                defined |= d
                used |= u
                if isinstance(item, Declaration):
                    declared.update(item.names)
            if module.span.start_line >= first and module.span.start_line <= last:
                declared.update(port.name for port in module.ports)
            kind = "declarations" if all(isinstance(item, Declaration) for item in group) else "logic"
            text = "\n".join(lines[first - 1:last]) if lines else ""
            chunks.append(
                RtlChunk(
                    id=len(chunks) + 1,
                    module=module.name,
                    span=Span(file, first, last),
                    text=text,
                    defined=frozenset(defined),
                    used=frozenset(used),
                    declared=frozenset(declared),
                    kind=kind,
                )
            )
    logging.info(f"Chunked design into {len(chunks)} chunk(s)")
    return chunks


def chunks_to_json(chunks: Sequence[RtlChunk]) -> str:
    return json.dumps([chunk.to_json() for chunk in chunks], indent=2, sort_keys=True)


# --- Index ---

class ChunkIndex:
    """BM25 statistics over chunk tokens and exact/suffix-normalised signal tables."""

    def __init__(self, chunks: Sequence[RtlChunk]):
        self.chunks = list(chunks)
        self.by_id = {chunk.id: chunk for chunk in self.chunks}
        documents = [tokenize(chunk.text) for chunk in self.chunks]
        self.vocabulary = {term: i for i, term in enumerate(sorted({t for doc in documents for t in doc}))}
        self.tf = np.zeros((len(self.chunks), len(self.vocabulary)), dtype=np.float64)
        for row, doc in enumerate(documents):
            for term in doc:
                self.tf[row, self.vocabulary[term]] += 1.0
        self.lengths = self.tf.sum(axis=1)
        self.average_length = float(self.lengths.mean()) if len(self.chunks) else 0.0
        df = (self.tf > 0).sum(axis=0)
        n = len(self.chunks)
        self.idf = np.log(1.0 + (n - df + 0.5) / (df + 0.5))

        self.definers: Dict[str, Set[int]] = {}
        self.users: Dict[str, Set[int]] = {}
        for chunk in self.chunks:
            for name in chunk.defined:
                self.definers.setdefault(name, set()).add(chunk.id)
                self.definers.setdefault(normalize_signal(name), set()).add(chunk.id)
            for name in chunk.used | chunk.declared:
                self.users.setdefault(name, set()).add(chunk.id)
                self.users.setdefault(normalize_signal(name), set()).add(chunk.id)

    def bm25(self, query: Sequence[str]) -> np.ndarray:
        scores = np.zeros(len(self.chunks), dtype=np.float64)
        if not self.chunks or self.average_length == 0:
            return scores
        norm = BM25_K1 * (1 - BM25_B + BM25_B * self.lengths / self.average_length)
        for term in query:
            column = self.vocabulary.get(term)
            if column is None:
                continue
            tf = self.tf[:, column]
            scores += self.idf[column] * tf * (BM25_K1 + 1) / (tf + norm)
        return scores

    def tier(self, chunk: RtlChunk, signal: str) -> int:
        exact = signal in self.definers or signal in self.users
        key = signal if exact else normalize_signal(signal)
        if chunk.id in self.definers.get(key, ()):
            return DEFINES
        if chunk.id in self.users.get(key, ()):
            return USES
        return LEXICAL

    def knows(self, signal: str) -> bool:
        return any(key in table for key in (signal, normalize_signal(signal)) for table in (self.definers, self.users))


def build_index(chunks: Sequence[RtlChunk]) -> ChunkIndex:
    return ChunkIndex(chunks)


def coarse_retrieve(index: ChunkIndex, signal: str, k: int = DEFAULT_TOP_K) -> List[Tuple[RtlChunk, float]]:
    """
    Top-k chunks for the query template instantiated with `signal`. Chunks
    defining the signal rank above chunks using it, which rank above purely
    lexical hits; BM25 orders each tier and source order breaks ties.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    signal = signal.rsplit(".", 1)[-1]
    if not index.knows(signal):
        logging.warning(f"Signal '{signal}' does not appear in any chunk; nothing retrieved")
        return []
    query = tokenize(QUERY_TEMPLATE.format(signal=signal))
    scores = index.bm25(query)
    ranked = []
    for row, chunk in enumerate(index.chunks):
        tier = index.tier(chunk, signal)
        lexical = float(scores[row])
        if tier == LEXICAL and lexical <= 0:
            continue
        ranked.append((chunk, tier + lexical / (1.0 + lexical)))
    ranked.sort(key=lambda hit: (-hit[1], hit[0].id))
    return ranked[:k]


def retrieve_for_assertion(index: ChunkIndex, assertion: SvaAssertion, k: int = DEFAULT_TOP_K) -> List[Tuple[RtlChunk, float]]:
    """Runs the query once per consequent signal and merges the hits by max score."""
    best: Dict[int, float] = {}
    for signal in assertion.consequent_signals():
        for chunk, score in coarse_retrieve(index, signal, k):
            best[chunk.id] = max(score, best.get(chunk.id, score))
    ranked = sorted(best.items(), key=lambda item: (-item[1], item[0]))
    return [(index.by_id[chunk_id], score) for chunk_id, score in ranked[:k]]


def _resolvable(g: DesignCdfg, names: Iterable[str]) -> List[str]:
    resolved = []
    for name in names:
        try:
            resolved.append(g.resolve(name))
        except UnknownSignal:
            logging.warning(f"Signal '{name}' is not in the CDFG; ignored for filtering")
    return resolved


def build_filter_prompt(assertion: SvaAssertion, chunks: Sequence[RtlChunk]) -> Prompt:
    return render_prompt("filter", "filter", assertion=render_assertion(assertion), chunks=chunks)


def fine_filter(
    chunks: Sequence[RtlChunk],
    assertion: SvaAssertion,
    g: DesignCdfg,
    llm: Optional[LlmBackend] = None,
    prompts: Optional[List[Prompt]] = None,
) -> List[RtlChunk]:
    """
    Keeps the chunks relevant to the assertion, in input order.

    Without a backend a chunk survives when one of its signals is in the
    backward cone of the consequent signals or the forward cone of the
    antecedent signals. With a backend the model picks the ids; ids that
    were not offered are discarded with a warning.

    Raises:
        LlmBackendError: If the backend fails or its answer has no <keep> tag.
    """
    chunks = [chunk[0] if isinstance(chunk, tuple) else chunk for chunk in chunks]
    if llm is not None:
        prompt = build_filter_prompt(assertion, chunks)
        if prompts is not None:
            prompts.append(prompt)
        answer = extract_tag(llm.complete(prompt).text, "keep")
        if answer is None:
            raise LlmBackendError("Filter answer has no <keep> tag")
        offered = {chunk.id for chunk in chunks}
        keep = set(parse_id_list(answer))
        foreign = sorted(keep - offered)
        if foreign:
            logging.warning(f"Discarding chunk ids not offered to the model: {foreign}")
        return [chunk for chunk in chunks if chunk.id in keep]

    relevant: Set[str] = set()
    consequent = _resolvable(g, assertion.consequent_signals())
    antecedent = _resolvable(g, assertion.antecedent_signals())
    if consequent:
        relevant |= set(cone_of_influence(g, consequent, BACKWARD))
    if antecedent:
        relevant |= set(cone_of_influence(g, antecedent, FORWARD))
    return [chunk for chunk in chunks if chunk.qualified(chunk.defined | chunk.used) & relevant]
