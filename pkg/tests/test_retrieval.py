import json

import pytest

from conftest import I2C_SOURCE
from exceptions import LlmBackendError
from hdl_frontend import parse_assertion
from llm_client import MockBackend
from retrieval import (
    DEFINES,
    LEXICAL,
    USES,
    build_index,
    chunk_design,
    chunks_to_json,
    coarse_retrieve,
    fine_filter,
    normalize_signal,
    retrieve_for_assertion,
    tokenize,
)


@pytest.fixture(scope="module")
def chunks(i2c_design):
    return chunk_design(i2c_design)


@pytest.fixture(scope="module")
def index(chunks):
    return build_index(chunks)


def defining(chunks, name):
    return next(chunk for chunk in chunks if name in chunk.defined)


def test_every_source_line_in_exactly_one_chunk(chunks):
    with open(I2C_SOURCE) as f:
        total = len(f.read().split("\n"))
    covered = []
    for chunk in chunks:
        covered.extend(range(chunk.span.start_line, chunk.span.end_line + 1))
    assert covered == list(range(1, total + 1))
    assert [chunk.id for chunk in chunks] == list(range(1, len(chunks) + 1))


def test_one_chunk_per_always_block(chunks):
    writes = defining(chunks, "txr")
    assert writes.defined == {"ctr", "txr", "cr"}
    assert "// register writes" in writes.text
    assert defining(chunks, "rxr").defined == {"rxr", "sr"}
    assert defining(chunks, "wb_dat_o").used >= {"wb_adr_i", "txr", "sr"}
    assert "wb_dat_o" in chunks[0].declared


def test_normalize_and_tokenize():
    assert normalize_signal("i2c_regs.wb_dat_o") == "wb_dat"
    assert normalize_signal("txr") == "txr"
    assert tokenize("always @(posedge wb_clk_i) txr <= 8'h00;") == [
        "wb_clk_i", "wb", "clk", "i", "txr", "h00",
    ]


def test_definer_ranks_first(chunks, index):
    hits = coarse_retrieve(index, "txr", k=10)
    assert hits[0][0] is defining(chunks, "txr")
    assert index.tier(hits[0][0], "txr") == DEFINES
    assert {index.tier(chunk, "txr") for chunk, _ in hits[1:]} <= {USES, LEXICAL}
    scores = [score for _, score in hits]
    assert scores == sorted(scores, reverse=True)


def test_top_k_and_unknown_signals(index):
    assert len(coarse_retrieve(index, "txr", k=1)) == 1
    assert coarse_retrieve(index, "ghost") == []
    with pytest.raises(ValueError):
        coarse_retrieve(index, "txr", k=0)


def test_port_suffix_is_matched(chunks, index):
    hits = coarse_retrieve(index, "wb_dat")
    assert hits[0][0] is defining(chunks, "wb_dat_o")


def test_retrieve_for_assertion_merges_consequent_queries(chunks, index, trap_assertion):
    hits = retrieve_for_assertion(index, trap_assertion, k=10)
    ids = [chunk.id for chunk, _ in hits]
    assert len(ids) == len(set(ids))
    assert {defining(chunks, "wb_dat_o").id, defining(chunks, "txr").id} <= set(ids[:2])


def test_structural_filter_uses_both_cones(chunks, i2c_cdfg):
    assertion = parse_assertion("rx_byte |-> ##1 (rxr == $past(rx_byte))")
    kept = fine_filter(chunks, assertion, i2c_cdfg)
    assert defining(chunks, "rxr") in kept
    assert defining(chunks, "wb_dat_o") in kept
    assert defining(chunks, "txr") not in kept


def test_llm_filter_keeps_offered_ids_in_order(chunks, i2c_cdfg, trap_assertion):
    llm = MockBackend([("ids of the snippets to keep", "<keep>4, 2, 99</keep>")])
    prompts = []
    kept = fine_filter(chunks, trap_assertion, i2c_cdfg, llm, prompts)
    assert [chunk.id for chunk in kept] == [2, 4]
    assert len(prompts) == 1 and prompts[0].stage == "filter"
    assert "// chunk 2: module i2c_regs" in prompts[0].user


def test_llm_filter_without_tag(chunks, i2c_cdfg, trap_assertion):
    llm = MockBackend([(".", "keep them all")])
    with pytest.raises(LlmBackendError):
        fine_filter(chunks, trap_assertion, i2c_cdfg, llm)


def test_chunks_to_json(chunks):
    listing = json.loads(chunks_to_json(chunks))
    assert listing[0]["id"] == 1
    assert listing[0]["start_line"] == 1
    assert set(listing[0]) == {"id", "module", "file", "start_line", "end_line", "defined", "used"}
