import os
from typing import Dict, List, Optional

import pytest

from cdfg import build_cdfg
from expressions import Evaluator
from hdl_frontend import load_assertion_list, load_design
from mutation_harness import SyntheticDesign, generate_corpus
from traces import load_trace

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
I2C_DIR = os.path.join(ROOT, "fixtures", "i2c_regs")
I2C_SOURCE = os.path.join(I2C_DIR, "i2c_regs.v")
I2C_ASSERTIONS = os.path.join(I2C_DIR, "assertions.json")
I2C_TRACE = os.path.join(I2C_DIR, "traces", "txr_readback.vcd")
I2C_CLOCK = "wb_clk_i"

TRAP_TEXT = "assert property (@(posedge wb_clk_i) (wb_adr_i == 3'b100) |-> ##1 (wb_dat_o == $past(txr)));"
TRAP_FIX_TEXT = "assert property (@(posedge wb_clk_i) (wb_adr_i == 3'b101) |-> ##1 (wb_dat_o == $past(txr)));"


class ColumnEvaluator(Evaluator):
    """Evaluates expressions over plain per-cycle value lists."""

    def __init__(self, columns: Dict[str, List[Optional[int]]], widths: Dict[str, int]):
        self.columns = columns
        self.widths = widths

    def read(self, name: str, cycle: int) -> Optional[int]:
        values = self.columns[name]
        if cycle < 0 or cycle >= len(values):
            return None
        return values[cycle]

    def signal_width(self, name: str) -> int:
        return self.widths[name]


@pytest.fixture(scope="session")
def i2c_design():
    return load_design([I2C_SOURCE])


@pytest.fixture(scope="session")
def i2c_cdfg(i2c_design):
    return build_cdfg(i2c_design)


@pytest.fixture(scope="session")
def i2c_trace():
    return load_trace(I2C_TRACE, I2C_CLOCK)


@pytest.fixture(scope="session")
def trap_assertion():
    return load_assertion_list(I2C_ASSERTIONS)[0]


@pytest.fixture(scope="session")
def regfile():
    return SyntheticDesign(name="regfile_t", address_bits=2, width=4, pipeline=0)


@pytest.fixture(scope="session")
def piped_regfile():
    return SyntheticDesign(name="regfile_p", address_bits=2, width=4, pipeline=2)


@pytest.fixture
def in_tmp(tmp_path, monkeypatch):
    """Runs the test from an empty folder so log files land there."""
    monkeypatch.chdir(tmp_path)
    return tmp_path


@pytest.fixture(scope="session")
def corpus():
    return generate_corpus(timing=6, logic=6, seed=5, designs=2, length=64)


@pytest.fixture(scope="session")
def corpus_graphs(corpus):
    return {m.design.name: build_cdfg(m.design.parse()) for m in corpus}
