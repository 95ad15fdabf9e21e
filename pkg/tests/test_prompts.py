import pytest
from jinja2 import UndefinedError

from prompts import (
    SYSTEM_PROMPT,
    extract_all_tags,
    extract_tag,
    numbered,
    parse_id_list,
    render_prompt,
    waveform_table,
    waveform_window,
)


def test_render_prompt_carries_stage_and_system():
    prompt = render_prompt("direct", "fix-direct", assertion="a |-> b", waveforms=["trace\ncycle | 0"])
    assert prompt.system == SYSTEM_PROMPT
    assert prompt.stage == "fix-direct"
    assert "a |-> b" in prompt.user
    assert "Return a corrected assertion" in prompt.user


def test_missing_context_is_an_error():
    with pytest.raises(UndefinedError):
        render_prompt("direct", "fix-direct", assertion="a |-> b")


def test_logic_prompt_lists_drivers(i2c_design):
    prompt = render_prompt("fix_logic", "fix-logic", assertion="x", waveforms=[], chunks=[], drivers=[])
    assert "- none found" in prompt.user
    prompt = render_prompt("fix_logic", "fix-logic", assertion="x", waveforms=[], chunks=[], drivers=["txr <= wb_dat_i"])
    assert "- txr <= wb_dat_i" in prompt.user
    assert "none found" not in prompt.user


@pytest.mark.parametrize(
    "length, center, expected",
    [
        (100, 50, range(34, 66)),
        (10, 3, range(0, 10)),
        (100, None, range(0, 32)),
        (100, 99, range(68, 100)),
    ],
)
def test_waveform_window(length, center, expected):
    assert waveform_window(length, center) == expected


def test_waveform_table(i2c_trace):
    table = waveform_table(i2c_trace, ["wb_adr_i", "ghost", "wb_dat_o"], 4, title="txr_readback")
    lines = table.split("\n")
    assert lines[0] == "trace txr_readback"
    assert lines[1].startswith("cycle")
    assert len(lines) == 4
    cells = [cell.strip() for cell in lines[2].split("|")]
    assert cells[0] == "wb_adr_i"
    assert cells[4] == "100"
    assert [cell.strip() for cell in lines[3].split("|")][5] == "41"


def test_tag_extraction():
    answer = "Thinking...\n<ANSWER> Logic </ANSWER>"
    assert extract_tag(answer, "answer") == "Logic"
    assert extract_tag(answer, "keep") is None
    assert extract_all_tags("<assertion>a</assertion> and <assertion>\nb\n</assertion>", "assertion") == ["a", "b"]
    assert parse_id_list("1, 3 and 7") == [1, 3, 7]


def test_numbered_lines():
    assert numbered(["a", ""], 5) == "   5 | a\n   6 |"
