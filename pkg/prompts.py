"""
Prompt templates for every LLM-backed step, rendered with jinja2, plus the
text forms they embed (waveform tables, numbered code chunks) and the
answer-tag parsers.
"""
import re
from typing import Iterable, List, Optional, Sequence

from jinja2 import DictLoader, Environment, StrictUndefined

from llm_client import Prompt
from traces import CounterexampleTrace, format_value

WAVEFORM_WINDOW = 32

SYSTEM_PROMPT = (
    "You are a hardware verification engineer. The RTL you are shown is golden: "
    "it is always correct. Only the SystemVerilog assertion may be wrong."
)

TEMPLATES = {
    "chunks": """{% for chunk in chunks %}
// chunk {{ chunk.id }}: module {{ chunk.module }} ({{ chunk.span.file }}:{{ chunk.span.start_line }}-{{ chunk.span.end_line }})
{{ chunk.numbered }}
{% endfor %}""",
    "filter": """Assertion under repair:
{{ assertion }}

Candidate RTL code snippets retrieved for its consequent signals:
{% include "chunks" %}

Think step by step about which snippets define or constrain the signals of the assertion.
Drop snippets that only declare unrelated signals or implement unrelated logic.
Answer with the ids of the snippets to keep, comma separated, as <keep>id, id, ...</keep>.
""",
    "classify": """The following assertion fails on the golden RTL.

Assertion:
{{ assertion }}

Counterexample waveform (values sampled at each clock edge; x = unknown):
{% for table in waveforms %}
{{ table }}
{% endfor %}

Relevant RTL code:
{% include "chunks" %}

Waveforms can mislead: a consequent that appears one cycle late may instead be
guarded by a different antecedent condition in the RTL. Check the guards of the
assignments in the code before deciding.

Is this a timing error (the consequent is sampled too early or too late) or a
logic error (the antecedent or consequent condition is wrong)?
Answer <answer>Timing</answer> or <answer>Logic</answer>.
""",
    "fix_timing": """The following assertion has a timing error: its consequent is checked in the wrong cycle.

Assertion:
{{ assertion }}

Counterexample waveform:
{% for table in waveforms %}
{{ table }}
{% endfor %}

Relevant RTL code:
{% include "chunks" %}

Simulate the signals of the assertion cycle by cycle through the code above,
count the register stages between antecedent and consequent, and correct the delays.
Return the corrected assertion as <assertion>...</assertion>.
""",
    "fix_logic": """The following assertion has a logic error.

Assertion:
{{ assertion }}

Counterexample waveform:
{% for table in waveforms %}
{{ table }}
{% endfor %}

Relevant RTL code:
{% include "chunks" %}

Drivers of the consequent signals and their guards:
{% for line in drivers %}
- {{ line }}
{% else %}
- none found
{% endfor %}

Repair the assertion from both ends. First keep the consequent and rebuild the
antecedent from the guards of the drivers above. Then keep the antecedent and
trace its effect forward through the code to rebuild the consequent.
Return each repaired assertion as <assertion>...</assertion>.
""",
    "direct": """The following SystemVerilog assertion fails on the golden RTL.

Assertion:
{{ assertion }}

Counterexample waveform:
{% for table in waveforms %}
{{ table }}
{% endfor %}

Return a corrected assertion as <assertion>...</assertion>.
""",
}

_environment = Environment(
    loader=DictLoader(TEMPLATES),
    undefined=StrictUndefined,
    trim_blocks=True,
    lstrip_blocks=True,
    keep_trailing_newline=True,
    autoescape=False,
)


def render_prompt(template: str, stage: str, **context) -> Prompt:
    user = _environment.get_template(template).render(**context)
    return Prompt(system=SYSTEM_PROMPT, user=user, stage=stage)


def waveform_window(length: int, center: Optional[int], window: int = WAVEFORM_WINDOW) -> range:
    """Up to `window` cycles centred on `center` and clamped to the trace."""
    if center is None:
        center = 0
    start = max(0, min(center - window // 2, length - window))
    return range(start, min(length, start + window))


def waveform_table(trace: CounterexampleTrace, names: Sequence[str], center: Optional[int], title: str = "") -> str:
    """Fixed-width table, one row per signal and one column per sampled cycle."""
    cycles = waveform_window(trace.length, center)
    rows: List[List[str]] = [["cycle"] + [str(c) for c in cycles]]
    for name in names:
        if name not in trace.values:
            continue
        width = trace.widths[name]
        rows.append([name] + [format_value(trace.values[name][c], width) for c in cycles])
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    lines = [" | ".join(cell.rjust(widths[i]) if i else cell.ljust(widths[i]) for i, cell in enumerate(row)) for row in rows]
    header = f"trace {title}" if title else "trace"
    return header + "\n" + "\n".join(line.rstrip() for line in lines)


def extract_tag(text: str, tag: str) -> Optional[str]:
    match = re.search(rf"<{tag}>(.*?)</{tag}>", text, re.DOTALL | re.IGNORECASE)
    return match.group(1).strip() if match else None


def extract_all_tags(text: str, tag: str) -> List[str]:
    return [m.strip() for m in re.findall(rf"<{tag}>(.*?)</{tag}>", text, re.DOTALL | re.IGNORECASE)]


def parse_id_list(text: str) -> List[int]:
    return [int(token) for token in re.findall(r"\d+", text)]


def numbered(lines: Iterable[str], first_line: int) -> str:
    return "\n".join(f"{number:>4} | {line}".rstrip() for number, line in enumerate(lines, start=first_line))
