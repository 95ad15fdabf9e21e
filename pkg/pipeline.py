"""
Batch orchestration: configuration, benchmark manifests, trace discovery and
the per-assertion run through retrieval, classification, repair and
validation.
"""
import configparser
import glob
import json
import logging
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Any, Dict, List, Literal, Optional, Sequence

import sentry_sdk
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from cdfg import DesignCdfg, build_cdfg
from classify import TIMING, classify_error, classify_heuristic
from exceptions import ConfigError, LlmBackendError, NoTraces, SvaFixError
from fix import DIRECT, SKIPPED, STAGED, UNFIXED, FixOutcome, fix_direct, fix_logic_bar, fix_timing, validation_json
from hdl_frontend import AssertionEntry, SvaAssertion, load_assertion_entries, load_design, render_assertion
from llm_client import LlmBackend, Prompt, create_backend
from metrics_report import FixReport, coverage_row, fr_metrics, outcome_rows, write_report
from retrieval import ChunkIndex, build_index, chunk_design, fine_filter, retrieve_for_assertion
from setup_manager import prepare_folders
from state_machine import Stage
from traces import CounterexampleTrace, load_trace, validate

LOC_TOLERANCE = 0.02

# INI section -> {key: PipelineConfig field}
CONFIG_SECTIONS: Dict[str, Dict[str, str]] = {
    "design": {"name": "design_name", "sources": "sources", "strict": "strict"},
    "inputs": {"assertions": "assertions", "traces": "traces", "clock": "clock", "edge": "edge", "manifest": "manifest"},
    "llm": {
        "backend": "backend",
        "fixtures": "fixtures",
        "mock_rules": "mock_rules",
        "record": "record",
        "endpoint": "endpoint",
        "model": "model",
        "api_key_env": "api_key_env",
        "temperature": "temperature",
        "max_in_flight": "max_in_flight",
        "timeout": "timeout",
    },
    "search": {"shift_bound": "shift_bound", "top_k": "top_k", "candidate_cap": "candidate_cap"},
    "run": {"strategy": "strategy", "out": "out", "jobs": "jobs", "seed": "seed"},
}
PATH_FIELDS = ("sources", "assertions", "traces", "manifest", "fixtures", "mock_rules", "out")
ENV_OVERRIDES = {"SVAFIX_LLM_ENDPOINT": "endpoint", "SVAFIX_LLM_MODEL": "model"}


def _default_jobs() -> int:
    return os.cpu_count() or 1


class PipelineConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    design_name: str = "design"
    sources: List[str] = Field(min_length=1)
    strict: bool = False

    assertions: str
    traces: str
    clock: str = "clk"
    edge: Literal["posedge", "negedge"] = "posedge"
    manifest: Optional[str] = None

    backend: Literal["none", "http", "replay", "mock"] = "none"
    fixtures: Optional[str] = None
    mock_rules: Optional[str] = None
    record: bool = False
    endpoint: Optional[str] = None
    model: Optional[str] = None
    api_key_env: str = "SVAFIX_API_KEY"
    temperature: float = Field(default=0.0, ge=0.0)
    max_in_flight: int = Field(default=4, gt=0)
    timeout: float = Field(default=120.0, gt=0)

    shift_bound: int = Field(default=3, gt=0)
    top_k: int = Field(default=10, gt=0)
    candidate_cap: int = Field(default=16, gt=0)

    strategy: Literal["staged", "direct"] = STAGED
    out: str = "out"
    jobs: int = Field(default_factory=_default_jobs, gt=0)
    seed: int = 0

    @field_validator("sources")
    @classmethod
    def _sources_exist(cls, paths: List[str]) -> List[str]:
        missing = [path for path in paths if not os.path.isfile(path)]
        if missing:
            raise ValueError(f"source file(s) not found: {', '.join(missing)}")
        return paths

    @field_validator("assertions", "manifest", "mock_rules")
    @classmethod
    def _file_exists(cls, path: Optional[str]) -> Optional[str]:
        if path is not None and not os.path.isfile(path):
            raise ValueError(f"file not found: {path}")
        return path

    @field_validator("traces")
    @classmethod
    def _directory_exists(cls, path: str) -> str:
        if not os.path.isdir(path):
            raise ValueError(f"trace directory not found: {path}")
        return path

    @model_validator(mode="after")
    def _backend_inputs(self) -> "PipelineConfig":
        if self.backend == "replay":
            if not self.fixtures or not os.path.isfile(self.fixtures):
                raise ValueError("the replay backend needs an existing fixtures file")
            if self.record:
                raise ValueError("the replay backend cannot record")
        if self.record and (self.backend == "none" or not self.fixtures):
            raise ValueError("recording needs the http or mock backend and a fixtures path")
        if self.backend == "http" and not (self.endpoint and self.model):
            raise ValueError("the http backend needs an endpoint and a model")
        return self

    def echo(self) -> Dict[str, Any]:
        """Settings that shape the results, as echoed into the report."""
        return {
            "design": self.design_name,
            "backend": self.backend,
            "strategy": self.strategy,
            "shift_bound": self.shift_bound,
            "top_k": self.top_k,
            "candidate_cap": self.candidate_cap,
            "seed": self.seed,
        }


def _split_list(value: str) -> List[str]:
    return [item for item in re.split(r"[\s,]+", value) if item]


def load_config(path: str, overrides: Optional[Dict[str, Any]] = None) -> PipelineConfig:
    """
    Reads an INI config. Environment variables override the file and
    `overrides` (CLI flags; None values ignored) override both. Relative
    paths in the file are resolved against its directory.

    Raises:
        ConfigError: On a missing or malformed file, unknown sections or
            keys, or values that fail validation.
    """
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, "r", encoding="utf-8") as f:
            parser.read_file(f)
    except OSError as e:
        raise ConfigError(f"Cannot read config {path}: {e}") from e
    except configparser.Error as e:
        raise ConfigError(f"Malformed config {path}: {e}") from e

    base = os.path.dirname(os.path.abspath(path))
    values: Dict[str, Any] = {}
    for section in parser.sections():
        if section not in CONFIG_SECTIONS:
            raise ConfigError(f"Unknown config section [{section}] in {path}")
        keys = CONFIG_SECTIONS[section]
        for key, raw in parser.items(section):
            if key not in keys:
                raise ConfigError(f"Unknown key '{key}' in section [{section}] of {path}")
            name = keys[key]
            value: Any = _split_list(raw) if name == "sources" else raw.strip()
            if name in PATH_FIELDS:
                if isinstance(value, list):
                    value = [os.path.normpath(os.path.join(base, item)) for item in value]
                elif value:
                    value = os.path.normpath(os.path.join(base, value))
            values[name] = value

    for variable, name in ENV_OVERRIDES.items():
        if os.getenv(variable):
            values[name] = os.getenv(variable)
    for name, value in (overrides or {}).items():
        if value is not None:
            values[name] = value

    try:
        config = PipelineConfig(**values)
    except ValidationError as e:
        raise ConfigError(f"Invalid config {path}: {e}") from e
    logging.info(f"Loaded config {path}: design {config.design_name}, backend {config.backend}, strategy {config.strategy}")
    return config


# --- Benchmark manifests ---

class BenchmarkManifest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str
    area_um2: Optional[float] = None
    cells: Optional[int] = None
    loc: int = Field(gt=0)
    sources: List[str] = Field(min_length=1)
    assertions: Dict[Literal["TE", "LE"], int] = Field(default_factory=dict)


def load_manifest(path: str) -> List[BenchmarkManifest]:
    with open(path, "r", encoding="utf-8") as f:
        entries = json.load(f)
    try:
        return [BenchmarkManifest(**entry) for entry in entries]
    except ValidationError as e:
        raise ConfigError(f"Invalid benchmark manifest {path}: {e}") from e


_BLOCK_COMMENT = re.compile(r"/\*.*?\*/", re.DOTALL)
_LINE_COMMENT = re.compile(r"//.*")


def count_loc(text: str) -> int:
    """Non-blank lines once comments are removed. Block comments keep their line breaks."""
    text = _BLOCK_COMMENT.sub(lambda m: "\n" * m.group(0).count("\n"), text)
    return sum(1 for line in text.splitlines() if _LINE_COMMENT.sub("", line).strip())


def check_loc(entry: BenchmarkManifest, root: str) -> Optional[bool]:
    """
    Compares the manifest LOC with the listed sources under `root`.

    Returns:
        None when any source is absent locally, else whether the count is
        within ±2% of the manifest.
    """
    paths = [os.path.join(root, source) for source in entry.sources]
    if not all(os.path.isfile(path) for path in paths):
        logging.info(f"Sources of {entry.name} are not present under {root}; LOC not checked")
        return None
    total = 0
    for path in paths:
        with open(path, "r", encoding="utf-8", errors="replace") as f:
            total += count_loc(f.read())
    ok = abs(total - entry.loc) <= LOC_TOLERANCE * entry.loc
    if not ok:
        logging.warning(f"{entry.name}: counted {total} LOC, manifest says {entry.loc}")
    return ok


def _check_manifest(cfg: PipelineConfig):
    entries = {entry.name: entry for entry in load_manifest(cfg.manifest)}
    entry = entries.get(cfg.design_name)
    if entry is None:
        raise ConfigError(f"Design '{cfg.design_name}' is not listed in {cfg.manifest}")
    root = os.path.dirname(os.path.abspath(cfg.manifest))
    if check_loc(entry, root) is False:
        raise ConfigError(f"Sources of {entry.name} do not match the manifest LOC of {entry.loc}")


# --- Inputs ---

def find_traces(directory: str, name: str, clock: str, edge: str = "posedge") -> List[CounterexampleTrace]:
    """Loads `<name>.vcd` and every `<name>.*.vcd` (optionally gzipped) from `directory`, sorted by path."""
    stem = os.path.join(glob.escape(directory), glob.escape(name))
    paths = set()
    for pattern in (".vcd", ".vcd.gz", ".*.vcd", ".*.vcd.gz"):
        paths.update(glob.glob(stem + pattern))
    return [load_trace(path, clock, edge) for path in sorted(paths)]


def load_labels(path: str) -> Dict[str, str]:
    """Injected error labels (TE/LE) of a JSON assertion list; plain-text lists carry none."""
    with open(path, "r", encoding="utf-8") as f:
        content = f.read()
    if not content.lstrip().startswith("["):
        return {}
    return {entry["name"]: entry["label"] for entry in json.loads(content) if entry.get("name") and entry.get("label")}


def artifact_dir_name(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", name) or "_"


def write_artifacts(directory: str, outcome: FixOutcome, prompts: Sequence[Prompt]):
    """Dumps the prompts sent, the candidates tried and their verdicts for one assertion."""
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "prompts.txt"), "w", encoding="utf-8") as f:
        for prompt in prompts:
            f.write(f"=== {prompt.stage or 'prompt'} {prompt.hash} ===\n")
            f.write(f"--- system ---\n{prompt.system}\n--- user ---\n{prompt.user}\n\n")
    with open(os.path.join(directory, "candidates.json"), "w", encoding="utf-8") as f:
        json.dump([candidate.to_json() for candidate in outcome.candidates], f, indent=2, sort_keys=True)
    verdicts = {
        "name": outcome.name,
        "status": outcome.status,
        "error": outcome.error,
        "classification": outcome.classification.to_json() if outcome.classification else None,
        "accepted": render_assertion(outcome.accepted.assertion) if outcome.accepted else None,
        "trials": [
            {"assertion": render_assertion(candidate.assertion), "verdicts": validation_json(validation)}
            for candidate, validation in zip(outcome.candidates, outcome.validations)
        ],
    }
    with open(os.path.join(directory, "verdicts.json"), "w", encoding="utf-8") as f:
        json.dump(verdicts, f, indent=2, sort_keys=True)


# --- Run ---

@dataclass
class RunContext:
    """Read-only state shared by the workers."""
    cfg: PipelineConfig
    g: DesignCdfg
    index: ChunkIndex
    llm: Optional[LlmBackend]
    labels: Dict[str, str] = field(default_factory=dict)
    artifacts: str = ""


def _staged(ctx: RunContext, a: SvaAssertion, traces: List[CounterexampleTrace], prompts: List[Prompt], progress: List[Stage]) -> FixOutcome:
    cfg, g, llm = ctx.cfg, ctx.g, ctx.llm
    progress.append(Stage.RETRIEVE)
    hits = retrieve_for_assertion(ctx.index, a, cfg.top_k)

    progress.append(Stage.FILTER)
    try:
        chunks = fine_filter(hits, a, g, llm, prompts)
    except LlmBackendError as e:
        logging.warning(f"{a.name}: LLM filtering failed ({e}); filtering by cone of influence")
        chunks = fine_filter(hits, a, g)

    progress.append(Stage.CLASSIFY)
    classification = classify_error(a, traces, chunks, g, llm, cfg.shift_bound, prompts)
    logging.info(f"{a.name}: classified {classification.kind} ({classification.source})")

    if classification.kind == TIMING:
        progress.append(Stage.FIX_TIMING)
        return fix_timing(a, traces, chunks, llm, cfg.shift_bound, classification, prompts)
    progress.append(Stage.FIX_LOGIC)
    return fix_logic_bar(a, g, traces, chunks, llm, classification, prompts, cfg.candidate_cap)


def process_assertion(ctx: RunContext, entry: AssertionEntry) -> FixOutcome:
    """
    Parses and runs one assertion list entry end to end. Any exception is
    recorded on the returned outcome instead of being raised.
    """
    cfg = ctx.cfg
    prompts: List[Prompt] = []
    progress: List[Stage] = [Stage.PARSE]
    outcome = FixOutcome(name=entry.name, source=entry.text)
    try:
        a = entry.parse()
        outcome.original = a
        progress.append(Stage.LOAD_TRACES)
        traces = find_traces(cfg.traces, a.name, cfg.clock, cfg.edge)
        if not traces:
            raise NoTraces(f"No counterexample traces for {a.name} in {cfg.traces}")
        if validate(a, traces).passed:
            logging.info(f"{a.name}: passes every trace, nothing to fix")
            outcome.status = SKIPPED
        elif cfg.strategy == DIRECT:
            progress.append(Stage.CLASSIFY)
            classification = classify_heuristic(a, traces, ctx.g, cfg.shift_bound)
            progress.append(Stage.FIX_DIRECT)
            outcome = fix_direct(a, traces, ctx.llm, classification, prompts)
        else:
            outcome = _staged(ctx, a, traces, prompts, progress)
    except Exception as e:
        outcome.status = UNFIXED
        outcome.error = f"{type(e).__name__}: {e}"
        if isinstance(e, (SvaFixError, OSError)):
            logging.error(f"{entry.name}: {progress[-1].label} failed: {outcome.error}")
        else:
            logging.exception(f"{entry.name}: {progress[-1].label} crashed")
        sentry_sdk.capture_exception(e)

    outcome.source = entry.text
    outcome.design = cfg.design_name
    outcome.strategy = cfg.strategy
    outcome.label = ctx.labels.get(entry.name)
    try:
        write_artifacts(os.path.join(ctx.artifacts, artifact_dir_name(entry.name)), outcome, prompts)
    except OSError as e:
        logging.error(f"{entry.name}: cannot write artifacts: {e}")
    logging.info(f"{entry.name}: {outcome.status}")
    return outcome


def run_pipeline(cfg: PipelineConfig, llm: Optional[LlmBackend] = None) -> FixReport:
    """
    Repairs every failing assertion of the configured design and writes
    report.json, report.md and per-assertion artifacts to `cfg.out`.

    Args:
        cfg: A validated configuration.
        llm: Backend to use instead of the one `cfg` describes.

    Raises:
        ConfigError: If the manifest does not describe the design or the
            assertion names are not unique.
        SvaFixError: If the design cannot be parsed or graphed. An entry
            that does not parse becomes an unfixed row instead.
    """
    if cfg.manifest:
        _check_manifest(cfg)
    out, artifacts = prepare_folders(cfg.out)

    entries = load_assertion_entries(cfg.assertions)
    names = [entry.name for entry in entries]
    duplicates = sorted({name for name in names if names.count(name) > 1})
    if duplicates:
        raise ConfigError(f"Assertion names must be unique: {', '.join(duplicates)}")

    ast = load_design(cfg.sources, strict=cfg.strict)
    g = build_cdfg(ast)
    index = build_index(chunk_design(ast))

    owned = None
    if llm is None and cfg.backend != "none":
        llm = owned = create_backend(
            cfg.backend,
            fixtures=cfg.fixtures,
            mock_rules=cfg.mock_rules,
            endpoint=cfg.endpoint,
            model=cfg.model,
            api_key=os.getenv(cfg.api_key_env),
            temperature=cfg.temperature,
            max_in_flight=cfg.max_in_flight,
            timeout=cfg.timeout,
            record_fixtures=cfg.record,
        )
    ctx = RunContext(cfg=cfg, g=g, index=index, llm=llm, labels=load_labels(cfg.assertions), artifacts=artifacts)

    logging.info(f"Processing {len(entries)} assertion(s) of {cfg.design_name} with {cfg.jobs} worker(s)")
    try:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            outcomes = list(pool.map(partial(process_assertion, ctx), entries))
    finally:
        if owned is not None:
            owned.close()

    logging.info(f"Stage {Stage.REPORT.label}: {len(outcomes)} outcome(s)")
    report = FixReport(
        rows=fr_metrics(outcomes, column=cfg.strategy),
        outcomes=outcome_rows(outcomes),
        coverage=[coverage_row(cfg.design_name, g, outcomes)] if outcomes else [],
        config=cfg.echo(),
    )
    write_report(report, out)
    return report
