import gzip
import json
import os
import shutil

import pytest

from conftest import I2C_ASSERTIONS, I2C_CLOCK, I2C_DIR, I2C_SOURCE, ROOT, TRAP_FIX_TEXT, TRAP_TEXT
from exceptions import ConfigError
from fix import FIXED, SKIPPED, UNFIXED
from llm_client import MockBackend
from pipeline import (
    BenchmarkManifest,
    PipelineConfig,
    artifact_dir_name,
    check_loc,
    count_loc,
    find_traces,
    load_config,
    load_labels,
    load_manifest,
    run_pipeline,
)

I2C_CONFIG = os.path.join(I2C_DIR, "config.ini")
I2C_TRACES = os.path.join(I2C_DIR, "traces")
I2C_RULES = os.path.join(I2C_DIR, "mock_rules.json")
FIXED_TEXT = "txr_readback: " + TRAP_FIX_TEXT


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for variable in ("SVAFIX_LLM_ENDPOINT", "SVAFIX_LLM_MODEL"):
        monkeypatch.delenv(variable, raising=False)


def make_config(tmp_path, **values):
    settings = dict(
        design_name="I2C",
        sources=[I2C_SOURCE],
        assertions=I2C_ASSERTIONS,
        traces=I2C_TRACES,
        clock=I2C_CLOCK,
        out=str(tmp_path / "out"),
        jobs=2,
    )
    settings.update(values)
    return PipelineConfig(**settings)


def write_assertions(tmp_path, entries):
    path = tmp_path / "assertions.json"
    path.write_text(json.dumps(entries))
    return str(path)


# --- Configuration ---

def test_load_fixture_config():
    cfg = load_config(I2C_CONFIG)
    assert cfg.design_name == "I2C"
    assert cfg.sources == [I2C_SOURCE]
    assert cfg.assertions == I2C_ASSERTIONS
    assert cfg.traces == I2C_TRACES
    assert cfg.clock == I2C_CLOCK
    assert cfg.out == os.path.join(I2C_DIR, "out")
    assert (cfg.backend, cfg.strategy, cfg.jobs, cfg.shift_bound, cfg.top_k) == ("none", "staged", 2, 3, 10)


def test_overrides_beat_environment(monkeypatch, tmp_path):
    monkeypatch.setenv("SVAFIX_LLM_MODEL", "from-env")
    cfg = load_config(I2C_CONFIG, {"out": str(tmp_path), "jobs": None})
    assert cfg.model == "from-env"
    assert cfg.out == str(tmp_path)
    assert cfg.jobs == 2
    assert load_config(I2C_CONFIG, {"model": "from-cli"}).model == "from-cli"


@pytest.mark.parametrize(
    "text, message",
    [
        ("[design]\nname = I2C\n[extras]\nx = 1\n", "Unknown config section"),
        ("[design]\nname = I2C\ncolour = blue\n", "Unknown key 'colour'"),
        ("name = I2C\n", "Malformed config"),
    ],
)
def test_config_structure_errors(tmp_path, text, message):
    path = tmp_path / "bad.ini"
    path.write_text(text)
    with pytest.raises(ConfigError) as excinfo:
        load_config(str(path))
    assert message in str(excinfo.value)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "absent.ini"))


@pytest.mark.parametrize(
    "overrides",
    [
        {"shift_bound": 0},
        {"strategy": "greedy"},
        {"backend": "replay"},
        {"backend": "http", "endpoint": "https://llm.example.test/v1/chat/completions"},
        {"record": "true"},
        {"traces": "/nonexistent/traces"},
    ],
)
def test_invalid_values(overrides):
    with pytest.raises(ConfigError):
        load_config(I2C_CONFIG, overrides)


def test_echo_lists_result_settings(tmp_path):
    echo = make_config(tmp_path).echo()
    assert echo == {
        "design": "I2C",
        "backend": "none",
        "strategy": "staged",
        "shift_bound": 3,
        "top_k": 10,
        "candidate_cap": 16,
        "seed": 0,
    }


# --- Inputs ---

def test_find_traces_patterns(tmp_path):
    for name in ("a.vcd", "a.2.vcd", "a.3.vcd.gz", "ab.vcd", "b.vcd"):
        source = I2C_DIR + "/traces/txr_readback.vcd"
        if name.endswith(".gz"):
            with open(source, "rb") as f, gzip.open(tmp_path / name, "wb") as out:
                out.write(f.read())
        else:
            shutil.copy(source, tmp_path / name)
    traces = find_traces(str(tmp_path), "a", I2C_CLOCK)
    assert [os.path.basename(t.path) for t in traces] == ["a.2.vcd", "a.3.vcd.gz", "a.vcd"]
    assert find_traces(str(tmp_path), "c", I2C_CLOCK) == []


def test_load_labels(tmp_path):
    assert load_labels(I2C_ASSERTIONS) == {"txr_readback": "LE"}
    plain = tmp_path / "list.sva"
    plain.write_text(TRAP_TEXT + "\n")
    assert load_labels(str(plain)) == {}


def test_artifact_dir_name():
    assert artifact_dir_name("txr_readback") == "txr_readback"
    assert artifact_dir_name("a/b c") == "a_b_c"
    assert artifact_dir_name("") == "_"


# --- Benchmark manifests ---

def test_count_loc():
    text = "module m;\n// comment\n\n/* block\n still */ wire a;\nendmodule // end\n"
    assert count_loc(text) == 3


def test_published_manifest():
    entries = {entry.name: entry for entry in load_manifest(os.path.join(ROOT, "benchmarks", "manifest.json"))}
    assert set(entries) == {"I2C", "ECG", "Pairing", "SHA3"}
    assert entries["I2C"].loc == 1282
    assert entries["SHA3"].assertions == {"TE": 8, "LE": 22}
    assert check_loc(entries["ECG"], os.path.join(ROOT, "benchmarks")) is None


def test_check_loc_tolerance(tmp_path):
    (tmp_path / "d.v").write_text("module d;\n" + "wire w;\n" * 98 + "endmodule\n")
    assert check_loc(BenchmarkManifest(name="D", loc=100, sources=["d.v"]), str(tmp_path)) is True
    assert check_loc(BenchmarkManifest(name="D", loc=102, sources=["d.v"]), str(tmp_path)) is True
    assert check_loc(BenchmarkManifest(name="D", loc=110, sources=["d.v"]), str(tmp_path)) is False


def test_manifest_must_list_the_design(tmp_path):
    manifest = tmp_path / "manifest.json"
    manifest.write_text(json.dumps([{"name": "SHA3", "loc": 618, "sources": ["sha3/keccak.v"]}]))
    with pytest.raises(ConfigError):
        run_pipeline(make_config(tmp_path, manifest=str(manifest)))


def test_manifest_loc_mismatch_is_fatal(tmp_path):
    shutil.copy(I2C_SOURCE, tmp_path / "i2c_regs.v")
    manifest = tmp_path / "manifest.json"
    manifest.write_text(json.dumps([{"name": "I2C", "loc": 5000, "sources": ["i2c_regs.v"]}]))
    with pytest.raises(ConfigError):
        run_pipeline(make_config(tmp_path, manifest=str(manifest)))


# --- Runs ---

def test_fixture_run_repairs_the_trap(tmp_path):
    report = run_pipeline(make_config(tmp_path))
    [row] = report.outcomes
    assert row.status == FIXED
    assert row.bucket == "LE"
    assert row.classification == "Logic"
    assert row.accepted == FIXED_TEXT
    assert row.origin == "backward-reconstruction"
    [design] = report.rows
    assert (design.le_attempted, design.le_fixed, design.fr) == (1, 1, 100.0)
    assert design.column == "staged"
    [coverage] = report.coverage
    assert coverage.design == "I2C"

    out = tmp_path / "out"
    assert (out / "report.json").is_file() and (out / "report.md").is_file()
    artifacts = out / "artifacts" / "txr_readback"
    verdicts = json.loads((artifacts / "verdicts.json").read_text())
    assert verdicts["status"] == FIXED
    assert verdicts["accepted"] == FIXED_TEXT
    assert verdicts["trials"][0]["verdicts"][0]["verdict"] == "pass"
    assert json.loads((artifacts / "candidates.json").read_text())[0]["origin"] == "backward-reconstruction"
    assert (artifacts / "prompts.txt").read_text() == ""


def test_mock_backend_run(tmp_path):
    report = run_pipeline(make_config(tmp_path), llm=MockBackend.from_file(I2C_RULES))
    [row] = report.outcomes
    assert row.status == FIXED
    assert row.classification_source == "llm-overridden-by-heuristic"
    assert row.accepted == FIXED_TEXT
    prompts = (tmp_path / "out" / "artifacts" / "txr_readback" / "prompts.txt").read_text()
    assert "=== filter " in prompts
    assert "=== classify " in prompts


def test_direct_strategy(tmp_path):
    cfg = make_config(tmp_path, strategy="direct", backend="mock", mock_rules=I2C_RULES)
    report = run_pipeline(cfg)
    [row] = report.outcomes
    assert row.strategy == "direct"
    assert row.status == FIXED
    assert row.origin == "llm"
    assert report.rows[0].column == "direct"


def test_direct_strategy_without_model_leaves_assertions_unfixed(tmp_path):
    report = run_pipeline(make_config(tmp_path, strategy="direct"))
    assert report.outcomes[0].status == UNFIXED
    assert report.rows[0].fr == 0.0


def test_record_then_replay_is_deterministic(tmp_path):
    fixtures = str(tmp_path / "fixtures" / "llm.jsonl")
    recorded = run_pipeline(make_config(
        tmp_path, out=str(tmp_path / "rec"), backend="mock", mock_rules=I2C_RULES, record=True, fixtures=fixtures
    ))
    runs = []
    for name in ("replay1", "replay2"):
        report = run_pipeline(make_config(tmp_path, out=str(tmp_path / name), backend="replay", fixtures=fixtures))
        assert report.outcomes == recorded.outcomes
        runs.append((tmp_path / name / "report.json").read_bytes())
    assert runs[0] == runs[1]


def test_fixture_miss_is_isolated(tmp_path):
    fixtures = tmp_path / "empty.jsonl"
    fixtures.write_text("")
    report = run_pipeline(make_config(tmp_path, backend="replay", fixtures=str(fixtures)))
    [row] = report.outcomes
    assert row.status == UNFIXED
    assert row.error.startswith("FixtureMiss")
    assert (tmp_path / "out" / "report.json").is_file()


def test_missing_traces_are_recorded(tmp_path):
    assertions = write_assertions(tmp_path, [
        {"name": "txr_readback", "text": TRAP_TEXT, "label": "LE"},
        {"name": "orphan", "text": TRAP_TEXT},
    ])
    report = run_pipeline(make_config(tmp_path, assertions=assertions))
    rows = {row.name: row for row in report.outcomes}
    assert rows["txr_readback"].status == FIXED
    assert rows["orphan"].status == UNFIXED
    assert rows["orphan"].error.startswith("NoTraces")
    [design] = report.rows
    assert design.unclassified == 1
    assert (design.le_attempted, design.le_fixed, design.fr) == (2, 1, 50.0)


def test_passing_assertion_is_skipped(tmp_path):
    assertions = write_assertions(tmp_path, [{"name": "txr_readback", "text": TRAP_FIX_TEXT}])
    report = run_pipeline(make_config(tmp_path, assertions=assertions))
    assert report.outcomes[0].status == SKIPPED
    assert report.rows == []


def test_empty_assertion_list(tmp_path):
    report = run_pipeline(make_config(tmp_path, assertions=write_assertions(tmp_path, [])))
    assert report.rows == [] and report.outcomes == [] and report.coverage == []
    assert "No assertions were attempted." in (tmp_path / "out" / "report.md").read_text()


def test_duplicate_names_are_rejected(tmp_path):
    assertions = write_assertions(tmp_path, [
        {"name": "same", "text": TRAP_TEXT},
        {"name": "same", "text": TRAP_FIX_TEXT},
    ])
    with pytest.raises(ConfigError):
        run_pipeline(make_config(tmp_path, assertions=assertions))


def test_unsupported_entry_does_not_abort_the_batch(tmp_path):
    assertions = write_assertions(tmp_path, [
        {"name": "txr_readback", "text": TRAP_TEXT, "label": "LE"},
        {"name": "bad", "text": "wb_stb_i |-> ##[1:$] wb_ack_o"},
    ])
    report = run_pipeline(make_config(tmp_path, assertions=assertions))
    rows = {row.name: row for row in report.outcomes}
    assert rows["txr_readback"].status == FIXED
    assert rows["bad"].status == UNFIXED
    assert rows["bad"].error.startswith("UnsupportedSvaFeature: ")
    assert rows["bad"].original == "wb_stb_i |-> ##[1:$] wb_ack_o"
    assert (tmp_path / "out" / "report.json").is_file()
    assert (tmp_path / "out" / "artifacts" / "bad" / "verdicts.json").is_file()
    [design] = report.rows
    assert (design.le_attempted, design.le_fixed) == (2, 1)


def test_unexpected_errors_stay_with_their_assertion(tmp_path, monkeypatch):
    import pipeline

    found = pipeline.find_traces

    def flaky(folder, name, clock, edge):
        if name == "other":
            raise RuntimeError("simulated crash")
        return found(folder, name, clock, edge)

    monkeypatch.setattr(pipeline, "find_traces", flaky)
    assertions = write_assertions(tmp_path, [
        {"name": "txr_readback", "text": TRAP_TEXT, "label": "LE"},
        {"name": "other", "text": TRAP_TEXT, "label": "LE"},
    ])
    report = run_pipeline(make_config(tmp_path, assertions=assertions))
    rows = {row.name: row for row in report.outcomes}
    assert rows["txr_readback"].status == FIXED
    assert rows["other"].error == "RuntimeError: simulated crash"


class ClosingBackend(MockBackend):
    def __init__(self):
        super().__init__([])
        self.closed = False

    def close(self):
        self.closed = True


def test_created_backend_is_closed(tmp_path, monkeypatch):
    import pipeline

    created = []

    def fake_create_backend(kind, **options):
        created.append(ClosingBackend())
        return created[-1]

    monkeypatch.setattr(pipeline, "create_backend", fake_create_backend)
    run_pipeline(make_config(tmp_path, backend="mock", mock_rules=I2C_RULES))
    assert created and created[0].closed

    given = ClosingBackend()
    run_pipeline(make_config(tmp_path, out=str(tmp_path / "given")), llm=given)
    assert not given.closed
