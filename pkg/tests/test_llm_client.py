import json
from concurrent.futures import ThreadPoolExecutor

import httpx
import pytest

from exceptions import FixtureMiss, LlmBackendError, MockUnmatched
from llm_client import (
    FixtureStore,
    HttpBackend,
    LlmResponse,
    MockBackend,
    Prompt,
    RecordingBackend,
    ReplayBackend,
    create_backend,
    normalize_text,
)

ENDPOINT = "https://llm.example.test/v1/chat/completions"


def chat_answer(text, **usage):
    body = {"choices": [{"message": {"role": "assistant", "content": text}}]}
    if usage:
        body["usage"] = usage
    return httpx.Response(200, json=body)


@pytest.fixture
def no_sleep(monkeypatch):
    delays = []
    monkeypatch.setattr("llm_client.time.sleep", delays.append)
    return delays


def test_normalize_text():
    assert normalize_text("a  \t b \r\n\r\n\r\nc  \n\n") == "a b\n\nc"


def test_prompt_hash_ignores_whitespace_and_stage():
    first = Prompt("sys", "line one\nline  two\n", stage="filter")
    second = Prompt("sys ", "line one\r\nline two", stage="classify")
    assert first.hash == second.hash
    assert Prompt("sys", "other").hash != first.hash


def test_http_backend_posts_chat_completion():
    seen = []

    def handler(request):
        seen.append(request)
        return chat_answer("<answer>Logic</answer>", prompt_tokens=12, completion_tokens=3)

    backend = HttpBackend(ENDPOINT, "gpt-o3", api_key="secret", transport=httpx.MockTransport(handler))
    response = backend.complete(Prompt("system text", "user text"))
    assert response.text == "<answer>Logic</answer>"
    assert response.backend == "http"
    assert response.prompt_tokens == 12 and response.completion_tokens == 3

    payload = json.loads(seen[0].content)
    assert payload["model"] == "gpt-o3"
    assert payload["temperature"] == 0.0
    assert payload["messages"] == [
        {"role": "system", "content": "system text"},
        {"role": "user", "content": "user text"},
    ]
    assert seen[0].headers["Authorization"] == "Bearer secret"


def test_http_backend_retries_with_backoff(no_sleep):
    statuses = iter([503, 429, 200])

    def handler(request):
        status = next(statuses)
        return chat_answer("ok") if status == 200 else httpx.Response(status)

    backend = HttpBackend(ENDPOINT, "m", transport=httpx.MockTransport(handler))
    assert backend.complete(Prompt("s", "u")).text == "ok"
    assert no_sleep == [1.0, 2.0]


def test_http_backend_gives_up(no_sleep):
    backend = HttpBackend(ENDPOINT, "m", max_retries=2, transport=httpx.MockTransport(lambda r: httpx.Response(500)))
    with pytest.raises(LlmBackendError):
        backend.complete(Prompt("s", "u"))
    assert no_sleep == [1.0, 2.0]


def test_http_backend_client_error_is_not_retried(no_sleep):
    backend = HttpBackend(ENDPOINT, "m", transport=httpx.MockTransport(lambda r: httpx.Response(401, text="denied")))
    with pytest.raises(LlmBackendError) as excinfo:
        backend.complete(Prompt("s", "u"))
    assert "401" in str(excinfo.value)
    assert no_sleep == []


def test_http_backend_transport_errors(no_sleep):
    def handler(request):
        raise httpx.ConnectError("refused", request=request)

    backend = HttpBackend(ENDPOINT, "m", max_retries=1, transport=httpx.MockTransport(handler))
    with pytest.raises(LlmBackendError):
        backend.complete(Prompt("s", "u"))
    assert no_sleep == [1.0]


def test_http_backend_malformed_answer():
    backend = HttpBackend(ENDPOINT, "m", transport=httpx.MockTransport(lambda r: httpx.Response(200, json={"choices": []})))
    with pytest.raises(LlmBackendError):
        backend.complete(Prompt("s", "u"))


def test_record_then_replay(tmp_path):
    path = str(tmp_path / "fixtures" / "llm.jsonl")
    mock = MockBackend([("timing", "<answer>Timing</answer>")])
    recorder = RecordingBackend(mock, FixtureStore(path))
    prompt = Prompt("s", "Is this a timing error?")
    assert recorder.complete(prompt).text == "<answer>Timing</answer>"

    store = FixtureStore(path)
    assert len(store) == 1 and prompt.hash in store
    entry = json.loads(open(path).readline())
    assert set(entry) == {"hash", "system", "user", "response", "backend", "timestamp"}
    assert entry["backend"] == "mock"

    replay = ReplayBackend(store)
    assert replay.complete(Prompt("s", "Is this a  timing error?\n")).text == "<answer>Timing</answer>"
    with pytest.raises(FixtureMiss) as excinfo:
        replay.complete(Prompt("s", "something else"))
    assert excinfo.value.prompt_hash == Prompt("s", "something else").hash


def test_later_record_wins(tmp_path):
    path = str(tmp_path / "llm.jsonl")
    store = FixtureStore(path)
    prompt = Prompt("s", "u")
    store.record(prompt, LlmResponse("first", "mock"))
    store.record(prompt, LlmResponse("second", "mock"))
    assert ReplayBackend(FixtureStore(path)).complete(prompt).text == "second"


def test_corrupt_fixture_file(tmp_path):
    path = tmp_path / "llm.jsonl"
    path.write_text("{not json}\n")
    with pytest.raises(OSError):
        FixtureStore(str(path))


def test_concurrent_recording(tmp_path):
    path = str(tmp_path / "llm.jsonl")
    recorder = RecordingBackend(MockBackend([("(\\d+)", "ok")]), FixtureStore(path))
    with ThreadPoolExecutor(max_workers=8) as pool:
        list(pool.map(lambda i: recorder.complete(Prompt("s", f"prompt {i}")), range(40)))
    assert len(FixtureStore(path)) == 40


def test_mock_rules_from_file(tmp_path):
    rules = tmp_path / "rules.json"
    rules.write_text(json.dumps([
        {"pattern": "correct the delays", "response": "<assertion>a |-> ##2 b</assertion>"},
        {"pattern": ".", "response": "fallback"},
    ]))
    mock = MockBackend.from_file(str(rules))
    assert mock.complete(Prompt("s", "please correct the delays")).text.startswith("<assertion>")
    assert mock.complete(Prompt("s", "anything")).text == "fallback"


def test_mock_unmatched():
    with pytest.raises(MockUnmatched):
        MockBackend([("never", "x")]).complete(Prompt("s", "u"))


def test_create_backend(tmp_path):
    assert create_backend("none") is None
    assert isinstance(create_backend("mock"), MockBackend)
    recording = create_backend("mock", fixtures=str(tmp_path / "f.jsonl"), record_fixtures=True)
    assert isinstance(recording, RecordingBackend)
    assert recording.name == "mock"
    with pytest.raises(LlmBackendError):
        create_backend("replay")
    with pytest.raises(LlmBackendError):
        create_backend("http", endpoint=ENDPOINT)
    with pytest.raises(LlmBackendError):
        create_backend("mock", record_fixtures=True)
    with pytest.raises(LlmBackendError):
        create_backend("carrier-pigeon")
