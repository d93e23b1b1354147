import json
import threading
import time

import httpx
import pytest

from cure.errors import (
    LLMCredentialError,
    LLMNetworkError,
    LLMRequestError,
    LLMResponseError,
    ParseError,
    ValidationError,
)
from cure.llm import (
    TEMPLATE_NAMES,
    ChatClient,
    ChatExchange,
    FixtureBackend,
    ambiguity_prompt,
    chat_many,
    load_template,
    parse_ambiguity,
    parse_top_k,
    parse_verbalized_confidence,
    query_ambiguity,
    read_fixture_transcripts,
    render_template,
    yes_no_confidence,
)

from conftest import FIXTURES, read_jsonl
from mock_llm_server import MockChatServer, completion


def _ex(text="hi", **kw):
    return ChatExchange(messages=[{"role": "user", "content": text}], **kw)


def _client(url, **kw):
    kw.setdefault("sleep", lambda s: None)
    return ChatClient(url, api_key="k", model="m", **kw)


class TestTemplates:
    @pytest.mark.parametrize("name", TEMPLATE_NAMES)
    def test_all_render(self, name):
        out = render_template(name, ["Coke", "Sprite"], "bring me a drink", response="Action: x")
        assert "{{" not in out and "Coke, Sprite" in out

    def test_ambiguity_example(self):
        out = render_template("ambiguity", ["Coke", "Sprite", "apple"], "give me something to drink")
        assert "Coke, Sprite, apple" in out and "give me something to drink" in out

    def test_otherwise_byte_identical(self):
        body = load_template("vanilla").body
        out = render_template("vanilla", ["A"], "T")
        assert out == body.replace("{{SCENE}}", "A").replace("{{TASK}}", "T")

    def test_deterministic(self):
        assert render_template("cot", ["x"], "t") == render_template("cot", ["x"], "t")

    def test_errors(self):
        with pytest.raises(ValidationError):
            render_template("ambiguity", [], "t")
        with pytest.raises(ValidationError, match="RESPONSE"):
            render_template("self_probing", ["x"], "t")
        with pytest.raises(ValidationError):
            load_template("nope")


class TestAmbiguityParsing:
    def test_two_items(self):
        v = parse_ambiguity("ITEMS: Coke, Sprite\nLOCATIONS: user's hand")
        assert v.a_amb == 1 and v.parse_mode == "structured"

    def test_one_item_one_location(self):
        v = parse_ambiguity("ITEMS: Coke\nLOCATIONS: user's hand")
        assert v.a_amb == 0 and v.items_chosen == ["Coke"]

    def test_heuristic(self):
        v = parse_ambiguity("I would take the Sprite and put it in the top drawer.", ["Coke", "Sprite", "apple"])
        assert v.parse_mode == "heuristic" and v.a_amb == 0
        assert v.items_chosen == ["Sprite"] and v.locations_chosen == ["top drawer"]

    def test_unparseable(self):
        with pytest.raises(ParseError):
            parse_ambiguity("I am not sure.", ["Coke"])

    def test_fixture_transcripts_agree(self):
        rows = read_jsonl(FIXTURES / "ambiguity_transcripts.jsonl")
        backend = FixtureBackend.from_jsonl(FIXTURES / "ambiguity_transcripts.jsonl")
        for row in rows:
            assert row["prompt"] == ambiguity_prompt(row["scene"], row["task"])
            exp = row["expected_parse"]
            if "error" in exp:
                with pytest.raises(ParseError):
                    query_ambiguity(backend, row["scene"], row["task"])
                continue
            v = query_ambiguity(backend, row["scene"], row["task"])
            assert v.to_json() == {"a_amb": exp["a_amb"], "items": exp["items"], "locations": exp["locations"], "parse_mode": exp["parse_mode"]}, row["id"]


class TestConfidenceParsing:
    def test_examples(self):
        assert parse_verbalized_confidence("Action: pick-up Coke\nConfidence: 85%") == 0.85
        assert parse_verbalized_confidence("confidence: 100 %") == 1.0
        with pytest.raises(ParseError):
            parse_verbalized_confidence("I will pick up the Coke.")

    def test_out_of_range(self):
        with pytest.raises(ParseError):
            parse_verbalized_confidence("Confidence: 140%")

    def test_fixture_transcripts_agree(self):
        for row in read_jsonl(FIXTURES / "confidence_transcripts.jsonl"):
            if row["expected_parse"] is None:
                with pytest.raises(ParseError):
                    parse_verbalized_confidence(row["response"])
            else:
                assert parse_verbalized_confidence(row["response"]) == pytest.approx(row["expected_parse"], abs=1e-12)

    def test_top_k(self):
        got = parse_top_k("G1: pick-up Coke\nP1: 60%\nG2: pick-up Sprite\nP2: 30\n")
        assert got == [("pick-up Coke", 0.6), ("pick-up Sprite", 0.3)]
        with pytest.raises(ParseError):
            parse_top_k("no guesses")


class TestYesNo:
    def test_examples(self):
        import math

        assert yes_no_confidence(-0.3, -0.3) == 0.5
        assert yes_no_confidence(math.log(9), 0.0) == pytest.approx(0.9, abs=1e-12)
        assert 0 <= yes_no_confidence(-1000, 0) < 1e-300

    def test_fixture(self):
        for row in read_jsonl(FIXTURES / "yes_no_logprobs.jsonl"):
            assert yes_no_confidence(row["logp_yes"], row["logp_no"]) == pytest.approx(row["expected"], abs=1e-12)


class TestClientAgainstMockServer:
    def test_fixed_completion(self):
        with MockChatServer("Confidence: 42%") as srv:
            done = _client(srv.url).chat(_ex("hello", logprobs=True, top_logprobs=2))
        assert done.response_text == "Confidence: 42%"
        req = srv.requests[0]
        assert req["path"] == "/v1/chat/completions" and req["auth"] == "Bearer k"
        assert req["body"] == {
            "model": "m",
            "messages": [{"role": "user", "content": "hello"}],
            "temperature": 0.0,
            "logprobs": True,
            "top_logprobs": 2,
        }

    def test_retry_after_two_500s(self):
        sleeps = []
        with MockChatServer("fine") as srv:
            srv.script = [(500, {"error": "x"}), (503, {"error": "y"})]
            done = _client(srv.url, sleep=sleeps.append).chat(_ex())
        assert done.response_text == "fine"
        assert len(srv.requests) == 3 and sleeps == [1.0, 2.0]

    def test_exhausted_retries(self):
        sleeps = []
        with MockChatServer() as srv:
            srv.script = [(500, {})] * 4
            with pytest.raises(LLMNetworkError):
                _client(srv.url, sleep=sleeps.append).chat(_ex())
        assert len(srv.requests) == 4 and sleeps == [1.0, 2.0, 4.0]

    def test_401_no_retry(self):
        with MockChatServer() as srv:
            srv.script = [(401, {"error": "bad key"})]
            with pytest.raises(LLMCredentialError):
                _client(srv.url).chat(_ex())
        assert len(srv.requests) == 1

    def test_400_no_retry(self):
        with MockChatServer() as srv:
            srv.script = [(400, {"error": "bad"})]
            with pytest.raises(LLMRequestError):
                _client(srv.url).chat(_ex())
        assert len(srv.requests) == 1

    def test_malformed_json(self):
        with MockChatServer() as srv:
            srv.script = [(200, b"{not json")]
            with pytest.raises(LLMResponseError):
                _client(srv.url).chat(_ex())

    def test_logprobs_carried(self):
        lp = [{"token": "yes", "logprob": -0.1, "top_logprobs": []}]
        with MockChatServer() as srv:
            srv.script = [(200, completion("yes", lp))]
            done = _client(srv.url).chat(_ex(logprobs=True))
        assert done.token_logprobs == lp

    def test_chat_many_order(self):
        with MockChatServer() as srv:
            client = _client(srv.url)
            out = chat_many(client, [_ex(f"q{i}") for i in range(6)])
        assert [e.messages[0]["content"] for e in out] == [f"q{i}" for i in range(6)]

    def test_connection_refused_retries(self):
        sleeps = []
        with pytest.raises(LLMNetworkError):
            _client("http://127.0.0.1:9", sleep=sleeps.append, timeout=2).chat(_ex())
        assert sleeps == [1.0, 2.0, 4.0]


class TestClientMisc:
    def test_from_env(self, monkeypatch):
        monkeypatch.setenv("CURE_LLM_BASE_URL", "http://x/v1/")
        monkeypatch.setenv("CURE_LLM_MODEL", "mm")
        monkeypatch.delenv("CURE_LLM_API_KEY", raising=False)
        c = ChatClient.from_env()
        assert c.base_url == "http://x/v1" and c.model == "mm" and c.api_key is None

    def test_missing_endpoint(self, monkeypatch):
        monkeypatch.delenv("CURE_LLM_BASE_URL", raising=False)
        with pytest.raises(ValidationError):
            ChatClient.from_env()

    def test_mock_transport_timeout_is_retried(self):
        calls = []

        def handler(request):
            calls.append(request)
            if len(calls) == 1:
                raise httpx.ReadTimeout("slow", request=request)
            return httpx.Response(200, json=completion("done"))

        c = _client("http://mock/v1", transport=httpx.MockTransport(handler))
        assert c.chat(_ex()).response_text == "done" and len(calls) == 2

    def test_chat_many_bounded(self):
        active, peak, lock = [0], [0], threading.Lock()

        class Slow:
            def chat(self, ex):
                with lock:
                    active[0] += 1
                    peak[0] = max(peak[0], active[0])
                time.sleep(0.02)
                with lock:
                    active[0] -= 1
                return ex

        chat_many(Slow(), [_ex() for _ in range(12)], max_in_flight=16)
        assert peak[0] <= 4

    def test_invalid_role(self):
        with pytest.raises(ValidationError):
            ChatExchange(messages=[{"role": "robot", "content": "x"}])

    def test_fixture_backend_unknown_prompt(self):
        with pytest.raises(LLMResponseError):
            FixtureBackend({}).chat(_ex("unseen"))

    def test_fixture_reader_validates(self, tmp_path):
        (tmp_path / "f.jsonl").write_text(json.dumps({"prompt": "x"}) + "\n")
        with pytest.raises(ValidationError):
            read_fixture_transcripts(tmp_path / "f.jsonl")
