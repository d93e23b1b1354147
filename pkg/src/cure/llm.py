"""Chat-completions client, prompt templates and response parsers.

The client speaks the OpenAI-compatible ``/chat/completions`` JSON
protocol. Configuration comes from ``CURE_LLM_BASE_URL``,
``CURE_LLM_API_KEY`` and ``CURE_LLM_MODEL`` unless passed explicitly.

Every parser here is a pure function of the response text, so the whole
module is testable offline against recorded transcripts.
"""

from __future__ import annotations

import json
import logging
import math
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Any, Callable, Iterable, Protocol, Sequence

import httpx

from .errors import (
    LLMCredentialError,
    LLMNetworkError,
    LLMRequestError,
    LLMResponseError,
    ParseError,
    ValidationError,
)

log = logging.getLogger(__name__)

TEMPLATE_NAMES = ("ambiguity", "vanilla", "cot", "self_probing", "multi_step", "top_k")
FIXED_LOCATIONS = ("user's hand", "top drawer", "bottom drawer", "garbage can")
ROLES = ("system", "user", "assistant")

AMBIGUITY_FOOTER = (
    "\n\nAfter your answer, finish with exactly these two lines:\n"
    "ITEMS: <comma-separated list of every item you chose>\n"
    "LOCATIONS: <comma-separated list of every target location you chose>\n"
)

_PLACEHOLDER = re.compile(r"\{\{([A-Z_]+)\}\}")


# ---------------------------------------------------------------- templates


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    body: str

    @property
    def placeholders(self) -> set[str]:
        return set(_PLACEHOLDER.findall(self.body))


def load_template(name: str) -> PromptTemplate:
    if name not in TEMPLATE_NAMES:
        raise ValidationError(f"unknown template {name!r}; choose from {TEMPLATE_NAMES}")
    body = resources.files("cure").joinpath("templates", f"{name}.txt").read_text(encoding="utf-8")
    return PromptTemplate(name, body)


def render_template(template: PromptTemplate | str, scene: Sequence[str], task: str, **extra: str) -> str:
    """Fill ``{{SCENE}}`` (comma-joined objects) and ``{{TASK}}``.

    Extra keyword arguments fill further placeholders, e.g.
    ``response=...`` for the self-probing template.
    """
    if isinstance(template, str):
        template = load_template(template)
    scene = [str(s) for s in scene]
    if not scene:
        raise ValidationError("scene must list at least one object")
    values = {"SCENE": ", ".join(scene), "TASK": task}
    values.update({k.upper(): v for k, v in extra.items()})
    missing = template.placeholders - values.keys()
    if missing:
        raise ValidationError(f"template {template.name!r} has unfilled placeholder(s): {sorted(missing)}")
    return _PLACEHOLDER.sub(lambda m: values[m.group(1)], template.body)


# ---------------------------------------------------------------- transport


@dataclass
class ChatExchange:
    messages: list[dict[str, str]]
    model: str = ""
    base_url: str = ""
    temperature: float = 0.0
    logprobs: bool = False
    top_logprobs: int | None = None
    response_text: str | None = None
    token_logprobs: list[dict[str, Any]] | None = None

    def __post_init__(self):
        if self.temperature < 0:
            raise ValidationError("temperature must be >= 0")
        for m in self.messages:
            if m.get("role") not in ROLES:
                raise ValidationError(f"invalid message role {m.get('role')!r}")

    def request_body(self) -> dict[str, Any]:
        body: dict[str, Any] = {"model": self.model, "messages": self.messages, "temperature": self.temperature}
        if self.logprobs:
            body["logprobs"] = True
            if self.top_logprobs is not None:
                body["top_logprobs"] = self.top_logprobs
        return body


class ChatBackend(Protocol):
    def chat(self, exchange: ChatExchange) -> ChatExchange: ...


class ChatClient:
    """Synchronous client with retry on transport errors and 5xx replies."""

    def __init__(
        self,
        base_url: str,
        api_key: str | None = None,
        model: str = "",
        timeout: float = 60.0,
        backoff: Sequence[float] = (1.0, 2.0, 4.0),
        sleep: Callable[[float], None] = time.sleep,
        transport: httpx.BaseTransport | None = None,
    ):
        if not base_url:
            raise ValidationError("no inference endpoint configured (set CURE_LLM_BASE_URL)")
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.model = model
        self.timeout = timeout
        self.backoff = tuple(backoff)
        self.sleep = sleep
        self._transport = transport

    @classmethod
    def from_env(cls, **kwargs) -> "ChatClient":
        return cls(
            os.environ.get("CURE_LLM_BASE_URL", ""),
            os.environ.get("CURE_LLM_API_KEY"),
            os.environ.get("CURE_LLM_MODEL", ""),
            **kwargs,
        )

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def chat(self, exchange: ChatExchange) -> ChatExchange:
        exchange = replace(exchange, model=exchange.model or self.model, base_url=self.base_url)
        url = f"{self.base_url}/chat/completions"
        body = exchange.request_body()
        last_error = "no attempt made"
        with httpx.Client(timeout=self.timeout, transport=self._transport) as http:
            for attempt in range(len(self.backoff) + 1):
                if attempt:
                    self.sleep(self.backoff[attempt - 1])
                try:
                    resp = http.post(url, json=body, headers=self._headers())
                except httpx.TransportError as exc:
                    last_error = f"{type(exc).__name__}: {exc}"
                    log.warning("chat request failed (attempt %d): %s", attempt + 1, last_error)
                    continue
                if resp.status_code >= 500:
                    last_error = f"HTTP {resp.status_code}"
                    log.warning("chat request got %s (attempt %d)", last_error, attempt + 1)
                    continue
                if resp.status_code in (401, 403):
                    raise LLMCredentialError(f"endpoint rejected credentials: HTTP {resp.status_code}")
                if resp.status_code >= 400:
                    raise LLMRequestError(f"endpoint rejected request: HTTP {resp.status_code}: {resp.text[:200]}")
                return _complete(exchange, resp)
        raise LLMNetworkError(f"chat request failed after {len(self.backoff) + 1} attempts: {last_error}")


def _complete(exchange: ChatExchange, resp: httpx.Response) -> ChatExchange:
    try:
        payload = resp.json()
        choice = payload["choices"][0]
        text = choice["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise LLMResponseError(f"malformed completion payload: {exc!r}") from None
    if not isinstance(text, str):
        raise LLMResponseError("completion content is not a string")
    lp = None
    if isinstance(choice.get("logprobs"), dict):
        lp = choice["logprobs"].get("content")
    return replace(exchange, response_text=text, token_logprobs=lp)


def chat_many(backend: ChatBackend, exchanges: Iterable[ChatExchange], max_in_flight: int = 4) -> list[ChatExchange]:
    """Run exchanges with bounded parallelism; results keep input order."""
    exchanges = list(exchanges)
    with ThreadPoolExecutor(max_workers=max(1, min(4, max_in_flight))) as pool:
        return list(pool.map(backend.chat, exchanges))


class FixtureBackend:
    """Replays recorded responses keyed by the exact user prompt."""

    def __init__(self, transcripts: dict[str, str], model: str = "fixture"):
        self.transcripts = dict(transcripts)
        self.model = model
        self.base_url = "fixture://"

    @classmethod
    def from_jsonl(cls, path) -> "FixtureBackend":
        table = {}
        for row in read_fixture_transcripts(path):
            table[row["prompt"]] = row["response"]
        return cls(table)

    def chat(self, exchange: ChatExchange) -> ChatExchange:
        prompt = exchange.messages[-1]["content"]
        if prompt not in self.transcripts:
            raise LLMResponseError("no recorded transcript for this prompt")
        return replace(exchange, model=self.model, base_url=self.base_url, response_text=self.transcripts[prompt])


def read_fixture_transcripts(path) -> list[dict[str, Any]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            if "prompt" not in row or "response" not in row:
                raise ValidationError(f"{path}:{lineno}: fixture rows need 'prompt' and 'response'")
            rows.append(row)
    return rows


# ---------------------------------------------------------------- ambiguity


@dataclass
class AmbiguityVerdict:
    a_amb: int
    items_chosen: list[str] = field(default_factory=list)
    locations_chosen: list[str] = field(default_factory=list)
    parse_mode: str = "structured"

    def to_json(self) -> dict[str, Any]:
        return {
            "a_amb": self.a_amb,
            "items": self.items_chosen,
            "locations": self.locations_chosen,
            "parse_mode": self.parse_mode,
        }


def ambiguity_prompt(scene: Sequence[str], task: str) -> str:
    return render_template("ambiguity", scene, task) + AMBIGUITY_FOOTER


def _split_list(text: str) -> list[str]:
    text = text.strip().strip("[]")
    out = []
    for part in re.split(r"[,;]", text):
        part = part.strip().strip("\"'`[]().").strip()
        if part and part.lower() not in ("none", "n/a", "-"):
            out.append(part)
    return out


def _norm(s: str) -> str:
    s = s.lower().replace("`", "'").replace("’", "'")
    return re.sub(r"\s+", " ", s).strip()


def _find_mentions(text: str, vocabulary: Sequence[str]) -> list[str]:
    # longest names first so "diet coke" is not also counted as "coke"
    hay = _norm(text)
    found = []
    for name in sorted(dict.fromkeys(vocabulary), key=lambda v: -len(v)):
        pat = r"(?<![\w'])" + re.escape(_norm(name)) + r"(?![\w'])"
        if re.search(pat, hay):
            found.append(name)
            hay = re.sub(pat, " ", hay)
    return sorted(found, key=lambda v: _norm(text).find(_norm(v)))


def parse_ambiguity(text: str, scene: Sequence[str] = ()) -> AmbiguityVerdict:
    """Convert a reply into a binary verdict: 0 iff one item and one location.

    ``ITEMS:`` / ``LOCATIONS:`` lines are used when present. Otherwise the
    scene objects mentioned count as items and the fixed locations
    mentioned (user's hand, drawers, garbage can) count as locations.
    """
    items_m = re.search(r"^\s*\**\s*items\s*\**\s*:\s*(.*)$", text, re.IGNORECASE | re.MULTILINE)
    locs_m = re.search(r"^\s*\**\s*locations\s*\**\s*:\s*(.*)$", text, re.IGNORECASE | re.MULTILINE)
    if items_m:
        items = list(dict.fromkeys(_split_list(items_m.group(1))))
        locations = list(dict.fromkeys(_split_list(locs_m.group(1)))) if locs_m else []
        if items:
            mode = "structured"
        else:
            items, locations, mode = [], [], "heuristic"
    else:
        items, locations, mode = [], [], "heuristic"
    if mode == "heuristic":
        items = _find_mentions(text, list(scene))
        locations = _find_mentions(text, FIXED_LOCATIONS)
        if not items:
            raise ParseError("reply names no item, with or without the ITEMS/LOCATIONS footer")
    a_amb = 0 if (len(items) == 1 and len(locations) == 1) else 1
    return AmbiguityVerdict(a_amb, items, locations, mode)


def query_ambiguity(backend: ChatBackend, scene: Sequence[str], task: str) -> AmbiguityVerdict:
    exchange = ChatExchange(messages=[{"role": "user", "content": ambiguity_prompt(scene, task)}])
    done = backend.chat(exchange)
    return parse_ambiguity(done.response_text or "", scene)


# ---------------------------------------------------------------- confidences

_CONF = re.compile(r"confidence\s*:\s*\[?\s*(-?\d+(?:\.\d+)?)\s*\]?\s*%", re.IGNORECASE)
_OVERALL = re.compile(r"overall\s+confidence[^\n]*", re.IGNORECASE)
_PERCENT_OR_NUMBER = re.compile(r"(-?\d+(?:\.\d+)?)\s*%?")


def _as_probability(value: str) -> float:
    v = float(value)
    if not 0.0 <= v <= 100.0:
        raise ParseError(f"confidence {v} outside [0, 100]")
    return v / 100.0


def parse_verbalized_confidence(text: str) -> float:
    """``Confidence: 85%`` -> 0.85; multi-step replies use the overall value."""
    overall = _OVERALL.search(text)
    if overall:
        line = re.sub(r"\(\s*0\s*-\s*100\s*\)", " ", overall.group(0))
        tail = line.split(":", 1)[1] if ":" in line else line
        numbers = _PERCENT_OR_NUMBER.findall(tail)
        if numbers:
            return _as_probability(numbers[-1])
    m = _CONF.search(text)
    if not m:
        raise ParseError("no 'Confidence: <number>%' pattern in response")
    return _as_probability(m.group(1))


def parse_top_k(text: str) -> list[tuple[str, float]]:
    """``G1:``/``P1:`` pairs in guess order, probabilities scaled to [0, 1]."""
    guesses = dict(re.findall(r"^\s*G(\d+)\s*:\s*(.+?)\s*$", text, re.MULTILINE))
    probs = dict(re.findall(r"^\s*P(\d+)\s*:\s*(-?\d+(?:\.\d+)?)\s*%?\s*$", text, re.MULTILINE))
    out = []
    for k in sorted(guesses, key=int):
        if k in probs:
            out.append((guesses[k], _as_probability(probs[k])))
    if not out:
        raise ParseError("no G<k>/P<k> pairs in response")
    return out


def yes_no_confidence(logp_yes: float, logp_no: float) -> float:
    """Softmax over the 'yes'/'no' token log-probabilities."""
    if not (math.isfinite(logp_yes) and math.isfinite(logp_no)):
        raise ValidationError("log-probabilities must be finite")
    m = max(logp_yes, logp_no)
    ey, en = math.exp(logp_yes - m), math.exp(logp_no - m)
    return ey / (ey + en)
