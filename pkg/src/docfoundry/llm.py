"""Unified client for text-generation backends.

Two HTTP dialects (openai_compatible chat-completions and
ollama_compatible generate) plus two deterministic local backends for
testing: echo (returns the prompt) and scripted (ordered response queues
matched by substring patterns). Every invocation, success or failure,
appends exactly one CallLog entry. API keys are read from the
environment only and never serialized.
"""

from __future__ import annotations

import os
import re
import time
from dataclasses import dataclass, field

import httpx

GENERIC_API_KEY_ENV = "DOCFOUNDRY_API_KEY"
BASE_URL_ENV = "DOCFOUNDRY_BASE_URL"
SCRIPT_ENV = "DOCFOUNDRY_SCRIPT"

HTTP_KINDS = ("openai_compatible", "ollama_compatible")
LOCAL_KINDS = ("scripted", "echo")


class BackendError(Exception):
    pass


class BackendUnreachableError(BackendError):
    pass


class UnknownProviderError(BackendError):
    pass


class ScriptExhaustedError(BackendError):
    """Scripted backend had no queued response matching the prompt."""


class TemplateError(BackendError):
    """Template references variables that were not supplied."""

    def __init__(self, missing: list[str]):
        super().__init__(f"missing template variables: {', '.join(sorted(missing))}")
        self.missing = sorted(missing)


@dataclass(frozen=True)
class BackendConfig:
    kind: str  # openai_compatible | ollama_compatible | scripted | echo
    model: str
    base_url: str | None = None
    api_key_env: str | None = None
    timeout_s: float = 120.0
    temperature: float = 0.0
    max_tokens: int = 1024

    def __post_init__(self):
        if self.kind not in HTTP_KINDS + LOCAL_KINDS:
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.kind in HTTP_KINDS and not self.base_url:
            raise ValueError(f"backend kind {self.kind!r} requires base_url")

    def api_key(self) -> str | None:
        for env in (self.api_key_env, GENERIC_API_KEY_ENV):
            if env and os.environ.get(env):
                return os.environ[env]
        return None

    def to_json(self) -> dict:
        # deliberately omits any resolved key material
        return {"kind": self.kind, "model": self.model, "base_url": self.base_url,
                "api_key_env": self.api_key_env, "timeout_s": self.timeout_s,
                "temperature": self.temperature, "max_tokens": self.max_tokens}


@dataclass(frozen=True)
class ChatMessage:
    role: str  # system | user | assistant
    content: str

    def __post_init__(self):
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"unknown role {self.role!r}")


def check_alternation(messages: list[ChatMessage]) -> None:
    """Conversations alternate user/assistant after an optional leading
    system message, starting with user."""
    if not messages:
        raise ValueError("conversation must not be empty")
    body = messages[1:] if messages[0].role == "system" else list(messages)
    if any(m.role == "system" for m in body):
        raise ValueError("system message allowed only at the start")
    for i, message in enumerate(body):
        expected = "user" if i % 2 == 0 else "assistant"
        if message.role != expected:
            raise ValueError(
                f"conversation must alternate user/assistant; "
                f"message {i} has role {message.role!r}, expected {expected!r}")


@dataclass(frozen=True)
class GenerationResult:
    text: str
    backend_kind: str
    model: str
    latency_ms: float
    prompt_chars: int
    completion_chars: int


@dataclass(frozen=True)
class CallLogEntry:
    timestamp: float
    prompt: str
    params: dict
    result: str | None
    error: str | None


@dataclass
class CallLog:
    entries: list[CallLogEntry] = field(default_factory=list)

    def append(self, entry: CallLogEntry) -> None:
        self.entries.append(entry)

    def __len__(self) -> int:
        return len(self.entries)


def render_template(template: str, vars: dict[str, str]) -> str:
    """Substitute {name} placeholders; unused vars are ignored.

    Non-placeholder braces (e.g. JSON examples in prompts) are left
    alone; a placeholder is {identifier} exactly.
    """
    placeholders = set(re.findall(r"\{([A-Za-z_][A-Za-z0-9_]*)\}", template))
    missing = placeholders - set(vars)
    if missing:
        raise TemplateError(sorted(missing))
    out = template
    for name in placeholders:
        out = out.replace("{" + name + "}", vars[name])
    return out


def render_messages(messages: list[ChatMessage]) -> str:
    """Single-string rendering of a conversation (scripted matching, logs)."""
    return "\n".join(f"{m.role}: {m.content}" for m in messages)


class ScriptedResponder:
    """Ordered response queues keyed by substring patterns.

    The first pattern (in insertion order) that occurs in the rendered
    prompt and still has queued responses supplies the reply.
    """

    def __init__(self, script: list[tuple[str, list[str]]]):
        self.queues: list[tuple[str, list[str]]] = [
            (pattern, list(responses)) for pattern, responses in script]

    def respond(self, rendered_prompt: str) -> str:
        for pattern, queue in self.queues:
            if pattern in rendered_prompt and queue:
                return queue.pop(0)
        raise ScriptExhaustedError(
            "no scripted response matches the prompt "
            f"(prompt starts with {rendered_prompt[:80]!r})")


def load_script_file(path: str) -> list[tuple[str, list[str]]]:
    """Script file: JSON list of [pattern, [response, ...]] pairs."""
    import json

    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    return [(pattern, list(responses)) for pattern, responses in raw]


class LlmClient:
    """Backend client; safe for concurrent calls, with an append-only log."""

    def __init__(self, cfg: BackendConfig,
                 script: list[tuple[str, list[str]]] | None = None):
        self.cfg = cfg
        self.call_log = CallLog()
        self._responder: ScriptedResponder | None = None
        if cfg.kind == "scripted":
            if script is None and os.environ.get(SCRIPT_ENV):
                script = load_script_file(os.environ[SCRIPT_ENV])
            self._responder = ScriptedResponder(script or [])

    # --- public entry points -------------------------------------------------

    def complete(self, prompt: str, **params) -> GenerationResult:
        if not prompt:
            raise ValueError("prompt must be non-empty")
        return self._invoke(prompt, messages=None, params=params)

    def chat(self, messages: list[ChatMessage], **params) -> GenerationResult:
        check_alternation(messages)
        return self._invoke(render_messages(messages), messages=messages,
                            params=params)

    # --- dispatch -------------------------------------------------------------

    def _invoke(self, rendered: str, messages: list[ChatMessage] | None,
                params: dict) -> GenerationResult:
        started = time.monotonic()
        try:
            if self.cfg.kind == "echo":
                text = self._echo(rendered, messages)
            elif self.cfg.kind == "scripted":
                text = self._responder.respond(rendered)
            elif self.cfg.kind == "openai_compatible":
                text = self._openai_call(rendered, messages, params)
            else:
                text = self._ollama_call(rendered, messages, params)
        except Exception as exc:
            self.call_log.append(CallLogEntry(
                timestamp=time.time(), prompt=rendered, params=dict(params),
                result=None, error=f"{type(exc).__name__}: {exc}"))
            raise
        latency_ms = (time.monotonic() - started) * 1000.0
        self.call_log.append(CallLogEntry(
            timestamp=time.time(), prompt=rendered, params=dict(params),
            result=text, error=None))
        return GenerationResult(
            text=text, backend_kind=self.cfg.kind, model=self.cfg.model,
            latency_ms=latency_ms, prompt_chars=len(rendered),
            completion_chars=len(text))

    def _echo(self, rendered: str, messages: list[ChatMessage] | None) -> str:
        if messages is None:
            return rendered
        return "\n".join(m.content for m in messages if m.role == "user")

    # --- HTTP dialects ---------------------------------------------------------

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = self.cfg.api_key()
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post(self, url: str, body: dict) -> dict:
        """POST with one retry on transport timeout, none on HTTP errors."""
        attempts = 0
        while True:
            attempts += 1
            try:
                resp = httpx.post(url, json=body, headers=self._headers(),
                                  timeout=self.cfg.timeout_s)
            except httpx.TimeoutException as exc:
                if attempts >= 2:
                    raise BackendUnreachableError(
                        f"timeout talking to {url}: {exc}") from exc
                continue
            except httpx.HTTPError as exc:
                raise BackendUnreachableError(
                    f"cannot reach backend at {url}: {exc}") from exc
            if resp.status_code // 100 != 2:
                raise BackendError(
                    f"backend returned HTTP {resp.status_code}: "
                    f"{resp.text[:200]}")
            return resp.json()

    def _openai_call(self, rendered: str, messages: list[ChatMessage] | None,
                     params: dict) -> str:
        if messages is None:
            wire = [{"role": "user", "content": rendered}]
        else:
            wire = [{"role": m.role, "content": m.content} for m in messages]
        body = {
            "model": self.cfg.model,
            "messages": wire,
            "temperature": params.get("temperature", self.cfg.temperature),
            "max_tokens": params.get("max_tokens", self.cfg.max_tokens),
        }
        url = f"{self.cfg.base_url.rstrip('/')}/chat/completions"
        payload = self._post(url, body)
        try:
            return payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError(
                f"malformed chat-completions response: {payload!r:.200}") from exc

    def _ollama_call(self, rendered: str, messages: list[ChatMessage] | None,
                     params: dict) -> str:
        base = self.cfg.base_url.rstrip("/")
        options = {
            "temperature": params.get("temperature", self.cfg.temperature),
            "num_predict": params.get("max_tokens", self.cfg.max_tokens),
        }
        if messages is None:
            body = {"model": self.cfg.model, "prompt": rendered,
                    "stream": False, "options": options}
            payload = self._post(f"{base}/api/generate", body)
            key = "response"
        else:
            body = {"model": self.cfg.model, "stream": False, "options": options,
                    "messages": [{"role": m.role, "content": m.content}
                                 for m in messages]}
            payload = self._post(f"{base}/api/chat", body)
            key = "message"
        if key == "response":
            text = payload.get("response")
        else:
            text = (payload.get("message") or {}).get("content")
        if not isinstance(text, str):
            raise BackendError(f"malformed ollama response: {payload!r:.200}")
        return text


_PROVIDERS = {
    "ollama": ("ollama_compatible", "http://localhost:11434"),
    "openai": ("openai_compatible", "https://api.openai.com/v1"),
    "vllm": ("openai_compatible", None),
    "llamacpp": ("openai_compatible", None),
    "openai_compatible": ("openai_compatible", None),
    "scripted": ("scripted", None),
    "echo": ("echo", None),
}


def with_backend(name: str) -> BackendConfig:
    """Build a BackendConfig from a "provider/model" string.

    The DOCFOUNDRY_BASE_URL env var overrides the provider default;
    providers with no default require it.
    """
    if "/" not in name:
        raise UnknownProviderError(
            f"backend name must be provider/model, got {name!r}")
    provider, model = name.split("/", 1)
    if provider not in _PROVIDERS:
        raise UnknownProviderError(
            f"unknown provider {provider!r} (known: {', '.join(sorted(_PROVIDERS))})")
    kind, default_url = _PROVIDERS[provider]
    base_url = os.environ.get(BASE_URL_ENV) or default_url
    if kind in HTTP_KINDS and not base_url:
        raise UnknownProviderError(
            f"provider {provider!r} needs {BASE_URL_ENV} to be set")
    return BackendConfig(kind=kind, model=model,
                         base_url=base_url if kind in HTTP_KINDS else None,
                         api_key_env=GENERIC_API_KEY_ENV)
