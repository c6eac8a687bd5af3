"""Client for OpenAI-compatible chat-completion endpoints.

complete_batch is the only concurrent surface: a bounded worker pool over
immutable request data with per-item result slots, so callers always see
results in input order and partial failures stay isolated. Auth tokens are
only ever referenced by environment-variable name; no secret material is
written to results, logs or reports.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from collections.abc import Sequence
from dataclasses import dataclass

import requests

from .prompts import Prompt
from .vocab import UNKNOWN_LABEL


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model: str
    auth_env: str = "THREATLOG_API_TOKEN"
    timeout_s: float = 30.0
    max_in_flight: int = 4
    retries: int = 2
    backoff_ms: int = 250

    def __post_init__(self):
        if self.timeout_s <= 0:
            raise ValueError("timeout must be positive")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        if self.retries < 0:
            raise ValueError("retries must be >= 0")


@dataclass(frozen=True)
class GenerationParams:
    """Decoding parameters. Classification defaults to greedy; the sampled
    settings (0.7/0.9, repetition penalty 1.1) belong to mitigation
    generation."""

    temperature: float = 0.0
    top_p: float = 1.0
    max_new_tokens: int = 16
    repetition_penalty: float = 1.0
    do_sample: bool = False

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not 0.0 < self.top_p <= 1.0:
            raise ValueError("top_p must be in (0, 1]")
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")


#: Binary answers are one word, so three new tokens suffice.
BINARY_CLASSIFY_PARAMS = GenerationParams(max_new_tokens=3)
#: Multiclass answers may carry full attack class names.
MULTICLASS_CLASSIFY_PARAMS = GenerationParams(max_new_tokens=100)
#: Mitigation generation samples for varied but coherent responses.
MITIGATION_PARAMS = GenerationParams(
    temperature=0.7, top_p=0.9, max_new_tokens=200, repetition_penalty=1.1, do_sample=True
)


@dataclass
class InferenceResult:
    prompt_id: int
    raw: str
    label: str  # vocabulary label or Unknown
    mitigation: str
    latency_ms: float
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_json(self) -> dict:
        return {
            "id": self.prompt_id,
            "raw": self.raw,
            "label": self.label,
            "mitigation": self.mitigation,
            "latency_ms": self.latency_ms,
            "error": self.error,
        }


def extract_label(raw: str, vocabulary: Sequence[str]) -> str:
    """Case-insensitive search treating underscores and spaces as
    equivalent; the longest vocabulary match wins, equal lengths go to the
    earliest occurrence, no match yields Unknown."""
    haystack = raw.lower().replace("_", " ")
    best: tuple[int, int, str] | None = None  # (-len, position, label)
    for name in vocabulary:
        needle = name.lower().replace("_", " ")
        pos = haystack.find(needle)
        if pos < 0:
            continue
        key = (-len(needle), pos, name)
        if best is None or key < best:
            best = key
    return best[2] if best else UNKNOWN_LABEL


def extract_mitigation(raw: str, vocabulary: Sequence[str]) -> tuple[str, str]:
    """Label from the first line; remaining lines, trimmed, are the
    mitigation text. An unparseable first line preserves the full text."""
    lines = raw.strip().splitlines()
    first = lines[0] if lines else ""
    label = extract_label(first, vocabulary)
    if label == UNKNOWN_LABEL:
        return UNKNOWN_LABEL, raw.strip()
    return label, "\n".join(lines[1:]).strip()


def _resolve_token(endpoint: EndpointConfig) -> str | None:
    return os.environ.get(endpoint.auth_env) or None


def complete(
    prompt: Prompt,
    endpoint: EndpointConfig,
    params: GenerationParams,
    vocabulary: Sequence[str],
    *,
    with_mitigation: bool = False,
) -> InferenceResult:
    """One chat completion with retry/backoff; never raises on endpoint
    failure, returning a failed result instead. Issues at most
    1 + retries requests."""
    body = {
        "model": endpoint.model,
        "messages": [
            {"role": "system", "content": prompt.system},
            {"role": "user", "content": prompt.user},
        ],
        "temperature": params.temperature if params.do_sample else 0.0,
        "top_p": params.top_p,
        "max_tokens": params.max_new_tokens,
    }
    if params.repetition_penalty != 1.0:
        body["repetition_penalty"] = params.repetition_penalty
    headers = {}
    token = _resolve_token(endpoint)
    if token:
        headers["Authorization"] = f"Bearer {token}"

    url = endpoint.base_url.rstrip("/") + "/v1/chat/completions"
    start = time.perf_counter()
    error = None
    raw = ""
    for attempt in range(endpoint.retries + 1):
        if attempt:
            time.sleep(endpoint.backoff_ms / 1000.0 * 2 ** (attempt - 1))
        try:
            resp = requests.post(url, json=body, headers=headers, timeout=endpoint.timeout_s)
            if resp.status_code != 200:
                error = f"HTTP {resp.status_code}"
                continue
            raw = resp.json()["choices"][0]["message"]["content"]
            error = None
            break
        except (requests.RequestException, KeyError, ValueError) as exc:
            error = f"{type(exc).__name__}: {exc}"
    latency_ms = (time.perf_counter() - start) * 1000.0

    if error is not None:
        return InferenceResult(prompt.prompt_id, "", UNKNOWN_LABEL, "", latency_ms, error)
    if with_mitigation:
        label, mitigation = extract_mitigation(raw, vocabulary)
    else:
        label, mitigation = extract_label(raw, vocabulary), ""
    return InferenceResult(prompt.prompt_id, raw, label, mitigation, latency_ms)


def complete_batch(
    prompts: Sequence[Prompt],
    endpoint: EndpointConfig,
    params: GenerationParams,
    vocabulary: Sequence[str],
    *,
    with_mitigation: bool = False,
) -> list[InferenceResult]:
    """Run prompts with at most max_in_flight concurrent requests; the
    output order always matches the input order."""
    if not prompts:
        return []
    vocabulary = tuple(vocabulary)

    def run(prompt: Prompt) -> InferenceResult:
        return complete(prompt, endpoint, params, vocabulary, with_mitigation=with_mitigation)

    with ThreadPoolExecutor(max_workers=endpoint.max_in_flight) as pool:
        return list(pool.map(run, prompts))
