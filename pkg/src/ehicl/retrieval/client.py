"""Vision-language clients: a chat-completions HTTP client and a mock.

The live client POSTs to ``{base_url}/chat/completions`` with a model name,
system prompt, user prompt and an image reference field, and parses the reply
from the first text segment. Base URL / key come from EHICL_VLM_URL and
EHICL_VLM_KEY unless passed explicitly. All tests run against the mock; the
live path is exercised only for request-shape conformance via an injected
transport.

The mock answers from per-image metadata (ground-truth involvement plus a
noun/verb pair) with a configurable probability of flipping the class, which
is what the triple-run validation pipeline is calibrated against.
"""

from __future__ import annotations

import json
import os
import urllib.error
import urllib.request
from dataclasses import dataclass, field

from ..rng import derive_rng
from .descriptions import description_sentence, reasoning_sentence
from .involvement import InvolvementClass

__all__ = [
    "VlmRequest",
    "VlmResponse",
    "VlmError",
    "VlmTransportError",
    "MalformedReplyError",
    "ClassificationFailureError",
    "DescriptorFailureError",
    "HttpVlmClient",
    "MockVlmClient",
    "parse_involvement_reply",
]


class VlmError(RuntimeError):
    pass


class VlmTransportError(VlmError):
    """Network-level failure; message names the endpoint."""


class MalformedReplyError(VlmError):
    """Reply did not parse to a single involvement label."""


class ClassificationFailureError(VlmError):
    """Malformed replies exhausted the retry budget."""


class DescriptorFailureError(VlmError):
    """The client returned an empty description."""


@dataclass
class VlmRequest:
    system_prompt: str
    user_prompt: str
    image_ref: str


@dataclass
class VlmResponse:
    text: str
    parsed: object = None


def parse_involvement_reply(text: str) -> InvolvementClass:
    """A reply must be exactly one of the labels 0-3; anything else is malformed.

    The classification prompt's response line offers "-1" as a label, but the
    rule list defines class 3 for the no-hand case; -1 is treated as malformed
    here and resolved by retry.
    """
    stripped = text.strip()
    if stripped in ("0", "1", "2", "3"):
        return InvolvementClass(int(stripped))
    raise MalformedReplyError(f"unparseable involvement reply: {text!r}")


def _default_transport(url: str, body: bytes, headers: dict[str, str], timeout: float) -> bytes:
    req = urllib.request.Request(url, data=body, headers=headers, method="POST")
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            return resp.read()
    except (urllib.error.URLError, OSError) as exc:
        raise VlmTransportError(f"POST {url} failed: {exc}") from exc


class HttpVlmClient:
    """Chat-completions-style client over a configurable base URL."""

    def __init__(
        self,
        base_url: str | None = None,
        model: str = "qwen2.5-vl-72b-instruct",
        api_key: str | None = None,
        timeout: float = 30.0,
        transport=None,
    ) -> None:
        self.base_url = (base_url or os.environ.get("EHICL_VLM_URL", "")).rstrip("/")
        if not self.base_url:
            raise ValueError("no VLM base URL: pass base_url or set EHICL_VLM_URL")
        self.model = model
        self.api_key = api_key if api_key is not None else os.environ.get("EHICL_VLM_KEY", "")
        self.timeout = float(timeout)
        self._transport = transport or _default_transport

    def build_body(self, request: VlmRequest) -> dict:
        return {
            "model": self.model,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {
                    "role": "user",
                    "content": [
                        {"type": "text", "text": request.user_prompt},
                        {"type": "image_url", "image_url": {"url": str(request.image_ref)}},
                    ],
                },
            ],
        }

    def complete(self, system_prompt: str, user_prompt: str, image_ref) -> str:
        request = VlmRequest(system_prompt, user_prompt, str(image_ref))
        url = f"{self.base_url}/chat/completions"
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        body = json.dumps(self.build_body(request)).encode("utf-8")
        raw = self._transport(url, body, headers, self.timeout)
        try:
            payload = json.loads(raw.decode("utf-8"))
            content = payload["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise VlmError(f"unexpected completion payload from {url}: {exc}") from exc
        return _first_text_segment(content)


def _first_text_segment(content) -> str:
    if isinstance(content, str):
        return content
    if isinstance(content, list):
        for seg in content:
            if isinstance(seg, dict) and seg.get("type") == "text":
                return str(seg.get("text", ""))
    raise VlmError(f"no text segment in reply content: {content!r}")


@dataclass
class MockVlmClient:
    """Deterministic stand-in driven by per-image metadata.

    metadata maps image_ref -> {"involvement": int, "verb": str, "noun": str}.
    With probability flip_rate a classification reply picks uniformly among
    the three wrong classes. fail_after, when set, raises a transport error
    after that many calls (exercises resumable validation). malformed_first
    makes the first N classification replies unparseable.
    """

    metadata: dict
    prompts: dict[str, str]
    flip_rate: float = 0.0
    seed: int = 0
    fail_after: int | None = None
    malformed_first: int = 0
    calls: int = field(default=0, init=False)
    _classify_calls: int = field(default=0, init=False)

    def __post_init__(self) -> None:
        self._rng = derive_rng(self.seed, "mock-vlm")

    def complete(self, system_prompt: str, user_prompt: str, image_ref) -> str:
        self.calls += 1
        if self.fail_after is not None and self.calls > self.fail_after:
            raise VlmTransportError("POST mock://vlm failed: injected outage")
        meta = self.metadata[image_ref]
        involvement = InvolvementClass(meta["involvement"])
        if system_prompt == self.prompts["classify_system"]:
            self._classify_calls += 1
            if self._classify_calls <= self.malformed_first:
                return "both hands"
            cls = int(involvement)
            if self.flip_rate > 0.0 and self._rng.uniform() < self.flip_rate:
                others = [c for c in range(4) if c != cls]
                cls = int(others[self._rng.integers(3)])
            return str(cls)
        if system_prompt == self.prompts["reasoning_system"]:
            return reasoning_sentence(involvement, meta["verb"], meta["noun"])
        return description_sentence(involvement, meta["verb"], meta["noun"])
