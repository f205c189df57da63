"""Text-generation backends.

``HttpBackend`` speaks the OpenAI-compatible chat-completions wire format.
``ScriptedBackend`` answers from per-template policies with randomness derived
from (seed, request), so runs are reproducible regardless of thread scheduling.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Protocol

import httpx

from .errors import BackendUnavailable, ConfigError, MalformedResponse, RemoteError

log = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")

# default sampling temperature per template
TEMPERATURE = {
    "persona": 0.2,
    "hacopb": 0.2,
    "baseline_demographics": 0.2,
    "baseline_household": 0.2,
    "perception": 0.2,
    "proposal": 0.7,
    "refinement": 0.7,
    "moderator": 0.0,
}


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple
    model: str | None = None
    temperature: float = 0.7
    max_tokens: int = 512
    seed: int | None = None
    # routing info for scripted policies and logs; never sent on the wire
    template_id: str = ""
    metadata: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if not self.messages:
            raise ValueError("chat request needs at least one message")
        for m in self.messages:
            if m.get("role") not in ROLES:
                raise ValueError(f"invalid message role {m.get('role')!r}")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    def body(self, default_model: str) -> dict:
        out = {
            "model": self.model or default_model,
            "messages": [dict(m) for m in self.messages],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }
        if self.seed is not None:
            out["seed"] = self.seed
        return out


def make_request(template_id: str, messages, metadata=None, **kw) -> ChatRequest:
    kw.setdefault("temperature", TEMPERATURE.get(template_id, 0.7))
    return ChatRequest(tuple(messages), template_id=template_id, metadata=dict(metadata or {}), **kw)


class Backend(Protocol):
    def complete(self, request: ChatRequest) -> str: ...

    @property
    def identity(self) -> str: ...


# --------------------------------------------------------------------------


class HttpBackend:
    """Client for ``POST {base_url}{path}`` chat completions with bearer auth.

    Retries timeouts, transport errors, 429 and 5xx with exponential backoff;
    other non-2xx responses fail immediately.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key_env: str = "PEMANT_API_KEY",
        path: str = "/v1/chat/completions",
        timeout: float = 60.0,
        max_attempts: int = 3,
        backoff_base: float = 0.5,
        max_connections: int = 16,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if not base_url:
            raise ConfigError("HTTP backend needs an endpoint URL")
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.path = path
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self._sleep = sleep
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(api_key_env, "")
        if token:
            headers["Authorization"] = f"Bearer {token}"
        self._client = httpx.Client(
            base_url=self.base_url,
            headers=headers,
            timeout=timeout,
            limits=httpx.Limits(max_connections=max_connections, max_keepalive_connections=max_connections),
            transport=transport,
        )

    @property
    def identity(self) -> str:
        return f"http:{self.base_url}{self.path}#{self.model}"

    def close(self) -> None:
        self._client.close()

    def complete(self, request: ChatRequest) -> str:
        body = request.body(self.model)
        last_exc: Exception | None = None
        for attempt in range(self.max_attempts):
            if attempt:
                self._sleep(self.backoff_base * 2 ** (attempt - 1))
            try:
                resp = self._client.post(self.path, json=body)
            except httpx.TransportError as exc:  # includes timeouts
                last_exc = BackendUnavailable(f"{type(exc).__name__}: {exc}")
                log.warning("attempt %d/%d failed: %s", attempt + 1, self.max_attempts, exc)
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last_exc = RemoteError(resp.status_code, _error_message(resp))
                log.warning("attempt %d/%d: HTTP %d", attempt + 1, self.max_attempts, resp.status_code)
                continue
            if not resp.is_success:
                raise RemoteError(resp.status_code, _error_message(resp))
            return _first_choice(resp)
        assert last_exc is not None
        raise last_exc


def _error_message(resp: httpx.Response) -> str:
    try:
        data = resp.json()
        err = data.get("error", data)
        if isinstance(err, dict):
            return str(err.get("message", err))
        return str(err)
    except (ValueError, AttributeError):
        return resp.text[:500]


def _first_choice(resp: httpx.Response) -> str:
    try:
        data = resp.json()
    except ValueError:
        raise MalformedResponse("response body is not JSON") from None
    choices = data.get("choices") if isinstance(data, dict) else None
    if not choices:
        raise MalformedResponse("response has no choices")
    msg = choices[0].get("message") or {}
    content = msg.get("content")
    if content is None:
        content = choices[0].get("text")
    if not isinstance(content, str):
        raise MalformedResponse("first choice has no text content")
    return content


# --------------------------------------------------------------------------

Policy = Callable[[ChatRequest, random.Random], str]


class ScriptedBackend:
    """Deterministic backend: ``policies[template_id](request, rng) -> text``.

    ``rng`` is seeded from the backend seed plus a digest of the request
    (seed, template, metadata, messages), so identical requests always get identical
    replies and no shared state is touched between calls.
    """

    def __init__(self, seed: int = 0, policies: Mapping[str, Policy] | None = None):
        self.seed = seed
        self.policies = dict(default_policies() if policies is None else policies)

    @property
    def identity(self) -> str:
        return f"scripted:seed={self.seed}"

    def rng_for(self, request: ChatRequest) -> random.Random:
        h = hashlib.sha256()
        h.update(f"{self.seed}|{request.seed}".encode())
        h.update(b"\x00" + request.template_id.encode())
        h.update(b"\x00" + json.dumps(dict(request.metadata), sort_keys=True, default=str).encode())
        for m in request.messages:
            h.update(b"\x00" + m["role"].encode() + b"\x01" + m["content"].encode())
        return random.Random(int.from_bytes(h.digest()[:8], "big"))

    def complete(self, request: ChatRequest) -> str:
        policy = self.policies.get(request.template_id) or self.policies.get("*")
        if policy is None:
            raise BackendUnavailable(f"no scripted policy for template {request.template_id!r}")
        return policy(request, self.rng_for(request))


def fixed(text: str) -> Policy:
    return lambda request, rng: text


def sequence(texts) -> Policy:
    """Reply ``texts[attempt]`` (clamped to the last entry), using request metadata."""
    texts = list(texts)
    return lambda request, rng: texts[min(int(request.metadata.get("attempt", 0)), len(texts) - 1)]


# --------------------------------------------------------------------------
# default scripted household: plausible, reproducible answers for offline runs


def _persona_policy(request, rng):
    facts = list(request.metadata.get("facts") or [])
    text = " ".join(facts)
    if not text.startswith("I am"):
        text = "I am a survey respondent. " + text
    return text


def _hacopb_policy(request, rng):
    md = request.metadata
    vehicles = md.get("vehicles")
    drivers = md.get("drivers") or 0
    if vehicles == 0:
        pbc = "My household has no vehicle, so I have no drive access and rely on walking, transit, or rides."
    elif drivers > (vehicles or 0):
        pbc = "The shared vehicle is not always available because more drivers than vehicles compete for it."
    else:
        pbc = "A household vehicle is generally available to me when I need it."
    markers = md.get("markers") or []
    attitude = "I view travel mainly as a utility for necessary activities."
    if "pro_car" in markers:
        attitude = "I like the idea of driving as a means of travel."
    elif "pro_transit" in markers:
        attitude = "I like the idea of public transit as a means of travel."
    if md.get("caregiver"):
        sn = "As a parent I have escort obligations, such as taking my child to school and activities."
    else:
        sn = "I coordinate shared errands with other household members."
    anchor = float(md.get("anchor") or 3.0)
    return (
        "Rationale:\n"
        f"Attitude: {attitude}\n"
        f"Subjective Norms: {sn}\n"
        f"Perceived Behavioral Control: {pbc}\n"
        f"Final Answer: {max(0, round(anchor + rng.choice((-1, 0, 0, 1))))}"
    )


def _proposal_policy(request, rng):
    anchor = float(request.metadata.get("anchor") or 3.0)
    vote = max(0, round(anchor + rng.gauss(0.0, 1.0)))
    return f"VOTE: {vote}\nREASON: This matches my usual daily activities."


def _refinement_policy(request, rng):
    md = request.metadata
    est = int(md.get("estimate") or 0)
    if int(md.get("round", 1)) >= 2:
        n = est
        lead = "That works for me."
    else:
        n = max(0, est + rng.choice((-1, 0, 0, 1)))
        lead = rng.choice(("Thinking about my schedule,", "Given what I need to do today,", "Looking at our plans,"))
    return f"{lead} I can support {n} total trips for the household."


def _moderator_policy(request, rng):
    if rng.random() < 0.1:
        return "DECISION: REJECT\nFEEDBACK: Restate the position with a clearer justification."
    return "DECISION: ACCEPT\nFEEDBACK: Consistent with the persona and household constraints."


def _baseline_demographics_policy(request, rng):
    anchor = float(request.metadata.get("anchor") or 3.0)
    return f"Rationale: Typical for this profile.\nFinal Answer: {max(0, round(anchor + rng.gauss(0, 1.5)))}"


def _baseline_household_policy(request, rng):
    anchor = float(request.metadata.get("anchor") or 6.0)
    n = max(0, round(anchor + rng.gauss(0, 2.0)))
    return f"Needs Analysis: All members.\nConstraint Logic: Vehicle limits apply.\nFinal Answer: {n}"


def _perception_policy(request, rng):
    md = request.metadata
    age = md.get("age") or 40
    inc = md.get("income_bracket") or 3
    base = {"HEALTH": 2 + (age >= 60) + (age >= 75), "PRICE": 1 + inc // 2, "PLACE": 2 + (md.get("urban") is False)}
    v = base.get(md.get("variable"), 3) + rng.choice((-1, 0, 0, 1))
    return str(min(5, max(1, v)))


def default_policies() -> dict[str, Policy]:
    return {
        "persona": _persona_policy,
        "hacopb": _hacopb_policy,
        "proposal": _proposal_policy,
        "refinement": _refinement_policy,
        "moderator": _moderator_policy,
        "baseline_demographics": _baseline_demographics_policy,
        "baseline_household": _baseline_household_policy,
        "perception": _perception_policy,
    }
