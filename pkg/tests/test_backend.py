import json

import httpx
import pytest

from pemant.backend import ChatRequest, HttpBackend, ScriptedBackend, fixed, make_request, sequence
from pemant.errors import BackendUnavailable, MalformedResponse, RemoteError
from pemant.prompts import render

MSGS = render("proposal", {"household_context": "Size: 1", "agent_role": "head", "agent_persona": "I am 30."})


def ok(text="VOTE: 3\nREASON: x"):
    return httpx.Response(200, json={"choices": [{"message": {"role": "assistant", "content": text}}]})


def client(handler, **kw):
    sleeps = []
    b = HttpBackend("http://test", "m", transport=httpx.MockTransport(handler), sleep=sleeps.append, **kw)
    return b, sleeps


def test_request_body(monkeypatch):
    monkeypatch.setenv("PEMANT_API_KEY", "secret")
    seen = {}

    def handler(req):
        seen["url"] = str(req.url)
        seen["auth"] = req.headers.get("authorization")
        seen["body"] = json.loads(req.content)
        return ok()

    b, _ = client(handler)
    assert b.complete(make_request("proposal", MSGS, seed=5)) == "VOTE: 3\nREASON: x"
    assert seen["url"] == "http://test/v1/chat/completions"
    assert seen["auth"] == "Bearer secret"
    assert seen["body"]["model"] == "m"
    assert seen["body"]["temperature"] == 0.7
    assert seen["body"]["seed"] == 5
    assert "metadata" not in seen["body"] and "template_id" not in seen["body"]


def test_429_then_200_retries_with_backoff():
    replies = iter([httpx.Response(429, json={"error": {"message": "slow down"}}), ok()])
    b, sleeps = client(lambda req: next(replies))
    assert b.complete(make_request("proposal", MSGS)).startswith("VOTE")
    assert sleeps == [0.5]


def test_401_is_not_retried():
    calls = []

    def handler(req):
        calls.append(1)
        return httpx.Response(401, json={"error": {"message": "bad key"}})

    b, sleeps = client(handler)
    with pytest.raises(RemoteError) as e:
        b.complete(make_request("proposal", MSGS))
    assert e.value.status == 401 and "bad key" in str(e.value)
    assert len(calls) == 1 and sleeps == []


def test_persistent_5xx_gives_remote_error():
    b, sleeps = client(lambda req: httpx.Response(503, text="down"))
    with pytest.raises(RemoteError):
        b.complete(make_request("proposal", MSGS))
    assert sleeps == [0.5, 1.0]


def test_transport_failure_gives_unavailable():
    def handler(req):
        raise httpx.ConnectError("refused")

    b, _ = client(handler)
    with pytest.raises(BackendUnavailable):
        b.complete(make_request("proposal", MSGS))


@pytest.mark.parametrize("body", [{"choices": []}, {"choices": [{"message": {}}]}, {}])
def test_malformed(body):
    b, _ = client(lambda req: httpx.Response(200, json=body))
    with pytest.raises(MalformedResponse):
        b.complete(make_request("proposal", MSGS))


def test_request_validation():
    with pytest.raises(ValueError):
        ChatRequest(())
    with pytest.raises(ValueError):
        ChatRequest(({"role": "robot", "content": "x"},))


def test_temperatures():
    assert make_request("moderator", MSGS).temperature == 0.0
    assert make_request("persona", MSGS).temperature == 0.2
    assert make_request("refinement", MSGS).temperature == 0.7


def test_scripted_is_deterministic():
    req = make_request("proposal", MSGS, seed=7, metadata={"anchor": 4.0})
    a = ScriptedBackend(seed=1).complete(req)
    assert a == ScriptedBackend(seed=1).complete(req) == ScriptedBackend(seed=1).complete(req)
    outs = {ScriptedBackend(seed=s).complete(req) for s in range(30)}
    assert len(outs) > 1


def test_scripted_helpers():
    b = ScriptedBackend(policies={"proposal": sequence(["bad", "VOTE: 2"]), "*": fixed("fallback")})
    assert b.complete(make_request("proposal", MSGS, metadata={"attempt": 0})) == "bad"
    assert b.complete(make_request("proposal", MSGS, metadata={"attempt": 5})) == "VOTE: 2"
    assert b.complete(make_request("moderator", MSGS)) == "fallback"
    with pytest.raises(BackendUnavailable):
        ScriptedBackend(policies={}).complete(make_request("proposal", MSGS))
