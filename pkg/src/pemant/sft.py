"""Fine-tuning data export by rejection sampling.

Proposal records keep every judged-accepted initial vote. Dialogue records come
from the lowest-loss converged self-play trajectory of each household.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .backend import make_request
from .errors import ProposalPhaseError, ProtocolError, VoteParseError
from .negotiation import (
    SCHEMA_VERSION,
    AgentProfile,
    NegotiationTranscript,
    _proposal_messages,
    format_history,
    judge_candidate,
    parallel_proposals,
    refine_to_consensus,
    score_trajectory,
    speaking_order,
)
from .parsing import parse_vote
from .prompts import render

DEFAULT_K = 4
DEFAULT_M = 3
DEFAULT_LAMBDA = 0.1


@dataclass(frozen=True)
class SftRecord:
    kind: str  # proposal | dialogue
    household_id: str
    agent_id: str
    messages: tuple  # prompt messages
    target: str
    score: float | None = None
    meta: dict = field(default_factory=dict)

    def to_json(self) -> str:
        rec = {
            "schema_version": SCHEMA_VERSION, "kind": self.kind, "household_id": self.household_id,
            "agent_id": self.agent_id,
            "messages": [dict(m) for m in self.messages] + [{"role": "assistant", "content": self.target}],
            "target": self.target, "score": self.score, **self.meta,
        }
        return json.dumps(rec, sort_keys=True, ensure_ascii=False)


@dataclass
class SftResult:
    proposals: list = field(default_factory=list)
    dialogues: list = field(default_factory=list)
    skipped: list = field(default_factory=list)  # {household_id, agent_id, stage, reason}
    losses: dict = field(default_factory=dict)  # household_id -> per-trajectory loss (inf if unusable)
    selected: dict = field(default_factory=dict)  # household_id -> trajectory index


def select_trajectory(losses: Sequence[float]) -> int | None:
    """Index of the minimum finite loss; ties go to the earliest."""
    best = None
    for i, loss in enumerate(losses):
        if math.isfinite(loss) and (best is None or loss < losses[best]):
            best = i
    return best


def dialogue_records(tr: NegotiationTranscript, profiles: Sequence[AgentProfile], loss: float,
                     trajectory: int) -> list[SftRecord]:
    """One record per accepted utterance, with the exact prompt that produced it."""
    by_id = {p.agent_id: p for p in profiles}
    roles = {p.agent_id: p.role_text for p in speaking_order(profiles)}
    out = []
    for i, u in enumerate(tr.rounds):
        p = by_id[u.agent_id]
        estimate = tr.initial_estimate if u.round == 1 else max(tr.round_counts[u.round - 2].values())
        history = tr.rounds[:i]
        messages = render("refinement", {
            "household_context": p.ctx.describe(), "agent_role": p.role_text,
            "agent_persona": p.persona_text, "estimate": estimate, "history": format_history(history, roles),
        })
        out.append(SftRecord("dialogue", tr.household_id, u.agent_id, tuple(messages), u.text, loss, {
            "round": u.round, "estimate": estimate, "history_len": len(history), "trajectory": trajectory}))
    return out


def build_sft_datasets(households: Sequence[tuple], backend, judge=None, lam: float = DEFAULT_LAMBDA,
                       k: int = DEFAULT_K, m: int = DEFAULT_M, delta: int = 0, t_max: int = 5,
                       seed: int = 0) -> SftResult:
    """``households``: (profiles, observed total trips) pairs.

    Trajectory ``j`` uses request seed ``seed + j`` so sibling trajectories differ.
    """
    if k < 1 or m < 1:
        raise ValueError("k and m must be >= 1")
    judge = judge or backend
    res = SftResult()
    for profiles, y in households:
        hid = profiles[0].ctx.household_id
        for p in profiles:
            recs = _judged_proposals(p, backend, judge, k, seed)
            if recs:
                res.proposals.extend(recs)
            else:
                res.skipped.append({"household_id": hid, "agent_id": p.agent_id, "stage": "proposal",
                                    "reason": f"no accepted candidate in {k} draws"})
        losses, transcripts = [], []
        for j in range(m):
            try:
                votes, y0 = parallel_proposals(profiles, backend, seed=seed + j)
                tr = refine_to_consensus(profiles, y0, backend, delta=delta, t_max=t_max, moderator=judge,
                                         initial_votes=votes, seed=seed + j)
            except (ProposalPhaseError, ProtocolError):
                losses.append(math.inf)
                transcripts.append(None)
                continue
            transcripts.append(tr)
            losses.append(score_trajectory(tr, y, lam) if tr.outcome.converged else math.inf)
        res.losses[hid] = losses
        best = select_trajectory(losses)
        if best is None:
            res.skipped.append({"household_id": hid, "agent_id": None, "stage": "dialogue",
                                "reason": f"no converged trajectory in {m} runs"})
            continue
        res.selected[hid] = best
        res.dialogues.extend(dialogue_records(transcripts[best], profiles, losses[best], best))
    return res


def _judged_proposals(profile: AgentProfile, backend, judge, k: int, seed: int) -> list[SftRecord]:
    messages = _proposal_messages(profile)
    out, seen = [], set()
    for j in range(k):
        req = make_request("proposal", messages, seed=seed, metadata={
            "household_id": profile.ctx.household_id, "agent_id": profile.agent_id,
            "anchor": profile.anchor, "attempt": 0, "candidate": j})
        text = backend.complete(req)
        try:
            vote = parse_vote(text)
        except VoteParseError:
            continue
        ok, _ = judge_candidate(text, profile, "not yet aggregated (initial proposal)", (), judge,
                                seed=seed, attempt=j)
        if ok and text not in seen:
            seen.add(text)
            out.append(SftRecord("proposal", profile.ctx.household_id, profile.agent_id, tuple(messages), text,
                                 None, {"vote": vote.value, "candidate": j}))
    return out


def write_jsonl(records, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8") as f:
        for r in records:
            f.write((r if isinstance(r, str) else r.to_json()) + "\n")
    return path
