"""Two-phase household negotiation.

Phase 1 collects one independent vote per agent and aggregates them into an
initial household estimate. Phase 2 runs moderated rounds in a fixed speaking
order until every agent's latest count lies within ``delta`` of the others,
or the round budget runs out.
"""

from __future__ import annotations

import json
import math
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .anchors import Anchor
from .backend import make_request
from .errors import (
    BaselineError,
    CountParseError,
    FinalAnswerParseError,
    ModeratorParseError,
    ProposalPhaseError,
    ProtocolError,
    ScoringError,
    VoteParseError,
)
from .parsing import (
    DEMOGRAPHICS_RANGE,
    HOUSEHOLD_RANGE,
    ParsedVote,
    parse_final_answer,
    parse_moderator,
    parse_refinement_count,
    parse_vote,
)
from .persona import EnrichedPersona, HouseholdContext
from .prompts import render

SCHEMA_VERSION = 1
DEFAULT_DELTA = 0
DEFAULT_T_MAX = 5
MAX_ATTEMPTS = 3


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class AgentProfile:
    agent_id: str
    role: str
    is_lead: bool
    persona_text: str
    ctx: HouseholdContext
    persona: EnrichedPersona | None = None
    anchor: float | None = None  # individual anchor, exposed to scripted policies only

    @property
    def role_text(self) -> str:
        return f"{self.role} (household lead)" if self.is_lead else self.role


def speaking_order(profiles: Sequence[AgentProfile]) -> list[AgentProfile]:
    """Lead first, then declaration order. Exactly one lead is required."""
    leads = [p for p in profiles if p.is_lead]
    if len(leads) != 1:
        raise ProtocolError(f"expected exactly one household lead, found {len(leads)}")
    return leads + [p for p in profiles if not p.is_lead]


def aggregate(votes: Sequence[int], weights: Sequence[float] | None = None) -> float:
    """G: plain or weighted sum of votes."""
    if weights is None:
        return float(sum(votes))
    if len(weights) != len(votes):
        raise ValueError("one weight per vote is required")
    return float(sum(w * v for w, v in zip(weights, votes)))


def _proposal_messages(p: AgentProfile) -> list[dict]:
    return render("proposal", {
        "household_context": p.ctx.describe(), "agent_role": p.role_text, "agent_persona": p.persona_text})


def propose(profile: AgentProfile, backend, max_attempts: int = MAX_ATTEMPTS, seed: int | None = None) -> ParsedVote:
    messages = _proposal_messages(profile)
    for attempt in range(max_attempts):
        req = make_request("proposal", messages, seed=seed, metadata={
            "household_id": profile.ctx.household_id, "agent_id": profile.agent_id,
            "anchor": profile.anchor, "attempt": attempt})
        try:
            return parse_vote(backend.complete(req))
        except VoteParseError:
            continue
    raise ProposalPhaseError(profile.agent_id, f"no parsable vote after {max_attempts} attempts")


def parallel_proposals(profiles: Sequence[AgentProfile], backend, weights: Mapping[str, float] | None = None,
                       max_attempts: int = MAX_ATTEMPTS, seed: int | None = None,
                       workers: int = 1) -> tuple[dict, int]:
    """Independent votes (no shared history) and the aggregated estimate, rounded half-up."""
    if not profiles:
        raise ProtocolError("no agents to query")
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda p: propose(p, backend, max_attempts, seed), profiles))
    else:
        results = [propose(p, backend, max_attempts, seed) for p in profiles]
    votes = {p.agent_id: v for p, v in zip(profiles, results)}
    w = None if weights is None else [weights.get(p.agent_id, 1.0) for p in profiles]
    return votes, round_half_up(aggregate([v.value for v in results], w))


# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Utterance:
    round: int
    agent_id: str
    text: str
    extracted_count: int
    moderator_attempts: int = 1

    def as_dict(self) -> dict:
        return {"round": self.round, "agent_id": self.agent_id, "text": self.text,
                "extracted_count": self.extracted_count, "moderator_attempts": self.moderator_attempts}


@dataclass(frozen=True)
class Rejection:
    round: int
    agent_id: str
    text: str
    feedback: str
    judged: bool  # False when the count pre-check rejected it

    def as_dict(self) -> dict:
        return {"round": self.round, "agent_id": self.agent_id, "text": self.text,
                "feedback": self.feedback, "judged": self.judged}


@dataclass(frozen=True)
class ModerationResult:
    accept: bool
    feedback: str
    count: int | None
    judged: bool


def format_history(history: Sequence[Utterance], roles: Mapping[str, str]) -> str:
    if not history:
        return "(no discussion yet)"
    return "\n".join(f"[Round {u.round}] {roles.get(u.agent_id, u.agent_id)}: {u.text}" for u in history)


def moderate(candidate: str, speaker: AgentProfile, estimate: int, history: Sequence[Utterance], backend,
             roles: Mapping[str, str] | None = None, seed: int | None = None, attempt: int = 0,
             judge: bool = True) -> ModerationResult:
    """Count pre-check, then the judge. An unparsable judgement counts as a rejection."""
    try:
        count = parse_refinement_count(candidate)
    except CountParseError:
        return ModerationResult(False, "no integer trip count in the utterance", None, False)
    if not judge:
        return ModerationResult(True, "", count, False)
    accept, feedback = judge_candidate(candidate, speaker, estimate, history, backend, roles, seed, attempt)
    return ModerationResult(accept, feedback, count, True)


def judge_candidate(candidate: str, speaker: AgentProfile, estimate, history: Sequence[Utterance], backend,
                    roles: Mapping[str, str] | None = None, seed: int | None = None,
                    attempt: int = 0) -> tuple[bool, str]:
    messages = render("moderator", {
        "household_context": speaker.ctx.describe(),
        "speaker_profile": f"{speaker.role_text}\n{speaker.persona_text}",
        "estimate": estimate,
        "history": format_history(history, roles or {}),
        "candidate": candidate,
    })
    req = make_request("moderator", messages, seed=seed, metadata={
        "household_id": speaker.ctx.household_id, "agent_id": speaker.agent_id,
        "estimate": estimate, "attempt": attempt, "history_len": len(history)})
    try:
        d = parse_moderator(backend.complete(req))
    except ModeratorParseError:
        return False, "moderator reply unparsable; rejected conservatively"
    return d.accept, d.feedback


@dataclass(frozen=True)
class Outcome:
    converged: bool
    y_hat: int
    t_star: int | None = None
    exhausted: bool = False

    def as_dict(self) -> dict:
        if self.converged:
            return {"converged": True, "t_star": self.t_star, "y_hat": self.y_hat}
        return {"converged": False, "exhausted": self.exhausted, "y_hat_fallback": self.y_hat}


@dataclass
class NegotiationTranscript:
    household_id: str
    initial_votes: dict
    initial_estimate: int
    speaking_order: list
    delta: int
    t_max: int
    rounds: list = field(default_factory=list)
    rejected: list = field(default_factory=list)
    carried_forward: list = field(default_factory=list)  # (round, agent_id, count)
    round_counts: list = field(default_factory=list)  # per round: {agent_id: latest count}
    outcome: Outcome | None = None

    @property
    def y_hat(self) -> int:
        return self.outcome.y_hat

    def final_counts(self) -> dict:
        return self.round_counts[-1] if self.round_counts else {}

    def to_record(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "household_id": self.household_id,
            "initial_votes": {k: {"value": v.value, "reason": v.reason, "clamped": v.clamped}
                              for k, v in self.initial_votes.items()},
            "initial_estimate": self.initial_estimate,
            "speaking_order": list(self.speaking_order),
            "delta": self.delta,
            "t_max": self.t_max,
            "rounds": [u.as_dict() for u in self.rounds],
            "rejected": [r.as_dict() for r in self.rejected],
            "carried_forward": [{"round": t, "agent_id": a, "count": c} for t, a, c in self.carried_forward],
            "round_counts": self.round_counts,
            "outcome": self.outcome.as_dict() if self.outcome else None,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True, ensure_ascii=False)


def consensus(counts: Sequence[int], delta: int) -> bool:
    return max(counts) - min(counts) <= delta


def refine_to_consensus(profiles: Sequence[AgentProfile], y0: int, backend, delta: int = DEFAULT_DELTA,
                        t_max: int = DEFAULT_T_MAX, moderator=None, initial_votes: Mapping | None = None,
                        max_attempts: int = MAX_ATTEMPTS, moderated: bool = True,
                        seed: int | None = None) -> NegotiationTranscript:
    """Moderated rounds until max - min of the latest counts is within ``delta``.

    Every agent's latest count starts at ``y0``. The estimate shown in round t is
    the maximum latest count after round t-1. An agent with no accepted
    utterance after ``max_attempts`` candidates keeps its previous count.
    """
    if delta < 0 or int(delta) != delta:
        raise ValueError("delta must be a non-negative integer")
    if t_max < 1:
        raise ValueError("t_max must be >= 1")
    order = speaking_order(profiles)
    moderator = moderator or backend
    roles = {p.agent_id: p.role_text for p in order}
    tr = NegotiationTranscript(
        household_id=order[0].ctx.household_id, initial_votes=dict(initial_votes or {}),
        initial_estimate=y0, speaking_order=[p.agent_id for p in order], delta=int(delta), t_max=t_max)
    latest = {p.agent_id: y0 for p in order}
    estimate = y0
    for t in range(1, t_max + 1):
        for p in order:
            history = tuple(tr.rounds)
            messages = render("refinement", {
                "household_context": p.ctx.describe(), "agent_role": p.role_text,
                "agent_persona": p.persona_text, "estimate": estimate,
                "history": format_history(history, roles),
            })
            accepted = None
            for attempt in range(max_attempts):
                req = make_request("refinement", messages, seed=seed, metadata={
                    "household_id": p.ctx.household_id, "agent_id": p.agent_id, "round": t,
                    "estimate": estimate, "latest": latest[p.agent_id], "anchor": p.anchor,
                    "attempt": attempt, "history_len": len(history)})
                text = backend.complete(req)
                verdict = moderate(text, p, estimate, history, moderator, roles, seed, attempt, judge=moderated)
                if verdict.accept:
                    accepted = Utterance(t, p.agent_id, text, verdict.count, attempt + 1)
                    break
                tr.rejected.append(Rejection(t, p.agent_id, text, verdict.feedback, verdict.judged))
            if accepted is None:
                tr.carried_forward.append((t, p.agent_id, latest[p.agent_id]))
            else:
                tr.rounds.append(accepted)
                latest[p.agent_id] = accepted.extracted_count
        tr.round_counts.append(dict(latest))
        counts = list(latest.values())
        if consensus(counts, delta):
            tr.outcome = Outcome(True, max(counts), t_star=t)
            return tr
        estimate = max(counts)
    tr.outcome = Outcome(False, round_half_up(statistics.median(latest.values())), exhausted=True)
    return tr


def score_trajectory(transcript: NegotiationTranscript, y: float, lam: float) -> float:
    """|y_hat - y| + lam * t_star for a converged transcript."""
    o = transcript.outcome
    if o is None or not o.converged:
        raise ScoringError(f"{transcript.household_id}: transcript did not converge")
    if y < 0:
        raise ScoringError("ground truth must be non-negative")
    return abs(o.y_hat - y) + lam * o.t_star


# --------------------------------------------------------------------------
# single-call baselines


def baseline_demographics(demographics: str, backend, anchor: float | None = None,
                          max_attempts: int = MAX_ATTEMPTS, seed: int | None = None, person_id: str = "") -> int:
    messages = render("baseline_demographics", {"demographics": demographics})
    for attempt in range(max_attempts):
        req = make_request("baseline_demographics", messages, seed=seed, metadata={
            "person_id": person_id, "anchor": anchor, "attempt": attempt})
        try:
            return parse_final_answer(backend.complete(req), DEMOGRAPHICS_RANGE)
        except FinalAnswerParseError:
            continue
    raise BaselineError(f"{person_id or 'person'}: no Final Answer after {max_attempts} attempts")


def household_baseline_messages(ctx: HouseholdContext, narratives: Sequence[str], anchor: Anchor) -> list[dict]:
    members = "\n".join(f"- Member {i} ({role}): {n}"
                        for i, ((_, role), n) in enumerate(zip(ctx.roles, narratives), start=1))
    return render("baseline_household", {
        "hh_size": ctx.hh_size, "veh_count": ctx.vehicle_count, "income": ctx.income_label,
        "location": ctx.location_label, "anchor": f"{anchor.value:.2f}",
        "member_narratives": members or None, "driver_count": ctx.driver_count,
    })


def baseline_household_copb(ctx: HouseholdContext, narratives: Sequence[str], anchor: Anchor, backend,
                            max_attempts: int = MAX_ATTEMPTS, seed: int | None = None) -> int:
    messages = household_baseline_messages(ctx, narratives, anchor)
    for attempt in range(max_attempts):
        req = make_request("baseline_household", messages, seed=seed, metadata={
            "household_id": ctx.household_id, "anchor": anchor.value, "attempt": attempt})
        try:
            return parse_final_answer(backend.complete(req), HOUSEHOLD_RANGE)
        except FinalAnswerParseError:
            continue
    raise BaselineError(f"{ctx.household_id}: no Final Answer after {max_attempts} attempts")
