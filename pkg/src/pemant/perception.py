"""Likert perception survey administered to synthesized personas."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .backend import make_request
from .errors import HeldOutViolation, LikertParseError, MetricDomainError, UndefinedKappaError
from .metrics import acc_within, histogram, mae, qwk, structural_alignment, wasserstein_ordinal
from .parsing import parse_likert
from .prompts import render
from .translation import AtomicFactList

AGREE = ((1, "Strongly Agree"), (2, "Agree"), (3, "Neither Agree or Disagree"), (4, "Disagree"),
         (5, "Strongly Disagree"))


@dataclass(frozen=True)
class Instrument:
    variable: str
    name: str
    question: str
    scale: tuple

    def scale_text(self) -> str:
        return ", ".join(f"{code}={label}" for code, label in self.scale)


INSTRUMENTS = (
    Instrument("HEALTH", "health", "In general, would you say your health is?",
               ((1, "Excellent"), (2, "Very Good"), (3, "Good"), (4, "Fair"), (5, "Poor"))),
    Instrument("PRICE", "price", "The price of gasoline affects the number of vehicle trips I make.", AGREE),
    Instrument("PLACE", "place",
               "I prefer to live in a community with mixed land uses (homes, shops, work) so I can walk to places.",
               AGREE),
)
COVARIATES = ("age", "income", "density")


@dataclass(frozen=True)
class Subject:
    person_id: str
    persona_text: str
    facts: AtomicFactList
    features: dict = field(default_factory=dict)  # passed to scripted policies only


def check_held_out(facts: AtomicFactList, instruments: Sequence[Instrument] = INSTRUMENTS) -> None:
    leaked = sorted(facts.variables() & {i.variable for i in instruments})
    if leaked:
        raise HeldOutViolation(f"{facts.person_id}: persona facts include held-out variable(s) {', '.join(leaked)}")


def ask(subject: Subject, instrument: Instrument, backend, max_attempts: int = 3, seed: int | None = None,
        k: int = 5):
    """Parsed 1..k answer, or None after ``max_attempts`` unusable replies."""
    messages = render("perception", {"persona": subject.persona_text, "question": instrument.question,
                                     "scale": instrument.scale_text()})
    for attempt in range(max_attempts):
        req = make_request("perception", messages, seed=seed, metadata={
            **subject.features, "person_id": subject.person_id, "variable": instrument.variable,
            "attempt": attempt})
        try:
            return parse_likert(backend.complete(req), k)
        except LikertParseError:
            continue
    return None


@dataclass
class SurveyResult:
    responses: dict  # variable -> {person_id: answer}
    nonresponse: dict  # variable -> count


def perception_survey(subjects: Sequence[Subject], backend, instruments: Sequence[Instrument] = INSTRUMENTS,
                      max_attempts: int = 3, seed: int | None = None, workers: int = 1) -> SurveyResult:
    for s in subjects:
        check_held_out(s.facts, instruments)
    jobs = [(s, ins) for s in subjects for ins in instruments]

    def run(job):
        return ask(job[0], job[1], backend, max_attempts, seed)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            answers = list(pool.map(run, jobs))
    else:
        answers = [run(j) for j in jobs]
    responses = {i.variable: {} for i in instruments}
    nonresponse = {i.variable: 0 for i in instruments}
    for (s, ins), a in zip(jobs, answers):
        if a is None:
            nonresponse[ins.variable] += 1
        else:
            responses[ins.variable][s.person_id] = a
    return SurveyResult(responses, nonresponse)


def _valid(v, k=5) -> bool:
    return isinstance(v, (int, np.integer)) and not isinstance(v, bool) and 1 <= v <= k


def perception_metrics(survey: SurveyResult, human: Mapping[str, Mapping[str, int]],
                       covariates: Mapping[str, Mapping[str, float]] | None = None,
                       instruments: Sequence[Instrument] = INSTRUMENTS) -> dict:
    """Per-instrument agreement plus both soft-accuracy aggregates and structural alignment.

    ``human``: variable -> {person_id: answer}; out-of-scale human codes are excluded.
    ``covariates``: name -> {person_id: value}.
    """
    per, pooled = {}, []
    for ins in instruments:
        agent = survey.responses.get(ins.variable, {})
        truth = human.get(ins.variable, {})
        pids = sorted(p for p in agent if _valid(truth.get(p)))
        pairs = [(truth[p], agent[p]) for p in pids]
        block = {"n": len(pairs), "nonresponse": survey.nonresponse.get(ins.variable, 0),
                 "human_missing": sum(1 for p in agent if not _valid(truth.get(p)))}
        if pairs:
            pooled.extend(pairs)
            block.update(exact_acc=acc_within(pairs, 0), acc_within_1=acc_within(pairs, 1), mae=mae(pairs),
                         wasserstein=wasserstein_ordinal(histogram(h for h, _ in pairs),
                                                         histogram(a for _, a in pairs)))
            try:
                block["qwk"] = qwk(pairs)
            except (UndefinedKappaError, MetricDomainError):
                block["qwk"] = None
        per[ins.name] = block
    out = {"instruments": per}
    scored = [b for b in per.values() if b["n"]]
    if pooled:
        out["soft_accuracy_per_response"] = acc_within(pooled, 1)
        out["soft_accuracy_per_instrument"] = float(np.mean([b["acc_within_1"] for b in scored]))
        out["mae_per_response"] = mae(pooled)
        out["mae_per_instrument"] = float(np.mean([b["mae"] for b in scored]))
    if covariates:
        out["structural_alignment"] = _alignment(survey, human, covariates, instruments)
    return out


def _alignment(survey, human, covariates, instruments):
    pids = sorted({p for ins in instruments for p in survey.responses.get(ins.variable, {})})
    obs, sim = {}, {}
    for ins in instruments:
        truth, agent = human.get(ins.variable, {}), survey.responses.get(ins.variable, {})
        obs[ins.name] = [truth.get(p) if _valid(truth.get(p)) and p in agent else None for p in pids]
        sim[ins.name] = [agent.get(p) if _valid(truth.get(p)) else None for p in pids]
    cov = {name: [covariates[name].get(p) for p in pids] for name in covariates}
    try:
        return structural_alignment(obs, cov, sim, cov)
    except MetricDomainError:
        return None
