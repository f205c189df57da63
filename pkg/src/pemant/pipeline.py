"""End-to-end runs: ingest, translate, persona, negotiate, evaluate.

Every run writes into its own directory. The manifest is written first and lists
every output file the run will produce; timings go to a separate file so the
manifest never changes after it is written.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Mapping

import yaml

from . import __version__
from .anchors import AnchorStore, default_anchor_path, load_anchor_sources
from .backend import HttpBackend, ScriptedBackend
from .errors import (
    BaselineError,
    ConfigError,
    EnrichmentError,
    ProposalPhaseError,
    ProtocolError,
    SynthesisError,
    TranslationError,
)
from .metrics import MetricsReport, PredictionSet
from .negotiation import (
    AgentProfile,
    baseline_demographics,
    baseline_household_copb,
    household_baseline_messages,
    parallel_proposals,
    refine_to_consensus,
    round_half_up,
)
from .perception import INSTRUMENTS, Subject, perception_metrics, perception_survey
from .persona import (
    HouseholdContext,
    enrich,
    impute_markers,
    load_markers,
    role_label,
    synthesize_narrative,
)
from .prompts import template_hashes
from .sft import build_sft_datasets, write_jsonl
from .survey import (
    SPLIT_PRESETS,
    clean_households,
    default_schema_path,
    load_cleaning_policy,
    load_dataset,
    load_schema,
    merged_fields,
    split_households,
    write_drop_report,
)
from .translation import default_rules_path, load_rules, translate

log = logging.getLogger(__name__)

DATA_DIR = Path(__file__).parent / "data"
VARIANTS = ("full", "role_only", "demo_only", "no_parallel", "no_moderator")
BASELINES = ("demographics", "household_copb")
HELD_OUT = tuple(i.variable for i in INSTRUMENTS)
SOFT_FAILURES = (TranslationError, SynthesisError, EnrichmentError, ProposalPhaseError, BaselineError,
                 ProtocolError)


# --------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    persons: str
    households: str
    delimiter: str = ","
    schema: str | None = None
    cleaning: str | None = None
    rules: str | None = None
    anchors: str | None = None
    markers: str | None = None
    anchor_source: str = "nhts"
    target_cycle: str = "2017"
    test_fraction: float = SPLIT_PRESETS["national"]
    split_seed: int = 42
    max_households: int | None = None
    backend: dict = field(default_factory=lambda: {"kind": "scripted", "seed": 0})
    delta: int = 0
    t_max: int = 5
    lam: float = 0.1
    weights: dict | None = None  # role label -> weight in G
    retries: int = 3
    workers: int = 1
    sft_k: int = 4
    sft_m: int = 3
    output_dir: str = "runs"
    base_dir: str = "."

    def path(self, name: str) -> Path:
        value = getattr(self, name)
        if value is None:
            defaults = {"schema": default_schema_path(), "rules": default_rules_path(),
                        "anchors": default_anchor_path(), "cleaning": DATA_DIR / "nhts_cleaning.yaml",
                        "markers": DATA_DIR / "markers.yaml"}
            return defaults[name]
        p = Path(value)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def validate(self) -> None:
        for name in ("persons", "households", "schema", "cleaning", "rules", "anchors", "markers"):
            p = self.path(name)
            if not p.exists():
                raise ConfigError(f"{name} file not found: {p}")
        if self.delta < 0 or int(self.delta) != self.delta:
            raise ConfigError("delta must be a non-negative integer")
        if self.t_max < 1:
            raise ConfigError("t_max must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.retries < 1 or self.sft_k < 1 or self.sft_m < 1:
            raise ConfigError("retry caps, K and M must be >= 1")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("test_fraction must be in (0, 1)")
        if self.backend.get("kind") not in ("scripted", "http"):
            raise ConfigError(f"unknown backend kind {self.backend.get('kind')!r}")
        if self.backend["kind"] == "http" and not (self.backend.get("endpoint") and self.backend.get("model")):
            raise ConfigError("http backend needs 'endpoint' and 'model'")

    def snapshot(self) -> dict:
        d = asdict(self)
        for name in ("persons", "households", "schema", "cleaning", "rules", "anchors", "markers"):
            d[name] = str(self.path(name))
        d.pop("base_dir")
        return d


FIELD_ALIASES = {"lambda": "lam"}


def config_from_dict(raw: Mapping[str, Any], base_dir: str | Path = ".") -> RunConfig:
    raw = dict(raw or {})
    data = raw.pop("data", {}) or {}
    split = raw.pop("split", {}) or {}
    protocol = raw.pop("protocol", {}) or {}
    flat: dict = {}
    flat.update({k: v for k, v in data.items()})
    if "preset" in split:
        if split["preset"] not in SPLIT_PRESETS:
            raise ConfigError(f"unknown split preset {split['preset']!r}")
        flat["test_fraction"] = SPLIT_PRESETS[split["preset"]]
    if "test_fraction" in split:
        flat["test_fraction"] = split["test_fraction"]
    if "seed" in split:
        flat["split_seed"] = split["seed"]
    if "max_households" in split:
        flat["max_households"] = split["max_households"]
    flat.update({FIELD_ALIASES.get(k, k): v for k, v in protocol.items()})
    flat.update({FIELD_ALIASES.get(k, k): v for k, v in raw.items()})
    known = set(RunConfig.__dataclass_fields__)
    unknown = sorted(set(flat) - known)
    if unknown:
        raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")
    if "persons" not in flat or "households" not in flat:
        raise ConfigError("config needs data.persons and data.households")
    flat.setdefault("base_dir", str(base_dir))
    return RunConfig(**flat)


def load_config(path: str | Path, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from None
    cfg = config_from_dict(raw, base_dir=path.parent)
    for k, v in (overrides or {}).items():
        if v is not None:
            setattr(cfg, k, v)
    cfg.validate()
    return cfg


def make_backend(cfg: RunConfig):
    b = cfg.backend
    if b["kind"] == "scripted":
        return ScriptedBackend(seed=int(b.get("seed", 0)))
    return HttpBackend(
        b["endpoint"], b["model"], api_key_env=b.get("api_key_env", "PEMANT_API_KEY"),
        path=b.get("path", "/v1/chat/completions"), timeout=float(b.get("timeout", 60)),
        max_attempts=int(b.get("max_attempts", 3)), max_connections=max(cfg.workers * 2, 4))


# --------------------------------------------------------------------------
# shared state for one run


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class Study:
    """Loaded, cleaned and split data plus every config artifact a run needs."""

    cfg: RunConfig
    schema: Any
    rules: Any
    markers: Any
    anchors: AnchorStore
    persons: dict  # person_id -> cleaned PersonRecord
    raw_persons: dict  # person_id -> record before cleaning (held-out answers live here)
    households: dict  # household_id -> cleaned HouseholdRecord
    train: list
    test: list
    drops: list

    @classmethod
    def load(cls, cfg: RunConfig) -> "Study":
        schema = load_schema(cfg.path("schema"))
        rules = load_rules(cfg.path("rules"))
        markers = load_markers(cfg.path("markers"))
        sources = load_anchor_sources(cfg.path("anchors"))
        if cfg.anchor_source not in sources:
            raise ConfigError(f"anchor source {cfg.anchor_source!r} not in {cfg.path('anchors')}")
        store = AnchorStore(sources[cfg.anchor_source], cfg.target_cycle)
        policy = load_cleaning_policy(cfg.path("cleaning"))
        persons, households = load_dataset(cfg.path("persons"), cfg.path("households"), schema, cfg.delimiter)
        train_ids, test_ids = split_households([h.household_id for h in households], cfg.test_fraction,
                                               cfg.split_seed)
        train_set = set(train_ids)
        tr_p = [p for p in persons if p.household_id in train_set]
        tr_h = [h for h in households if h.household_id in train_set]
        te_p = [p for p in persons if p.household_id not in train_set]
        te_h = [h for h in households if h.household_id not in train_set]
        # imputation values come from the training split only
        train_clean = clean_households(tr_p, tr_h, policy, schema)
        test_clean = clean_households(te_p, te_h, policy, schema, stats=train_clean.stats)
        kept_h = {h.household_id: h for h in train_clean.households + test_clean.households}
        kept_p = {p.person_id: p for p in train_clean.persons + test_clean.persons}
        test = sorted(h.household_id for h in test_clean.households)
        train = sorted(h.household_id for h in train_clean.households)
        if cfg.max_households is not None:
            test = test[:cfg.max_households]
            train = train[:cfg.max_households]
        return cls(cfg, schema, rules, markers, store, kept_p, {p.person_id: p for p in persons}, kept_h,
                   train, test, train_clean.drop_report + test_clean.drop_report)

    def members(self, hid: str) -> list:
        return [self.persons[m] for m in self.households[hid].member_ids if m in self.persons]

    def context(self, hid: str) -> HouseholdContext:
        return HouseholdContext.from_household(self.households[hid], self.members(hid), self.schema)

    def fields(self, person) -> dict:
        f = merged_fields(person, self.households[person.household_id])
        inc_var = self.schema.income.get("bracket_variable")
        if inc_var:
            f.setdefault(inc_var, self.households[person.household_id].income_bracket)
        return f

    def traits(self, person) -> dict:
        f = self.fields(person)
        return {"is_worker": _flag(f.get("WORKER")), "is_student": _flag(f.get("STUDENT")),
                "age": f.get("R_AGE_IMP"), "hh_vehicles": f.get("HHVEHCNT")}

    def lead_id(self, hid: str) -> str:
        members = self.members(hid)
        for m in members:
            if m.get("R_RELAT") == 1:
                return m.person_id
        return members[0].person_id

    def demographics(self, person) -> str:
        """Raw coded features as labelled lines (held-out items and the label excluded)."""
        lines = []
        for name, value in sorted(self.fields(person).items()):
            scheme = self.schema.variables.get(name)
            if scheme is None or value is None or name in HELD_OUT or name == self.schema.label:
                continue
            try:
                text = scheme.label(value) if scheme.enumerated else value
            except KeyError:
                text = value
            lines.append(f"{name}: {text}")
        return "\n".join(lines)


def _flag(v):
    return None if v is None else v == 1


# --------------------------------------------------------------------------
# per-household work


@dataclass
class HouseholdResult:
    household_id: str
    y: int | None
    y_hat: int | None = None
    status: str = "ok"  # ok | fallback | failed
    stage: str | None = None
    error: str | None = None
    t_star: int | None = None
    transcript: Any = None
    personas: list = field(default_factory=list)
    prompt: list | None = None


def build_personas(study: Study, hid: str, backend, seed: int | None):
    ctx = study.context(hid)
    out = []
    for m in study.members(hid):
        fields = study.fields(m)
        facts = translate(fields, study.rules, person_id=m.person_id)
        base = synthesize_narrative(facts, backend, max_attempts=study.cfg.retries, seed=seed)
        markers = impute_markers(fields, study.markers)
        anchor = study.anchors.individual(study.traits(m))
        out.append(enrich(base, ctx, anchor, markers, backend, max_attempts=study.cfg.retries, seed=seed))
    return ctx, out


def build_profiles(study: Study, hid: str, backend, variant: str = "full", seed: int | None = None):
    ctx = study.context(hid)
    lead = study.lead_id(hid)
    personas = []
    if variant in ("role_only", "demo_only"):
        texts = []
        for m in study.members(hid):
            if variant == "role_only":
                texts.append("(no persona provided)")
            else:
                translate(study.fields(m), study.rules, person_id=m.person_id)  # surfaces rule errors alike
                texts.append(study.demographics(m))
    else:
        ctx, personas = build_personas(study, hid, backend, seed)
        texts = [p.profile_text() for p in personas]
    profiles = []
    for i, m in enumerate(study.members(hid)):
        profiles.append(AgentProfile(
            agent_id=m.person_id, role=role_label(m.coded_fields), is_lead=m.person_id == lead,
            persona_text=texts[i], ctx=ctx, persona=personas[i] if personas else None,
            anchor=study.anchors.individual(study.traits(m)).value))
    return profiles, personas


def _weights(study: Study, profiles) -> dict | None:
    if not study.cfg.weights:
        return None
    return {p.agent_id: float(study.cfg.weights.get(p.role, 1.0)) for p in profiles}


def household_anchor(study: Study, hid: str):
    ctx = study.context(hid)
    return study.anchors.household(ctx.hh_size, ctx.vehicle_count, ctx.worker_count)


def predict_household(study: Study, hid: str, backend, variant: str = "full") -> HouseholdResult:
    cfg = study.cfg
    res = HouseholdResult(hid, study.households[hid].observed_total_trips)
    stage = "persona"
    try:
        profiles, personas = build_profiles(study, hid, backend, variant)
        res.personas = personas
        if variant == "no_parallel":
            votes, y0 = {}, round_half_up(household_anchor(study, hid).value)
        else:
            stage = "proposal"
            votes, y0 = parallel_proposals(profiles, backend, weights=_weights(study, profiles),
                                           max_attempts=cfg.retries)
        stage = "refinement"
        tr = refine_to_consensus(profiles, y0, backend, delta=cfg.delta, t_max=cfg.t_max,
                                 initial_votes=votes, max_attempts=cfg.retries,
                                 moderated=variant != "no_moderator")
    except SOFT_FAILURES as exc:
        res.status, res.stage, res.error = "failed", stage, f"{type(exc).__name__}: {exc}"
        return res
    res.transcript = tr
    res.y_hat = tr.outcome.y_hat
    res.t_star = tr.outcome.t_star
    res.status = "ok" if tr.outcome.converged else "fallback"
    return res


def baseline_household(study: Study, hid: str, backend, which: str) -> HouseholdResult:
    res = HouseholdResult(hid, study.households[hid].observed_total_trips)
    try:
        if which == "demographics":
            total = 0
            for m in study.members(hid):
                total += baseline_demographics(study.demographics(m), backend,
                                               anchor=study.anchors.individual(study.traits(m)).value,
                                               max_attempts=study.cfg.retries, person_id=m.person_id)
            res.y_hat = total
        else:
            ctx = study.context(hid)
            narratives = []
            for m in study.members(hid):
                facts = translate(study.fields(m), study.rules, person_id=m.person_id)
                narratives.append(synthesize_narrative(facts, backend, max_attempts=study.cfg.retries).narrative)
            anchor = household_anchor(study, hid)
            res.prompt = household_baseline_messages(ctx, narratives, anchor)
            res.y_hat = baseline_household_copb(ctx, narratives, anchor, backend, max_attempts=study.cfg.retries)
    except SOFT_FAILURES as exc:
        res.status, res.stage, res.error = "failed", "baseline", f"{type(exc).__name__}: {exc}"
    return res


def _map_households(study: Study, ids, fn):
    if study.cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=study.cfg.workers) as pool:
            return list(pool.map(fn, ids))
    return [fn(h) for h in ids]


# --------------------------------------------------------------------------
# run directory and outputs


class Run:
    """One run's output directory; the manifest is written on creation."""

    def __init__(self, cfg: RunConfig, command: str, outputs: list[str], run_dir: str | Path | None = None,
                 extra: Mapping | None = None):
        self.cfg = cfg
        self.command = command
        if run_dir is None:
            stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S")
            base = Path(cfg.output_dir)
            if not base.is_absolute():
                base = Path(cfg.base_dir) / base
            run_dir = base / f"{command}-{stamp}"
            n = 1
            while run_dir.exists():
                n += 1
                run_dir = base / f"{command}-{stamp}-{n}"
        self.dir = Path(run_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.timings: dict[str, float] = {}
        self.outputs = list(outputs) + ["timings.json"]
        manifest = {
            "version": __version__,
            "command": command,
            "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "config": cfg.snapshot(),
            "template_hashes": template_hashes(),
            "datasets": {name: sha256_file(cfg.path(name)) for name in ("persons", "households")},
            "config_files": {name: sha256_file(cfg.path(name))
                             for name in ("schema", "cleaning", "rules", "anchors", "markers")},
            "outputs": self.outputs,
            **dict(extra or {}),
        }
        (self.dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    def timed(self, stage: str):
        run = self

        class _T:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                run.timings[stage] = run.timings.get(stage, 0.0) + time.perf_counter() - self.t0

        return _T()

    def write_text(self, name: str, text: str) -> Path:
        p = self.dir / name
        p.write_text(text, encoding="utf-8")
        return p

    def write_lines(self, name: str, lines) -> Path:
        return self.write_text(name, "".join(f"{line}\n" for line in lines))

    def finish(self) -> None:
        self.write_text("timings.json", json.dumps(self.timings, indent=2, sort_keys=True) + "\n")


def _predictions_csv(results) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["household_id", "y", "y_hat", "residual", "status", "t_star"])
    for r in results:
        if r.status == "failed":
            continue
        resid = None if r.y is None else r.y_hat - r.y
        w.writerow([r.household_id, r.y, r.y_hat, resid, r.status, "" if r.t_star is None else r.t_star])
    return buf.getvalue()


def _report(results) -> MetricsReport:
    scored = [r for r in results if r.status != "failed" and r.y is not None]
    excluded: dict[str, int] = {}
    for r in results:
        if r.status == "failed":
            excluded[f"failed:{r.stage}"] = excluded.get(f"failed:{r.stage}", 0) + 1
        elif r.y is None:
            excluded["no_label"] = excluded.get("no_label", 0) + 1
    fallback = sum(1 for r in results if r.status == "fallback")
    if fallback:
        excluded["fallback_included"] = fallback
    preds = PredictionSet.from_pairs((r.household_id, r.y, r.y_hat) for r in scored)
    return MetricsReport.from_predictions(preds, excluded)


def _failures(results):
    return [json.dumps({"household_id": r.household_id, "stage": r.stage, "error": r.error}, sort_keys=True)
            for r in results if r.status == "failed"]


NEGOTIATION_OUTPUTS = ["manifest.json", "predictions.csv", "transcripts.jsonl", "personas.jsonl",
                       "failures.jsonl", "drop_report.jsonl", "metrics.json", "metrics.txt"]


def run_negotiation(cfg: RunConfig, variant: str = "full", run_dir=None, command: str = "predict"):
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    backend = make_backend(cfg)
    run = Run(cfg, command, NEGOTIATION_OUTPUTS, run_dir,
              {"variant": variant, "backend": backend.identity, "seeds": {"split": cfg.split_seed,
                                                                         "backend": cfg.backend.get("seed")},
               "protocol": {"delta": cfg.delta, "t_max": cfg.t_max, "lambda": cfg.lam}})
    with run.timed("load"):
        study = Study.load(cfg)
    with run.timed("households"):
        results = _map_households(study, study.test, lambda h: predict_household(study, h, backend, variant))
    with run.timed("write"):
        run.write_text("predictions.csv", _predictions_csv(results))
        run.write_lines("transcripts.jsonl", [r.transcript.to_json() for r in results if r.transcript])
        run.write_lines("personas.jsonl", [p.to_json() for r in results for p in r.personas])
        run.write_lines("failures.jsonl", _failures(results))
        write_drop_report(study.drops, run.dir / "drop_report.jsonl")
        report = _report(results)
        run.write_text("metrics.json", report.to_json() + "\n")
        run.write_text("metrics.txt", report.to_table() + "\n")
    run.finish()
    return run, report, results


def run_baseline(cfg: RunConfig, which: str, run_dir=None):
    if which not in BASELINES:
        raise ValueError(f"unknown baseline {which!r}")
    backend = make_backend(cfg)
    outputs = ["manifest.json", "predictions.csv", "failures.jsonl", "drop_report.jsonl", "metrics.json",
               "metrics.txt"] + (["prompts.jsonl"] if which == "household_copb" else [])
    run = Run(cfg, f"baseline-{which}", outputs, run_dir, {"baseline": which, "backend": backend.identity})
    with run.timed("load"):
        study = Study.load(cfg)
    with run.timed("households"):
        results = _map_households(study, study.test, lambda h: baseline_household(study, h, backend, which))
    run.write_text("predictions.csv", _predictions_csv(results))
    run.write_lines("failures.jsonl", _failures(results))
    write_drop_report(study.drops, run.dir / "drop_report.jsonl")
    if which == "household_copb":
        run.write_lines("prompts.jsonl", [json.dumps({"household_id": r.household_id, "messages": r.prompt},
                                                     sort_keys=True, ensure_ascii=False)
                                          for r in results if r.prompt])
    report = _report(results)
    run.write_text("metrics.json", report.to_json() + "\n")
    run.write_text("metrics.txt", report.to_table() + "\n")
    run.finish()
    return run, report, results


def run_sft_export(cfg: RunConfig, run_dir=None):
    backend = make_backend(cfg)
    run = Run(cfg, "sft-export", ["manifest.json", "sft_proposals.jsonl", "sft_dialogues.jsonl",
                                  "sft_skipped.jsonl", "sft_losses.json"], run_dir,
              {"backend": backend.identity, "sft": {"k": cfg.sft_k, "m": cfg.sft_m, "lambda": cfg.lam}})
    with run.timed("load"):
        study = Study.load(cfg)
    households, skipped = [], []
    with run.timed("personas"):
        for hid in study.train:
            y = study.households[hid].observed_total_trips
            if y is None:
                skipped.append({"household_id": hid, "agent_id": None, "stage": "label", "reason": "no label"})
                continue
            try:
                profiles, _ = build_profiles(study, hid, backend)
            except SOFT_FAILURES as exc:
                skipped.append({"household_id": hid, "agent_id": None, "stage": "persona", "reason": str(exc)})
                continue
            households.append((profiles, y))
    with run.timed("sft"):
        res = build_sft_datasets(households, backend, lam=cfg.lam, k=cfg.sft_k, m=cfg.sft_m, delta=cfg.delta,
                                 t_max=cfg.t_max, seed=int(cfg.backend.get("seed", 0) or 0))
    paths = [write_jsonl(res.proposals, run.dir / "sft_proposals.jsonl"),
             write_jsonl(res.dialogues, run.dir / "sft_dialogues.jsonl")]
    run.write_lines("sft_skipped.jsonl", [json.dumps(s, sort_keys=True) for s in skipped + res.skipped])
    run.write_text("sft_losses.json", json.dumps({"losses": {k: [None if v == float("inf") else v for v in ls]
                                                              for k, ls in res.losses.items()},
                                                   "selected": res.selected}, indent=2, sort_keys=True) + "\n")
    run.finish()
    return run, res, paths


def run_perception(cfg: RunConfig, run_dir=None):
    backend = make_backend(cfg)
    run = Run(cfg, "perception", ["manifest.json", "perception_responses.jsonl", "perception_metrics.json"],
              run_dir, {"backend": backend.identity})
    with run.timed("load"):
        study = Study.load(cfg)
    subjects, human = [], {i.variable: {} for i in INSTRUMENTS}
    covariates = {"age": {}, "income": {}, "density": {}}
    with run.timed("personas"):
        for hid in study.test:
            for m in study.members(hid):
                fields = study.fields(m)
                facts = translate(fields, study.rules, person_id=m.person_id)
                try:
                    base = synthesize_narrative(facts, backend, max_attempts=cfg.retries)
                except SynthesisError:
                    continue
                hh = study.households[hid]
                subjects.append(Subject(m.person_id, base.narrative, facts, {
                    "age": fields.get("R_AGE_IMP"), "income_bracket": hh.income_bracket,
                    "urban": hh.location_class == "urban" if hh.location_class != "unknown" else None}))
                raw = study.raw_persons[m.person_id]
                for ins in INSTRUMENTS:
                    human[ins.variable][m.person_id] = raw.get(ins.variable)
                covariates["age"][m.person_id] = fields.get("R_AGE_IMP")
                covariates["income"][m.person_id] = hh.income_bracket
                covariates["density"][m.person_id] = hh.get("HTPPOPDN")
    with run.timed("survey"):
        survey = perception_survey(subjects, backend, max_attempts=cfg.retries, workers=cfg.workers)
    metrics = perception_metrics(survey, human, covariates)
    run.write_lines("perception_responses.jsonl", [
        json.dumps({"person_id": s.person_id, **{i.variable: survey.responses[i.variable].get(s.person_id)
                                                  for i in INSTRUMENTS}}, sort_keys=True)
        for s in subjects])
    run.write_text("perception_metrics.json", json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    run.finish()
    return run, metrics
