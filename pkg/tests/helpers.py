from pemant.negotiation import AgentProfile
from pemant.persona import HouseholdContext


def make_ctx(hid="H1", size=2, vehicles=1, drivers=1, children=False, young=False, workers=1, roles=None):
    roles = roles or tuple((f"{hid}:{i + 1:02d}", "head of household" if i == 0 else "spouse or partner")
                           for i in range(size))
    return HouseholdContext(hid, size, vehicles, drivers, "between $50,000 and $74,999", "urban", tuple(roles),
                            children, young, workers)


def make_profiles(n=2, hid="H1", anchor=3.0, **ctx_kw):
    ctx = make_ctx(hid, size=n, **ctx_kw)
    return [AgentProfile(f"{hid}:{i + 1:02d}", role, i == 0, f"I am member {i + 1}.", ctx, anchor=anchor)
            for i, (_, role) in enumerate(ctx.roles)]


NONRESPONSE = (-7, -8, -9)


def random_record(rng, rules, schema):
    """Coded record drawing every rule variable from its codes, skip codes, non-response codes or missing."""
    rec = {}
    for var in rules.variables:
        scheme = schema.variables.get(var)
        if scheme is not None and scheme.codes:
            pool = list(scheme.codes) + list(scheme.skip_codes)
        else:
            pool = [rng.randint(0, 99), round(rng.uniform(100, 400), 1)]
        rec[var] = rng.choice(pool + list(NONRESPONSE) + [None])
    return rec


# variables whose coverage keys no other fact can satisfy, so dropping the fact must be noticed
UNIQUE_KEY_VARIABLES = ("HHFAMINC", "RAIL", "GASPRICE", "BORNINUS", "URBRUR")
BAD_INSERTS = {
    "banned_word": ("I feel blessed to live here.", "I am thrilled about my neighborhood."),
    "scope": ("I usually make 4 trips a day.", "My travel diary is full."),
}


def synthetic_fact_lists(n, seed, rules):
    """Translated fact lists for ``n`` synthetic persons (household fields merged in)."""
    from pemant.synthetic import generate
    from pemant.translation import translate

    persons, households = generate(max(1, n), seed=seed)
    hh = {h["HOUSEID"]: h for h in households}
    out = []
    for p in persons:
        fields = {**hh[p["HOUSEID"]], **p}
        out.append(translate(fields, rules, f"{p['HOUSEID']}:{p['PERSONID']}"))
        if len(out) == n:
            break
    while len(out) < n:
        out.extend(synthetic_fact_lists(n - len(out), seed + 1, rules))
    return out


def compliant_text(facts):
    text = " ".join(facts.facts)
    return text if text.startswith("I am") else "I am a survey respondent. " + text


def corrupt(rng, facts):
    """(narrative, expected violation kind) with exactly one planted defect."""
    kind = rng.choice(("banned_word", "scope", "coverage"))
    if kind == "coverage":
        droppable = [i for i, p in enumerate(facts.provenance) if p.variable_name in UNIQUE_KEY_VARIABLES]
        if droppable:
            drop = rng.choice(droppable)
            kept = [f for i, f in enumerate(facts.facts) if i != drop]
            text = " ".join(kept)
            return (text if text.startswith("I am") else "I am a survey respondent. " + text), kind
        kind = "banned_word"
    sentences = list(compliant_text(facts).split(". "))
    sentences.insert(rng.randint(1, len(sentences)), rng.choice(BAD_INSERTS[kind]).rstrip("."))
    return ". ".join(sentences), kind


# one line per acceptance criterion, echoed in the terminal summary by conftest
ACCEPTANCE_LINES = []
