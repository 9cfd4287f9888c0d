"""Dialogue corpora: JSON ingestion, gold domain-state derivation, synthetic generation.

Corpus file format (one JSON object)::

    {"provenance": "synthetic(seed=7)",
     "train": [dialogue, ...], "validation": [...], "test": [...]}

    dialogue = {"id": str,
                "goal": {domain: {"constraints": {slot: value}, "requests": [slot]}},
                "turns": [{"user": str,
                           "belief": {"domain-slot": value},
                           "acts": [[domain, act, slot_or_null]],
                           "response_delex": str,
                           "response_lex": str,
                           "domains": [domain]}]}
"""
import json
import random
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

from .database import select_entity
from .ontology import DONTCARE, OntologyError
from .state import BeliefState, DomainState, StateError, SystemAction
from .evaluation import DialogueGoal, lexicalize

SPLITS = ("train", "validation", "test")


class CorpusError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems) if not isinstance(problems, str) else [problems]
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class Turn:
    user: str
    belief: BeliefState
    action: SystemAction
    response_delex: str
    response_lex: str
    domains: tuple = ()
    elliptical: bool = False


@dataclass(frozen=True)
class Dialogue:
    id: str
    goal: DialogueGoal
    turns: tuple
    ontology: object = field(repr=False, compare=False, default=None)

    @cached_property
    def domain_states(self):
        return derive_domain_states(self)

    def __len__(self):
        return len(self.turns)


@dataclass
class CorpusSplits:
    train: list
    validation: list
    test: list
    provenance: str = "ingested"

    def __post_init__(self):
        seen = {}
        for name in SPLITS:
            for d in getattr(self, name):
                if d.id in seen and seen[d.id] != name:
                    raise CorpusError(f"dialogue id {d.id!r} appears in both {seen[d.id]} and {name}")
                seen[d.id] = name

    def all(self):
        return [*self.train, *self.validation, *self.test]


def derive_domain_states(dialogue):
    """Monotone gold activations: on once a domain has a filled slot or an annotation."""
    onto = dialogue.ontology
    on = set()
    out = []
    for turn in dialogue.turns:
        on.update(d for (d, _), v in turn.belief.values.items() if v is not None)
        on.update(turn.domains)
        out.append(DomainState.from_active(onto, on))
    return out


# JSON ingestion


def _dialogue_from_json(raw, ontology, problems):
    did = raw.get("id")
    where = f"dialogue {did!r}"
    if not isinstance(did, str):
        problems.append(f"{where}: missing string id")
        return None
    goal_c, goal_r = {}, {}
    for dom, g in (raw.get("goal") or {}).items():
        if dom not in ontology.domains:
            problems.append(f"{where}: goal has unknown domain {dom!r}")
            continue
        cons = dict(g.get("constraints", {}))
        for slot, val in cons.items():
            if slot not in ontology.slots(dom) or not ontology.is_legal(dom, slot, val):
                problems.append(f"{where}: goal constraint {dom}-{slot}={val!r} is illegal")
        for slot in g.get("requests", []):
            if slot not in ontology.requestable[dom]:
                problems.append(f"{where}: goal requests unknown slot {dom}-{slot}")
        goal_c[dom] = cons
        goal_r[dom] = tuple(g.get("requests", []))
    turns = []
    for t, rt in enumerate(raw.get("turns", []), start=1):
        tw = f"{where} turn {t}"
        cons = {}
        for key, val in (rt.get("belief") or {}).items():
            dom, _, slot = key.partition("-")
            if dom not in ontology.domains:
                problems.append(f"{tw}: belief has unknown domain {dom!r}")
            elif slot not in ontology.slots(dom):
                problems.append(f"{tw}: belief has unknown slot {key!r}")
            elif not ontology.is_legal(dom, slot, val):
                problems.append(f"{tw}: belief value {val!r} is illegal for slot {key!r}")
            else:
                cons[(dom, slot)] = val
        try:
            action = SystemAction.canonical(ontology, [tuple(a) for a in rt.get("acts", [])])
        except (StateError, ValueError, TypeError) as e:
            problems.append(f"{tw}: {e}")
            action = SystemAction()
        doms = tuple(rt.get("domains", []))
        for dom in doms:
            if dom not in ontology.domains:
                problems.append(f"{tw}: unknown turn domain {dom!r}")
        if "user" not in rt:
            problems.append(f"{tw}: missing user utterance")
        turns.append(Turn(
            user=rt.get("user", ""),
            belief=BeliefState.from_constraints(ontology, cons),
            action=action,
            response_delex=rt.get("response_delex", ""),
            response_lex=rt.get("response_lex", ""),
            domains=tuple(d for d in doms if d in ontology.domains),
            elliptical=bool(rt.get("elliptical", False)),
        ))
    return Dialogue(did, DialogueGoal(goal_c, goal_r), tuple(turns), ontology)


def parse_dialogues(raw_list, ontology, problems=None):
    own = problems is None
    problems = [] if own else problems
    out = []
    for i, raw in enumerate(raw_list):
        if not isinstance(raw, dict):
            problems.append(f"entry {i}: dialogue must be an object")
            continue
        d = _dialogue_from_json(raw, ontology, problems)
        if d is not None:
            out.append(d)
    if own and problems:
        raise CorpusError(problems)
    return out


def parse_corpus(path, ontology):
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise CorpusError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from e
    if isinstance(raw, list):
        raw = {"train": raw}
    if not isinstance(raw, dict):
        raise CorpusError(f"{path}: expected an object with train/validation/test lists")
    problems = []
    splits = {name: parse_dialogues(raw.get(name, []), ontology, problems) for name in SPLITS}
    if problems:
        raise CorpusError(problems)
    return CorpusSplits(**splits, provenance=raw.get("provenance", "ingested"))


def dialogue_to_json(d):
    return {
        "id": d.id,
        "goal": {dom: {"constraints": dict(d.goal.constraints.get(dom, {})),
                       "requests": list(d.goal.requests.get(dom, ()))}
                 for dom in d.goal.domains()},
        "turns": [{
            "user": t.user,
            "belief": {f"{dom}-{slot}": v for (dom, slot), v in t.belief.values.items() if v is not None},
            "acts": [list(a) for a in t.action.acts],
            "response_delex": t.response_delex,
            "response_lex": t.response_lex,
            "domains": list(t.domains),
            **({"elliptical": True} if t.elliptical else {}),
        } for t in d.turns],
    }


def corpus_to_json(splits):
    return {"provenance": splits.provenance,
            **{name: [dialogue_to_json(d) for d in getattr(splits, name)] for name in SPLITS}}


def save_corpus(splits, path):
    Path(path).write_text(json.dumps(corpus_to_json(splits), indent=1) + "\n")


def corpus_words(dialogues):
    """Every word of user turns and delexicalized responses (placeholders excluded)."""
    from .ontology import DELIM, words_of
    out = set()
    for d in dialogues:
        for t in d.turns:
            out.update(words_of(t.user))
            out.update(words_of(t.response_delex))
    return {w for w in out if w != DELIM and not (w.startswith("[") and w.endswith("]"))}


# synthetic generation

_INTRO = ["i am looking for a", "i need a", "can you find me a", "i would like a", "please find me a"]
_SWITCH = ["i also need a", "i am also looking for a", "can you also find me a", "i also want a"]
_TAXI = ["i need a taxi", "can you book me a taxi", "i would like a taxi", "please get me a taxi"]
_TAXI_SWITCH = ["i also need a taxi", "can you also book a taxi", "i need a taxi as well"]

_ANSWER = {
    "area": ["the {v} please", "in the {v}", "{v} would be good", "somewhere in the {v}", "the {v}"],
    "pricerange": ["a {v} one", "{v} please", "something {v}", "i want a {v} one", "{v}"],
    "food": ["{v} food please", "{v}", "i would like {v} food", "{v} food"],
    "stars": ["{v} stars", "{v} stars please", "it should have {v} stars"],
    "car": ["a {v} please", "a {v}", "i would like a {v}"],
}
_DONTCARE = ["i don't mind", "any is fine", "it does not matter", "i have no preference"]
_RETRY = ["how about {v} then", "what about {v} instead", "ok , {v} then"]

_ASK = {
    "area": ["what area would you like ?", "which part of town do you prefer ?"],
    "pricerange": ["what price range are you looking for ?", "do you have a price range in mind ?"],
    "food": ["what type of food would you like ?", "what kind of food do you want ?"],
    "stars": ["how many stars should it have ?", "what star rating would you like ?"],
    "car": ["what type of car would you like ?", "which car do you need ?"],
}
_OFFER = {
    "restaurant": ["[restaurant_name] is a [restaurant_pricerange] restaurant in the [restaurant_area] .",
                   "i recommend [restaurant_name] , it serves [restaurant_food] food ."],
    "hotel": ["[hotel_name] is a [hotel_pricerange] hotel in the [hotel_area] .",
              "how about [hotel_name] ? it has [hotel_stars] stars ."],
    "taxi": ["i have booked a [taxi_car] from [taxi_name] .",
             "a [taxi_car] from [taxi_name] is booked for you ."],
}
_OFFER_ACTS = {
    "restaurant": [[("offer", "name"), ("inform", "area"), ("inform", "pricerange")],
                   [("offer", "name"), ("inform", "food")]],
    "hotel": [[("offer", "name"), ("inform", "area"), ("inform", "pricerange")],
              [("offer", "name"), ("inform", "stars")]],
    "taxi": [[("book", "name"), ("inform", "car")], [("book", "name"), ("inform", "car")]],
}
_REQUEST = {
    ("phone",): ["what is the phone number ?", "can i have their phone number ?"],
    ("address",): ["what is the address ?", "where is it located ?"],
    ("address", "phone"): ["can i get the phone number and address ?", "what are the phone number and address ?"],
}
_INFORM = {
    "phone": "the phone number is [{d}_phone] .",
    "address": "the address is [{d}_address] .",
}
_NOOFFER = ["sorry , i could not find a match . would you like something else ?",
            "i am sorry , there is nothing like that . can i try something else ?"]
_CLOSE_USER = ["thank you , that is all", "thanks , goodbye", "that is all i need , thanks"]
_CLOSE_SYS = ["you are welcome , goodbye .", "have a nice day , goodbye .", "thank you for calling , goodbye ."]


def _phrase(slot, value):
    """Constraint phrase used inside domain-introducing utterances."""
    return {
        "area": f"in the {value}",
        "food": f"serving {value} food",
        "stars": f"with {value} stars",
    }.get(slot)


def _intro(rng, dom, reveal, first):
    if dom == "taxi":
        base = rng.choice(_TAXI if first else _TAXI_SWITCH)
        if "car" in reveal:
            base += f" , a {reveal['car']} please"
        return base
    head = rng.choice(_INTRO if first else _SWITCH)
    words = [head]
    if "pricerange" in reveal:
        words.append(reveal["pricerange"])
    words.append(dom)
    for slot, val in reveal.items():
        if slot != "pricerange":
            words.append(_phrase(slot, val))
    return " ".join(words)


def _answer(rng, slot, value):
    if value == DONTCARE:
        return rng.choice(_DONTCARE)
    return rng.choice(_ANSWER[slot]).format(v=value)


class _Builder:
    def __init__(self, ontology, db, rng):
        self.onto, self.db, self.rng = ontology, db, rng
        self.belief = {}
        self.turns = []

    def state(self):
        return BeliefState.from_constraints(self.onto, self.belief)

    def add(self, user, acts, delex, domains, elliptical=False):
        b = self.state()
        action = SystemAction.canonical(self.onto, acts)
        ents = {}
        for dom in domains:
            e = select_entity(self.db, dom, b)
            if e is not None:
                ents[dom] = e
        lex = lexicalize(delex, ents)
        self.turns.append(Turn(user, b, action, delex, lex, tuple(domains), elliptical))


def _sample_goal(onto, db, rng):
    r = rng.random()
    n = 1 if r < 0.3 else 2 if r < 0.8 else 3
    main = ["restaurant", "hotel"]
    rng.shuffle(main)
    doms = main[: min(n, 2)] if n < 3 else main
    if n == 3 or (n == 2 and rng.random() < 0.3):
        doms = doms[: n - 1] + ["taxi"]
    cons, reqs = {}, {}
    for dom in doms:
        ent = rng.choice(db.domain(dom))
        c = {}
        for slot in onto.slots(dom):
            c[slot] = ent.attributes[slot] if rng.random() < 0.75 else DONTCARE
        if all(v == DONTCARE for v in c.values()):
            slot = rng.choice(onto.slots(dom))
            c[slot] = ent.attributes[slot]
        cons[dom] = c
        pool = [s for s in onto.requestable[dom] if s != "name"]
        k = rng.choice([0, 1, 1, 2]) if dom != "taxi" else rng.choice([0, 1])
        reqs[dom] = tuple(sorted(rng.sample(pool, min(k, len(pool)))))
    return DialogueGoal(cons, reqs)


def _domain_turns(b, dom, goal, first):
    onto, rng = b.onto, b.rng
    cons = goal.constraints[dom]
    slots = list(onto.slots(dom))
    real = [s for s in slots if cons[s] != DONTCARE]
    k = min(rng.choice([0, 0, 1, 1, 2]), len(real))
    reveal = {s: cons[s] for s in slots if s in rng.sample(real, k)}
    b.belief.update({(dom, s): v for s, v in reveal.items()})
    user = _intro(rng, dom, reveal, first)
    pending = [s for s in slots if s not in reveal]
    retry_done = False
    elliptical = False
    while True:
        if pending:
            slot = pending[0]
            b.add(user, [(dom, "request", slot)], rng.choice(_ASK[slot]), [dom], elliptical)
            value = cons[slot]
            # occasional zero-match attempt before the real value
            if (not retry_done and len(pending) == 1 and value != DONTCARE
                    and rng.random() < 0.2):
                current = {s: v for (d, s), v in b.belief.items() if d == dom}
                alts = [v for v in onto.values(dom, slot) if v != value
                        and b.db.count(dom, {**current, slot: v}) == 0]
                if alts:
                    retry_done = True
                    wrong = rng.choice(alts)
                    b.belief[(dom, slot)] = wrong
                    b.add(_answer(rng, slot, wrong), [(dom, "nooffer", None)],
                          rng.choice(_NOOFFER), [dom], not first)
                    b.belief[(dom, slot)] = value
                    pending.pop(0)
                    user = rng.choice(_RETRY).format(v=value)
                    elliptical = not first
                    continue
            b.belief[(dom, slot)] = value
            pending.pop(0)
            user = _answer(rng, slot, value)
            extra = [s for s in pending if cons[s] != DONTCARE]
            if extra and rng.random() < 0.25:
                s2 = extra[0]
                b.belief[(dom, s2)] = cons[s2]
                pending.remove(s2)
                user += " , " + _answer(rng, s2, cons[s2])
            elliptical = not first
            continue
        break
    pick = rng.randrange(2)
    acts = [(dom, a, s) for a, s in _OFFER_ACTS[dom][pick]]
    b.add(user, acts, _OFFER[dom][pick], [dom], elliptical)
    req = goal.requests.get(dom, ())
    if req:
        asks = [tuple(req)] if tuple(req) in _REQUEST else [(r,) for r in req]
        for ask in asks:
            text = " ".join(_INFORM[r].format(d=dom) for r in ask)
            b.add(rng.choice(_REQUEST[ask]), [(dom, "inform", r) for r in ask], text, [dom])


def generate_dialogue(ontology, db, rng, did):
    goal = _sample_goal(ontology, db, rng)
    b = _Builder(ontology, db, rng)
    doms = goal.domains()
    for i, dom in enumerate(doms):
        _domain_turns(b, dom, goal, first=(i == 0))
    b.add(rng.choice(_CLOSE_USER), [(doms[-1], "bye", None)], rng.choice(_CLOSE_SYS), [doms[-1]])
    return Dialogue(did, goal, tuple(b.turns), ontology)


def generate_synthetic(ontology, db, n_dialogues, seed):
    """Template dialogues over the toy ontology, split 80/10/10 (deterministic per seed)."""
    if n_dialogues < 1:
        raise ValueError("n_dialogues must be at least 1")
    rng = random.Random(seed)
    dialogues = [generate_dialogue(ontology, db, rng, f"syn{seed}-{i:04d}") for i in range(n_dialogues)]
    n_train = int(round(0.8 * n_dialogues))
    n_val = int(round(0.1 * n_dialogues))
    return CorpusSplits(dialogues[:n_train], dialogues[n_train:n_train + n_val],
                        dialogues[n_train + n_val:], provenance=f"synthetic(seed={seed})")


def is_cross_domain_elliptical(dialogue, turn_index):
    """Turn past the first domain that fills a slot without naming any domain."""
    from .ontology import words_of
    turn = dialogue.turns[turn_index]
    if not turn.elliptical:
        return False
    words = set(words_of(turn.user))
    return not words & set(dialogue.ontology.domains)


__all__ = [
    "CorpusError", "CorpusSplits", "Dialogue", "Turn", "OntologyError",
    "corpus_to_json", "corpus_words", "derive_domain_states", "generate_synthetic",
    "parse_corpus", "parse_dialogues", "save_corpus",
]
