"""Structured dialogue states, their token serialization, and input contexts.

Every state serializes to a fixed grammar over the vocabulary::

    domain state  [hotel] [ON] [taxi] [OFF] ...
    belief        [restaurant] area - east - pricerange - [NULL] - ... [hotel] ...
    db result     [restaurant] [DB2-3] ...            (active domains only)
    action        [restaurant] request - area - ...

and the parsers invert it exactly. Parsers also accept decoder output, which
may be malformed; recoverable defects are repaired and reported.
"""
import logging
from dataclasses import dataclass, field

from .ontology import (
    CLS, DELIM, NULL, OFF, ON, SEP, ACT_TYPES, DB_BUCKETS,
    db_token, domain_token, tokenize, words_of,
)

log = logging.getLogger(__name__)

MAX_CONTEXT_LEN = 512

CONTEXT_KINDS = ("belief", "action", "response")


class StateError(ValueError):
    pass


class ParseError(ValueError):
    """Unrepairable token sequence; ``prefix`` is the longest valid prefix."""

    def __init__(self, msg, prefix=()):
        super().__init__(msg)
        self.prefix = list(prefix)


@dataclass(frozen=True)
class DomainState:
    active: dict

    @classmethod
    def initial(cls, ontology):
        return cls({d: False for d in ontology.domains})

    @classmethod
    def from_active(cls, ontology, domains):
        unknown = set(domains) - set(ontology.domains)
        if unknown:
            raise StateError(f"unknown domains {sorted(unknown)}")
        return cls({d: d in domains for d in ontology.domains})

    def active_domains(self):
        return [d for d, on in self.active.items() if on]


@dataclass(frozen=True)
class BeliefState:
    """Total map (domain, slot) -> value; ``None`` is the empty slot."""

    values: dict

    @classmethod
    def empty(cls, ontology):
        return cls({k: None for k in ontology.slot_pairs()})

    @classmethod
    def from_constraints(cls, ontology, constraints):
        vals = {k: None for k in ontology.slot_pairs()}
        for (d, s), v in constraints.items():
            if (d, s) not in vals:
                raise StateError(f"unknown slot {d}.{s}")
            if v is not None and not ontology.is_legal(d, s, v):
                raise StateError(f"illegal value {v!r} for {d}.{s}")
            vals[(d, s)] = v
        return cls(vals)

    def filled(self):
        return {k: v for k, v in self.values.items() if v is not None}

    def domain_constraints(self, domain):
        return {s: v for (d, s), v in self.values.items() if d == domain and v is not None}


def bucket(count):
    if count <= 0:
        return "0"
    if count == 1:
        return "1"
    if count <= 3:
        return "2-3"
    return "4+"


@dataclass(frozen=True)
class DbResult:
    counts: dict

    def __post_init__(self):
        for d, b in self.counts.items():
            if b not in DB_BUCKETS:
                raise StateError(f"bad DB bucket {b!r} for {d}")


@dataclass(frozen=True)
class SystemAction:
    acts: tuple = ()

    @classmethod
    def canonical(cls, ontology, acts):
        """Validate and sort acts by (domain, act type, slot) ontology order."""
        dom = {d: i for i, d in enumerate(ontology.domains)}
        atype = {a: i for i, a in enumerate(ACT_TYPES)}
        out = set()
        for d, a, s in acts:
            if d not in dom:
                raise StateError(f"unknown domain {d!r} in action")
            if a not in atype:
                raise StateError(f"unknown act type {a!r}")
            if s is not None and s not in _act_slots(ontology, d):
                raise StateError(f"unknown slot {s!r} for domain {d!r} in action")
            out.add((d, a, s))

        def key(act):
            d, a, s = act
            order = _act_slots(ontology, d)
            return dom[d], atype[a], -1 if s is None else order.index(s)

        return cls(tuple(sorted(out, key=key)))


def _act_slots(ontology, domain):
    slots = list(ontology.slots(domain))
    slots += [s for s in ontology.requestable[domain] if s not in slots]
    return slots


@dataclass(frozen=True)
class Utterance:
    raw: str
    tokens: tuple


@dataclass(frozen=True)
class Response:
    raw: str
    tokens: tuple
    delexicalized: bool = True


@dataclass(frozen=True)
class Context:
    kind: str
    tokens: tuple
    truncated: bool = False

    def __len__(self):
        return len(self.tokens)


@dataclass
class Parsed:
    """Parser output: the recovered state and a list of applied repairs."""

    state: object
    repairs: list = field(default_factory=list)

    @property
    def repaired(self):
        return bool(self.repairs)


class StateCodec:
    """Serializes and parses states against one ontology and vocabulary."""

    def __init__(self, ontology, vocab):
        self.ontology = ontology
        self.vocab = vocab
        v = vocab.id
        self.cls, self.sep = v(CLS), v(SEP)
        self.on, self.off, self.null, self.delim = v(ON), v(OFF), v(NULL), v(DELIM)
        self.dom_id = {d: v(domain_token(d)) for d in ontology.domains}
        self.id_dom = {i: d for d, i in self.dom_id.items()}
        self.bucket_id = {b: v(db_token(b)) for b in DB_BUCKETS}
        self.id_bucket = {i: b for b, i in self.bucket_id.items()}
        self._word_cache = {}
        self._off_block = self.serialize_domain_state(DomainState.initial(ontology))

    def words(self, text):
        """Token ids of an ontology surface string; every word must be known."""
        ids = self._word_cache.get(text)
        if ids is None:
            ids = []
            for w in words_of(text):
                if w not in self.vocab:
                    raise StateError(f"word {w!r} is not in the vocabulary")
                ids.append(self.vocab.id(w))
            ids = tuple(ids)
            self._word_cache[text] = ids
        return list(ids)

    # serialization

    def serialize_domain_state(self, d):
        out = []
        for dom in self.ontology.domains:
            if dom not in d.active:
                raise StateError(f"domain state is missing {dom!r}")
            out += [self.dom_id[dom], self.on if d.active[dom] else self.off]
        return out

    def constant_domain_block(self):
        """Fixed stand-in for the domain-state segment (ablation)."""
        return list(self._off_block)

    def serialize_belief_state(self, b):
        out = []
        for dom in self.ontology.domains:
            out.append(self.dom_id[dom])
            for slot in self.ontology.slots(dom):
                val = b.values[(dom, slot)]
                out += self.words(slot)
                out.append(self.delim)
                out += [self.null] if val is None else self.words(val)
                out.append(self.delim)
        return out

    def serialize_db_result(self, db, domain_state=None):
        if domain_state is not None:
            inactive = [k for k in db.counts if not domain_state.active.get(k, False)]
            if inactive:
                raise StateError(f"DB result contains inactive domains {inactive}")
        out = []
        for dom in self.ontology.domains:
            if dom in db.counts:
                out += [self.dom_id[dom], self.bucket_id[db.counts[dom]]]
        unknown = set(db.counts) - set(self.ontology.domains)
        if unknown:
            raise StateError(f"DB result has unknown domains {sorted(unknown)}")
        return out

    def serialize_action(self, a):
        out = []
        for dom, act, slot in a.acts:
            out += [self.dom_id[dom], *self.words(act), self.delim]
            out += [self.null] if slot is None else self.words(slot)
            out.append(self.delim)
        return out

    def build_context(self, kind, u, d, b, db=None, a=None, *,
                      max_len=MAX_CONTEXT_LEN, constant_domain=False):
        if kind not in CONTEXT_KINDS:
            raise ValueError(f"unknown context kind {kind!r}")
        if (db is None) != (kind == "belief"):
            raise ValueError(f"{kind} context {'requires' if kind != 'belief' else 'takes no'} a DB result")
        if (a is None) != (kind != "response"):
            raise ValueError(f"{kind} context {'requires' if kind == 'response' else 'takes no'} an action")
        state = self.constant_domain_block() if constant_domain else self.serialize_domain_state(d)
        state += self.serialize_belief_state(b)
        if db is not None:
            state += self.serialize_db_result(db, None if constant_domain else d)
        if a is not None:
            state += self.serialize_action(a)
        utt = list(u.tokens)
        room = max_len - 2 - len(state)
        if room < 0:
            raise StateError(f"state segments alone exceed the context limit {max_len}")
        truncated = len(utt) > room
        if truncated:
            log.warning("context overflow: dropping %d leading utterance tokens", len(utt) - room)
            utt = utt[len(utt) - room:]
        return Context(kind, tuple([self.cls, *utt, self.sep, *state]), truncated)

    # parsing

    def parse_domain_state(self, tokens):
        tokens = list(tokens)
        if not tokens:
            raise ParseError("empty domain-state sequence")
        seen, repairs = {}, []
        i = 0
        while i < len(tokens):
            dom = self.id_dom.get(tokens[i])
            if dom is None:
                raise ParseError(f"expected a domain token at position {i}", tokens[:i])
            if i + 1 >= len(tokens) or tokens[i + 1] not in (self.on, self.off):
                repairs.append(f"{dom}: missing ON/OFF, set OFF")
                seen[dom] = False
                i += 1
                continue
            if dom in seen:
                repairs.append(f"{dom}: duplicate mention, last wins")
            seen[dom] = tokens[i + 1] == self.on
            i += 2
        for dom in self.ontology.domains:
            if dom not in seen:
                repairs.append(f"{dom}: missing, set OFF")
        return Parsed(DomainState({dom: seen.get(dom, False) for dom in self.ontology.domains}), repairs)

    def _read_until_delim(self, tokens, i):
        j = i
        while j < len(tokens) and tokens[j] != self.delim and tokens[j] not in self.id_dom:
            j += 1
        return tokens[i:j], j

    def _surface(self, ids):
        return " ".join(self.vocab.token(t) for t in ids)

    def parse_belief_state(self, tokens):
        tokens = list(tokens)
        if not tokens:
            raise ParseError("empty belief sequence")
        onto = self.ontology
        vals, repairs, mentioned = {}, [], set()
        dom = None
        i = 0
        while i < len(tokens):
            t = tokens[i]
            if t in self.id_dom:
                dom = self.id_dom[t]
                i += 1
                continue
            if dom is None:
                raise ParseError("belief sequence does not start with a domain token", tokens[:i])
            start = i
            slot_ids, i = self._read_until_delim(tokens, i)
            slot = self._surface(slot_ids)
            if slot not in onto.slots(dom):
                raise ParseError(f"unknown slot {slot!r} for domain {dom!r}", tokens[:start])
            if i >= len(tokens) or tokens[i] != self.delim:
                repairs.append(f"{dom}.{slot}: missing value, set NULL")
                value = None
            else:
                val_ids, i = self._read_until_delim(tokens, i + 1)
                if i < len(tokens) and tokens[i] == self.delim:
                    i += 1
                else:
                    repairs.append(f"{dom}.{slot}: missing closing delimiter")
                if val_ids == [self.null]:
                    value = None
                elif not val_ids:
                    repairs.append(f"{dom}.{slot}: missing value, set NULL")
                    value = None
                else:
                    value = self._surface(val_ids)
                    if not onto.is_legal(dom, slot, value):
                        repairs.append(f"{dom}.{slot}: illegal value {value!r}, set NULL")
                        value = None
            if (dom, slot) in mentioned:
                repairs.append(f"{dom}.{slot}: duplicate mention, last wins")
            mentioned.add((dom, slot))
            vals[(dom, slot)] = value
        for key in onto.slot_pairs():
            if key not in mentioned:
                repairs.append(f"{key[0]}.{key[1]}: not mentioned, set NULL")
        return Parsed(BeliefState({k: vals.get(k) for k in onto.slot_pairs()}), repairs)

    def parse_action(self, tokens):
        tokens = list(tokens)
        acts, repairs = [], []
        i = 0
        while i < len(tokens):
            dom = self.id_dom.get(tokens[i])
            if dom is None:
                raise ParseError(f"expected a domain token at position {i}", tokens[:i])
            act_ids, j = self._read_until_delim(tokens, i + 1)
            act = self._surface(act_ids)
            if act not in ACT_TYPES:
                raise ParseError(f"unknown act type {act!r}", tokens[:i])
            if j >= len(tokens) or tokens[j] != self.delim:
                repairs.append(f"{dom} {act}: missing slot, set NULL")
                acts.append((dom, act, None))
                i = j
                continue
            slot_ids, k = self._read_until_delim(tokens, j + 1)
            if k < len(tokens) and tokens[k] == self.delim:
                k += 1
            else:
                repairs.append(f"{dom} {act}: missing closing delimiter")
            if slot_ids == [self.null] or not slot_ids:
                slot = None
            else:
                slot = self._surface(slot_ids)
                if slot not in _act_slots(self.ontology, dom):
                    repairs.append(f"{dom} {act}: unknown slot {slot!r}, set NULL")
                    slot = None
            acts.append((dom, act, slot))
            i = k
        canon = SystemAction.canonical(self.ontology, acts)
        if len(canon.acts) != len(acts):
            repairs.append("duplicate acts merged")
        return Parsed(canon, repairs)

    # convenience

    def utterance(self, text):
        return Utterance(text, tuple(tokenize(text, self.vocab)))

    def response(self, text, delexicalized=True):
        return Response(text, tuple(tokenize(text, self.vocab)), delexicalized)

    def state_overhead(self, max_acts):
        """Upper bound on non-utterance context tokens (CLS, SEP, states)."""
        onto = self.ontology
        belief = 0
        for dom in onto.domains:
            belief += 1
            for slot in onto.slots(dom):
                longest = max(len(words_of(v)) for v in (*onto.values(dom, slot), "dontcare"))
                belief += len(words_of(slot)) + 2 + max(longest, 1)
        act_len = 0
        for dom in onto.domains:
            longest_slot = max([len(words_of(s)) for s in _act_slots(onto, dom)] + [1])
            act_len = max(act_len, 1 + max(len(words_of(a)) for a in ACT_TYPES) + 2 + longest_slot)
        return 2 + 2 * len(onto.domains) + belief + 2 * len(onto.domains) + max_acts * act_len
