"""Domains, slots, the token vocabulary and text tokenization.

The vocabulary has two disjoint regions: closed-class special tokens derived
from the ontology (always first, in a fixed order) and word tokens collected
from a corpus (sorted).
"""
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

PAD = "[PAD]"
UNK = "[UNK]"
BOS = "[BOS]"
EOS = "[EOS]"
CLS = "[CLS]"
SEP = "[SEP]"
ON = "[ON]"
OFF = "[OFF]"
NULL = "[NULL]"
DELIM = "-"

DONTCARE = "dontcare"

DB_BUCKETS = ("0", "1", "2-3", "4+")

ACT_TYPES = ("inform", "request", "offer", "book", "nooffer", "greet", "bye")

_TOKEN_RE = re.compile(r"\[[a-z0-9_+\-]+\]|[a-z0-9]+(?:'[a-z]+)?|[^\sa-z0-9]")


class OntologyError(ValueError):
    pass


class VocabularyError(ValueError):
    pass


def domain_token(domain):
    return f"[{domain}]"


def db_token(bucket):
    return f"[DB{bucket}]"


def placeholder(domain, slot):
    return f"[{domain}_{slot}]"


@dataclass(frozen=True)
class Ontology:
    """Closed universe of domains and slots.

    ``informable`` maps each domain to an ordered tuple of ``(slot, values)``
    pairs; ``requestable`` maps each domain to an ordered tuple of slot names.
    """

    domains: tuple
    informable: dict
    requestable: dict

    def __post_init__(self):
        if len(set(self.domains)) != len(self.domains):
            raise OntologyError(f"duplicate domain name in {list(self.domains)}")
        for d in self.domains:
            slots = [s for s, _ in self.informable.get(d, ())]
            if len(set(slots)) != len(slots):
                dup = sorted({s for s in slots if slots.count(s) > 1})
                raise OntologyError(f"duplicate informable slot {dup} in domain {d!r}")
            req = list(self.requestable.get(d, ()))
            if len(set(req)) != len(req):
                raise OntologyError(f"duplicate requestable slot in domain {d!r}")
            for s, values in self.informable.get(d, ()):
                if not values:
                    raise OntologyError(f"informable slot {d}.{s} has no candidate values")

    def slots(self, domain):
        return tuple(s for s, _ in self.informable[domain])

    def values(self, domain, slot):
        for s, vals in self.informable[domain]:
            if s == slot:
                return vals
        raise KeyError(f"{domain}.{slot}")

    def slot_pairs(self):
        """All (domain, informable slot) pairs in serialization order."""
        return tuple((d, s) for d in self.domains for s in self.slots(d))

    def is_legal(self, domain, slot, value):
        return value == DONTCARE or value in self.values(domain, slot)

    def words(self):
        """Surface words the ontology needs in the word vocabulary.

        Slot names, candidate values, ``dontcare`` and act-type names all
        appear as plain words inside serialized states.
        """
        out = {DONTCARE, *ACT_TYPES}
        for d in self.domains:
            for s, vals in self.informable[d]:
                out.update(_split(s))
                for v in vals:
                    out.update(_split(v))
            for s in self.requestable[d]:
                out.update(_split(s))
        return out


def _split(text):
    return _TOKEN_RE.findall(text.lower())


def ontology_from_dict(raw):
    if not isinstance(raw, dict) or not isinstance(raw.get("domains"), list):
        raise OntologyError("ontology: top-level field 'domains' must be a list")
    domains, informable, requestable = [], {}, {}
    for i, entry in enumerate(raw["domains"]):
        where = f"domains[{i}]"
        if not isinstance(entry, dict) or not isinstance(entry.get("name"), str):
            raise OntologyError(f"{where}: missing string field 'name'")
        name = entry["name"]
        slots = []
        for j, slot in enumerate(entry.get("informable", [])):
            if not isinstance(slot, dict) or "slot" not in slot or "values" not in slot:
                raise OntologyError(f"{where}.informable[{j}]: expected {{slot, values}}")
            if not isinstance(slot["values"], list):
                raise OntologyError(f"{where}.informable[{j}].values: expected a list")
            slots.append((slot["slot"], tuple(slot["values"])))
        req = entry.get("requestable", [])
        if not isinstance(req, list):
            raise OntologyError(f"{where}.requestable: expected a list")
        if name in informable:
            raise OntologyError(f"duplicate domain name {name!r}")
        domains.append(name)
        informable[name] = tuple(slots)
        requestable[name] = tuple(req)
    return Ontology(tuple(domains), informable, requestable)


def load_ontology(path):
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise OntologyError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from e
    return ontology_from_dict(raw)


def default_ontology():
    return load_ontology(Path(__file__).parent / "data" / "ontology.json")


def special_tokens(ontology):
    """Ontology-derived special tokens in id order."""
    toks = [PAD, UNK, BOS, EOS, CLS, SEP, ON, OFF, NULL, DELIM]
    toks += [domain_token(d) for d in ontology.domains]
    toks += [db_token(b) for b in DB_BUCKETS]
    for d in ontology.domains:
        for s in (*ontology.slots(d), *ontology.requestable[d]):
            ph = placeholder(d, s)
            if ph not in toks:
                toks.append(ph)
    return toks


@dataclass(frozen=True)
class Vocabulary:
    special_tokens: tuple
    word_tokens: tuple
    _ids: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        overlap = set(self.special_tokens) & set(self.word_tokens)
        if overlap:
            raise VocabularyError(f"word tokens collide with special tokens: {sorted(overlap)}")
        tokens = (*self.special_tokens, *self.word_tokens)
        if len(set(tokens)) != len(tokens):
            raise VocabularyError("duplicate token in vocabulary")
        object.__setattr__(self, "_ids", {t: i for i, t in enumerate(tokens)})

    def __len__(self):
        return len(self.special_tokens) + len(self.word_tokens)

    def __contains__(self, token):
        return token in self._ids

    def id(self, token):
        return self._ids[token]

    def token(self, idx):
        if not 0 <= idx < len(self):
            raise IndexError(f"token id {idx} out of range [0, {len(self)})")
        n = len(self.special_tokens)
        return self.special_tokens[idx] if idx < n else self.word_tokens[idx - n]

    def is_special(self, idx):
        return 0 <= idx < len(self.special_tokens)

    @property
    def tokens(self):
        return (*self.special_tokens, *self.word_tokens)

    def save(self, path):
        Path(path).write_text("".join(t + "\n" for t in self.tokens))


def build_vocabulary(ontology, corpus_words):
    specials = special_tokens(ontology)
    words = sorted(set(corpus_words))
    clash = sorted(set(words) & set(specials))
    if clash:
        raise VocabularyError(f"corpus words collide with special tokens: {clash}")
    return Vocabulary(tuple(specials), tuple(words))


def load_vocabulary(path, ontology):
    tokens = Path(path).read_text().splitlines()
    specials = special_tokens(ontology)
    if tokens[: len(specials)] != specials:
        raise VocabularyError(f"{path}: special-token block does not match the ontology")
    return Vocabulary(tuple(specials), tuple(tokens[len(specials):]))


def words_of(text):
    """Lowercased word/punctuation split, without id lookup."""
    return _split(text)


def tokenize(text, vocab):
    unk = vocab.id(UNK)
    return [vocab._ids.get(t, unk) for t in _split(text)]


def detokenize(tokens, vocab):
    return " ".join(vocab.token(int(i)) for i in tokens)
