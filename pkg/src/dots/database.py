"""Task database: entity storage, match-count queries and entity selection."""
import json
from dataclasses import dataclass, field
from pathlib import Path

from .ontology import DONTCARE
from .state import DbResult, bucket

_DATA = Path(__file__).parent / "data"


class DatabaseError(ValueError):
    pass


def load_synonyms(path=None):
    return json.loads(Path(path or _DATA / "synonyms.json").read_text())


_DEFAULT_SYNONYMS = None


def normalize(value, synonyms=None):
    global _DEFAULT_SYNONYMS
    if synonyms is None:
        if _DEFAULT_SYNONYMS is None:
            _DEFAULT_SYNONYMS = load_synonyms()
        synonyms = _DEFAULT_SYNONYMS
    v = " ".join(value.lower().split())
    return synonyms.get(v, v)


@dataclass(frozen=True)
class EntityRecord:
    domain: str
    id: str
    attributes: dict
    extras: dict = field(default_factory=dict)

    @property
    def name(self):
        return self.extras.get("name", self.id)


def constraint_items(constraints):
    """Drop unconstrained entries (empty or dontcare)."""
    return {s: v for s, v in constraints.items() if v is not None and v != DONTCARE}


def matches(entity, constraints, synonyms=None):
    """True iff the entity satisfies every hard constraint (slot -> value)."""
    for slot, value in constraint_items(constraints).items():
        have = entity.attributes.get(slot)
        if have is None or normalize(have, synonyms) != normalize(value, synonyms):
            return False
    return True


class Database:
    """Per-domain entity lists, sorted by id, with an inverted attribute index."""

    def __init__(self, entities, synonyms=None):
        self.synonyms = load_synonyms() if synonyms is None else dict(synonyms)
        self.entities = {}
        for dom, records in entities.items():
            ids = [e.id for e in records]
            if len(set(ids)) != len(ids):
                raise DatabaseError(f"duplicate entity id in domain {dom!r}")
            self.entities[dom] = tuple(sorted(records, key=lambda e: e.id))
        # (domain, slot, normalized value) -> bitmask over entity positions
        self._index = {}
        for dom, records in self.entities.items():
            for pos, e in enumerate(records):
                for slot, val in e.attributes.items():
                    key = (dom, slot, normalize(val, self.synonyms))
                    self._index[key] = self._index.get(key, 0) | (1 << pos)

    def domain(self, dom):
        return self.entities.get(dom, ())

    def _mask(self, dom, constraints):
        n = len(self.domain(dom))
        mask = (1 << n) - 1
        for slot, value in constraint_items(constraints).items():
            mask &= self._index.get((dom, slot, normalize(value, self.synonyms)), 0)
            if not mask:
                break
        return mask

    def count(self, dom, constraints):
        return bin(self._mask(dom, constraints)).count("1")

    def matching(self, dom, constraints):
        mask = self._mask(dom, constraints)
        return [e for pos, e in enumerate(self.domain(dom)) if mask >> pos & 1]

    def get(self, dom, entity_id):
        for e in self.domain(dom):
            if e.id == entity_id:
                return e
        return None


def query(db, b, d):
    """Bucketed match counts for the active domains of ``d``."""
    return DbResult({dom: bucket(db.count(dom, b.domain_constraints(dom)))
                     for dom in d.active_domains()})


def select_entity(db, domain, b):
    """Matching entity with the smallest id, or None."""
    mask = db._mask(domain, b.domain_constraints(domain))
    if not mask:
        return None
    lowest = (mask & -mask).bit_length() - 1
    return db.domain(domain)[lowest]


def database_from_dict(raw, ontology=None, synonyms=None):
    entities = {}
    for dom, records in raw.items():
        if ontology is not None and dom not in ontology.domains:
            raise DatabaseError(f"unknown domain {dom!r} in DB")
        out = []
        for i, r in enumerate(records):
            if "id" not in r or "attributes" not in r:
                raise DatabaseError(f"{dom}[{i}]: entity needs 'id' and 'attributes'")
            e = EntityRecord(dom, str(r["id"]), dict(r["attributes"]), dict(r.get("extras", {})))
            if ontology is not None:
                for slot in ontology.slots(dom):
                    if slot not in e.attributes:
                        raise DatabaseError(f"{dom}/{e.id}: missing attribute {slot!r}")
                    if e.attributes[slot] not in ontology.values(dom, slot):
                        raise DatabaseError(f"{dom}/{e.id}: illegal value {e.attributes[slot]!r} for {slot!r}")
            out.append(e)
        entities[dom] = out
    return Database(entities, synonyms)


def load_database(path, ontology=None, synonyms=None):
    return database_from_dict(json.loads(Path(path).read_text()), ontology, synonyms)


def default_database(ontology=None):
    return load_database(_DATA / "db.json", ontology)
