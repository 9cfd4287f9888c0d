"""Corpus metrics (inform rate, success rate, BLEU) and delexicalization.

Inform and success follow the usual MultiWOZ evaluator convention: the last
entity offered in each goal domain must satisfy the goal constraints (or the
system must say nooffer when nothing matches), and success additionally
needs every requested slot to have been provided.
"""
import csv
import io
import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field

from .database import matches
from .ontology import words_of
from .state import Response

BLEU_EPSILON = 1e-9

_PLACEHOLDER = re.compile(r"(\[[a-z]+_[a-z]+\])")


@dataclass(frozen=True)
class DialogueGoal:
    constraints: dict
    requests: dict = field(default_factory=dict)

    def domains(self):
        return list(self.constraints)


def _as_list(entities):
    if entities is None:
        return []
    if isinstance(entities, dict):
        return list(entities.values())
    if hasattr(entities, "attributes"):
        return [entities]
    return list(entities)


def delexicalize(text, entities, ontology=None, vocab=None):
    """Replace entity attribute/extra values in ``text`` by slot placeholders.

    Existing placeholders are left alone, so the operation is idempotent.
    ``ontology``, when given, restricts replacements to ontology slots.
    """
    pairs = []
    for e in _as_list(entities):
        allowed = None
        if ontology is not None and e.domain in ontology.domains:
            allowed = {*ontology.slots(e.domain), *ontology.requestable[e.domain]}
        for slot, val in {**e.attributes, **e.extras}.items():
            if val and (allowed is None or slot in allowed):
                pairs.append((str(val).lower(), f"[{e.domain}_{slot}]"))
    pairs.sort(key=lambda p: -len(p[0]))
    chunks = _PLACEHOLDER.split(text)
    for i in range(0, len(chunks), 2):
        chunk = chunks[i]
        for val, ph in pairs:
            chunk = re.sub(rf"(?<![\w\[]){re.escape(val)}(?![\w\]])", ph, chunk)
        chunks[i] = chunk
    out = "".join(chunks)
    tokens = ()
    if vocab is not None:
        from .ontology import tokenize
        tokens = tuple(tokenize(out, vocab))
    return Response(out, tokens, True)


def lexicalize(text, entities):
    """Fill ``[domain_slot]`` placeholders from {domain: EntityRecord}."""
    def fill(m):
        dom, slot = m.group(0)[1:-1].split("_", 1)
        e = entities.get(dom)
        if e is None:
            return m.group(0)
        val = e.attributes.get(slot, e.extras.get(slot))
        return m.group(0) if val is None else str(val)

    return _PLACEHOLDER.sub(fill, text)


def _response_text(r):
    resp = getattr(r, "response", None)
    return getattr(resp, "raw", resp) or ""


def _acts(r):
    a = getattr(r, "action", None)
    return a.acts if a is not None else ()


def score_inform(results, goal, db):
    """True iff each goal domain's last offered entity satisfies the goal."""
    for dom in goal.domains():
        cons = goal.constraints[dom]
        candidates = [e for e in db.domain(dom) if matches(e, cons, db.synonyms)]
        if not candidates:
            if not any(d == dom and a == "nooffer" for r in results for d, a, _ in _acts(r)):
                return False
            continue
        offered = None
        for r in results:
            if dom in getattr(r, "offered", {}):
                offered = r.offered[dom]
        if offered is None:
            return False
        entity = db.get(dom, offered)
        if entity is None or not matches(entity, cons, db.synonyms):
            return False
    return True


def score_success(results, goal, inform=None, db=None):
    if inform is None:
        if db is None:
            raise ValueError("score_success needs an inform verdict or a database")
        inform = score_inform(results, goal, db)
    if not inform:
        return False
    texts = [_response_text(r) for r in results]
    lex = [getattr(r, "response_lex", "") or "" for r in results]
    for dom, slots in goal.requests.items():
        for slot in slots:
            ph = f"[{dom}_{slot}]"
            if any(ph in t for t in texts):
                continue
            value = None
            if db is not None:
                for r in results:
                    if dom in getattr(r, "offered", {}):
                        e = db.get(dom, r.offered[dom])
                        value = e.extras.get(slot, e.attributes.get(slot)) if e else value
            if value and any(str(value) in t for t in lex):
                continue
            return False
    return True


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidates, references, max_n=4, epsilon=BLEU_EPSILON):
    """Corpus BLEU-4 on a 0-100 scale with uniform weights and a brevity penalty.

    An order with zero clipped matches contributes ``epsilon / total`` in
    place of 0, so one empty order does not zero the whole score.
    """
    if len(candidates) != len(references):
        raise ValueError("candidate and reference lists differ in length")
    if not candidates:
        raise ValueError("BLEU of an empty corpus is undefined")
    hits = [0] * max_n
    totals = [0] * max_n
    c_len = r_len = 0
    for cand, ref in zip(candidates, references):
        cand, ref = list(cand), list(ref)
        c_len += len(cand)
        r_len += len(ref)
        for n in range(1, max_n + 1):
            cc, rc = _ngrams(cand, n), _ngrams(ref, n)
            hits[n - 1] += sum(min(c, rc[g]) for g, c in cc.items())
            totals[n - 1] += max(len(cand) - n + 1, 0)
    if c_len == 0:
        return 0.0
    log_p = 0.0
    for h, t in zip(hits, totals):
        p = h / t if h else epsilon / max(t, 1)
        log_p += math.log(p) / max_n
    bp = 1.0 if c_len > r_len else math.exp(1 - r_len / c_len)
    return 100.0 * bp * math.exp(log_p)


@dataclass
class Verdict:
    dialogue_id: str
    inform: bool
    success: bool
    turns: int
    error: str = ""


@dataclass
class EvalReport:
    inform: float
    success: float
    bleu: float
    domain_accuracy: float = float("nan")
    joint_accuracy: float = float("nan")
    n_dialogues: int = 0
    n_turns: int = 0
    failures: int = 0
    verdicts: list = field(default_factory=list)

    @property
    def combined(self):
        return self.inform + self.success

    def summary(self):
        return {k: getattr(self, k) for k in (
            "inform", "success", "bleu", "domain_accuracy", "joint_accuracy",
            "n_dialogues", "n_turns", "failures")}

    def to_json(self, per_dialogue=False):
        out = {k: (round(v, 6) if isinstance(v, float) else v) for k, v in self.summary().items()}
        if per_dialogue:
            out["dialogues"] = [vars(v) for v in self.verdicts]
        return json.dumps(out, indent=1, sort_keys=True) + "\n"

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["dialogue", "inform", "success", "turns", "error"])
        for v in self.verdicts:
            w.writerow([v.dialogue_id, int(v.inform), int(v.success), v.turns, v.error])
        return buf.getvalue()


def _aggregate(verdicts, cands, refs, dom_hits, dom_total, joint_hits, n_turns):
    n = len(verdicts)
    return EvalReport(
        inform=100.0 * sum(v.inform for v in verdicts) / n if n else 0.0,
        success=100.0 * sum(v.success for v in verdicts) / n if n else 0.0,
        bleu=bleu(cands, refs) if cands else 0.0,
        domain_accuracy=100.0 * dom_hits / dom_total if dom_total else float("nan"),
        joint_accuracy=100.0 * joint_hits / n_turns if n_turns else float("nan"),
        n_dialogues=n,
        n_turns=n_turns,
        failures=sum(bool(v.error) for v in verdicts),
        verdicts=verdicts,
    )


class _GoldTurn:
    __slots__ = ("response", "response_lex", "action", "offered", "domain_state", "belief")


def gold_results(dialogue, db):
    """Gold annotations shaped like pipeline results, for scorer self-checks."""
    from .pipeline import lexicalize_response
    out = []
    for t, d in zip(dialogue.turns, dialogue.domain_states):
        g = _GoldTurn()
        g.response = Response(t.response_delex, (), True)
        g.response_lex, g.offered = lexicalize_response(db, t.response_delex, t.belief)
        g.action, g.domain_state, g.belief = t.action, d, t.belief
        out.append(g)
    return out


def evaluate_gold(dialogues, db):
    verdicts, cands, refs = [], [], []
    for dlg in dialogues:
        res = gold_results(dlg, db)
        inf = score_inform(res, dlg.goal, db)
        verdicts.append(Verdict(dlg.id, inf, score_success(res, dlg.goal, inf, db), len(res)))
        for r, t in zip(res, dlg.turns):
            cands.append(words_of(r.response.raw))
            refs.append(words_of(t.response_delex))
    n_turns = len(cands)
    return _aggregate(verdicts, cands, refs, 0, 0, n_turns, n_turns)


def evaluate(system, db, dialogues, mode="e2e"):
    """Run each dialogue through the pipeline and score it."""
    from .pipeline import GoldTurn, TurnError, run_turn, initial_state
    verdicts, cands, refs = [], [], []
    dom_hits = dom_total = joint_hits = n_turns = 0
    for dlg in dialogues:
        s = initial_state(system.ontology)
        results, error = [], ""
        for t, gd in zip(dlg.turns, dlg.domain_states):
            gold = GoldTurn(gd, t.belief, t.action)
            try:
                r, s = run_turn(system, db, s, system.codec.utterance(t.user), mode, gold)
            except TurnError as e:
                error = str(e)
                break
            results.append(r)
        for i, t in enumerate(dlg.turns):
            gd = dlg.domain_states[i]
            n_turns += 1
            dom_total += len(gd.active)
            refs.append(words_of(t.response_delex))
            if i < len(results):
                r = results[i]
                dom_hits += sum(r.domain_state.active[k] == v for k, v in gd.active.items())
                joint_hits += r.belief == t.belief
                cands.append(words_of(r.response.raw))
            else:
                cands.append([])
        inf = not error and score_inform(results, dlg.goal, db)
        suc = inf and score_success(results, dlg.goal, inf, db)
        verdicts.append(Verdict(dlg.id, bool(inf), bool(suc), len(dlg.turns), error))
    return _aggregate(verdicts, cands, refs, dom_hits, dom_total, joint_hits, n_turns)
