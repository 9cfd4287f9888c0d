"""One dialogue turn: encode, track domains and beliefs, query, act, respond.

A turn reads only the current user utterance and the previous domain and
belief states carried in :class:`SessionState`; no earlier utterance or
response is reachable from its inputs.
"""
import re
from dataclasses import dataclass, field

import torch

from .database import query, select_entity
from .neural import DotsModel
from .state import BeliefState, DomainState, ParseError, SystemAction, StateCodec

RESPONSE_MAX_LEN = 48
ACTION_MAX_LEN = 40
MAX_ACTS = 6

_PLACEHOLDER = re.compile(r"\[([a-z]+)_([a-z]+)\]")


class TurnError(RuntimeError):
    def __init__(self, msg, partial=None, turn=None):
        super().__init__(msg if turn is None else f"turn {turn}: {msg}")
        self.partial = partial
        self.turn = turn


@dataclass(frozen=True)
class SessionState:
    turn: int
    domain_state: DomainState
    belief: BeliefState


@dataclass(frozen=True)
class GoldTurn:
    """Gold states substituted downstream in oracle mode."""

    domain_state: DomainState
    belief: BeliefState
    action: SystemAction


@dataclass
class TurnResult:
    turn: int
    domain_state: DomainState = None
    belief: BeliefState = None
    db: object = None
    action: SystemAction = None
    response: object = None
    response_lex: str = ""
    contexts: dict = field(default_factory=dict)
    encodings: dict = field(default_factory=dict)
    encoder_handles: list = field(default_factory=list)
    domain_probs: list = None
    repairs: dict = field(default_factory=dict)
    used_domain_state: DomainState = None
    used_belief: BeliefState = None
    used_action: SystemAction = None
    offered: dict = field(default_factory=dict)

    @property
    def repaired(self):
        return any(self.repairs.values())


class DialogueSystem:
    """A model bound to the codec that builds its inputs and reads its outputs."""

    def __init__(self, model: DotsModel, codec: StateCodec, *, ablate_domain_state=False,
                 threshold=0.5):
        self.model = model
        self.codec = codec
        self.ablate_domain_state = ablate_domain_state
        self.threshold = threshold
        self.belief_max_len = len(codec.serialize_belief_state(BeliefState.empty(codec.ontology))) + 16

    @property
    def ontology(self):
        return self.codec.ontology

    def context(self, kind, u, d, b, db=None, a=None):
        return self.codec.build_context(kind, u, d, b, db, a, max_len=self.model.cfg.max_len,
                                        constant_domain=self.ablate_domain_state)

    def _encode(self, ctx, res):
        res.encoder_handles.append(id(self.model.encoder))
        return self.model.encode([ctx.tokens])


def initial_state(ontology):
    return SessionState(1, DomainState.initial(ontology), BeliefState.empty(ontology))


def lexicalize_response(db, text, belief):
    """Fill placeholders from the smallest-id entity matching ``belief`` per domain."""
    entities = {}
    for dom in {m.group(1) for m in _PLACEHOLDER.finditer(text)}:
        e = select_entity(db, dom, belief)
        if e is not None:
            entities[dom] = e
    from .evaluation import lexicalize
    offered = {dom: e.id for dom, e in entities.items() if f"[{dom}_name]" in text}
    return lexicalize(text, entities), offered


@torch.no_grad()
def run_turn(system, db, s, u, mode="e2e", gold=None):
    """Run one turn; returns (TurnResult, next SessionState).

    ``mode`` is ``"e2e"`` (predicted states flow downstream) or ``"oracle"``
    (``gold`` states are substituted into the action and response contexts
    and threaded to the next turn).
    """
    if mode not in ("e2e", "oracle"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "oracle" and gold is None:
        raise ValueError("oracle mode needs gold states")
    model, codec = system.model, system.codec
    res = TurnResult(turn=s.turn)

    # steps 1-2: belief context, domain state and belief
    cb = system.context("belief", u, s.domain_state, s.belief)
    ob = system._encode(cb, res)
    probs = torch.sigmoid(model.domain_logits(ob))[0]
    res.domain_probs = probs.tolist()
    res.domain_state = DomainState({dom: p >= system.threshold
                                    for dom, p in zip(system.ontology.domains, res.domain_probs)})
    btoks, _ = model.greedy("belief", ob, system.belief_max_len)
    res.contexts["belief"], res.encodings["belief"] = cb, ob[0]
    try:
        parsed = codec.parse_belief_state(btoks)
    except ParseError as e:
        raise TurnError(f"unrepairable belief output: {e}", res, s.turn) from e
    res.belief = parsed.state
    res.repairs["belief"] = parsed.repairs

    d_used = gold.domain_state if mode == "oracle" else res.domain_state
    b_used = gold.belief if mode == "oracle" else res.belief
    res.used_domain_state, res.used_belief = d_used, b_used

    # step 3: database
    res.db = query(db, b_used, d_used)

    # steps 4-5: action
    ca = system.context("action", u, d_used, b_used, res.db)
    oa = system._encode(ca, res)
    res.contexts["action"], res.encodings["action"] = ca, oa[0]
    atoks, _ = model.greedy("action", oa, ACTION_MAX_LEN)
    try:
        parsed = codec.parse_action(atoks)
    except ParseError as e:
        raise TurnError(f"unrepairable action output: {e}", res, s.turn) from e
    res.action = SystemAction(parsed.state.acts[:MAX_ACTS])
    res.repairs["action"] = parsed.repairs
    a_used = gold.action if mode == "oracle" else res.action
    res.used_action = a_used

    # steps 6-7: response
    cr = system.context("response", u, d_used, b_used, res.db, a_used)
    orr = system._encode(cr, res)
    res.contexts["response"], res.encodings["response"] = cr, orr[0]
    rtoks, _ = model.greedy("response", orr, RESPONSE_MAX_LEN)
    text = " ".join(codec.vocab.token(t) for t in rtoks)
    res.response = codec.response(text)
    res.response_lex, res.offered = lexicalize_response(db, text, b_used)

    return res, SessionState(s.turn + 1, d_used, b_used)


def run_dialogue(system, db, utterances, mode="e2e", golds=None):
    if not utterances:
        raise ValueError("dialogue needs at least one utterance")
    s = initial_state(system.ontology)
    out = []
    for i, text in enumerate(utterances):
        u = text if hasattr(text, "tokens") else system.codec.utterance(text)
        try:
            res, s = run_turn(system, db, s, u, mode, None if golds is None else golds[i])
        except TurnError as e:
            e.partial_results = out
            raise
        out.append(res)
    return out
