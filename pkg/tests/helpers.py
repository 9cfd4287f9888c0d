"""Random legal states for property tests."""
import random

from dots.ontology import ACT_TYPES, DONTCARE
from dots.state import BeliefState, DbResult, DomainState, SystemAction, _act_slots


def random_domain_state(onto, rng):
    return DomainState({d: rng.random() < 0.5 for d in onto.domains})


def random_belief(onto, rng, p_fill=0.5):
    vals = {}
    for d, s in onto.slot_pairs():
        r = rng.random()
        if r < p_fill:
            vals[(d, s)] = rng.choice([*onto.values(d, s), DONTCARE])
        else:
            vals[(d, s)] = None
    return BeliefState(vals)


def random_action(onto, rng, max_acts=4):
    acts = []
    for _ in range(rng.randrange(max_acts + 1)):
        d = rng.choice(onto.domains)
        slot = rng.choice([None, *_act_slots(onto, d)])
        acts.append((d, rng.choice(ACT_TYPES), slot))
    return SystemAction.canonical(onto, acts)


def random_db_result(onto, domain_state, rng):
    return DbResult({d: rng.choice(["0", "1", "2-3", "4+"]) for d in domain_state.active_domains()})


def rngs(n, seed=0):
    base = random.Random(seed)
    return [random.Random(base.getrandbits(32)) for _ in range(n)]
