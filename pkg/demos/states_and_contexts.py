"""
Dialogue states and encoder contexts
====================================

Walk through one generated dialogue and print the structured states the
pipeline threads from turn to turn, plus the three token contexts that the
shared encoder sees at each turn.
"""

from dots.corpus import corpus_words, generate_synthetic, is_cross_domain_elliptical
from dots.database import default_database, query
from dots.ontology import build_vocabulary, default_ontology
from dots.state import StateCodec

onto = default_ontology()
db = default_database(onto)
splits = generate_synthetic(onto, db, 40, seed=7)

# pick a dialogue that switches domain and then answers elliptically
dialogue = next(d for d in splits.train
                if len(d.goal.domains()) > 1
                and any(is_cross_domain_elliptical(d, i) for i in range(len(d.turns))))

vocab = build_vocabulary(onto, onto.words() | corpus_words(splits.all()))
codec = StateCodec(onto, vocab)
print(f"dialogue {dialogue.id}: goal domains {dialogue.goal.domains()}")

prev_d = None
prev_b = None
for t, (turn, d) in enumerate(zip(dialogue.turns, dialogue.domain_states), start=1):
    u = codec.utterance(turn.user)
    before_d = prev_d or d.initial(onto)
    before_b = prev_b or turn.belief.empty(onto)
    db_result = query(db, turn.belief, d)
    print(f"\nturn {t}: user says {turn.user!r}" + ("  (elliptical)" if turn.elliptical else ""))
    print("  active domains:", d.active_domains())
    print("  belief:", {f"{k[0]}-{k[1]}": v for k, v in turn.belief.filled().items()})
    print("  db:", dict(db_result.counts))
    for kind, ctx in (
        ("belief", codec.build_context("belief", u, before_d, before_b)),
        ("response", codec.build_context("response", u, d, turn.belief, db_result, turn.action)),
    ):
        print(f"  C[{kind}] {len(ctx)} tokens:", " ".join(vocab.token(i) for i in ctx.tokens))
    print("  system:", turn.response_lex)
    prev_d, prev_b = d, turn.belief
