"""
Context length per turn
=======================

Compare the input length of the state-based context against the length of
the accumulated dialogue history, turn by turn, over a generated corpus.
"""

from dots.corpus import corpus_words, generate_synthetic
from dots.database import default_database
from dots.ontology import build_vocabulary, default_ontology
from dots.profiler import profile
from dots.state import StateCodec

onto = default_ontology()
db = default_database(onto)
dialogues = generate_synthetic(onto, db, 300, seed=7).all()
codec = StateCodec(onto, build_vocabulary(onto, onto.words() | corpus_words(dialogues)))

dots = profile(dialogues, codec, db, "dots").stats()
full = profile(dialogues, codec, db, "full-history").stats()

print(f"{'turn':>4} {'dialogues':>9} {'dots mean':>10} {'history mean':>13}")
for t in dots:
    print(f"{t:>4} {dots[t][3]:>9} {dots[t][0]:>10.1f} {full[t][0]:>13.1f}")

# the state segments have a fixed shape, so the dots context only moves with
# the utterance and the DB/action segments; the history keeps growing
