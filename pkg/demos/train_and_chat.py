"""
Train a toy model and talk to it
================================

Train the full pipeline on a generated corpus, score it end to end on the
test split and replay a two-domain exchange. Takes several minutes on one
CPU; lower ``EPOCHS`` for a quicker (and worse) model.
"""

import torch

from dots.corpus import generate_synthetic
from dots.database import default_database
from dots.evaluation import evaluate
from dots.ontology import default_ontology
from dots.pipeline import initial_state, run_turn, TurnError
from dots.training import TrainingConfig, build_system, train

EPOCHS = 30
torch.set_num_threads(1)

onto = default_ontology()
db = default_database(onto)
splits = generate_synthetic(onto, db, 300, seed=7)
system = build_system(onto, splits.all(), {"decoder_hidden": 256, "feed_context": True, "domain_spans": True})

cfg = TrainingConfig(lr=1e-3, batch_size=16, max_epochs=EPOCHS, min_epochs=EPOCHS)
_, log = train(system, db, splits, cfg,
               on_epoch=lambda e, losses, m: print(f"epoch {e:2d}  loss {sum(losses.values()):.3f}  "
                                                   f"val inform {m[0]:.1f} success {m[1]:.1f}"))
print("best epoch", log.best_epoch)

report = evaluate(system, db, splits.test)
print(report.summary())

# a cheap restaurant, then a hotel, then an elliptical "cheap one"
state = initial_state(onto)
for text in ["i want a cheap restaurant in the east", "i also need a hotel", "a cheap one please"]:
    try:
        res, state = run_turn(system, db, state, system.codec.utterance(text))
    except TurnError as e:
        print("turn failed:", e)
        continue
    print(f"user: {text}\n  active: {res.domain_state.active_domains()}"
          f"\n  belief: {res.belief.filled()}\n  system: {res.response_lex}")
