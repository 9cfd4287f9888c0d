"""Input-length profile: simplified context vs. accumulated dialogue history."""
import csv
from dataclasses import dataclass, field
from pathlib import Path

from .database import query
from .ontology import tokenize

MODES = ("dots", "full-history")


@dataclass
class LengthProfile:
    mode: str
    lengths: dict = field(default_factory=dict)  # turn index -> list of token counts

    def stats(self):
        """{t: (mean, min, max, count)} in increasing t."""
        return {t: (sum(v) / len(v), min(v), max(v), len(v)) for t, v in sorted(self.lengths.items())}

    def means(self):
        return [s[0] for s in self.stats().values()]


def dialogue_lengths(dialogue, codec, db, mode):
    """Per-turn input length of one dialogue under ``mode``."""
    if mode not in MODES:
        raise ValueError(f"unknown profile mode {mode!r}")
    out = []
    history = 0
    for turn, d in zip(dialogue.turns, dialogue.domain_states):
        u = codec.utterance(turn.user)
        if mode == "dots":
            ctx = codec.build_context("response", u, d, turn.belief, query(db, turn.belief, d), turn.action)
            out.append(len(ctx))
        else:
            out.append(history + len(u.tokens))
            history += len(u.tokens) + len(tokenize(turn.response_delex, codec.vocab))
    return out


def profile(dialogues, codec, db, mode):
    prof = LengthProfile(mode)
    for dlg in dialogues:
        for t, n in enumerate(dialogue_lengths(dlg, codec, db, mode), start=1):
            prof.lengths.setdefault(t, []).append(n)
    return prof


def report(profiles, path):
    """CSV with columns turn,mode,mean,min,max,count; rows ordered by turn then mode."""
    profiles = [profiles] if isinstance(profiles, LengthProfile) else list(profiles)
    order = {m: i for i, m in enumerate(MODES)}
    rows = []
    for p in profiles:
        for t, (mean, lo, hi, n) in p.stats().items():
            rows.append((t, order.get(p.mode, len(order)), p.mode, mean, lo, hi, n))
    rows.sort()
    with open(Path(path), "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["turn", "mode", "mean", "min", "max", "count"])
        for t, _, mode, mean, lo, hi, n in rows:
            w.writerow([t, mode, f"{mean:.4f}", lo, hi, n])
    return len(rows)
