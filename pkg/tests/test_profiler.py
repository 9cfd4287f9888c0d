import json

import pytest

from dots.corpus import corpus_words, parse_corpus
from dots.database import query
from dots.ontology import build_vocabulary
from dots.profiler import LengthProfile, dialogue_lengths, profile, report
from dots.state import StateCodec

from test_corpus import FIXTURE


@pytest.fixture(scope="module")
def fixture_dialogue(onto, tmp_path_factory):
    p = tmp_path_factory.mktemp("prof") / "c.json"
    p.write_text(json.dumps(FIXTURE))
    return parse_corpus(p, onto).train[0]


@pytest.fixture(scope="module")
def fcodec(onto, fixture_dialogue):
    return StateCodec(onto, build_vocabulary(onto, onto.words() | corpus_words([fixture_dialogue])))


def test_hand_counted_lengths(fixture_dialogue, fcodec, db, tmp_path):
    # C^R at t=1: CLS + 8 utterance + SEP + 6 domain-state + 31 belief + 2 db + 5 action = 54
    # t=2: utterance "what is the phone number ?" is 6 tokens, rest unchanged = 52
    assert dialogue_lengths(fixture_dialogue, fcodec, db, "dots") == [54, 52]
    # history: 8; then 8 + 3 ("try [restaurant_name] .") + 6 = 17
    assert dialogue_lengths(fixture_dialogue, fcodec, db, "full-history") == [8, 17]
    profs = [profile([fixture_dialogue], fcodec, db, m) for m in ("dots", "full-history")]
    assert report(profs, tmp_path / "p.csv") == 4
    assert (tmp_path / "p.csv").read_text().splitlines() == [
        "turn,mode,mean,min,max,count",
        "1,dots,54.0000,54,54,1",
        "1,full-history,8.0000,8,8,1",
        "2,dots,52.0000,52,52,1",
        "2,full-history,17.0000,17,17,1",
    ]


def test_single_turn_base_case(fixture_dialogue, fcodec, db, onto):
    from dots.corpus import Dialogue
    one = Dialogue("one", fixture_dialogue.goal, fixture_dialogue.turns[:1], onto)
    (dots,), (full,) = dialogue_lengths(one, fcodec, db, "dots"), dialogue_lengths(one, fcodec, db, "full-history")
    t = one.turns[0]
    d = one.domain_states[0]
    state = (len(fcodec.serialize_domain_state(d)) + len(fcodec.serialize_belief_state(t.belief))
             + len(fcodec.serialize_db_result(query(db, t.belief, d), d)) + len(fcodec.serialize_action(t.action)))
    assert dots - full == 2 + state


def test_unknown_mode(fixture_dialogue, fcodec, db):
    with pytest.raises(ValueError):
        dialogue_lengths(fixture_dialogue, fcodec, db, "gpu")


@pytest.fixture(scope="module")
def profiles(corpus, codec, db):
    return {m: profile(corpus.all(), codec, db, m) for m in ("dots", "full-history")}


def test_dots_mean_spread_bounded_by_utterance_spread(profiles, corpus, codec):
    means = profiles["dots"].means()
    ulens = [len(codec.utterance(t.user).tokens) for d in corpus.all() for t in d.turns]
    assert max(means) - min(means) <= max(ulens) - min(ulens)


def test_full_history_strictly_increasing(profiles, corpus, codec, db):
    means = profiles["full-history"].means()
    assert all(b > a for a, b in zip(means, means[1:]))
    for dlg in corpus.all()[:50]:
        lens = dialogue_lengths(dlg, codec, db, "full-history")
        assert all(b > a for a, b in zip(lens, lens[1:]))


def test_counts_nonincreasing(profiles):
    for p in profiles.values():
        counts = [s[3] for s in p.stats().values()]
        assert all(b <= a for a, b in zip(counts, counts[1:]))


def test_belief_context_constant_given_utterance(corpus, codec, db):
    # the state segments of C^B have a fixed shape, so only the utterance varies
    for dlg in corpus.all()[:50]:
        for t, d in zip(dlg.turns, dlg.domain_states):
            u = codec.utterance(t.user)
            ctx = codec.build_context("belief", u, d, t.belief)
            assert len(ctx) - len(u.tokens) == 2 + 2 * 3 + 31


def test_report_deterministic(profiles, tmp_path):
    report(list(profiles.values()), tmp_path / "a.csv")
    report(list(profiles.values()), tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert isinstance(profiles["dots"], LengthProfile)
