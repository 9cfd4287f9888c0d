import math

import pytest
import torch

from dots.corpus import CorpusSplits
from dots.neural import EncoderConfig, TrainingError
from dots.training import (
    CheckpointError, EarlyStopping, TrainingConfig, batch_losses, build_system, load_checkpoint,
    save_checkpoint, train, turn_examples, turn_loss,
)

SMALL = {"hidden": 16, "layers": 1, "heads": 2}


@pytest.fixture(scope="module")
def small(onto, corpus):
    return build_system(onto, corpus.all(), SMALL, seed=3)


@pytest.fixture(scope="module")
def examples(small, db, corpus):
    return [ex for d in corpus.train[:3] for ex in turn_examples(small, db, d)]


def scripted(scores, patience=5):
    es = EarlyStopping(patience)
    for epoch, s in enumerate(scores, start=1):
        _, stop = es.update(epoch, s)
        if stop:
            return epoch, es.best_epoch
    return None, es.best_epoch


def test_early_stopping_flat():
    assert scripted([10] * 6) == (6, 1)


def test_early_stopping_improve_then_flat():
    assert scripted([10, 11, 11, 11, 11, 11, 11]) == (7, 2)


def test_early_stopping_late_improvement_resets():
    assert scripted([1, 1, 1, 1, 2, 2, 2, 2, 2, 2]) == (10, 5)
    assert scripted([3, 2, 1]) == (None, 1)
    with pytest.raises(ValueError):
        EarlyStopping(0)


def test_examples_thread_gold_state(small, db, corpus):
    dlg = corpus.train[0]
    exs = turn_examples(small, db, dlg)
    assert len(exs) == len(dlg.turns)
    codec = small.codec
    for ex, t in zip(exs, dlg.turns):
        assert ex.belief == codec.serialize_belief_state(t.belief)
        assert ex.action == codec.serialize_action(t.action)
    # turn 2 belief context carries turn 1's gold belief
    tail = codec.serialize_belief_state(dlg.turns[0].belief)
    assert list(exs[1].belief_ctx[-len(tail):]) == list(tail)


def test_components_nonnegative(small, examples):
    comps = batch_losses(small.model, examples)
    assert set(comps) == {"domain", "belief", "action", "response"}
    assert all(v.item() >= 0 for v in comps.values())


def test_uniform_model_gives_log_vocab(onto, corpus, db):
    system = build_system(onto, corpus.all(), SMALL, seed=1)
    with torch.no_grad():
        for dec in system.model.decoders.values():
            dec.out.weight.zero_()
            dec.out.bias.zero_()
        system.model.domain_head.weight.zero_()
        system.model.domain_head.bias.zero_()
    exs = turn_examples(system, db, corpus.train[0])
    comps = batch_losses(system.model, exs)
    v = len(system.codec.vocab)
    for k in ("belief", "action", "response"):
        assert comps[k].item() == pytest.approx(math.log(v), abs=1e-6)
    assert comps["domain"].item() == pytest.approx(math.log(2), abs=1e-6)


class GoldModel:
    """Wraps a model so its outputs put all mass on the gold tokens."""

    def __init__(self, model, examples, scale=60.0):
        self.m, self.scale = model, scale
        self.gold_dom = torch.tensor([e.domains for e in examples], dtype=torch.float32)
        self.pad_id, self.eos_id = model.pad_id, model.eos_id

    def encode(self, seqs):
        return self.m.encode(seqs)

    def domain_logits(self, o):
        return (2 * self.gold_dom - 1) * self.scale

    def teacher_forced(self, which, o, targets):
        _, gold = self.m.teacher_forced(which, o, targets)
        logits = torch.full((*gold.shape, self.m.cfg.vocab_size), -self.scale)
        logits.scatter_(2, gold.unsqueeze(-1), self.scale)
        return logits, gold


def test_gold_model_loss_near_zero(small, examples):
    comps = batch_losses(GoldModel(small.model, examples), examples)
    assert sum(v.item() for v in comps.values()) < 1e-6


def test_non_finite_loss_raises(small, examples, monkeypatch):
    import dots.training as tr
    monkeypatch.setattr(tr, "batch_losses", lambda m, b: {
        "domain": torch.tensor(0.1), "belief": torch.tensor(float("nan")),
        "action": torch.tensor(0.0), "response": torch.tensor(0.0)})
    with pytest.raises(TrainingError, match="belief=nan"):
        turn_loss(small, examples)


def test_abort_keeps_last_good_weights(onto, corpus, db, monkeypatch):
    import dots.training as tr
    system = build_system(onto, corpus.all(), SMALL, seed=2)
    splits = CorpusSplits(corpus.train[:2], corpus.validation[:1], [])
    real = tr.turn_loss
    calls = {"n": 0}

    def flaky(sys_, batch, w=None):
        calls["n"] += 1
        if calls["n"] > 3:
            raise TrainingError("boom")
        return real(sys_, batch, w)

    snaps = []
    monkeypatch.setattr(tr, "turn_loss", flaky)
    with pytest.raises(TrainingError):
        train(system, db, splits, TrainingConfig(lr=1e-3, batch_size=8, max_epochs=5),
              validator=lambda s: (snaps.append({k: v.clone() for k, v in s.model.state_dict().items()}) or (1, 0, 0)))
    assert snaps
    for k, v in system.model.state_dict().items():
        assert torch.equal(v, snaps[0][k])


def _fit(onto, corpus, db, dialogues, epochs, lr=1e-3, seed=0, enc=SMALL):
    system = build_system(onto, corpus.all(), enc, seed=seed)
    splits = CorpusSplits(dialogues, corpus.validation[:1], [])
    seen = []
    _, tlog = train(system, db, splits, TrainingConfig(lr=lr, max_epochs=epochs, patience=1000, seed=seed),
                    validator=lambda s: (0.0, 0.0, 0.0),
                    on_epoch=lambda e, losses, m: seen.append(sum(losses.values())))
    return system, tlog, seen


def test_loss_decreases_on_small_fixture(onto, corpus, db):
    _, _, seen = _fit(onto, corpus, db, corpus.train[:10], 30, enc=None)
    assert seen[-1] < 0.25 * seen[0]


def test_training_deterministic(onto, corpus, db):
    a = _fit(onto, corpus, db, corpus.train[:3], 2)
    b = _fit(onto, corpus, db, corpus.train[:3], 2)
    assert a[1].to_csv() == b[1].to_csv()
    for (ka, va), (kb, vb) in zip(a[0].model.state_dict().items(), b[0].model.state_dict().items()):
        assert ka == kb and torch.equal(va, vb)


def test_best_weights_restored(onto, corpus, db):
    system = build_system(onto, corpus.all(), SMALL, seed=4)
    splits = CorpusSplits(corpus.train[:2], corpus.validation[:1], [])
    scores = iter([5, 9, 1, 1])
    snaps = []

    def validator(s):
        snaps.append({k: v.clone() for k, v in s.model.state_dict().items()})
        return next(scores), 0, 0

    _, tlog = train(system, db, splits, TrainingConfig(lr=1e-3, max_epochs=4, patience=5), validator=validator)
    assert tlog.best_epoch == 2
    for k, v in system.model.state_dict().items():
        assert torch.equal(v, snaps[1][k])
    assert tlog.to_csv().splitlines()[0].startswith("epoch,")


@pytest.mark.parametrize("min_epochs, stopped_at", [(0, 3), (5, 5)])
def test_min_epochs_delays_stop(onto, corpus, db, min_epochs, stopped_at):
    system = build_system(onto, corpus.all(), SMALL, seed=4)
    splits = CorpusSplits(corpus.train[:1], corpus.validation[:1], [])
    cfg = TrainingConfig(lr=1e-3, max_epochs=8, patience=2, min_epochs=min_epochs)
    _, tlog = train(system, db, splits, cfg, validator=lambda s: (0.0, 0.0, 0.0))
    assert (len(tlog.epochs), tlog.best_epoch, tlog.stopped_early) == (stopped_at, 1, True)


def test_checkpoint_round_trip(small, examples, tmp_path):
    from dots.neural import Adam, adam_step
    opt = Adam(small.model.parameters(), lr=1e-3)
    total, _ = turn_loss(small, examples)
    total.backward()
    adam_step(small.model, opt, 1.0)
    cfg = TrainingConfig(lr=1e-3)
    save_checkpoint(tmp_path / "c.bin", small, opt, cfg)
    sys2, opt2, cfg2 = load_checkpoint(tmp_path / "c.bin")
    assert cfg2 == cfg
    assert opt2.step_count == opt.step_count
    for a, b in zip(opt.m, opt2.m):
        assert torch.equal(a, b)
    for (ka, va), (kb, vb) in zip(small.model.state_dict().items(), sys2.model.state_dict().items()):
        assert ka == kb and torch.equal(va, vb)
    small.model.eval()
    ctx = examples[0].belief_ctx
    assert torch.equal(small.model.encode([ctx]), sys2.model.encode([ctx]))
    assert sys2.codec.vocab == small.codec.vocab
    save_checkpoint(tmp_path / "d.bin", sys2, opt2, cfg2)
    assert (tmp_path / "c.bin").read_bytes() == (tmp_path / "d.bin").read_bytes()


def test_checkpoint_errors(small, tmp_path):
    p = tmp_path / "c.bin"
    save_checkpoint(p, small)
    data = p.read_bytes()
    (tmp_path / "t.bin").write_bytes(data[:-10])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(tmp_path / "t.bin")
    (tmp_path / "x.bin").write_bytes(data + b"\0")
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(tmp_path / "x.bin")
    bad = bytearray(data)
    bad[8] ^= 0xFF
    (tmp_path / "v.bin").write_bytes(bytes(bad))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(tmp_path / "v.bin")
    (tmp_path / "n.bin").write_bytes(b"hello world")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "n.bin")


def test_checkpoint_shape_mismatch(onto, corpus, tmp_path):
    big = build_system(onto, corpus.all(), {"hidden": 64}, seed=0)
    save_checkpoint(tmp_path / "h64.bin", big)
    cfg = EncoderConfig(vocab_size=len(big.codec.vocab), hidden=32)
    with pytest.raises(CheckpointError, match="shape mismatch"):
        load_checkpoint(tmp_path / "h64.bin", encoder_config=cfg)


def test_config_file(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text('{"lr": 0.01, "batch_size": 4}')
    cfg = TrainingConfig.from_file(p, max_epochs=3, lr=None)
    assert (cfg.lr, cfg.batch_size, cfg.max_epochs, cfg.patience) == (0.01, 4, 3, 5)
