"""Joint training, early stopping on validation inform+success, checkpoints."""
import copy
import csv
import io
import json
import logging
import math
import struct
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch
from torch.nn import functional as F

from .corpus import corpus_words
from .database import query
from .neural import Adam, DotsModel, EncoderConfig, TrainingError, adam_step
from .ontology import (
    Vocabulary, VocabularyError, build_vocabulary, domain_token, ontology_from_dict, special_tokens,
)
from .pipeline import DialogueSystem
from .state import BeliefState, DomainState, StateCodec

log = logging.getLogger(__name__)

LOSS_NAMES = ("domain", "belief", "action", "response")

CHECKPOINT_MAGIC = b"DOTSCKPT"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class TrainingConfig:
    lr: float = 3e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 8
    max_epochs: int = 50
    patience: int = 5
    min_epochs: int = 0  # early stopping is not allowed before this epoch
    seed: int = 0
    clip_norm: float = 1.0
    loss_weights: dict = field(default_factory=lambda: {k: 1.0 for k in LOSS_NAMES})

    def __post_init__(self):
        for name in ("lr", "batch_size", "max_epochs", "patience"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if self.min_epochs < 0:
            raise ValueError("min_epochs must be nonnegative")

    @classmethod
    def from_file(cls, path, **overrides):
        raw = json.loads(Path(path).read_text())
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown training config keys {sorted(unknown)}")
        raw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**raw)


@dataclass
class TurnExample:
    belief_ctx: list
    action_ctx: list
    response_ctx: list
    domains: list
    belief: list
    action: list
    response: list


def turn_examples(system, db, dialogue):
    """Per-turn training inputs with gold states threaded across turns."""
    codec, onto = system.codec, system.ontology
    prev_d, prev_b = DomainState.initial(onto), BeliefState.empty(onto)
    out = []
    for turn, d in zip(dialogue.turns, dialogue.domain_states):
        u = codec.utterance(turn.user)
        b, a = turn.belief, turn.action
        dbr = query(db, b, d)
        out.append(TurnExample(
            belief_ctx=list(system.context("belief", u, prev_d, prev_b).tokens),
            action_ctx=list(system.context("action", u, d, b, dbr).tokens),
            response_ctx=list(system.context("response", u, d, b, dbr, a).tokens),
            domains=[float(d.active[k]) for k in onto.domains],
            belief=codec.serialize_belief_state(b),
            action=codec.serialize_action(a),
            response=list(codec.response(turn.response_delex).tokens),
        ))
        prev_d, prev_b = d, b
    return out


def batch_losses(model, batch):
    """Loss components for a list of TurnExamples (means over tokens/domains)."""
    n = len(batch)
    o = model.encode([e.belief_ctx for e in batch] + [e.action_ctx for e in batch]
                     + [e.response_ctx for e in batch])
    ob, oa, orr = o[:n], o[n:2 * n], o[2 * n:]
    gold_dom = torch.tensor([e.domains for e in batch], dtype=o.dtype)
    losses = {"domain": F.binary_cross_entropy_with_logits(model.domain_logits(ob), gold_dom)}
    for name, enc, key in (("belief", ob, "belief"), ("action", oa, "action"), ("response", orr, "response")):
        logits, gold = model.teacher_forced(name, enc, [getattr(e, key) for e in batch])
        gold = gold.masked_fill(_pad_after_eos(gold, model), -100)
        losses[name] = F.cross_entropy(logits.reshape(-1, logits.shape[-1]), gold.reshape(-1),
                                       ignore_index=-100)
    return losses


def _pad_after_eos(gold, model):
    # gold rows are [target..., EOS, PAD...]; only the PAD tail is ignored
    seen_eos = (gold == model.eos_id).long().cumsum(1)
    return (seen_eos > 0) & (gold != model.eos_id)


def turn_loss(system, dialogue_turn_examples, weights=None):
    """Weighted total loss and components over the given turns."""
    weights = weights or {k: 1.0 for k in LOSS_NAMES}
    comps = batch_losses(system.model, list(dialogue_turn_examples))
    total = sum(weights[k] * comps[k] for k in LOSS_NAMES)
    if not torch.isfinite(total):
        raise TrainingError("non-finite loss: " + ", ".join(f"{k}={v.item():.4g}" for k, v in comps.items()))
    return total, {k: v.item() for k, v in comps.items()}


class EarlyStopping:
    """Stop once the monitored score fails to strictly improve for ``patience`` epochs."""

    def __init__(self, patience=5):
        if patience < 1:
            raise ValueError("patience must be at least 1")
        self.patience = patience
        self.best = -math.inf
        self.best_epoch = None
        self.wait = 0

    def update(self, epoch, score):
        """Record an epoch's score; returns (improved, should_stop)."""
        if score > self.best:
            self.best, self.best_epoch, self.wait = score, epoch, 0
            return True, False
        self.wait += 1
        return False, self.wait >= self.patience


@dataclass
class EpochRecord:
    epoch: int
    losses: dict
    val_inform: float
    val_success: float
    val_bleu: float
    best: bool = False


@dataclass
class TrainingLog:
    epochs: list = field(default_factory=list)
    best_epoch: int = None
    stopped_early: bool = False

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", *[f"loss_{k}" for k in LOSS_NAMES], "val_inform", "val_success", "val_bleu", "best"])
        for r in self.epochs:
            w.writerow([r.epoch, *[f"{r.losses.get(k, float('nan')):.6f}" for k in LOSS_NAMES],
                        f"{r.val_inform:.4f}", f"{r.val_success:.4f}", f"{r.val_bleu:.4f}",
                        int(r.epoch == self.best_epoch)])
        return buf.getvalue()


def build_system(ontology, dialogues, enc_kwargs=None, seed=0, ablate_domain_state=False):
    vocab = build_vocabulary(ontology, ontology.words() | corpus_words(dialogues))
    enc = dict(enc_kwargs or {})
    if enc.pop("domain_spans", False):
        enc["domain_ids"] = tuple(vocab.id(domain_token(d)) for d in ontology.domains)
    cfg = EncoderConfig(vocab_size=len(vocab), **enc)
    return _system(ontology, vocab, cfg, seed, ablate_domain_state)


def _system(ontology, vocab, cfg, seed, ablate):
    ids = {t: vocab.id(t) for t in ("[PAD]", "[BOS]", "[EOS]")}
    model = DotsModel(cfg, len(ontology.domains), pad_id=ids["[PAD]"], bos_id=ids["[BOS]"],
                      eos_id=ids["[EOS]"], seed=seed)
    model.eval()
    return DialogueSystem(model, StateCodec(ontology, vocab), ablate_domain_state=ablate)


def train(system, db, splits, cfg, validator=None, on_epoch=None):
    """Train jointly; returns (best state_dict, TrainingLog) and leaves the best weights loaded.

    ``validator(system) -> (inform, success, bleu)`` defaults to end-to-end
    evaluation on ``splits.validation``.
    """
    from .evaluation import evaluate
    if validator is None:
        if not splits.train or not splits.validation:
            raise ValueError("training needs non-empty train and validation splits")

        def validator(sys_):
            r = evaluate(sys_, db, splits.validation, mode="e2e")
            return r.inform, r.success, r.bleu

    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    model = system.model
    examples = [ex for d in splits.train for ex in turn_examples(system, db, d)]
    opt = Adam(model.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps)
    stopper = EarlyStopping(cfg.patience)
    tlog = TrainingLog()
    best_state = copy.deepcopy(model.state_dict())
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        model.train()
        sums = {k: 0.0 for k in LOSS_NAMES}
        count = 0
        order = rng.permutation(len(examples)) if examples else []
        for start in range(0, len(order), cfg.batch_size):
            batch = [examples[i] for i in order[start:start + cfg.batch_size]]
            try:
                total, comps = turn_loss(system, batch, cfg.loss_weights)
                model.zero_grad(set_to_none=False)
                total.backward()
                adam_step(model, opt, cfg.clip_norm)
            except TrainingError:
                model.load_state_dict(best_state)
                system.optimizer = opt
                raise
            for k in LOSS_NAMES:
                sums[k] += comps[k] * len(batch)
            count += len(batch)
        losses = {k: sums[k] / max(count, 1) for k in LOSS_NAMES}
        model.eval()
        inform, success, bleu_ = validator(system)
        improved, stop = stopper.update(epoch, inform + success)
        if improved:
            best_state = copy.deepcopy(model.state_dict())
        tlog.epochs.append(EpochRecord(epoch, losses, inform, success, bleu_))
        tlog.best_epoch = stopper.best_epoch
        log.info("epoch %d loss %.4f val inform %.2f success %.2f bleu %.2f (%.1fs)", epoch,
                 sum(losses.values()), inform, success, bleu_, time.perf_counter() - t0)
        if on_epoch is not None:
            on_epoch(epoch, losses, (inform, success, bleu_))
        if stop and epoch >= cfg.min_epochs:
            tlog.stopped_early = True
            break
    model.load_state_dict(best_state)
    system.optimizer = opt
    return best_state, tlog


# checkpoints


def _vocab_header(system):
    return {"words": list(system.codec.vocab.word_tokens)}


def save_checkpoint(path, system, optimizer=None, train_cfg=None, ontology_raw=None):
    """Binary checkpoint: magic, version, JSON header, raw little-endian arrays."""
    model = system.model
    blocks = [(n, p.detach()) for n, p in model.state_dict().items()]
    if optimizer is not None:
        names = [n for n, _ in model.named_parameters()]
        blocks += [(f"adam.m.{n}", m) for n, m in zip(names, optimizer.m)]
        blocks += [(f"adam.v.{n}", v) for n, v in zip(names, optimizer.v)]
    header = {
        "encoder": model.cfg.to_dict(),
        "n_domains": model.n_domains,
        "ablate_domain_state": system.ablate_domain_state,
        "ontology": ontology_raw or _ontology_to_dict(system.ontology),
        "vocab": _vocab_header(system),
        "adam": None if optimizer is None else {
            "step": optimizer.step_count, "lr": optimizer.lr,
            "betas": [optimizer.beta1, optimizer.beta2], "eps": optimizer.eps},
        "training": None if train_cfg is None else asdict(train_cfg),
        "blocks": [{"name": n, "shape": list(t.shape), "dtype": str(t.dtype).replace("torch.", "")}
                   for n, t in blocks],
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(hbytes)))
        f.write(hbytes)
        for _, t in blocks:
            f.write(t.contiguous().numpy().astype(t.numpy().dtype.newbyteorder("<"), copy=False).tobytes())


def _ontology_to_dict(onto):
    return {"domains": [{"name": d,
                         "informable": [{"slot": s, "values": list(v)} for s, v in onto.informable[d]],
                         "requestable": list(onto.requestable[d])} for d in onto.domains]}


def load_checkpoint(path, encoder_config=None):
    """Rebuild (system, optimizer, training config) from a checkpoint file.

    ``encoder_config``, when given, must match the stored shapes.
    """
    data = Path(path).read_bytes()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file")
    off = len(CHECKPOINT_MAGIC)
    if len(data) < off + 12:
        raise CheckpointError(f"{path}: truncated header")
    version, hlen = struct.unpack_from("<IQ", data, off)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    off += 12
    if len(data) < off + hlen:
        raise CheckpointError(f"{path}: truncated header")
    header = json.loads(data[off:off + hlen])
    off += hlen
    onto = ontology_from_dict(header["ontology"])
    try:
        vocab = Vocabulary(tuple(special_tokens(onto)), tuple(header["vocab"]["words"]))
    except VocabularyError as e:
        raise CheckpointError(f"{path}: {e}") from e
    cfg = encoder_config or EncoderConfig(**header["encoder"])
    system = _system(onto, vocab, cfg, 0, header["ablate_domain_state"])
    tensors = {}
    for spec in header["blocks"]:
        dtype = np.dtype(spec["dtype"]).newbyteorder("<")
        size = int(np.prod(spec["shape"])) * dtype.itemsize
        if len(data) < off + size:
            raise CheckpointError(f"{path}: truncated data in block {spec['name']}")
        arr = np.frombuffer(data, dtype=dtype, count=int(np.prod(spec["shape"])), offset=off)
        tensors[spec["name"]] = torch.from_numpy(arr.astype(dtype.newbyteorder("="))).reshape(spec["shape"])
        off += size
    if off != len(data):
        raise CheckpointError(f"{path}: {len(data) - off} trailing bytes")
    state = system.model.state_dict()
    for name, ref in state.items():
        if name not in tensors:
            raise CheckpointError(f"{path}: missing parameter block {name}")
        if tuple(tensors[name].shape) != tuple(ref.shape):
            raise CheckpointError(f"{path}: shape mismatch for {name}: "
                                  f"checkpoint {tuple(tensors[name].shape)} vs model {tuple(ref.shape)}")
    system.model.load_state_dict({n: tensors[n] for n in state})
    opt = None
    if header["adam"] is not None:
        a = header["adam"]
        opt = Adam(system.model.parameters(), lr=a["lr"], betas=tuple(a["betas"]), eps=a["eps"])
        opt.step_count = a["step"]
        names = [n for n, _ in system.model.named_parameters()]
        opt.m = [tensors[f"adam.m.{n}"].clone() for n in names]
        opt.v = [tensors[f"adam.v.{n}"].clone() for n in names]
    tcfg = TrainingConfig(**header["training"]) if header["training"] else None
    system.model.eval()
    return system, opt, tcfg
