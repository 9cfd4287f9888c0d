"""Trainable sequence machinery: shared context encoder, domain head, GRU decoders.

The encoder is a small pre-norm self-attention stack with learned positions;
its top-layer state at position 0 ([CLS]) is the context vector every head
reads. Gradients come from torch autograd; Adam and clipping live here.
"""
import math
from dataclasses import asdict, dataclass

import torch
from torch import nn
from torch.nn import functional as F

DECODERS = ("belief", "action", "response")


class LengthError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass
class EncoderConfig:
    vocab_size: int
    layers: int = 2
    hidden: int = 64
    heads: int = 2
    max_len: int = 512
    ffn: int = 0
    decoder_hidden: int = 0  # GRU width; 0 means same as hidden
    feed_context: bool = False  # also feed the context vector to every decoder step
    domain_ids: tuple = ()  # domain token ids; non-empty enables domain-span embeddings
    dropout: float = 0.0

    def __post_init__(self):
        for name in ("vocab_size", "layers", "hidden", "heads", "max_len"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.hidden % self.heads:
            raise ValueError(f"hidden size {self.hidden} not divisible by {self.heads} heads")
        self.domain_ids = tuple(self.domain_ids)
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.decoder_hidden < 0:
            raise ValueError("decoder_hidden must be non-negative")
        if self.decoder_hidden == 0:
            self.decoder_hidden = self.hidden
        if self.ffn <= 0:
            self.ffn = 4 * self.hidden

    def to_dict(self):
        return asdict(self)


def _uniform_(t, fan_in, gen):
    bound = 1.0 / math.sqrt(fan_in)
    with torch.no_grad():
        t.copy_(torch.rand(t.shape, generator=gen, dtype=t.dtype) * 2 * bound - bound)


class EncoderLayer(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        h = cfg.hidden
        self.heads = cfg.heads
        self.ln1 = nn.LayerNorm(h)
        self.qkv = nn.Linear(h, 3 * h)
        self.proj = nn.Linear(h, h)
        self.ln2 = nn.LayerNorm(h)
        self.ff1 = nn.Linear(h, cfg.ffn)
        self.ff2 = nn.Linear(cfg.ffn, h)
        self.drop = nn.Dropout(cfg.dropout)

    def attention(self, x, pad_mask):
        b, n, h = x.shape
        dh = h // self.heads
        q, k, v = self.qkv(x).view(b, n, 3, self.heads, dh).permute(2, 0, 3, 1, 4)
        scores = q @ k.transpose(-1, -2) / math.sqrt(dh)
        if pad_mask is not None:
            scores = scores.masked_fill(pad_mask[:, None, None, :], float("-inf"))
        ctx = scores.softmax(-1) @ v
        return self.proj(ctx.transpose(1, 2).reshape(b, n, h))

    def forward(self, x, pad_mask=None):
        x = x + self.drop(self.attention(self.ln1(x), pad_mask))
        return x + self.drop(self.ff2(F.gelu(self.ff1(self.ln2(x)))))


class ContextEncoder(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        self.embed = nn.Parameter(torch.empty(cfg.vocab_size, cfg.hidden))
        self.pos = nn.Parameter(torch.empty(cfg.max_len, cfg.hidden))
        if cfg.domain_ids:
            # span 0 is "before any domain token", span k+1 follows domain k
            self.span = nn.Parameter(torch.empty(len(cfg.domain_ids) + 1, cfg.hidden))
            self.register_buffer("_dom_ids", torch.tensor(cfg.domain_ids, dtype=torch.long), persistent=False)
        self.drop = nn.Dropout(cfg.dropout)
        self.layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.layers))
        self.ln = nn.LayerNorm(cfg.hidden)

    def forward(self, ids, pad_mask=None):
        n = ids.shape[1]
        if n > self.cfg.max_len:
            raise LengthError(f"context of {n} tokens exceeds max length {self.cfg.max_len}")
        x = self.embed[ids] + self.pos[:n]
        if self.cfg.domain_ids:
            x = x + self.span[self.domain_spans(ids)]
        x = self.drop(x)
        for layer in self.layers:
            x = layer(x, pad_mask)
        return self.ln(x[:, 0])


    def domain_spans(self, ids):
        """Index of the most recent domain token at or before each position (0 if none)."""
        hit = ids.unsqueeze(-1) == self._dom_ids
        which = torch.where(hit.any(-1), hit.float().argmax(-1) + 1, 0)
        pos = torch.arange(ids.shape[1]).expand_as(ids)
        last = torch.where(which > 0, pos, -1).cummax(1).values
        return torch.where(last >= 0, which.gather(1, last.clamp(min=0)), 0)


class GruDecoder(nn.Module):
    """One-layer GRU whose initial state is a learned projection of the context.

    With ``feed_context`` the context vector is also concatenated to each
    step's input embedding.
    """

    def __init__(self, vocab_size, hidden, feed_context=False, width=None, dropout=0.0):
        super().__init__()
        width = width or hidden
        self.feed_context = feed_context
        self.drop = nn.Dropout(dropout)
        self.embed = nn.Parameter(torch.empty(vocab_size, hidden))
        self.init = nn.Linear(hidden, width)
        self.gru = nn.GRU(2 * hidden if feed_context else hidden, width, num_layers=1, batch_first=True)
        self.out = nn.Linear(width, vocab_size)

    def initial_hidden(self, o):
        return torch.tanh(self.init(o))

    def _inputs(self, o, ids):
        x = self.drop(self.embed[ids])
        if self.feed_context:
            x = torch.cat([x, o.unsqueeze(1).expand(-1, x.shape[1], -1)], dim=-1)
        return x

    def forward(self, o, inputs):
        """Teacher-forced logits (B, T, V) for input token ids (B, T)."""
        h0 = self.initial_hidden(o).unsqueeze(0)
        out, _ = self.gru(self._inputs(o, inputs), h0.contiguous())
        return self.out(out)

    def step(self, token, h, o=None):
        out, h = self.gru(self._inputs(o, token.unsqueeze(1)), h)
        return self.out(out[:, 0]), h


class DotsModel(nn.Module):
    """Shared encoder + domain classifier + belief/action/response decoders."""

    def __init__(self, cfg, n_domains, *, pad_id=0, bos_id=2, eos_id=3, seed=0):
        super().__init__()
        self.cfg = cfg
        self.n_domains = n_domains
        self.pad_id, self.bos_id, self.eos_id = pad_id, bos_id, eos_id
        self.encoder = ContextEncoder(cfg)
        self.domain_head = nn.Linear(cfg.hidden, n_domains)
        self.decoders = nn.ModuleDict({k: GruDecoder(cfg.vocab_size, cfg.hidden, cfg.feed_context, cfg.decoder_hidden, cfg.dropout) for k in DECODERS})
        self.reset_parameters(seed)

    def reset_parameters(self, seed):
        gen = torch.Generator().manual_seed(seed)
        for name, p in self.named_parameters():
            leaf = name.rsplit(".", 1)[-1]
            if ".ln" in name or name.startswith("encoder.ln"):
                with torch.no_grad():
                    p.fill_(1.0 if leaf == "weight" else 0.0)
            elif "bias" in leaf:
                with torch.no_grad():
                    p.zero_()
            elif p.dim() == 2 and leaf in ("embed", "pos", "span"):
                _uniform_(p, p.shape[1], gen)
            else:
                _uniform_(p, p.shape[-1], gen)

    def pad(self, seqs, device=None):
        n = max(len(s) for s in seqs)
        ids = torch.full((len(seqs), n), self.pad_id, dtype=torch.long)
        for i, s in enumerate(seqs):
            ids[i, : len(s)] = torch.as_tensor(list(s), dtype=torch.long)
        return ids, ids == self.pad_id

    def encode(self, seqs):
        ids, mask = self.pad(seqs)
        return self.encoder(ids, mask if mask.any() else None)

    def domain_logits(self, o):
        return self.domain_head(o)

    def teacher_forced(self, which, o, targets):
        """Logits and padded (B, T) gold ids, where targets exclude EOS."""
        seqs_in = [[self.bos_id, *t] for t in targets]
        seqs_out = [[*t, self.eos_id] for t in targets]
        inputs, _ = self.pad(seqs_in)
        gold, _ = self.pad(seqs_out)
        return self.decoders[which](o, inputs), gold

    @torch.no_grad()
    def greedy(self, which, o, max_len):
        """Greedy decode of one context vector (1, H). Returns ids and step distributions."""
        if max_len <= 0:
            raise ValueError("max_len must be positive")
        dec = self.decoders[which]
        h = dec.initial_hidden(o).unsqueeze(0)
        tok = torch.full((o.shape[0],), self.bos_id, dtype=torch.long)
        out, dists = [], []
        for _ in range(max_len):
            logits, h = dec.step(tok, h, o)
            p = logits.softmax(-1)
            dists.append(p[0])
            tok = p.argmax(-1)
            if tok.item() == self.eos_id:
                break
            out.append(tok.item())
        return out, dists


# functional surface


def encode(model, context):
    """CLS vector (H,) for one Context or token sequence."""
    toks = getattr(context, "tokens", context)
    if len(toks) > model.cfg.max_len:
        raise LengthError(f"context of {len(toks)} tokens exceeds max length {model.cfg.max_len}")
    return model.encode([toks])[0]


def classify_domains(model, o):
    return torch.sigmoid(model.domain_logits(o))


def decode(model, which, init, target=None, max_len=None):
    """Teacher-forced (``target`` given) or greedy decoding from one context vector.

    Returns (token ids, per-step distributions). Teacher-forced distributions
    align with ``target`` positions (EOS step excluded).
    """
    o = init.reshape(1, -1)
    if target is not None:
        if not len(target):
            raise ValueError("teacher-forced target must be non-empty")
        logits, _ = model.teacher_forced(which, o, [list(target)])
        dists = logits[0, : len(target)].softmax(-1)
        return list(target), list(dists)
    if max_len is None or max_len <= 0:
        raise ValueError("greedy decoding needs a positive max_len")
    return model.greedy(which, o, max_len)


def backward(model, loss):
    """Populate and return {parameter name: gradient}."""
    if not torch.isfinite(loss):
        raise TrainingError(f"non-finite loss {loss.item()}")
    model.zero_grad(set_to_none=False)
    loss.backward()
    return {n: p.grad for n, p in model.named_parameters()}


def clip_grad_norm(params, max_norm):
    grads = [p.grad for p in params if p.grad is not None]
    total = math.sqrt(sum(float((g.double() ** 2).sum()) for g in grads))
    if max_norm and total > max_norm:
        scale = max_norm / (total + 1e-6)
        for g in grads:
            g.mul_(scale)
    return total


class Adam:
    """Bias-corrected Adam over a module's parameters."""

    def __init__(self, params, lr=3e-5, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = [torch.zeros_like(p) for p in self.params]
        self.v = [torch.zeros_like(p) for p in self.params]

    @torch.no_grad()
    def step(self):
        self.step_count += 1
        t = self.step_count
        c1 = 1 - self.beta1 ** t
        c2 = 1 - self.beta2 ** t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m.mul_(self.beta1).add_(g, alpha=1 - self.beta1)
            v.mul_(self.beta2).addcmul_(g, g, value=1 - self.beta2)
            p.sub_(self.lr * (m / c1) / ((v / c2).sqrt() + self.eps))

    def state(self):
        return {"step": self.step_count, "m": self.m, "v": self.v}


def adam_step(model, optimizer, max_norm=None):
    """Optionally clip, then apply one Adam update; returns the pre-clip grad norm."""
    norm = clip_grad_norm(list(model.parameters()), max_norm) if max_norm else None
    optimizer.step()
    return norm
