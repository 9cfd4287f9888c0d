"""Command-line entry point: gen-corpus, train, eval, profile, chat.

Exit codes: 0 success, 1 runtime failure, 2 usage error (bad flags or
missing input files).
"""
import argparse
import json
import logging
import os
import sys
from pathlib import Path

DATA = Path(__file__).parent / "data"
DEFAULT_SEED = 0

log = logging.getLogger("dots")


class UsageError(Exception):
    pass


def _seed(args):
    if args.seed is not None:
        return args.seed
    env = os.environ.get("DOTS_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"DOTS_SEED must be an integer, got {env!r}")
    return DEFAULT_SEED


def _existing(path, what):
    if path is None:
        raise UsageError(f"--{what} is required")
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} file not found: {p}")
    return p


def _out_dir(args):
    if args.out is None:
        raise UsageError("--out is required")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resources(args):
    from .database import load_database
    from .ontology import load_ontology
    onto = load_ontology(_existing(args.ontology or DATA / "ontology.json", "ontology"))
    db = load_database(_existing(args.db or DATA / "db.json", "db"), onto)
    return onto, db


def _dump(system, res, stream):
    vocab = system.codec.vocab
    for kind, ctx in res.contexts.items():
        print(f"  C[{kind}] ({len(ctx)} tokens): " + " ".join(vocab.token(t) for t in ctx.tokens), file=stream)


def cmd_gen_corpus(args):
    from .corpus import generate_synthetic, save_corpus
    onto, db = _resources(args)
    out = _out_dir(args)
    splits = generate_synthetic(onto, db, args.n, _seed(args))
    save_corpus(splits, out / "corpus.json")
    print(f"wrote {len(splits.train)}/{len(splits.validation)}/{len(splits.test)} dialogues to {out / 'corpus.json'}")
    return 0


def _training_config(args):
    from .training import TrainingConfig
    overrides = {"lr": args.lr, "batch_size": args.batch, "max_epochs": args.epochs,
                 "patience": args.patience, "min_epochs": args.min_epochs, "seed": _seed(args)}
    if args.config:
        return TrainingConfig.from_file(_existing(args.config, "config"), **overrides)
    return TrainingConfig(**{k: v for k, v in overrides.items() if v is not None})


def cmd_train(args):
    import torch
    from .corpus import parse_corpus
    from .training import build_system, save_checkpoint, train
    torch.set_num_threads(1)
    onto, db = _resources(args)
    splits = parse_corpus(_existing(args.corpus, "corpus"), onto)
    cfg = _training_config(args)
    out = _out_dir(args)
    enc = {"hidden": args.hidden, "layers": args.layers, "heads": args.heads,
           "decoder_hidden": args.decoder_hidden, "feed_context": args.feed_context,
           "domain_spans": args.domain_spans, "dropout": args.dropout}
    system = build_system(onto, splits.all(), {k: v for k, v in enc.items() if v}, seed=cfg.seed,
                          ablate_domain_state=args.ablate_domain_state)
    _, tlog = train(system, db, splits, cfg)
    save_checkpoint(out / "checkpoint.bin", system, getattr(system, "optimizer", None), cfg)
    (out / "training_log.csv").write_text(tlog.to_csv())
    system.codec.vocab.save(out / "vocab.txt")
    print(f"best epoch {tlog.best_epoch}; checkpoint at {out / 'checkpoint.bin'}")
    return 0


def cmd_eval(args):
    from .corpus import parse_corpus
    from .evaluation import evaluate, evaluate_gold
    onto, db = _resources(args)
    splits = parse_corpus(_existing(args.corpus, "corpus"), onto)
    dialogues = getattr(splits, args.split)
    out = _out_dir(args)
    if args.gold:
        report = evaluate_gold(dialogues, db)
    else:
        import torch
        from .training import load_checkpoint
        torch.set_num_threads(1)
        system, _, _ = load_checkpoint(_existing(args.checkpoint, "checkpoint"))
        report = evaluate(system, db, dialogues, mode="oracle" if args.mode == "oracle" else "e2e")
        if args.dump_context and dialogues:
            from .pipeline import run_dialogue
            for res in run_dialogue(system, db, [t.user for t in dialogues[0].turns]):
                _dump(system, res, sys.stdout)
    (out / "eval.json").write_text(report.to_json(per_dialogue=args.per_dialogue))
    (out / "eval.csv").write_text(report.to_csv())
    print(f"inform {report.inform:.2f}  success {report.success:.2f}  bleu {report.bleu:.2f}")
    return 0


def cmd_profile(args):
    from .corpus import corpus_words, parse_corpus
    from .ontology import build_vocabulary
    from .profiler import MODES, profile, report
    from .state import StateCodec
    onto, db = _resources(args)
    splits = parse_corpus(_existing(args.corpus, "corpus"), onto)
    dialogues = splits.all()
    codec = StateCodec(onto, build_vocabulary(onto, onto.words() | corpus_words(dialogues)))
    out = _out_dir(args)
    n = report([profile(dialogues, codec, db, m) for m in MODES], out / "profile.csv")
    print(f"wrote {n} rows to {out / 'profile.csv'}")
    return 0


def cmd_chat(args, stdin=None, stdout=None):
    import torch
    from .pipeline import TurnError, initial_state, run_turn
    from .training import load_checkpoint
    stdin, stdout = stdin or sys.stdin, stdout or sys.stdout
    torch.set_num_threads(1)
    _, db = _resources(args)
    system, _, _ = load_checkpoint(_existing(args.checkpoint, "checkpoint"))
    s = initial_state(system.ontology)
    for line in stdin:
        text = line.strip()
        if not text:
            continue
        if text == "/quit":
            break
        if text == "/reset":
            s = initial_state(system.ontology)
            print("(session reset)", file=stdout)
            continue
        try:
            res, s = run_turn(system, db, s, system.codec.utterance(text))
        except TurnError as e:
            print(f"warning: {e}; state kept", file=stdout)
            if args.dump_context and e.partial is not None:
                _dump(system, e.partial, stdout)
            continue
        if res.repaired:
            print("warning: repaired decoder output: "
                  + "; ".join(r for rs in res.repairs.values() for r in rs), file=stdout)
        if args.verbose:
            d = " ".join(f"{k}={'ON' if v else 'OFF'}" for k, v in res.domain_state.active.items())
            b = ", ".join(f"{k[0]}-{k[1]}={v}" for k, v in res.belief.filled().items()) or "(empty)"
            dbr = ", ".join(f"{k}:{v}" for k, v in res.db.counts.items()) or "(none)"
            acts = ", ".join(f"{dd}-{a}-{sl or 'none'}" for dd, a, sl in res.action.acts) or "(none)"
            print(f"D: {d}\nB: {b}\nDB: {dbr}\nA: {acts}", file=stdout)
        if args.dump_context:
            _dump(system, res, stdout)
        print(f"system: {res.response_lex}", file=stdout)
    return 0


COMMANDS = {
    "gen-corpus": cmd_gen_corpus,
    "train": cmd_train,
    "eval": cmd_eval,
    "profile": cmd_profile,
    "chat": cmd_chat,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--ontology", help="ontology JSON (default: packaged toy ontology)")
    common.add_argument("--db", help="database JSON (default: packaged toy database)")
    common.add_argument("--corpus", help="corpus JSON")
    common.add_argument("--checkpoint", help="model checkpoint")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="random seed (fallback: $DOTS_SEED, then 0)")
    common.add_argument("--verbose", action="store_true")
    common.add_argument("--dump-context", action="store_true", help="print encoder input contexts")

    p = argparse.ArgumentParser(prog="dots", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    g = sub.add_parser("gen-corpus", parents=[common], help="generate a synthetic corpus")
    g.add_argument("--n", type=int, default=300, help="number of dialogues")
    t = sub.add_parser("train", parents=[common], help="train a model")
    t.add_argument("--config", help="training config JSON; flags override it")
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch", type=int)
    t.add_argument("--patience", type=int)
    t.add_argument("--min-epochs", type=int, help="no early stop before this epoch")
    t.add_argument("--hidden", type=int)
    t.add_argument("--layers", type=int)
    t.add_argument("--heads", type=int)
    t.add_argument("--decoder-hidden", type=int, help="GRU width (default: --hidden)")
    t.add_argument("--feed-context", action="store_true", help="feed the CLS vector to every decoder step")
    t.add_argument("--domain-spans", action="store_true", help="add domain-span embeddings to the encoder")
    t.add_argument("--dropout", type=float)
    t.add_argument("--ablate-domain-state", action="store_true",
                   help="replace the domain-state context segment with a constant block")
    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    e.add_argument("--mode", choices=["e2e", "oracle"], default="e2e")
    e.add_argument("--split", choices=["train", "validation", "test"], default="test")
    e.add_argument("--per-dialogue", action="store_true", help="include per-dialogue verdicts")
    e.add_argument("--gold", action="store_true", help="score gold annotations instead of a model")
    sub.add_parser("profile", parents=[common], help="context-length profile")
    sub.add_parser("chat", parents=[common], help="interactive session")
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"dots {args.command}: usage error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - categorized exit code
        print(f"dots {args.command}: error: {type(e).__name__}: {e}", file=sys.stderr)
        if args.verbose:
            raise
        return 1


if __name__ == "__main__":
    sys.exit(main())
