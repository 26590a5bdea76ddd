"""Command-line entry point.

Every subcommand accepts ``--config FILE``: UTF-8 ``key = value`` lines (``#``
starts a comment). Keys use the long-option names with underscores; flags given
on the command line win over the file.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .canvas import ALIGN_SIDES
from .corpus import (
    TASK_KINDS,
    CorpusError,
    SyntheticTaskSpec,
    Vocabulary,
    build_vocabulary,
    iter_tokenized,
    load_parallel,
)
from .decoder import DecodeConfig, decode, render_trace
from .evaluation import EvaluationError, adherence, corpus_bleu, exact_match, length_binned_bleu
from .harness import (
    EOS_PENALTY_GRID,
    MODES,
    TrainConfig,
    TrainingDiverged,
    sweep,
    synthetic_text,
    train,
)
from .model import ModelConfig, ModelError, load_checkpoint
from .orders import ORDER_KINDS, OrderError, OrderSpec

log = logging.getLogger(__name__)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def read_config(path: str) -> dict[str, str]:
    """Parse ``key = value`` lines; blank lines and ``#`` comments are skipped."""
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _order_kind(value: str) -> str:
    if value not in ORDER_KINDS:
        raise argparse.ArgumentTypeError(
            f"unknown order kind {value!r}; valid kinds: {', '.join(ORDER_KINDS)}")
    return value


def _add_model_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--d-model", type=int, default=64)
    g.add_argument("--n-layers", type=int, default=2)
    g.add_argument("--n-heads", type=int, default=2)
    g.add_argument("--d-ffn", type=int, default=128)
    g.add_argument("--dropout", type=float, default=0.1)
    g.add_argument("--max-len", type=int, default=64, help="longest sequence the model accepts")


def _add_decode_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=MODES, default="serial")
    p.add_argument("--eos-penalty", type=float, default=0.0)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--decode-max-len", type=int, help="output length cap (default 2*|source|+16)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="insertion-order", description="Insertion Transformer with soft order rewards.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name: str, help: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="key = value file; flags override it")
        return p

    p = command("gen-data", "write a synthetic parallel corpus")
    p.add_argument("--task", choices=TASK_KINDS, default="sort")
    p.add_argument("--vocab-size", type=int, default=50)
    p.add_argument("--min-len", type=int, default=3)
    p.add_argument("--max-len", type=int, default=10)
    p.add_argument("--n", type=int, default=1000, help="number of examples")
    p.add_argument("--seed", type=int, default=0, help="symbol-table seed")
    p.add_argument("--sample-seed", type=int, help="seed for the example draws (default: --seed)")
    p.add_argument("--src", required=True, help="output source file")
    p.add_argument("--tgt", required=True, help="output target file")

    p = command("build-vocab", "count tokens into a vocabulary file")
    p.add_argument("--input", nargs="+", required=True, help="whitespace-tokenized text files")
    p.add_argument("--max-size", type=int, default=32000)
    p.add_argument("--vocab", required=True, help="output path (token<TAB>frequency lines)")

    p = command("train", "train one model for one (order, tau)")
    p.add_argument("--order", type=_order_kind, default="uniform")
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=20000)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--warmup", type=int, help="warmup steps (default min(1000, steps))")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eval-interval", type=int, default=1000)
    p.add_argument("--eval-size", type=int, default=100)
    p.add_argument("--align-side", choices=ALIGN_SIDES, default="left",
                   help="greedy re-alignment of roll-ins with repeated tokens")
    _add_model_args(p)
    p.add_argument("--vocab", required=True)
    p.add_argument("--train-src", required=True)
    p.add_argument("--train-tgt", required=True)
    p.add_argument("--dev-src")
    p.add_argument("--dev-tgt")
    p.add_argument("--checkpoint", required=True, help="output checkpoint path")
    p.add_argument("--log", help="metrics log path (step loss dev_bleu adherence)")

    p = command("decode", "decode a source file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--src", required=True)
    p.add_argument("--out", required=True, help="hypotheses, one per line")
    p.add_argument("--trace", help="rendered decode traces, blank line between sentences")
    _add_decode_args(p)

    p = command("evaluate", "score hypotheses or a model")
    p.add_argument("--metric", choices=("bleu", "binned", "exact", "adherence"), default="bleu")
    p.add_argument("--hyp", help="hypotheses file (bleu, binned, exact)")
    p.add_argument("--ref", required=True)
    p.add_argument("--src", help="source file (binned, adherence)")
    p.add_argument("--checkpoint", help="model (adherence)")
    p.add_argument("--vocab", help="vocabulary (adherence)")
    p.add_argument("--order", type=_order_kind, default="l2r")
    p.add_argument("--forced", action="store_true", help="adherence along oracle-valid roll-ins")
    _add_decode_args(p)

    p = command("sweep", "decode dev data over the temperature x EOS-penalty grid")
    p.add_argument("--checkpoints", nargs="+", required=True, metavar="TAU=PATH")
    p.add_argument("--vocab", required=True)
    p.add_argument("--dev-src", required=True)
    p.add_argument("--dev-tgt", required=True)
    p.add_argument("--order", type=_order_kind, default="uniform")
    p.add_argument("--penalties", type=float, nargs="+", default=list(EOS_PENALTY_GRID))
    p.add_argument("--modes", nargs="+", choices=MODES, default=list(MODES))
    p.add_argument("--out", help="write the table here instead of stdout")

    p = command("trace", "print the decode path for one sentence")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--source", required=True, help="whitespace-tokenized source sentence")
    _add_decode_args(p)
    return parser


def _config_path(argv: Sequence[str]) -> Optional[str]:
    for i, tok in enumerate(argv):
        if tok == "--config":
            if i + 1 >= len(argv):
                raise UsageError("--config needs a file")
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def _config_flags(sub: argparse.ArgumentParser, values: dict[str, str], path: str,
                  known: set[str]) -> list[str]:
    """Translate config entries into flags placed before the real ones, so flags win.

    Keys that belong to another subcommand are skipped, so one experiment file can
    drive train, decode and sweep alike.
    """
    actions = {a.dest: a for a in sub._actions if a.option_strings}
    out: list[str] = []
    for key, value in values.items():
        if key in ("help", "config") or key not in known:
            raise UsageError(f"{path}: unknown key {key!r}")
        action = actions.get(key)
        if action is None:
            continue
        flag = action.option_strings[-1]
        if isinstance(action, argparse._StoreTrueAction):
            if value.lower() in ("1", "true", "yes"):
                out.append(flag)
            elif value.lower() not in ("0", "false", "no"):
                raise UsageError(f"{path}: {key} must be true or false")
        elif action.nargs in ("+", "*"):
            out += [flag, *value.split()]
        else:
            out.append(f"{flag}={value}")
    return out


def parse(argv: Sequence[str]) -> argparse.Namespace:
    parser = build_parser()
    argv = list(argv)
    path = _config_path(argv)
    if path is not None:
        commands = parser._subparsers._group_actions[0].choices
        at = next((i for i, tok in enumerate(argv) if tok in commands), None)
        if at is None:
            raise UsageError("--config needs a subcommand")
        known = {a.dest for sub in commands.values() for a in sub._actions if a.option_strings}
        flags = _config_flags(commands[argv[at]], read_config(path), path, known)
        argv = argv[: at + 1] + flags + argv[at + 1:]
    return parser.parse_args(argv)


def _decode_config(args) -> DecodeConfig:
    try:
        return DecodeConfig(args.mode, args.eos_penalty, args.max_steps, args.decode_max_len)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _read_vocab(path: str) -> Vocabulary:
    try:
        return Vocabulary.load(path)
    except OSError as exc:
        raise CorpusError(f"cannot read vocabulary {path}: {exc}") from exc


def _lines(path: str) -> list[list[str]]:
    return list(iter_tokenized(path))


def cmd_gen_data(args) -> None:
    spec = SyntheticTaskSpec(args.task, args.vocab_size, args.min_len, args.max_len, args.seed)
    text = synthetic_text(spec, args.n, args.sample_seed)
    Path(args.src).write_text("".join(" ".join(s) + "\n" for s, _ in text), encoding="utf-8")
    Path(args.tgt).write_text("".join(" ".join(t) + "\n" for _, t in text), encoding="utf-8")


def cmd_build_vocab(args) -> None:
    corpus = [sent for path in args.input for sent in iter_tokenized(path)]
    build_vocabulary(corpus, args.max_size).save(args.vocab)


def cmd_train(args) -> None:
    vocab = _read_vocab(args.vocab)
    data = load_parallel(args.train_src, args.train_tgt, vocab)
    dev = None
    if args.dev_src or args.dev_tgt:
        if not (args.dev_src and args.dev_tgt):
            raise UsageError("--dev-src and --dev-tgt go together")
        dev = load_parallel(args.dev_src, args.dev_tgt, vocab)
    try:
        warmup = min(1000, args.steps) if args.warmup is None else args.warmup
        cfg = TrainConfig(order=args.order, tau=args.tau, batch_size=args.batch_size, steps=args.steps,
                          lr=args.lr, warmup=warmup, seed=args.seed, eval_interval=args.eval_interval,
                          eval_size=args.eval_size, checkpoint=args.checkpoint, align_side=args.align_side)
        model_cfg = ModelConfig(vocab_size=len(vocab), d_model=args.d_model, n_layers=args.n_layers,
                                n_heads=args.n_heads, d_ffn=args.d_ffn, max_len=args.max_len,
                                dropout_rate=args.dropout, seed=args.seed)
    except (ValueError, ModelError) as exc:
        raise UsageError(str(exc)) from exc
    log_file = open(args.log, "w", encoding="utf-8") if args.log else None
    try:
        def on_log(line: str) -> None:
            print(line, flush=True)
            if log_file:
                log_file.write(line + "\n")
                log_file.flush()

        train(cfg, model_cfg, data, vocab, dev, on_log=on_log)
    finally:
        if log_file:
            log_file.close()


def cmd_decode(args) -> None:
    cfg = _decode_config(args)
    vocab = _read_vocab(args.vocab)
    model = load_checkpoint(args.checkpoint)
    hyps, traces = [], []
    for sent in _lines(args.src):
        out, trace = decode(model, vocab.encode(sent), cfg)
        hyps.append(" ".join(vocab.decode(out)) + "\n")
        traces.append(render_trace(trace, vocab))
    Path(args.out).write_text("".join(hyps), encoding="utf-8")
    if args.trace:
        Path(args.trace).write_text("\n".join(traces), encoding="utf-8")


def cmd_evaluate(args) -> None:
    if args.metric == "adherence":
        if not (args.checkpoint and args.vocab and args.src):
            raise UsageError("adherence needs --checkpoint, --vocab and --src")
        vocab = _read_vocab(args.vocab)
        model = load_checkpoint(args.checkpoint)
        examples = load_parallel(args.src, args.ref, vocab)
        report = adherence(model, OrderSpec(args.order, vocab), examples, _decode_config(args), args.forced)
        print(report.as_record())
        return
    if not args.hyp:
        raise UsageError(f"{args.metric} needs --hyp")
    if args.metric == "binned" and not args.src:
        raise UsageError("binned needs --src")
    hyps, refs = _lines(args.hyp), _lines(args.ref)
    if args.metric == "bleu":
        print(corpus_bleu(hyps, refs).as_record())
    elif args.metric == "exact":
        print(f"exact_match={exact_match(hyps, refs):.4f}")
    else:
        for b in length_binned_bleu(hyps, refs, _lines(args.src)):
            print(f"bin={b.low}-{b.high} count={b.count} mean_bleu={b.mean_bleu:.4f}")


def cmd_sweep(args) -> None:
    checkpoints = {}
    for item in args.checkpoints:
        tau, sep, path = item.partition("=")
        try:
            checkpoints[float(tau)] = path
        except ValueError:
            sep = ""
        if not sep or not path:
            raise UsageError(f"expected TAU=PATH, got {item!r}")
    vocab = _read_vocab(args.vocab)
    dev = load_parallel(args.dev_src, args.dev_tgt, vocab)
    result = sweep(checkpoints, dev, OrderSpec(args.order, vocab), sorted(checkpoints), args.penalties, args.modes)
    text = result.render()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_trace(args) -> None:
    vocab = _read_vocab(args.vocab)
    model = load_checkpoint(args.checkpoint)
    _, trace = decode(model, vocab.encode(args.source.split()), _decode_config(args))
    sys.stdout.write(render_trace(trace, vocab))


COMMANDS = {
    "gen-data": cmd_gen_data,
    "build-vocab": cmd_build_vocab,
    "train": cmd_train,
    "decode": cmd_decode,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "trace": cmd_trace,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CorpusError, ModelError, OrderError, EvaluationError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
