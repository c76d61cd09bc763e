"""Command-line entry point: ``cmam {synth,embed,train,aspects,predict,eval,gradcheck}``.

Exit codes: 0 ok, 2 configuration error, 3 I/O or input-format error,
4 numeric failure.  Settings resolve as command-line flag, then ``--config``
file (flat ``key=value`` lines, keys are the long flag names), then the
built-in default.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from . import embeddings as emb_mod
from . import evaluation, gradcheck, inference, model, objective, synthdata

log = logging.getLogger("cmam")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="FILE", help="key=value file; flags given on the command line win")
    p.add_argument("--seed", type=int, default=0, help="run seed (default: %(default)s)")
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads; 1 keeps every output deterministic (default: %(default)s)")
    p.add_argument("--log-level", default="INFO", help="logging level on stderr (default: %(default)s)")


def _corpus_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--stopwords", metavar="FILE", help="stop-word file, one token per line (default: built-in English list)")
    p.add_argument("--min-len", type=int, default=2, help="drop sentences shorter than this after filtering (default: %(default)s)")
    p.add_argument("--drop-numerals", action="store_true", help="remove purely numeric tokens")


def _model_inputs(p: argparse.ArgumentParser) -> None:
    p.add_argument("--vocab", required=True, metavar="FILE", help="vocabulary file written by 'embed'")
    p.add_argument("--embeddings", required=True, metavar="FILE", help="word2vec text vectors")


def _inference_opts(p: argparse.ArgumentParser) -> None:
    d = inference.InferenceConfig()
    p.add_argument("--q-as", type=float, default=d.q_as, help="aspect-probability quantile threshold (default: %(default)s)")
    p.add_argument("--n-as", type=int, default=d.n_as, help="max aspects per sentence (default: %(default)s)")
    p.add_argument("--q-at", type=float, default=d.q_at, help="attention quantile threshold for terms (default: %(default)s)")
    p.add_argument("--n-at", type=int, default=d.n_at, help="max term tokens per aspect (default: %(default)s)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cmam", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic corpus with planted topics and gold pairs")
    _common(p)
    p.add_argument("--scenario", default="restaurant-toy", choices=sorted(synthdata.SCENARIOS),
                   help="topic layout (default: %(default)s)")
    p.add_argument("--n-sentences", type=int, default=10_000, help="(default: %(default)s)")
    p.add_argument("--mix", type=_floats, default=(0.7, 0.3),
                   help="probabilities of 1, 2, ... topics per sentence (default: 0.7,0.3)")
    p.add_argument("--out-corpus", required=True, metavar="FILE")
    p.add_argument("--out-gold", required=True, metavar="FILE")
    p.add_argument("--out-topics", metavar="FILE", help="JSON of each topic's core tokens (for automatic mapping)")

    p = sub.add_parser("embed", help="build the vocabulary and train skip-gram word vectors")
    _common(p)
    _corpus_opts(p)
    p.add_argument("--corpus", required=True, metavar="FILE", help="UTF-8 text, one sentence per line")
    p.add_argument("--out", required=True, metavar="FILE", help="word2vec text output")
    p.add_argument("--vocab-out", required=True, metavar="FILE")
    p.add_argument("--max-vocab", type=int, default=9000, help="vocabulary size incl. 'unknown' (default: %(default)s)")
    p.add_argument("--min-count", type=int, default=2, help="(default: %(default)s)")
    p.add_argument("--dim", type=int, default=200, help="embedding size (default: %(default)s)")
    p.add_argument("--window", type=int, default=10, help="context window (default: %(default)s)")
    p.add_argument("--negatives", type=int, default=20, help="negative samples per pair (default: %(default)s)")
    p.add_argument("--epochs", type=int, default=5, help="(default: %(default)s)")
    p.add_argument("--lr", type=float, default=0.025, help="initial SGD rate, decays linearly (default: %(default)s)")

    p = sub.add_parser("train", help="train the attention model")
    _common(p)
    _corpus_opts(p)
    _model_inputs(p)
    p.add_argument("--corpus", required=True, metavar="FILE")
    p.add_argument("--out-dir", required=True, metavar="DIR", help="checkpoints epoch<i>.ckpt, model.ckpt and train_log.csv")
    p.add_argument("--aspects", type=int, default=30, help="number of aspects K (default: %(default)s)")
    p.add_argument("--kernels", type=_ints, default=model.DEFAULT_KERNEL_LENGTHS,
                   help="odd convolution lengths (default: 1,3,5)")
    p.add_argument("--kmeans-iters", type=int, default=100, help="(default: %(default)s)")
    d = objective.TrainConfig()
    p.add_argument("--epochs", type=int, default=d.epochs, help="(default: %(default)s)")
    p.add_argument("--batch-size", type=int, default=d.batch_size, help="(default: %(default)s)")
    p.add_argument("--lr", type=float, default=d.lr, help="Adam learning rate (default: %(default)s)")
    p.add_argument("--beta1", type=float, default=d.beta1, help="(default: %(default)s)")
    p.add_argument("--beta2", type=float, default=d.beta2, help="(default: %(default)s)")
    p.add_argument("--adam-eps", type=float, default=d.adam_eps, help="(default: %(default)s)")
    p.add_argument("--lambda", dest="lam", type=float, default=d.lam,
                   help="orthogonality loss weight (default: %(default)s; 0.0 is the lambda=0 ablation)")
    p.add_argument("--ortho-offset", type=float, default=d.ortho_offset_s, help="orthogonality offset s (default: %(default)s)")
    p.add_argument("--negatives", type=int, default=d.negatives_per_sample,
                   help="negative sentences per sample (default: %(default)s)")
    p.add_argument("--no-tlas", action="store_true", help="drop the TLAS term (the 'without TLAS' ablation)")
    p.add_argument("--tlas-scale", type=float, default=1.0, help="multiplier on the TLAS term (default: %(default)s)")

    p = sub.add_parser("aspects", help="list representative words per aspect as a mapping draft")
    _common(p)
    _model_inputs(p)
    p.add_argument("--checkpoint", required=True, metavar="FILE")
    p.add_argument("--top-n", type=int, default=10, help="(default: %(default)s)")
    p.add_argument("--out", metavar="FILE", help="mapping file to write (default: stdout)")
    p.add_argument("--topics", metavar="FILE",
                   help="topic JSON from 'synth'; label aspects automatically by core-token overlap")

    p = sub.add_parser("predict", help="extract (aspect, term) pairs from sentences")
    _common(p)
    _corpus_opts(p)
    _model_inputs(p)
    _inference_opts(p)
    p.add_argument("--checkpoint", required=True, metavar="FILE")
    p.add_argument("--input", required=True, metavar="FILE",
                   help="sentence-per-line text, or gold JSON-lines (its 'text' fields are used)")
    p.add_argument("--mapping", metavar="FILE", help="completed mapping file, fills the 'label' fields")
    p.add_argument("--out", required=True, metavar="FILE", help="prediction JSON-lines")

    p = sub.add_parser("eval", help="score predictions against gold pairs")
    _common(p)
    p.add_argument("--predictions", required=True, metavar="FILE")
    p.add_argument("--gold", required=True, metavar="FILE")
    p.add_argument("--mapping", required=True, metavar="FILE")
    p.add_argument("--stopwords", metavar="FILE", help="stop words applied to gold terms (default: built-in)")
    p.add_argument("--out", metavar="FILE", help="text report (default: stdout)")
    p.add_argument("--json-out", metavar="FILE", help="machine-readable report")

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    _common(p)
    p.add_argument("--instances", type=int, default=100, help="(default: %(default)s)")
    p.add_argument("--step", type=float, default=1e-4, help="central-difference step (default: %(default)s)")
    p.add_argument("--tol", type=float, default=1e-4, help="max relative error (default: %(default)s)")
    return parser


def _read_config(path: str) -> dict[str, str]:
    out = {}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    with fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, value = (x.strip() for x in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def parse_args(argv: list[str]) -> argparse.Namespace:
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    choices = parser._subparsers._group_actions[0].choices  # noqa: SLF001
    command = next((a for a in argv if a in choices), None)
    if not known.config or command is None or "-h" in argv or "--help" in argv:
        return parser.parse_args(argv)
    subparser = choices[command]
    actions = {a.dest: a for a in subparser._actions}  # noqa: SLF001
    aliases = {opt.lstrip("-").replace("-", "_"): a.dest for a in subparser._actions for opt in a.option_strings}  # noqa: SLF001
    defaults = {}
    for key, raw in _read_config(known.config).items():
        dest = aliases.get(key, key)
        action = actions.get(dest)
        if action is None or dest in ("config", "help"):
            raise ConfigError(f"unknown config key {key!r} for command {command!r}")
        if isinstance(action, argparse._StoreTrueAction):  # noqa: SLF001
            value = raw.lower() in ("1", "true", "yes", "on")
        else:
            try:
                value = action.type(raw) if action.type else raw
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise ConfigError(f"config key {key!r}: {exc}") from None
        defaults[dest] = value
    subparser.set_defaults(**defaults)
    # required flags may now come from the config file
    for action in subparser._actions:  # noqa: SLF001
        if action.dest in defaults:
            action.required = False
    return parser.parse_args(argv)


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _require_files(*paths) -> None:
    for p in paths:
        if p is not None and not Path(p).is_file():
            raise FileNotFoundError(f"input file not found: {p}")


def _require_parent(*paths) -> None:
    for p in paths:
        if p is not None and not Path(p).resolve().parent.is_dir():
            raise FileNotFoundError(f"output directory does not exist: {Path(p).parent}")


def _stopwords(args) -> frozenset[str]:
    return corpus_mod.load_stopwords(args.stopwords) if args.stopwords else corpus_mod.ENGLISH_STOPWORDS


def _load_model_inputs(args):
    vocab = corpus_mod.Vocabulary.load(args.vocab)
    E = emb_mod.load_embeddings(args.embeddings, vocab, seed=args.seed)
    return vocab, E


def _load_checkpoint(path, vocab):
    ckpt = model.load_checkpoint(path)
    if ckpt.vocab_hash and ckpt.vocab_hash != vocab.digest():
        raise ConfigError(f"{path} was trained with a different vocabulary")
    return ckpt.params


def _check(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> None:
    _require_parent(args.out_corpus, args.out_gold, args.out_topics)
    _check(args.n_sentences >= 1, "--n-sentences must be >= 1")
    scenario = synthdata.SCENARIOS[args.scenario](n_sentences=args.n_sentences, mix=args.mix)
    synthdata.write_scenario(scenario, args.seed, args.out_corpus, args.out_gold, args.out_topics)
    log.info("wrote %d sentences to %s", args.n_sentences, args.out_corpus)


def cmd_embed(args) -> None:
    _require_files(args.corpus, args.stopwords)
    _require_parent(args.out, args.vocab_out)
    _check(args.dim >= 1 and args.window >= 1 and args.negatives >= 1, "--dim, --window, --negatives must be >= 1")
    _check(args.max_vocab >= 1, "--max-vocab must be >= 1")
    stop = _stopwords(args)
    tokens = [t for t in corpus_mod.read_token_lines(args.corpus, stop, args.drop_numerals) if len(t) >= args.min_len]
    vocab = corpus_mod.build_vocabulary(tokens, args.max_vocab, args.min_count)
    log.info("vocabulary: %d entries, coverage %.1f%% of corpus tokens", vocab.size, 100 * vocab.coverage())
    sents = [corpus_mod.encode(t, vocab) for t in tokens]
    E = emb_mod.train_skipgram(sents, vocab, dim=args.dim, window=args.window, negatives=args.negatives,
                               epochs=args.epochs, lr=args.lr, seed=args.seed, fast=args.threads > 1)
    vocab.save(args.vocab_out)
    emb_mod.save_embeddings(E, vocab, args.out)


def cmd_train(args) -> None:
    _require_files(args.corpus, args.vocab, args.embeddings, args.stopwords)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _check(args.aspects >= 2, "--aspects must be >= 2")
    _check(all(k >= 1 and k % 2 == 1 for k in args.kernels), "--kernels must be positive odd lengths")
    try:
        cfg = objective.TrainConfig(
            epochs=args.epochs, batch_size=args.batch_size, lr=args.lr, beta1=args.beta1, beta2=args.beta2,
            adam_eps=args.adam_eps, lam=args.lam, ortho_offset_s=args.ortho_offset,
            negatives_per_sample=args.negatives, tlas_enabled=not args.no_tlas, tlas_scale=args.tlas_scale,
            seed=args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    vocab, E = _load_model_inputs(args)
    sents = list(corpus_mod.load_corpus(args.corpus, vocab, _stopwords(args), args.min_len,
                                        drop_numerals=args.drop_numerals))
    aem = emb_mod.init_aspects(E, args.aspects, seed=args.seed, max_iters=args.kmeans_iters)
    params = model.init_params(aem, args.kernels, np.random.default_rng(args.seed))
    objective.train(sents, E, params, cfg, checkpoint_dir=out_dir, log_path=out_dir / "train_log.csv",
                    vocab_hash=vocab.digest())
    model.save_checkpoint(out_dir / "model.ckpt", params, vocab.digest(), meta={"epoch": cfg.epochs - 1})


def cmd_aspects(args) -> None:
    _require_files(args.checkpoint, args.vocab, args.embeddings, args.topics)
    _require_parent(args.out)
    vocab, E = _load_model_inputs(args)
    params = _load_checkpoint(args.checkpoint, vocab)
    if args.topics:
        with open(args.topics, encoding="utf-8") as fh:
            topics = json.load(fh)
        mapping = evaluation.auto_mapping(params.aem, E, vocab, topics, args.top_n)
    else:
        mapping = evaluation.draft_mapping(params.aem, E, vocab, args.top_n)
    if args.out:
        mapping.save(args.out)
    else:
        for k in sorted(mapping.aspect_to_label):
            print(f"{k}\t{mapping.aspect_to_label[k]}\t{' '.join(mapping.words[k])}")


def _input_texts(path: str) -> list[str]:
    if path.endswith((".jsonl", ".json")):
        with open(path, encoding="utf-8") as fh:
            return [json.loads(line)["text"] for line in fh if line.strip()]
    return list(corpus_mod.iter_lines(path))


def cmd_predict(args) -> None:
    _require_files(args.checkpoint, args.vocab, args.embeddings, args.input, args.mapping, args.stopwords)
    _require_parent(args.out)
    try:
        icfg = inference.InferenceConfig(args.q_as, args.n_as, args.q_at, args.n_at)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    vocab, E = _load_model_inputs(args)
    params = _load_checkpoint(args.checkpoint, vocab)
    labels = None
    if args.mapping:
        mapping = evaluation.GoldMapping.load(args.mapping)
        mapping.validate(params.n_aspects)
        labels = mapping.aspect_to_label
    stop = _stopwords(args)
    skipped = 0
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        for text in _input_texts(args.input):
            tokens = corpus_mod.tokenize(text, stop, args.drop_numerals)
            if tokens:
                pred = inference.predict(corpus_mod.encode(tokens, vocab), E, params, icfg)
            else:
                skipped += 1
                pred = inference.Prediction([])
            fh.write(json.dumps(pred.to_json(text, labels), ensure_ascii=False) + "\n")
    if skipped:
        log.warning("%d sentences had no tokens after filtering; written with no aspects", skipped)


def cmd_eval(args) -> None:
    _require_files(args.predictions, args.gold, args.mapping, args.stopwords)
    _require_parent(args.out, args.json_out)
    mapping = evaluation.GoldMapping.load(args.mapping)
    gold = evaluation.load_gold(args.gold, _stopwords(args))
    preds = evaluation.align(evaluation.load_predictions(args.predictions), gold)
    aspect_scores = evaluation.score_aspects(preds, gold, mapping)
    pair_scores = evaluation.score_pairs(preds, gold, mapping)
    text = evaluation.format_report(aspect_scores, pair_scores)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if args.json_out:
        with open(args.json_out, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(evaluation.report_json(aspect_scores, pair_scores), fh, indent=1, sort_keys=True)
            fh.write("\n")


def cmd_gradcheck(args) -> int:
    _check(args.instances >= 1 and args.step > 0 and args.tol > 0, "--instances, --step, --tol must be positive")
    results = gradcheck.run_suite(args.instances, seed=args.seed, step=args.step)
    worst: dict[tuple[str, str], float] = {}
    for r in results:
        key = (r.component, r.tensor.rstrip("0123456789"))
        worst[key] = max(worst.get(key, 0.0), r.rel_error)
    failed = False
    for (comp, tensor), err in sorted(worst.items()):
        ok = err < args.tol
        failed |= not ok
        print(f"{'PASS' if ok else 'FAIL'}  {comp}  {tensor:<12} max rel err {err:.3e}")
    print(f"{args.instances} instances, tolerance {args.tol:g}: {'FAIL' if failed else 'PASS'}")
    return EXIT_NUMERIC if failed else EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "embed": cmd_embed,
    "train": cmd_train,
    "aspects": cmd_aspects,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
}


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = parse_args(argv)
    except ConfigError as exc:
        print(f"cmam: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # argparse usage errors and --help
        return int(exc.code or 0)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args) or EXIT_OK
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except FloatingPointError as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except (OSError, ValueError, KeyError) as exc:
        log.error("%s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
