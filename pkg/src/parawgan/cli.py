"""Command-line entry point: preprocess, pretrain, train, generate, evaluate.

Exit codes: 0 success, 1 usage error (bad flags, missing input files),
2 runtime failure. Every run prints a provenance header (config hash,
seed, checkpoint id) on its primary output; '#' marks header lines.
"""

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys

import torch

from .corpus import (NEGATIVE, POSITIVE, Vocabulary, build_vocabulary,
                     decode_sentence, encode_sentence, load_caption_groups,
                     load_pair_corpus, pair_captions, tokenize)
from .embeddings import load_pretrained
from .metrics import evaluate_set, format_report, load_synonym_table
from .seqnets import greedy_decode, sample_pattern, transcode
from .trainer import (METRIC_COLUMNS, adversarial_loop, init_state,
                      load_checkpoint, load_config, pretrain_autoencoder,
                      pretrain_transcoder, save_checkpoint)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    parser = _Parser(prog="parawgan",
                     description="Paraphrase generation by adversarial sequence training.")
    sub = parser.add_subparsers(dest="verb", metavar="verb", required=True)

    p = sub.add_parser("preprocess", help="build a vocabulary and a normalized pair file")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--pairs", help="TSV input: sentence1<TAB>sentence2<TAB>label(1|0)")
    source.add_argument("--captions", help="TSV input: group_id<TAB>caption")
    p.add_argument("--out-pairs", required=True, help="normalized pair TSV to write")
    p.add_argument("--out-vocab", required=True, help="vocabulary file to write")
    p.add_argument("--min-freq", type=int, default=1)
    p.add_argument("--max-size", type=int, default=20000)
    p.add_argument("--max-len", type=int, default=20)
    p.add_argument("--n-pos", type=int, default=0, help="positive pairs to draw (captions mode)")
    p.add_argument("--n-neg", type=int, default=0, help="negative pairs to draw (captions mode)")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("pretrain", help="MLE-pretrain the auto-encoder and transcoder")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="checkpoint path (default <checkpoint_dir>/pretrained.ckpt)")

    p = sub.add_parser("train", help="adversarial training, optionally from a checkpoint")
    p.add_argument("--config", help="training config (required unless --checkpoint)")
    p.add_argument("--checkpoint", help="start from this checkpoint, skipping pretraining")

    p = sub.add_parser("generate", help="paraphrase standard input, one sentence per line")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--samples", type=int, default=1, help="paraphrases per input line")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("evaluate", help="score a model on a test pair file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test", required=True, help="TSV pair file; positive pairs are scored")
    p.add_argument("--samples", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--synonyms", help="optional synonym table for METEOR-lite")
    return parser


def _check_files(args):
    for name in ("config", "checkpoint", "pairs", "captions", "test", "synonyms"):
        path = getattr(args, name, None)
        if path and not os.path.isfile(path):
            raise UsageError(f"{name} file not found: {path}")


def _require_file(path, what):
    if not path:
        raise UsageError(f"no {what} path configured")
    if not os.path.isfile(path):
        raise UsageError(f"{what} file not found: {path}")


def _file_digest(path):
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()[:12]


def _provenance(config_path=None, config=None, seed=None, checkpoint=None):
    parts = []
    if config_path:
        parts.append(f"config={_file_digest(config_path)}")
    elif config is not None:
        blob = json.dumps(dataclasses.asdict(config), sort_keys=True).encode("utf-8")
        parts.append(f"config={hashlib.sha256(blob).hexdigest()[:12]}")
    if seed is not None:
        parts.append(f"seed={seed}")
    if checkpoint:
        parts.append(f"checkpoint={os.path.basename(checkpoint)}:{_file_digest(checkpoint)}")
    return "# " + " ".join(parts)


def _label_tag(label):
    return "1" if label == POSITIVE else "0"


def _cmd_preprocess(args):
    if args.max_len < 1:
        raise UsageError("--max-len must be >= 1")
    dropped = 0
    if args.captions:
        groups = load_caption_groups(args.captions)
        corpus = pair_captions(groups, args.n_pos, args.n_neg, args.seed,
                               vocab=None, max_len=args.max_len)
        rows = [(list(p.x), list(p.y), p.label) for p in corpus.pairs]
    else:
        rows = []
        with open(args.pairs, encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                cols = line.split("\t")
                if len(cols) != 3:
                    raise ValueError(f"{args.pairs}:{lineno}: expected 3 tab-separated columns, got {len(cols)}")
                raw = cols[2].strip()
                if raw not in ("0", "1"):
                    raise ValueError(f"{args.pairs}:{lineno}: label must be 0 or 1, got {raw!r}")
                toks1, toks2 = tokenize(cols[0]), tokenize(cols[1])
                if len(toks1) > args.max_len or len(toks2) > args.max_len:
                    dropped += 1
                    continue
                rows.append((toks1, toks2, POSITIVE if raw == "1" else NEGATIVE))
    sentences = [r[0] for r in rows] + [r[1] for r in rows]
    vocab = build_vocabulary(sentences, min_freq=args.min_freq, max_size=args.max_size)
    vocab.save(args.out_vocab)
    with open(args.out_pairs, "w", encoding="utf-8") as f:
        for toks1, toks2, label in rows:
            f.write(f"{' '.join(toks1)}\t{' '.join(toks2)}\t{_label_tag(label)}\n")
    n_pos = sum(1 for r in rows if r[2] == POSITIVE)
    print(_provenance(seed=args.seed))
    print(f"pairs written: {len(rows)} ({n_pos} positive, {len(rows) - n_pos} negative, "
          f"{dropped} dropped over --max-len) -> {args.out_pairs}")
    print(f"vocabulary: {len(vocab)} tokens -> {args.out_vocab}")
    return 0


def _load_training_inputs(config):
    _require_file(config.vocab_path, "vocabulary")
    _require_file(config.corpus_path, "corpus")
    vocab = Vocabulary.load(config.vocab_path)
    corpus = load_pair_corpus(config.corpus_path, vocab, config.max_len)
    emb = None
    if config.embeddings_path:
        _require_file(config.embeddings_path, "embeddings")
        emb = load_pretrained(config.embeddings_path, vocab, dim=config.emb_dim)
    return vocab, corpus, emb


def _cmd_pretrain(args):
    config = load_config(args.config)
    vocab, corpus, emb = _load_training_inputs(config)
    state = init_state(config, vocab, emb)
    trace_ae = pretrain_autoencoder(state, corpus, config.pretrain_steps_ae)
    trace_trs = pretrain_transcoder(state, corpus, config.pretrain_steps_trs)
    out = args.out or os.path.join(config.checkpoint_dir, "pretrained.ckpt")
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    save_checkpoint(state, out)
    print(_provenance(config_path=args.config, seed=config.seed, checkpoint=out))
    if trace_ae:
        print(f"auto-encoder: {len(trace_ae)} steps, per-token cross-entropy {trace_ae[-1]:.4f}")
    if trace_trs:
        print(f"transcoder: {len(trace_trs)} steps, per-token cross-entropy {trace_trs[-1]:.4f}")
    print(f"checkpoint written: {out}")
    return 0


def _cmd_train(args):
    if not args.config and not args.checkpoint:
        raise UsageError("train needs --config and/or --checkpoint")
    if args.checkpoint:
        state = load_checkpoint(args.checkpoint)
        config = load_config(args.config) if args.config else state.config
        state.config = config
        vocab = state.vocab
        _require_file(config.corpus_path, "corpus")
        corpus = load_pair_corpus(config.corpus_path, vocab, config.max_len)
    else:
        config = load_config(args.config)
        vocab, corpus, emb = _load_training_inputs(config)
        state = init_state(config, vocab, emb)
        os.makedirs(config.checkpoint_dir, exist_ok=True)
        pretrain_autoencoder(state, corpus, config.pretrain_steps_ae)
        pretrain_transcoder(state, corpus, config.pretrain_steps_trs)
        save_checkpoint(state, os.path.join(config.checkpoint_dir, "pretrained.ckpt"))
    os.makedirs(config.checkpoint_dir, exist_ok=True)
    provenance = _provenance(config_path=args.config, config=config,
                             seed=config.seed, checkpoint=args.checkpoint)
    with open(config.metrics_path, "w", encoding="utf-8") as log_file:
        log_file.write(provenance + "\n")
        log_file.write("\t".join(METRIC_COLUMNS) + "\n")
        history = adversarial_loop(state, corpus, config.adv_steps,
                                   log_file=log_file,
                                   checkpoint_dir=config.checkpoint_dir)
    final = os.path.join(config.checkpoint_dir, "final.ckpt")
    save_checkpoint(state, final)
    print(provenance)
    print(f"adversarial steps: {len(history)}; metrics log: {config.metrics_path}")
    print(f"final checkpoint: {final}")
    return 0


def _sample_paraphrases(state, tokens, k, generator):
    """K greedy paraphrases of one token list, each under a fresh z."""
    cfg = state.config
    ids = torch.tensor([encode_sentence(state.vocab, tokens, cfg.max_len)], dtype=torch.long)
    outputs = []
    for _ in range(k):
        z = sample_pattern(1, generator=generator, pattern_dim=cfg.pattern_dim)
        with torch.no_grad():
            code = transcode(state.transcoder, ids, z, state.emb)
        out_ids = greedy_decode(state.decoder, code[0], cfg.max_len + 1, state.emb)
        outputs.append(decode_sentence(state.vocab, out_ids))
    return outputs


def _cmd_generate(args):
    if args.samples < 1:
        raise UsageError("--samples must be >= 1")
    state = load_checkpoint(args.checkpoint)
    generator = torch.Generator().manual_seed(args.seed)
    out = sys.stdout
    out.write(_provenance(config=state.config, seed=args.seed,
                          checkpoint=args.checkpoint) + "\n")
    for line in sys.stdin:
        for sample in _sample_paraphrases(state, tokenize(line), args.samples, generator):
            out.write(" ".join(sample) + "\n")
    return 0


def _cmd_evaluate(args):
    if args.samples < 1:
        raise UsageError("--samples must be >= 1")
    state = load_checkpoint(args.checkpoint)
    corpus = load_pair_corpus(args.test, state.vocab, state.config.max_len)
    pairs = [(decode_sentence(state.vocab, p.x), decode_sentence(state.vocab, p.y))
             for p in corpus.by_label(POSITIVE)]
    synonyms = load_synonym_table(args.synonyms) if args.synonyms else None
    generator = torch.Generator().manual_seed(args.seed)
    readout = lambda tokens: _sample_paraphrases(state, tokens, args.samples, generator)
    report = evaluate_set(readout, pairs, args.samples, synonyms)
    sys.stdout.write(_provenance(config=state.config, seed=args.seed,
                                 checkpoint=args.checkpoint) + "\n")
    sys.stdout.write(format_report(report, args.samples, args.seed))
    return 0


_HANDLERS = {
    "preprocess": _cmd_preprocess,
    "pretrain": _cmd_pretrain,
    "train": _cmd_train,
    "generate": _cmd_generate,
    "evaluate": _cmd_evaluate,
}


def run(argv):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _check_files(args)
        return _HANDLERS[args.verb](args)
    except UsageError as e:
        sys.stderr.write(f"usage error: {e}\n")
        return 1
    except SystemExit as e:  # argparse --help
        return int(e.code or 0)
    except Exception as e:
        sys.stderr.write(f"error: {e}\n")
        return 2


def main():
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
