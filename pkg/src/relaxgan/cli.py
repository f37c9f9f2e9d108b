"""Command-line entry point: ``relaxgan <command> [flags]``.

Eval commands print one ``key=value`` summary line (4 decimals) and, with
``--out``, a CSV file holding the same values at full precision.  Every file
is written to a temporary name and renamed into place.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import data as dp
from . import grammar as gr
from . import metrics as mt
from . import models as md
from . import trainer as tr

log = logging.getLogger("relaxgan")


class CliError(Exception):
    pass


def write_atomic(path, text: str):
    path = Path(path)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    try:
        tmp.write_text(text, encoding="utf-8")
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def _read(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise CliError(f"no such file: {path}") from None


def _grammar_path(name: str) -> Path:
    return tr.builtin_grammar_path() if name == "builtin:holygrail" else Path(name)


def read_samples(path, level: str = "word") -> list[list[str]]:
    """One sample per line; blank lines are kept as empty samples."""
    return [dp.tokenize(line, level) for line in _read(path).splitlines()]


def _summary(values: dict) -> str:
    cells = []
    for k, v in values.items():
        cells.append(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}")
    return " ".join(cells)


def _emit(values: dict, out):
    print(_summary(values))
    if out:
        write_atomic(out, ",".join(values) + "\n" + ",".join(repr(v) if isinstance(v, float) else str(v)
                                                             for v in values.values()) + "\n")


# ---------------------------------------------------------------------------
# commands

def cmd_sample_cfg(a):
    if a.count < 0:
        raise CliError("--count must be >= 0")
    cfg = gr.load_cfg(_read(_grammar_path(a.grammar)))
    rng = np.random.default_rng(a.seed)
    lines = [" ".join(gr.sample_cfg(cfg, a.length, rng)) + "\n" for _ in range(a.count)]
    text = "".join(lines)
    if a.out:
        write_atomic(a.out, text)
    else:
        sys.stdout.write(text)


def cmd_train(a):
    config = tr.ExperimentConfig.load(a.config, out_dir=a.out_dir)
    if config.out_dir is None:
        raise CliError("no output directory: set out_dir in the config or pass --out-dir")

    def progress(rep):
        log.info("epoch %d step %d accuracy %s uniqueness %s", rep.epoch, rep.step,
                 rep.accuracy, rep.uniqueness)

    root = tr.train(config, resume=a.resume, progress=progress)
    print(f"run_dir={root}")


def cmd_generate(a):
    if a.count < 0:
        raise CliError("--count must be >= 0")
    gen, vocab, raw, meta = tr.load_generator(a.checkpoint)
    length = a.length
    if length is None:
        c = raw["curriculum"]
        st = dp.CurriculumState(c["start"], c["epochs_per_increment"], c["max_length"])
        length = dp.curriculum_advance(st, max(meta["epoch"] - 1, 0)).current
    labels = None
    if getattr(gen, "conditional", False):
        if a.condition is None:
            raise CliError("this generator is conditional; pass --condition 0 or 1")
        labels = np.full(a.count, a.condition)
    elif a.condition is not None:
        raise CliError("--condition given but the generator is not conditional")
    rng = np.random.default_rng(a.seed)
    toks = tr.generate(gen, a.count, length, raw["noise_dim"], rng, labels=labels)
    text = "".join(vocab.join(vocab.decode(r)) + "\n" for r in toks)
    if a.out:
        write_atomic(a.out, text)
    else:
        sys.stdout.write(text)


def cmd_eval_cfg(a):
    cfg = gr.load_cfg(_read(_grammar_path(a.grammar)))
    samples = read_samples(a.samples, a.level)
    if not samples:
        raise CliError(f"{a.samples}: no samples")
    _emit({"accuracy": mt.grammar_accuracy(samples, cfg), "uniqueness": mt.uniqueness(samples),
           "count": len(samples)}, a.out)


def cmd_induce_pcfg(a):
    trees = gr.read_treebank(_read(a.treebank))
    pcfg = gr.induce_pcfg(trees, top_k=a.top_k)
    write_atomic(a.out, gr.dump_pcfg(pcfg))
    print(f"productions={len(pcfg.productions)} trees={len(trees)} start={pcfg.start}")


def cmd_eval_nll(a):
    pcfg = gr.binarize_pcfg(gr.load_pcfg(_read(a.pcfg)))
    samples = read_samples(a.samples, a.level)
    if not samples:
        raise CliError(f"{a.samples}: no samples")
    st = mt.nll_stats(samples, pcfg)
    _emit({"mean_nll": st.mean, "median_nll": st.median, "no_parse_rate": st.no_parse_rate,
           "count": st.count}, a.out)


def cmd_bleu(a):
    cands = read_samples(a.candidates, a.level)
    refs = read_samples(a.references, a.level)
    _emit({f"bleu{a.n}": mt.corpus_bleu(cands, refs, a.n), "candidates": len(cands),
           "references": len(refs)}, a.out)


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="relaxgan", description="Adversarial sequence generation toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    s = sub.add_parser("sample-cfg", help="sample fixed-length sentences from a CFG")
    s.add_argument("--grammar", default="builtin:holygrail")
    s.add_argument("--length", type=int, required=True)
    s.add_argument("--count", type=int, default=1280)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sample_cfg)

    s = sub.add_parser("train", help="train a model from a JSON config")
    s.add_argument("--config", required=True)
    s.add_argument("--out-dir")
    s.add_argument("--resume", action="store_true", help="continue from the latest checkpoint")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("generate", help="greedy-decode samples from a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--count", type=int, default=1280)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--length", type=int)
    s.add_argument("--condition", type=int, choices=(0, 1))
    s.add_argument("--out")
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("eval-cfg", help="grammar accuracy and uniqueness of samples")
    s.add_argument("--grammar", default="builtin:holygrail")
    s.add_argument("--samples", required=True)
    s.add_argument("--level", choices=("word", "character"), default="word")
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval_cfg)

    s = sub.add_parser("induce-pcfg", help="relative-frequency PCFG from a bracketed treebank")
    s.add_argument("--treebank", required=True)
    s.add_argument("--top-k", type=int, default=2000)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_induce_pcfg)

    s = sub.add_parser("eval-nll", help="Viterbi NLL of samples under a PCFG")
    s.add_argument("--pcfg", required=True)
    s.add_argument("--samples", required=True)
    s.add_argument("--level", choices=("word", "character"), default="word")
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval_nll)

    s = sub.add_parser("bleu", help="corpus BLEU against a whole reference set")
    s.add_argument("--candidates", required=True)
    s.add_argument("--references", required=True)
    s.add_argument("--n", type=int, choices=(2, 3), default=2)
    s.add_argument("--level", choices=("word", "character"), default="word")
    s.add_argument("--out")
    s.set_defaults(func=cmd_bleu)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except (CliError, ValueError, OSError, KeyError, gr.GrammarError, gr.TreebankError,
            md.CheckpointError, tr.TrainingDiverged) as e:
        print(f"relaxgan {args.command}: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
