"""Evaluation measures: grammar accuracy, uniqueness, PCFG likelihood, corpus BLEU."""
from __future__ import annotations

import bisect
import math
from collections import Counter
from dataclasses import dataclass, fields
from typing import Callable, Iterable, Sequence

import numpy as np

from .grammar import Cfg, Pcfg, earley_recognize, viterbi_nll

NLL_CEILING = 1e6
CSV_HEADER = "epoch,step,d_loss,g_loss,accuracy,uniqueness,mean_nll,no_parse_rate"


def _nonempty(samples, what="sample set"):
    samples = [tuple(s) for s in samples]
    if not samples:
        raise ValueError(f"empty {what}")
    return samples


def grammar_accuracy(samples: Iterable[Sequence[str]], cfg: Cfg) -> float:
    """Fraction of samples in the grammar's language."""
    samples = _nonempty(samples)
    return sum(earley_recognize(cfg, s) for s in samples) / len(samples)


def uniqueness(samples: Iterable[Sequence[str]]) -> float:
    """Distinct sequences over total, comparing whole token sequences."""
    samples = _nonempty(samples)
    return len(set(samples)) / len(samples)


@dataclass
class NllStats:
    mean: float
    median: float
    no_parse_rate: float
    count: int


def nll_stats(samples: Iterable[Sequence[str]], pcfg: Pcfg, ceiling: float = NLL_CEILING) -> NllStats:
    """Viterbi NLL of each sample; unparseable ones count as ``ceiling``."""
    samples = _nonempty(samples)
    vals = np.array([viterbi_nll(pcfg, s) if s else math.inf for s in samples])
    missing = ~np.isfinite(vals)
    vals[missing] = ceiling
    return NllStats(float(vals.mean()), float(np.median(vals)), float(missing.mean()), len(samples))


def nll_curve(snapshots: Sequence, pcfg: Pcfg, eval_size: int = 64,
              ceiling: float = NLL_CEILING) -> list[NllStats]:
    """One NllStats per snapshot.  A snapshot is either a callable returning
    ``eval_size`` decoded samples or an already drawn list of samples."""
    out = []
    for snap in snapshots:
        samples = snap(eval_size) if callable(snap) else list(snap)[:eval_size]
        out.append(nll_stats(samples, pcfg, ceiling))
    return out


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(candidates: Iterable[Sequence[str]], references: Iterable[Sequence[str]],
                max_n: int = 2) -> float:
    """Corpus BLEU with the whole reference set shared by every candidate.

    Modified precision clips each candidate n-gram count by its largest count in
    any single reference.  Brevity penalty uses, per candidate, the closest
    reference length (shorter on ties).  Uniform weights, no smoothing.
    """
    cands = [list(c) for c in candidates]
    refs = [list(r) for r in references]
    if not cands:
        raise ValueError("corpus_bleu needs at least one candidate")
    if not refs:
        raise ValueError("corpus_bleu needs at least one reference")
    if max_n < 1:
        raise ValueError("max_n must be >= 1")
    max_ref: list[dict] = []
    for n in range(1, max_n + 1):
        best: dict = {}
        for r in refs:
            for g, c in _ngrams(r, n).items():
                if c > best.get(g, 0):
                    best[g] = c
        max_ref.append(best)
    ref_lens = sorted({len(r) for r in refs})

    matched = [0] * max_n
    total = [0] * max_n
    cand_len = ref_len = 0
    for c in cands:
        cand_len += len(c)
        j = bisect.bisect_left(ref_lens, len(c))
        near = [ref_lens[i] for i in (j - 1, j) if 0 <= i < len(ref_lens)]
        ref_len += min(near, key=lambda L: (abs(L - len(c)), L))
        for n in range(1, max_n + 1):
            grams = _ngrams(c, n)
            best = max_ref[n - 1]
            matched[n - 1] += sum(min(k, best.get(g, 0)) for g, k in grams.items())
            total[n - 1] += max(len(c) - n + 1, 0)
    if cand_len == 0 or min(matched) == 0:
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(matched, total)) / max_n
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return bp * math.exp(log_p)


@dataclass
class EvalReport:
    epoch: int
    step: int
    d_loss: float | None
    g_loss: float | None
    accuracy: float | None = None
    uniqueness: float | None = None
    mean_nll: float | None = None
    no_parse_rate: float | None = None
    median_nll: float | None = None
    sample_count: int = 0

    def __post_init__(self):
        for name in ("accuracy", "uniqueness", "no_parse_rate"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")

    @staticmethod
    def header() -> str:
        return CSV_HEADER

    def row(self) -> str:
        """CSV row in header order; empty cells for metrics not computed."""
        cells = []
        for name in CSV_HEADER.split(","):
            v = getattr(self, name)
            cells.append("" if v is None else repr(v) if isinstance(v, float) else str(v))
        return ",".join(cells)


def evaluate_samples(samples: Sequence[Sequence[str]], cfg: Cfg | None = None,
                     pcfg: Pcfg | None = None, nll_size: int = 64, **base) -> EvalReport:
    """Fill an EvalReport from decoded samples; ``base`` supplies epoch, step and losses."""
    rep = EvalReport(**base, sample_count=len(samples))
    if cfg is not None:
        rep.accuracy = grammar_accuracy(samples, cfg)
    rep.uniqueness = uniqueness(samples)
    if pcfg is not None:
        st = nll_stats(samples[:nll_size], pcfg)
        rep.mean_nll, rep.median_nll, rep.no_parse_rate = st.mean, st.median, st.no_parse_rate
    return rep
