"""Context-free grammars as data generators and evaluators.

Grammar text format: one rule per line, ``LHS -> sym sym ... | alt ...``,
``#`` starts a comment, the first left-hand side is the start symbol and
``<eps>`` stands for an empty right-hand side.  Symbols that never appear on a
left-hand side are terminals.

Weighted (PCFG) files put the probability first: ``0.25 NP -> Det Noun``.
"""
from __future__ import annotations

import math
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

EPSILON = "<eps>"


class GrammarError(ValueError):
    pass


class TreebankError(ValueError):
    pass


@dataclass(frozen=True)
class Production:
    lhs: str
    rhs: tuple[str, ...]

    def __str__(self):
        return f"{self.lhs} -> {' '.join(self.rhs) if self.rhs else EPSILON}"


@dataclass
class Cfg:
    start: str
    productions: list[Production]

    def __post_init__(self):
        lhs = {p.lhs for p in self.productions}
        if self.start not in lhs:
            raise GrammarError(f"start symbol {self.start!r} has no productions")

    @cached_property
    def nonterminals(self) -> frozenset[str]:
        return frozenset(p.lhs for p in self.productions)

    @cached_property
    def terminals(self) -> frozenset[str]:
        nts = self.nonterminals
        return frozenset(s for p in self.productions for s in p.rhs if s not in nts)

    @cached_property
    def by_lhs(self) -> dict[str, list[Production]]:
        out: dict[str, list[Production]] = defaultdict(list)
        for p in self.productions:
            out[p.lhs].append(p)
        return dict(out)

    @cached_property
    def min_lengths(self) -> dict[str, float]:
        """Shortest terminal yield of each nonterminal (inf if unproductive)."""
        best = {a: math.inf for a in self.nonterminals}
        changed = True
        while changed:
            changed = False
            for p in self.productions:
                n = 0.0
                for s in p.rhs:
                    n += best[s] if s in best else 1
                if n < best[p.lhs]:
                    best[p.lhs] = n
                    changed = True
        return best

    @cached_property
    def nullable(self) -> frozenset[str]:
        return frozenset(a for a, n in self.min_lengths.items() if n == 0)

    def __len__(self):
        return len(self.productions)


@dataclass
class Pcfg:
    start: str
    productions: list[Production]
    probs: list[float]

    def __post_init__(self):
        if len(self.probs) != len(self.productions):
            raise GrammarError("one probability per production is required")
        for p, q in zip(self.productions, self.probs):
            if not 0.0 < q <= 1.0:
                raise GrammarError(f"probability {q} of {p} is outside (0, 1]")

    @cached_property
    def cfg(self) -> Cfg:
        return Cfg(self.start, list(self.productions))

    def prob(self, production: Production) -> float:
        return self.table[production]

    @cached_property
    def table(self) -> dict[Production, float]:
        return dict(zip(self.productions, self.probs))

    def lhs_totals(self) -> dict[str, float]:
        tot: dict[str, float] = defaultdict(float)
        for p, q in zip(self.productions, self.probs):
            tot[p.lhs] += q
        return dict(tot)

    @property
    def is_binarized(self) -> bool:
        nts = self.cfg.nonterminals
        for p in self.productions:
            if len(p.rhs) == 0 or len(p.rhs) > 2:
                return False
            if len(p.rhs) == 2 and any(s not in nts for s in p.rhs):
                return False
        return True

    def __len__(self):
        return len(self.productions)


# ---------------------------------------------------------------------------
# grammar files

def _parse_rule_line(line: str, lineno: int) -> tuple[str, list[tuple[str, ...]]]:
    if "->" not in line:
        raise GrammarError(f"line {lineno}: expected 'LHS -> ...', got {line!r}")
    lhs_part, rhs_part = line.split("->", 1)
    lhs = lhs_part.split()
    if len(lhs) != 1:
        raise GrammarError(f"line {lineno}: left-hand side must be a single symbol, got {lhs_part.strip()!r}")
    alts = []
    for alt in rhs_part.split("|"):
        syms = tuple(alt.split())
        if not syms:
            raise GrammarError(f"line {lineno}: empty right-hand side for {lhs[0]!r} (write {EPSILON} for an empty rule)")
        if syms == (EPSILON,):
            syms = ()
        elif EPSILON in syms:
            raise GrammarError(f"line {lineno}: {EPSILON} must stand alone")
        alts.append(syms)
    return lhs[0], alts


def load_cfg(text: str) -> Cfg:
    """Parse grammar text into a :class:`Cfg` with alternatives expanded."""
    prods: list[Production] = []
    seen: set[Production] = set()
    start = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        lhs, alts = _parse_rule_line(line, lineno)
        if start is None:
            start = lhs
        for rhs in alts:
            p = Production(lhs, rhs)
            if p in seen:
                raise GrammarError(f"line {lineno}: duplicate production {p}")
            seen.add(p)
            prods.append(p)
    if start is None:
        raise GrammarError("grammar has no rules")
    return Cfg(start, prods)


def load_pcfg(text: str) -> Pcfg:
    prods, probs, seen = [], [], set()
    start = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, _, rest = line.partition(" ")
        try:
            q = float(head)
        except ValueError:
            raise GrammarError(f"line {lineno}: expected a probability before the rule") from None
        lhs, alts = _parse_rule_line(rest, lineno)
        if len(alts) != 1:
            raise GrammarError(f"line {lineno}: weighted rules take a single alternative")
        p = Production(lhs, alts[0])
        if p in seen:
            raise GrammarError(f"line {lineno}: duplicate production {p}")
        seen.add(p)
        start = start or lhs
        prods.append(p)
        probs.append(q)
    if start is None:
        raise GrammarError("grammar has no rules")
    return Pcfg(start, prods, probs)


def dump_pcfg(pcfg: Pcfg) -> str:
    order = sorted(range(len(pcfg)), key=lambda i: pcfg.productions[i].lhs != pcfg.start)
    return "".join(f"{pcfg.probs[i]!r} {pcfg.productions[i]}\n" for i in order)


# ---------------------------------------------------------------------------
# sampling

def sample_cfg(cfg: Cfg, target_length: int, rng: np.random.Generator,
               max_depth: int = 50, max_tries: int = 10_000) -> list[str]:
    """Leftmost derivation with uniform production choice, rejected until the
    yield has exactly ``target_length`` tokens.

    Attempts are abandoned as soon as they can no longer succeed (too many
    terminals committed, or the depth cap is hit); that does not change the
    distribution of accepted samples.
    """
    return _derive(cfg, target_length, rng, max_depth, max_tries)[0]


def sample_tree(cfg: Cfg, target_length: int, rng: np.random.Generator,
                max_depth: int = 50, max_tries: int = 10_000) -> Tree:
    """Like :func:`sample_cfg` but returns the derivation tree."""
    _, choices = _derive(cfg, target_length, rng, max_depth, max_tries)
    it = iter(choices)
    nts = cfg.nonterminals

    def build(sym):
        rule = next(it)
        kids = [build(s) if s in nts else s for s in rule.rhs]
        return (sym, kids if kids else [EPSILON])

    return build(cfg.start)


def _derive(cfg, target_length, rng, max_depth, max_tries):
    minlen = cfg.min_lengths
    if minlen[cfg.start] > target_length:
        raise GrammarError(f"no sentence of length {target_length}: shortest is {int(minlen[cfg.start])}")
    by_lhs = cfg.by_lhs
    nts = cfg.nonterminals
    # uniforms are drawn in blocks; per-call rng overhead dominated sampling
    buf, pos = rng.random(1024), 0
    for _ in range(max_tries):
        out: list[str] = []
        choices: list[Production] = []
        stack = [(cfg.start, 0)]
        committed = minlen[cfg.start]
        while stack:
            sym, depth = stack.pop()
            if sym not in nts:
                out.append(sym)
                continue
            if depth >= max_depth:
                break
            committed -= minlen[sym]
            rules = by_lhs[sym]
            if len(rules) > 1:
                if pos == len(buf):
                    buf, pos = rng.random(1024), 0
                rule = rules[int(buf[pos] * len(rules))]
                pos += 1
            else:
                rule = rules[0]
            choices.append(rule)
            for s in reversed(rule.rhs):
                stack.append((s, depth + 1))
                committed += minlen[s] if s in nts else 1
            if committed > target_length:
                break
        else:
            if len(out) == target_length:
                return out, choices
    raise GrammarError(f"no sample of length {target_length} within {max_tries} tries")


# ---------------------------------------------------------------------------
# Earley recognition

class EarleyRecognizer:
    """Predict/scan/complete recognizer.  Nullable nonterminals are advanced over
    at prediction time, which makes empty rules safe."""

    def __init__(self, cfg: Cfg):
        self.cfg = cfg
        self.rules = [(p.lhs, p.rhs) for p in cfg.productions]
        self.by_lhs: dict[str, list[int]] = defaultdict(list)
        for i, (lhs, _) in enumerate(self.rules):
            self.by_lhs[lhs].append(i)
        self.nts = cfg.nonterminals
        self.nullable = cfg.nullable
        self.terminals = cfg.terminals

    def recognize(self, tokens: Sequence[str]) -> bool:
        if any(t not in self.terminals for t in tokens):
            return False
        n = len(tokens)
        rules, by_lhs, nts, nullable = self.rules, self.by_lhs, self.nts, self.nullable
        charts: list[set] = [set() for _ in range(n + 1)]
        # waiting[i][sym] -> items in chart i whose next symbol is the nonterminal sym
        waiting: list[dict] = [defaultdict(list) for _ in range(n + 1)]
        for r in by_lhs[self.cfg.start]:
            charts[0].add((r, 0, 0))
        for i in range(n + 1):
            agenda = list(charts[i])
            chart, wait = charts[i], waiting[i]
            predicted: set[str] = set()
            while agenda:
                item = agenda.pop()
                r, d, o = item
                lhs, rhs = rules[r]
                if d < len(rhs):
                    sym = rhs[d]
                    if sym in nts:
                        wait[sym].append(item)
                        if sym not in predicted:
                            predicted.add(sym)
                            for r2 in by_lhs[sym]:
                                new = (r2, 0, i)
                                if new not in chart:
                                    chart.add(new)
                                    agenda.append(new)
                        if sym in nullable:
                            new = (r, d + 1, o)
                            if new not in chart:
                                chart.add(new)
                                agenda.append(new)
                    elif i < n and tokens[i] == sym:
                        charts[i + 1].add((r, d + 1, o))
                else:
                    for (r3, d3, o3) in waiting[o].get(lhs, ()):
                        new = (r3, d3 + 1, o3)
                        if new not in chart:
                            chart.add(new)
                            agenda.append(new)
        start = self.cfg.start
        return any(o == 0 and d == len(rules[r][1]) and rules[r][0] == start
                   for (r, d, o) in charts[n])


_recognizers: dict[int, EarleyRecognizer] = {}


def earley_recognize(cfg: Cfg, tokens: Sequence[str]) -> bool:
    """True iff ``tokens`` is a sentence of ``cfg``.  Unknown tokens reject."""
    rec = _recognizers.get(id(cfg))
    if rec is None or rec.cfg is not cfg:
        rec = _recognizers[id(cfg)] = EarleyRecognizer(cfg)
    return rec.recognize(list(tokens))


# ---------------------------------------------------------------------------
# treebanks and PCFG induction

Tree = tuple  # (label, [children]) where a child is a Tree or a terminal str

_TOKEN = re.compile(r"\(|\)|[^\s()]+")


def parse_tree(line: str, lineno: int = 1) -> Tree:
    """Parse one bracketed tree ``(LABEL child ...)``."""
    toks = _TOKEN.findall(line)
    if not toks or toks[0] != "(":
        raise TreebankError(f"line {lineno}: tree must start with '('")
    pos = 0

    def node():
        nonlocal pos
        pos += 1  # consume '('
        label = ""
        if pos < len(toks) and toks[pos] not in "()":
            label = toks[pos]
            pos += 1
        children = []
        while True:
            if pos >= len(toks):
                raise TreebankError(f"line {lineno}: unbalanced brackets (missing ')')")
            t = toks[pos]
            if t == "(":
                children.append(node())
            elif t == ")":
                pos += 1
                break
            else:
                children.append(t)
                pos += 1
        if not children:
            raise TreebankError(f"line {lineno}: empty constituent {label!r}")
        return (label, children)

    tree = node()
    if pos != len(toks):
        raise TreebankError(f"line {lineno}: trailing material after tree")
    return tree


def read_treebank(text: str) -> list[Tree]:
    trees = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if line.strip():
            trees.append(parse_tree(line, lineno))
    return trees


def tree_to_str(tree: Tree) -> str:
    if isinstance(tree, str):
        return tree
    label, children = tree
    return f"({label} {' '.join(tree_to_str(c) for c in children)})"


def tree_leaves(tree) -> list[str]:
    if isinstance(tree, str):
        return [tree]
    return [w for c in tree[1] for w in tree_leaves(c)]


def _clean_label(label: str) -> str:
    if label.startswith("-"):
        return label
    base = re.split(r"[-=]", label, maxsplit=1)[0]
    return base or label


def _clean(tree):
    """Strip function tags and indices, drop -NONE- empties, lowercase words."""
    if isinstance(tree, str):
        return tree.lower()
    label, children = tree
    if label == "-NONE-":
        return None
    kids = [k for k in (_clean(c) for c in children) if k is not None]
    if not kids:
        return None
    if label == "" and len(kids) == 1 and not isinstance(kids[0], str):
        return kids[0]
    return (_clean_label(label) if label else "TOP", kids)


def top_k_words(counts: Counter, top_k: int | None) -> set[str]:
    ranked = sorted(counts, key=lambda w: (-counts[w], w))
    return set(ranked if top_k is None else ranked[:top_k])


def induce_pcfg(trees: Iterable[Tree], top_k: int | None = 2000, unk: str = "<unk>") -> Pcfg:
    """Relative-frequency PCFG: P(A -> rhs) = count(A -> rhs) / count(A -> *)."""
    cleaned = [t for t in (_clean(t) for t in trees) if t is not None and not isinstance(t, str)]
    if not cleaned:
        raise TreebankError("treebank has no usable trees")
    words = Counter(w for t in cleaned for w in tree_leaves(t))
    keep = top_k_words(words, top_k)

    counts: Counter = Counter()
    labels: set[str] = set()

    def walk(node):
        label, children = node
        labels.add(label)
        rhs = []
        for c in children:
            if isinstance(c, str):
                rhs.append(c if c in keep else unk)
            else:
                rhs.append(c[0])
                walk(c)
        counts[Production(label, tuple(rhs))] += 1

    for t in cleaned:
        walk(t)
    roots = Counter(t[0] for t in cleaned)
    if len(roots) > 1:
        start = "TOP"
        while start in labels:
            start += "'"
        for r, c in roots.items():
            counts[Production(start, (r,))] += c
    else:
        start = next(iter(roots))
    terms = {s for p in counts for s in p.rhs if s not in labels}
    clash = terms & {p.lhs for p in counts}
    if clash:
        raise TreebankError(f"symbols used as both words and labels: {sorted(clash)}")

    totals: Counter = Counter()
    for p, c in counts.items():
        totals[p.lhs] += c
    prods = sorted(counts, key=lambda p: (p.lhs != start, p.lhs, p.rhs))
    return Pcfg(start, prods, [counts[p] / totals[p.lhs] for p in prods])


# ---------------------------------------------------------------------------
# binarization and Viterbi parsing

def binarize_pcfg(pcfg: Pcfg) -> Pcfg:
    """Right-binarize.  ``A -> B C D (p)`` becomes ``A -> B A|<C D> (p)`` and
    ``A|<C D> -> C D (1)``; terminals inside rules of length >= 2 get a
    preterminal ``PT|t -> t (1)``.  Unary and lexical rules are kept as is, so
    every derivation keeps its probability.  Intermediate symbols are named by
    the remaining suffix, so sharing them between rules is sound."""
    nts = pcfg.cfg.nonterminals
    out: dict[Production, float] = {}

    def put(p: Production, q: float):
        if p in out and out[p] != q:
            raise GrammarError(f"binarization collision on {p}")
        out[p] = q

    for p, q in zip(pcfg.productions, pcfg.probs):
        if len(p.rhs) <= 1:
            put(p, q)
            continue
        syms = []
        for s in p.rhs:
            if s in nts:
                syms.append(s)
            else:
                pt = f"PT|{s}"
                put(Production(pt, (s,)), 1.0)
                syms.append(pt)
        lhs, prob = p.lhs, q
        while len(syms) > 2:
            rest = syms[1:]
            name = f"{p.lhs}|<{' '.join(rest)}>"
            put(Production(lhs, (syms[0], name)), prob)
            lhs, prob, syms = name, 1.0, rest
        put(Production(lhs, tuple(syms)), prob)
    prods = list(out)
    return Pcfg(pcfg.start, prods, [out[p] for p in prods])


@dataclass
class ParseChart:
    """Per-span best log-probabilities with backpointers.

    ``cells[(i, j)][A] = (logp, backpointer)`` where the backpointer is
    ``("lex", word)``, ``("unary", B)`` or ``("binary", k, B, C)``.
    """

    n: int
    cells: dict = field(default_factory=dict)

    def best(self, i: int, j: int, sym: str) -> float:
        entry = self.cells.get((i, j), {}).get(sym)
        return -math.inf if entry is None else entry[0]


class ViterbiParser:
    """CKY over a binarized PCFG with unary closure in every cell."""

    def __init__(self, pcfg: Pcfg):
        if any(len(p.rhs) == 0 for p in pcfg.productions):
            raise GrammarError("chart parsing does not support empty productions")
        if not pcfg.is_binarized:
            pcfg = binarize_pcfg(pcfg)
        self.pcfg = pcfg
        nts = pcfg.cfg.nonterminals
        self.lexical: dict[str, list[tuple[str, float]]] = defaultdict(list)
        self.unary: dict[str, list[tuple[str, float]]] = defaultdict(list)
        self.binary: dict[str, list[tuple[str, str, float]]] = defaultdict(list)
        for p, q in zip(pcfg.productions, pcfg.probs):
            lp = math.log(q)
            if len(p.rhs) == 1 and p.rhs[0] not in nts:
                self.lexical[p.rhs[0]].append((p.lhs, lp))
            elif len(p.rhs) == 1:
                self.unary[p.rhs[0]].append((p.lhs, lp))
            else:
                self.binary[p.rhs[0]].append((p.rhs[1], p.lhs, lp))

    def _closure(self, cell: dict):
        agenda = list(cell)
        while agenda:
            b = agenda.pop()
            lb = cell[b][0]
            for a, lp in self.unary.get(b, ()):
                cand = lb + lp
                if a not in cell or cand > cell[a][0]:
                    cell[a] = (cand, ("unary", b))
                    agenda.append(a)

    def chart(self, tokens: Sequence[str]) -> ParseChart:
        n = len(tokens)
        chart = ParseChart(n)
        cells = chart.cells
        for i, w in enumerate(tokens):
            cell = {}
            for a, lp in self.lexical.get(w, ()):
                if a not in cell or lp > cell[a][0]:
                    cell[a] = (lp, ("lex", w))
            self._closure(cell)
            cells[(i, i + 1)] = cell
        for span in range(2, n + 1):
            for i in range(n - span + 1):
                j = i + span
                cell: dict = {}
                for k in range(i + 1, j):
                    left, right = cells[(i, k)], cells[(k, j)]
                    if not left or not right:
                        continue
                    for b, (lb, _) in left.items():
                        for c, a, lp in self.binary.get(b, ()):
                            rc = right.get(c)
                            if rc is None:
                                continue
                            cand = lb + rc[0] + lp
                            if a not in cell or cand > cell[a][0]:
                                cell[a] = (cand, ("binary", k, b, c))
                self._closure(cell)
                cells[(i, j)] = cell
        return chart

    def nll(self, tokens: Sequence[str]) -> float:
        """-log of the best parse probability, ``inf`` when there is no parse."""
        if len(tokens) == 0:
            raise ValueError("viterbi_nll: empty token sequence")
        lp = self.chart(tokens).best(0, len(tokens), self.pcfg.start)
        return math.inf if lp == -math.inf else max(0.0, -lp)

    def parse(self, tokens: Sequence[str]) -> Tree | None:
        chart = self.chart(tokens)
        if chart.best(0, len(tokens), self.pcfg.start) == -math.inf:
            return None

        def build(i, j, sym):
            _, bp = chart.cells[(i, j)][sym]
            if bp[0] == "lex":
                return (sym, [bp[1]])
            if bp[0] == "unary":
                return (sym, [build(i, j, bp[1])])
            _, k, b, c = bp
            return (sym, [build(i, k, b), build(k, j, c)])

        return build(0, len(tokens), self.pcfg.start)


_parsers: dict[int, tuple[Pcfg, ViterbiParser]] = {}


def viterbi_nll(pcfg: Pcfg, tokens: Sequence[str]) -> float:
    """Negative log-probability of the best parse; ``math.inf`` signals no parse."""
    entry = _parsers.get(id(pcfg))
    if entry is None or entry[0] is not pcfg:
        entry = _parsers[id(pcfg)] = (pcfg, ViterbiParser(pcfg))
    return entry[1].nll(list(tokens))
