"""Independent reference implementations used as test oracles.

Both work bottom-up over derivation trees and share no code with the parsers
under test.
"""
import itertools
import math

import numpy as np

from relaxgan.grammar import Cfg, Pcfg, Production

NTS = ("S", "A", "B")
TERMS = ("a", "b")


def _concat(sets, max_len):
    """All concatenations of one string from each set, capped at max_len tokens."""
    acc = {()}
    for s in sets:
        acc = {x + y for x in acc for y in s if len(x) + len(y) <= max_len}
        if not acc:
            break
    return acc


def bounded_language(cfg: Cfg, max_len: int, min_depth: int = 8) -> set:
    """Terminal strings of length <= max_len derivable from the start symbol.

    Round d collects the yields of every derivation tree of height <= d.  We
    run at least ``min_depth`` rounds and continue until a round adds
    nothing; from then on the sets are a fixpoint, so the result is exact.
    """
    nts = cfg.nonterminals
    lang = {a: set() for a in nts}
    d = 0
    while True:
        d += 1
        new = {}
        for a in nts:
            out = set(lang[a])
            for p in cfg.by_lhs[a]:
                sets = [lang[s] if s in nts else {(s,)} for s in p.rhs]
                out |= _concat(sets, max_len)
            new[a] = out
        stable = new == lang
        lang = new
        if stable and d >= min_depth:
            return lang[cfg.start]


def best_derivations(pcfg: Pcfg, max_len: int) -> dict:
    """Max derivation probability for every string of length <= max_len.

    Value iteration over (nonterminal, string) pairs.  Probabilities never
    exceed 1, so cycles cannot improve a score and the iteration terminates.
    """
    nts = pcfg.cfg.nonterminals
    best = {a: {} for a in nts}
    rules = list(zip(pcfg.productions, pcfg.probs))
    changed = True
    while changed:
        changed = False
        for p, q in rules:
            parts = [best[s] if s in nts else {(s,): 1.0} for s in p.rhs]
            acc = {(): q}
            for part in parts:
                nxt = {}
                for x, px in acc.items():
                    for y, py in part.items():
                        if len(x) + len(y) <= max_len:
                            v = px * py
                            key = x + y
                            if v > nxt.get(key, 0.0):
                                nxt[key] = v
                acc = nxt
            tgt = best[p.lhs]
            for w, v in acc.items():
                if w and v > tgt.get(w, 0.0):
                    tgt[w] = v
                    changed = True
    return best[pcfg.start]


def random_cfg(rng: np.random.Generator, max_prods: int = 6, max_rhs: int = 4,
               allow_empty: bool = True) -> Cfg:
    """Random grammar over S, A, B and terminals a, b.  Every nonterminal used
    on a right-hand side gets at least one production."""
    n = int(rng.integers(1, max_prods + 1))
    prods = []
    seen = set()
    lhs_pool = ["S"]
    while len(prods) < n:
        lhs = lhs_pool[int(rng.integers(len(lhs_pool)))] if prods else "S"
        size = int(rng.integers(0 if allow_empty else 1, max_rhs + 1))
        rhs = tuple(str(rng.choice(NTS + TERMS + TERMS)) for _ in range(size))
        p = Production(lhs, rhs)
        if p in seen:
            continue
        seen.add(p)
        prods.append(p)
        for s in rhs:
            if s in NTS and s not in lhs_pool:
                lhs_pool.append(s)
    # close off nonterminals that appear only on the right
    have = {p.lhs for p in prods}
    for s in lhs_pool:
        if s not in have:
            prods.append(Production(s, (str(rng.choice(TERMS)),)))
    return Cfg("S", prods)


def random_pcfg(rng: np.random.Generator, max_prods: int = 6, max_rhs: int = 3) -> Pcfg:
    cfg = random_cfg(rng, max_prods, max_rhs, allow_empty=False)
    probs = []
    for p in cfg.productions:
        probs.append(None)
    by = cfg.by_lhs
    table = {}
    for a, ps in by.items():
        w = rng.uniform(0.1, 1.0, size=len(ps))
        w /= w.sum()
        table.update(zip(ps, w))
    return Pcfg("S", list(cfg.productions), [float(table[p]) for p in cfg.productions])


def all_strings(max_len: int, alphabet=TERMS):
    for n in range(max_len + 1):
        yield from itertools.product(alphabet, repeat=n)


def nll_or_inf(p: float | None) -> float:
    return math.inf if not p else -math.log(p)
