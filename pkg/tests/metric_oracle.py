"""Deliberately naive re-implementations of the answer metrics.

Written independently of ``viewfuse3d.metrics``: exact fractions, explicit
enumeration of subsequences for LCS, and per-term tf-idf loops.
"""

import itertools
import math
import string
from fractions import Fraction

_TABLE = str.maketrans({c: " " for c in string.punctuation})


def norm_tokens(text):
    return text.lower().translate(_TABLE).split()


def em(pairs):
    hits = 0
    for cand, refs in pairs:
        c = norm_tokens(cand)
        hits += any(c == norm_tokens(r) for r in refs)
    return 100.0 * hits / len(pairs)


def grams(tokens, n):
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


def bleu(pairs, n):
    num = [0] * (n + 1)
    den = [0] * (n + 1)
    c_len = r_len = 0
    for cand, refs in pairs:
        c = norm_tokens(cand)
        rs = [norm_tokens(r) for r in refs]
        c_len += len(c)
        best = None
        for r in rs:
            key = (abs(len(r) - len(c)), len(r))
            if best is None or key < best:
                best = key
        r_len += best[1]
        for k in range(1, n + 1):
            cg = grams(c, k)
            den[k] += len(cg)
            for g in set(cg):
                max_ref = max(grams(r, k).count(g) for r in rs)
                num[k] += min(cg.count(g), max_ref)
    if c_len == 0 or num[1] == 0:
        return 0.0
    logs = []
    for k in range(1, n + 1):
        p = Fraction(num[k], den[k]) if (num[k] or k == 1) else Fraction(1, den[k] + 1)
        logs.append(math.log(p))
    bp = 1.0 if c_len > r_len else math.exp(1 - r_len / c_len)
    return 100.0 * bp * math.exp(sum(logs) / n)


def lcs_brute(a, b):
    """Longest common subsequence by enumerating subsequences of the shorter list."""
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)
    for size in range(len(short), 0, -1):
        for idx in itertools.combinations(range(len(short)), size):
            sub = [short[i] for i in idx]
            it = iter(long_)
            if all(any(x == y for y in it) for x in sub):
                return size
    return 0


def rouge(pairs, beta=1.2):
    total = 0.0
    for cand, refs in pairs:
        best = 0.0
        c = norm_tokens(cand)
        for r in refs:
            r = norm_tokens(r)
            lcs = lcs_brute(c, r)
            if lcs:
                p, rec = lcs / len(c), lcs / len(r)
                best = max(best, ((1 + beta * beta) * p * rec) / (rec + beta * beta * p))
        total += best
    return 100.0 * total / len(pairs)


def cider(pairs, sigma=6.0):
    n_docs = len(pairs)
    df = {}
    for _, refs in pairs:
        seen = set()
        for r in refs:
            t = norm_tokens(r)
            for k in range(1, 5):
                seen.update(grams(t, k))
        for g in seen:
            df[g] = df.get(g, 0) + 1

    def weights(tokens, k):
        out = {}
        for g in grams(tokens, k):
            out[g] = out.get(g, 0) + 1
        return {g: tf * (math.log(n_docs) - math.log(max(1, df.get(g, 0)))) for g, tf in out.items()}

    scores = []
    for cand, refs in pairs:
        c = norm_tokens(cand)
        acc = 0.0
        for r in refs:
            rt = norm_tokens(r)
            # length in the reference implementation counts bigram occurrences
            delta = max(len(c) - 1, 0) - max(len(rt) - 1, 0)
            per_n = []
            for k in range(1, 5):
                wc, wr = weights(c, k), weights(rt, k)
                dot = sum(v * wr.get(g, 0.0) for g, v in wc.items())
                nc = math.sqrt(sum(v * v for v in wc.values()))
                nr = math.sqrt(sum(v * v for v in wr.values()))
                if nc and nr:
                    dot /= nc * nr
                per_n.append(dot * math.exp(-(delta**2) / (2 * sigma**2)))
            acc += sum(per_n) / 4
        scores.append(10.0 * acc / len(refs))
    return sum(scores) / len(scores)
