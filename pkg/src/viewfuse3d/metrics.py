"""Corpus-level answer metrics: EM, BLEU-1..4, ROUGE-L and CIDEr, all on a x100 scale."""

from __future__ import annotations

import json
import math
import re
import string
import warnings
from collections import Counter
from dataclasses import dataclass

from .errors import DegenerateCorpusWarning, EmptyInputError

_PUNCT = re.compile(f"[{re.escape(string.punctuation)}]")
ROUGE_BETA = 1.2
CIDER_SIGMA = 6.0


@dataclass(frozen=True)
class EvalPair:
    candidate: str
    references: tuple

    def __post_init__(self):
        refs = (self.references,) if isinstance(self.references, str) else tuple(self.references)
        if not refs:
            raise ValueError("references must be non-empty")
        object.__setattr__(self, "references", refs)


def as_pairs(pairs) -> list[EvalPair]:
    out = [p if isinstance(p, EvalPair) else EvalPair(p[0], p[1]) for p in pairs]
    if not out:
        raise EmptyInputError("empty corpus")
    return out


def normalize(text: str) -> str:
    return " ".join(_PUNCT.sub(" ", text.lower()).split())


def _tokens(text):
    return normalize(text).split()


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def exact_match(pairs) -> float:
    pairs = as_pairs(pairs)
    hits = sum(any(normalize(p.candidate) == normalize(r) for r in p.references) for p in pairs)
    return 100.0 * hits / len(pairs)


def bleu_n(pairs, n: int = 4) -> float:
    """Corpus BLEU with uniform weights over orders 1..n."""
    if n not in (1, 2, 3, 4):
        raise ValueError("n must be in 1..4")
    pairs = as_pairs(pairs)
    matches = [0] * n
    totals = [0] * n
    cand_len = ref_len = 0
    for p in pairs:
        cand = _tokens(p.candidate)
        refs = [_tokens(r) for r in p.references]
        cand_len += len(cand)
        # closest reference length, shorter one on ties
        ref_len += min((abs(len(r) - len(cand)), len(r)) for r in refs)[1]
        for k in range(1, n + 1):
            c = _ngrams(cand, k)
            best = Counter()
            for r in refs:
                best |= _ngrams(r, k)
            matches[k - 1] += sum(min(v, best[g]) for g, v in c.items())
            totals[k - 1] += sum(c.values())
    if cand_len == 0 or matches[0] == 0:
        return 0.0
    log_p = 0.0
    for k in range(n):
        m, t = matches[k], totals[k]
        if k > 0 and m == 0:
            m, t = 1, t + 1
        log_p += math.log(m / t)
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return 100.0 * bp * math.exp(log_p / n)


def _lcs(a, b):
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l_pair(candidate: str, reference: str, beta: float = ROUGE_BETA) -> float:
    c, r = _tokens(candidate), _tokens(reference)
    lcs = _lcs(c, r)
    if lcs == 0:
        return 0.0
    p, rec = lcs / len(c), lcs / len(r)
    return (1 + beta**2) * p * rec / (rec + beta**2 * p)


def rouge_l(pairs) -> float:
    pairs = as_pairs(pairs)
    return 100.0 * sum(max(rouge_l_pair(p.candidate, r) for r in p.references) for p in pairs) / len(pairs)


def _cider_vec(counts, df, log_n):
    vec = [{} for _ in range(4)]
    norms = [0.0] * 4
    length = 0
    for g, tf in counts.items():
        k = len(g) - 1
        w = tf * (log_n - math.log(max(1.0, df[g])))
        vec[k][g] = w
        norms[k] += w * w
        if k == 1:
            length += tf
    return vec, [math.sqrt(x) for x in norms], length


def cider_scores(pairs, sigma: float = CIDER_SIGMA) -> list[float]:
    """Per-pair CIDEr (coco-caption variant, Gaussian length penalty), x10."""
    pairs = as_pairs(pairs)
    cand = [_all_ngrams(_tokens(p.candidate)) for p in pairs]
    refs = [[_all_ngrams(_tokens(r)) for r in p.references] for p in pairs]
    df = Counter()
    for rs in refs:
        df.update({g for r in rs for g in r})
    if len({normalize(r) for p in pairs for r in p.references}) < 2:
        warnings.warn("all references are identical; idf is zero everywhere", DegenerateCorpusWarning, stacklevel=2)
    log_n = math.log(float(len(pairs)))
    scores = []
    for c, rs in zip(cand, refs):
        vc, nc, lc = _cider_vec(c, df, log_n)
        total = [0.0] * 4
        for r in rs:
            vr, nr, lr = _cider_vec(r, df, log_n)
            delta = float(lc - lr)
            for k in range(4):
                val = sum(w * vr[k].get(g, 0.0) for g, w in vc[k].items())
                if nc[k] != 0 and nr[k] != 0:
                    val /= nc[k] * nr[k]
                total[k] += val * math.exp(-(delta**2) / (2 * sigma**2))
        scores.append(10.0 * sum(total) / 4 / len(rs))
    return scores


def _all_ngrams(tokens):
    out = Counter()
    for k in range(1, 5):
        out.update(_ngrams(tokens, k))
    return out


def cider(pairs) -> float:
    s = cider_scores(pairs)
    return sum(s) / len(s)


FIELDS = ("em", "bleu1", "bleu2", "bleu3", "bleu4", "rouge_l", "cider")
TABLE_COLUMNS = (("em", "EM"), ("bleu1", "BLEU-1"), ("bleu4", "BLEU-4"), ("rouge_l", "ROUGE-L"), ("cider", "CIDEr"))


@dataclass(frozen=True)
class MetricReport:
    em: float
    bleu1: float
    bleu2: float
    bleu3: float
    bleu4: float
    rouge_l: float
    cider: float
    scale: float = 100.0

    def to_dict(self):
        return {k: getattr(self, k) for k in FIELDS}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=False)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))

    @staticmethod
    def header(label=None, all_bleu=False):
        cols = _columns(all_bleu)
        head = ([label] if label else []) + [c for _, c in cols]
        return "| " + " | ".join(head) + " |\n|" + "---|" * len(head)

    def markdown_row(self, label=None, all_bleu=False):
        vals = [f"{getattr(self, k):.1f}" for k, _ in _columns(all_bleu)]
        return "| " + " | ".join(([label] if label else []) + vals) + " |"


def _columns(all_bleu):
    if not all_bleu:
        return TABLE_COLUMNS
    return (("em", "EM"),) + tuple((f"bleu{k}", f"BLEU-{k}") for k in range(1, 5)) + TABLE_COLUMNS[3:]


def report(pairs) -> MetricReport:
    pairs = as_pairs(pairs)
    c = cider(pairs)
    return MetricReport(
        em=exact_match(pairs),
        bleu1=bleu_n(pairs, 1),
        bleu2=bleu_n(pairs, 2),
        bleu3=bleu_n(pairs, 3),
        bleu4=bleu_n(pairs, 4),
        rouge_l=rouge_l(pairs),
        cider=c,
    )

