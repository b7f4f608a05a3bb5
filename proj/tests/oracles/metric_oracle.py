#!/usr/bin/env python3
"""Slow, direct caption metric implementations used to freeze expected values.

Usage: metric_oracle.py pairs.jsonl

Prints one line per metric with a repr() float, in [0, 1] (not x100).
Written separately from the C++ code: n-grams are enumerated as tuples,
LCS is a memoised recursion, and every score is recomputed per reference.
"""

import json
import math
import string
import sys
from collections import Counter
from functools import lru_cache


def tokenize(text):
    kept = "".join(ch for ch in text.lower() if ch not in string.punctuation)
    return kept.split()


def ngrams(words, n):
    return Counter(tuple(words[i:i + n]) for i in range(len(words) - n + 1))


def bleu(corpus, order):
    clipped = [0] * order
    totals = [0] * order
    c_len = 0
    r_len = 0
    for cand, refs in corpus:
        c_len += len(cand)
        r_len += min((abs(len(r) - len(cand)), len(r)) for r in refs)[1]
        for n in range(1, order + 1):
            cand_counts = ngrams(cand, n)
            for gram, count in cand_counts.items():
                best = max(ngrams(r, n)[gram] for r in refs)
                clipped[n - 1] += min(count, best)
                totals[n - 1] += count
    if c_len == 0 or any(c == 0 for c in clipped):
        return 0.0
    log_p = sum(math.log(clipped[k] / totals[k]) for k in range(order)) / order
    bp = math.exp(1 - r_len / c_len) if c_len < r_len else 1.0
    return bp * math.exp(log_p)


def lcs(a, b):
    @lru_cache(maxsize=None)
    def go(i, j):
        if i == len(a) or j == len(b):
            return 0
        if a[i] == b[j]:
            return 1 + go(i + 1, j + 1)
        return max(go(i + 1, j), go(i, j + 1))

    return go(0, 0)


def rouge_l(corpus, beta=1.2):
    total = 0.0
    for cand, refs in corpus:
        scores = []
        for r in refs:
            m = lcs(tuple(cand), tuple(r))
            if m == 0:
                scores.append(0.0)
                continue
            p = m / len(cand)
            rec = m / len(r)
            scores.append((1 + beta ** 2) * p * rec / (rec + beta ** 2 * p))
        total += max(scores)
    return total / len(corpus)


def cider_d(corpus, sigma=6.0):
    n_docs = len(corpus)
    df = Counter()
    for _, refs in corpus:
        present = set()
        for r in refs:
            for n in range(1, 5):
                present.update(ngrams(r, n).keys())
        df.update(present)

    def weights(words, n):
        out = {}
        for gram, count in ngrams(words, n).items():
            idf = 1.0 if n_docs == 1 else math.log(n_docs) - math.log(max(1.0, df[gram]))
            out[gram] = count * idf
        return out

    total = 0.0
    for cand, refs in corpus:
        per_pair = 0.0
        for r in refs:
            penalty = math.exp(-((len(cand) - len(r)) ** 2) / (2 * sigma ** 2))
            acc = 0.0
            for n in range(1, 5):
                vc = weights(cand, n)
                vr = weights(r, n)
                dot = sum(min(vc[g], vr[g]) * vr[g] for g in vc if g in vr)
                nc = math.sqrt(sum(v * v for v in vc.values()))
                nr = math.sqrt(sum(v * v for v in vr.values()))
                if nc != 0 and nr != 0:
                    dot /= nc * nr
                acc += dot * penalty
            per_pair += acc / 4
        total += per_pair / len(refs)
    return total / len(corpus)


def stem(word):
    for suffix in ("ing", "ed", "ly", "es", "s"):
        if word.endswith(suffix) and len(word) - len(suffix) >= 3:
            return word[: -len(suffix)]
    return word


def meteor_lite(corpus, alpha=0.9, gamma=0.5, beta=3.0):
    def align(cand, ref):
        pairs = {}
        taken = set()
        for key in (lambda w: w, stem):
            for i, w in enumerate(cand):
                if i in pairs:
                    continue
                free = [j for j, r in enumerate(ref) if j not in taken and key(r) == key(w)]
                if free:
                    pairs[i] = free[0]
                    taken.add(free[0])
        return sorted(pairs.items())

    def score(cand, ref):
        matched = align(cand, ref)
        m = len(matched)
        if m == 0:
            return 0.0
        chunks = 1
        for (i0, j0), (i1, j1) in zip(matched, matched[1:]):
            if not (i1 == i0 + 1 and j1 == j0 + 1):
                chunks += 1
        p = m / len(cand)
        r = m / len(ref)
        f = p * r / (alpha * p + (1 - alpha) * r)
        return f * (1 - gamma * (chunks / m) ** beta)

    return sum(max(score(c, r) for r in refs) for c, refs in corpus) / len(corpus)


def main():
    corpus = []
    with open(sys.argv[1]) as f:
        for line in f:
            if line.strip():
                row = json.loads(line)
                corpus.append((tokenize(row["candidate"]), [tokenize(r) for r in row["references"]]))
    for n in range(1, 5):
        print(f"bleu_{n} {bleu(corpus, n)!r}")
    print(f"rouge_l {rouge_l(corpus)!r}")
    print(f"cider_d {cider_d(corpus)!r}")
    print(f"meteor_lite {meteor_lite(corpus)!r}")


if __name__ == "__main__":
    main()
