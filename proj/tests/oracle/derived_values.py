#!/usr/bin/env python3
"""Independent evaluation of the hand-computable reference values used by
the unit and acceptance tests. Exact arithmetic with fractions.Fraction.

Run: python3 tests/oracle/derived_values.py
"""
import math
from fractions import Fraction as F


def lm_scores(docs, speakers, query):
    """Candidate and document language-model scores, uniform p(d|e)."""
    total = sum(len(d) for d in docs)
    avg = F(total, len(docs))
    sources = sorted(set(speakers))
    assoc = {e: [i for i, s in enumerate(speakers) if s == e] for e in sources}
    bg = lambda t: F(sum(d.count(t) for d in docs), total)
    pdoc = lambda t, i: F(docs[i].count(t), len(docs[i]))
    beta_c = avg * sum(len(v) for v in assoc.values()) / len(sources)
    beta_d = avg
    out = {}
    for e in sources:
        ds = assoc[e]
        n_e = sum(len(docs[i]) for i in ds)
        lam = beta_c / (beta_c + n_e)
        cer = F(1)
        for t in set(query):
            model = sum(pdoc(t, i) * F(1, len(ds)) for i in ds)
            cer *= ((1 - lam) * model + lam * bg(t)) ** query.count(t)
        der = F(0)
        for i in ds:
            lam_d = beta_d / (beta_d + len(docs[i]))
            prod = F(1)
            for t in set(query):
                prod *= ((1 - lam_d) * pdoc(t, i) + lam_d * bg(t)) ** query.count(t)
            der += prod * F(1, len(ds))
        out[e] = (cer, der)
    return out


def main():
    s = lm_scores([["a", "b", "a"], ["c", "c"]], ["X", "Y"], ["a"])
    print("two-doc corpus, query 'a':")
    for e, (c, d) in s.items():
        print(f"  {e}: cer={c} ({float(c):.17g}) der={d} ({float(d):.17g})")
    print("  218/495 =", float(F(218, 495)), " 146/330 =", float(F(146, 330)))

    # Source whose document lacks every query term: strictly positive DER.
    s = lm_scores([["a", "b"], ["c", "d", "d"]], ["X", "Y"], ["a", "b"])
    print("absent-term corpus, query 'a b', source Y der =", s["Y"][1], float(s["Y"][1]))

    print("AP [A,X,B,Y] gold {A,B} =", (F(1, 1) + F(2, 3)) / 2)
    print("NDCG single gold at rank 3 = %.17g" % (1 / math.log2(3)))
    print("diversity (0,0),(1,0),(0,1) = %.17g" % ((1 + 1 + math.sqrt(2)) / 3))
    print("layer weighted [0.25,0.75] with 20/20 and 10/20 =", F(1, 4) * 1 + F(3, 4) * F(10, 20))


if __name__ == "__main__":
    main()
