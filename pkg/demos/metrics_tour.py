"""Corpus BLEU-4, ROUGE-L and the simplified METEOR on a few hand-picked pairs."""

from dmacos.metrics import bleu4, corpus_scores, meteor_lite, rouge_l

pairs = [
    ("returns the user name", "returns the user name"),
    ("the cat sat on the mat", "the cat sat on the"),
    ("load the config from path", "load config from the path"),
    ("delete the cache entry", "compute a checksum"),
]
refs = [r.split() for r, _ in pairs]
cands = [c.split() for _, c in pairs]

for ref, cand in zip(refs, cands):
    print("%-28s | %-28s bleu %.3f  rouge %.3f  meteor %.3f" % (
        " ".join(ref), " ".join(cand), bleu4([ref], [cand]), rouge_l(ref, cand), meteor_lite(ref, cand)))

print("\ncorpus:", {k: round(v, 4) for k, v in corpus_scores(refs, cands).items()})
