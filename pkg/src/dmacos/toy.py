"""Synthetic corpora in the demonstration language.

Each method is built from a verb and one or two nouns.  The body calls helpers
whose names echo those words, and the summary is drawn from a few templates,
some of which paraphrase the name so the informativeness scores vary.
"""

from __future__ import annotations

import numpy as np

from .asbt import parse_toy

VERBS = {
    "load": ("read", "fetch"),
    "save": ("write", "store"),
    "parse": ("split", "decode"),
    "format": ("render", "pad"),
    "update": ("merge", "apply"),
    "compute": ("sum", "scale"),
    "send": ("open", "push"),
    "check": ("test", "verify"),
    "build": ("make", "join"),
    "remove": ("drop", "clear"),
    "find": ("scan", "match"),
    "close": ("flush", "release"),
}

NOUNS = (
    "user", "config", "file", "state", "decimal", "message", "record", "cache",
    "table", "client", "token", "buffer", "index", "report", "session", "path",
)

PARAPHRASE = {
    "load": "retrieves", "save": "persists", "parse": "reads", "format": "renders",
    "update": "changes", "compute": "calculates", "send": "transmits", "check": "validates",
    "build": "assembles", "remove": "deletes", "find": "locates", "close": "releases",
}

TEMPLATES = (
    "{verb} the {nouns}",
    "{verb} the {nouns} from {arg}",
    "{para} the given {nouns}",
    "{verb} {nouns} and return it",
    "{para} a {last} for the {arg}",
)


def _camel(words):
    return words[0] + "".join(w.capitalize() for w in words[1:])


def make_method(rng: np.random.Generator, verb: str, nouns: list[str]) -> dict:
    helpers = VERBS[verb]
    arg = NOUNS[int(rng.integers(len(NOUNS)))]
    name = _camel([verb] + nouns)
    lines = []
    cur = arg
    for i, noun in enumerate(nouns):
        var = "%s_%s" % (noun, "data" if i == 0 else "value")
        helper = "%s_%s" % (helpers[i % len(helpers)], noun)
        lines.append("%s = %s(%s)" % (var, helper, cur))
        cur = var
    if rng.random() < 0.5:
        lines.append("%s(%s, %d)" % (helpers[-1], cur, int(rng.integers(1, 9))))
    if rng.random() < 0.3:
        # recursive call, so the masked name shows up in the body
        lines.append("%s(%s)" % (name, cur))
    source = "def %s(%s) {\n  %s\n}" % (name, arg, "\n  ".join(lines))
    template = TEMPLATES[int(rng.integers(len(TEMPLATES)))]
    summary = template.format(verb=verb, para=PARAPHRASE[verb], nouns=" ".join(nouns), last=nouns[-1], arg=arg)
    return {"name": name, "source": source, "summary": summary}


def toy_corpus(n: int, seed: int = 0, prefix: str = "toy", verbs=None, nouns=None) -> list[dict]:
    """``n`` distinct records with ``id``, ``ast``, ``source``, ``name``, ``summary``.

    ``verbs``/``nouns`` restrict the word pools, which makes it easy to build
    two corpora that share no methods.
    """
    verbs = list(verbs or VERBS)
    nouns = list(nouns or NOUNS)
    rng = np.random.default_rng(seed)
    seen = set()
    out = []
    attempts = 0
    while len(out) < n:
        attempts += 1
        if attempts > 100 * n + 1000:
            raise ValueError("word pools too small for %d distinct methods" % n)
        verb = verbs[int(rng.integers(len(verbs)))]
        k = 1 + int(rng.random() < 0.6)
        picked = [nouns[int(i)] for i in rng.choice(len(nouns), size=k, replace=False)]
        key = (verb, tuple(picked))
        if key in seen:
            continue
        seen.add(key)
        rec = make_method(rng, verb, picked)
        rec = {"id": "%s-%04d" % (prefix, len(out)), **rec}
        rec["ast"] = parse_toy(rec["source"]).to_json()
        out.append(rec)
    return out
