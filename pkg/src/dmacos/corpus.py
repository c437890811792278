"""Corpus construction: samples, vocabularies, masking, padding and splits."""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .asbt import IDENTIFIER_CODES, AsbtSequence, AstNode, TypeCode, method_name, parse_toy, split_subtokens, to_asbt

PAD, UNK, BOS, EOS, NAME_MASK = 0, 1, 2, 3, 4
RESERVED = ("<pad>", "<unk>", "<s>", "</s>", "<name>")
NAME_MASK_TOKEN = RESERVED[NAME_MASK]
UNK_TOKEN = RESERVED[UNK]


class CorpusError(ValueError):
    pass


class ConfigError(ValueError):
    pass


@dataclass
class LangProfile:
    name_len: int
    body_len: int
    summary_len: int
    body_vocab: int
    summary_vocab: int


PROFILES = {
    "java": LangProfile(10, 300, 13, 50000, 44707),
    "python": LangProfile(10, 100, 20, 50400, 31350),
    "toy": LangProfile(10, 120, 16, 5000, 5000),
}


@dataclass
class Sample:
    id: str
    body_tokens: list[str]
    body_types: list[int]
    name_tokens: list[str]
    summary_tokens: list[str]
    informativeness: float

    def __post_init__(self):
        if len(self.body_tokens) != len(self.body_types):
            raise CorpusError("sample %s: body tokens and types differ in length" % self.id)

    def to_json(self) -> str:
        return json.dumps(asdict(self), ensure_ascii=False)

    @classmethod
    def from_dict(cls, d: dict) -> "Sample":
        return cls(
            id=str(d["id"]),
            body_tokens=list(d["body_tokens"]),
            body_types=[int(t) for t in d["body_types"]],
            name_tokens=list(d["name_tokens"]),
            summary_tokens=list(d["summary_tokens"]),
            informativeness=float(d["informativeness"]),
        )


# ---------------------------------------------------------------------------
# scores


def overlap(a: Iterable[str], b: Iterable[str]) -> float:
    """Fraction of the distinct words of ``a`` that also occur in ``b``."""
    sa = set(a)
    if not sa:
        raise CorpusError("overlap of an empty token list")
    return len(sa & set(b)) / len(sa)


def informativeness_score(name_tokens: Sequence[str], summary_tokens: Sequence[str]) -> float:
    """Share of distinct name words that appear verbatim in the summary."""
    if not name_tokens:
        raise CorpusError("informativeness needs a nonempty name")
    return overlap(name_tokens, summary_tokens)


def tokenize_summary(text: str) -> list[str]:
    return re.findall(r"[a-z0-9]+", text.lower())


def mask_name(body: AsbtSequence, name_tokens: Sequence[str]) -> AsbtSequence:
    """Replace each whole identifier spelling the method name with ``<name>``.

    Matching is case-insensitive and only considers complete identifiers
    (a 3..5 run or a single 6-coded sub-token), so a name that is merely a
    prefix of a longer identifier is left alone.
    """
    if not name_tokens:
        return AsbtSequence(list(body.tokens), list(body.types))
    target = [t.lower() for t in name_tokens]
    n = len(target)
    single = n == 1
    toks, types = body.tokens, body.types
    out_t: list[str] = []
    out_c: list[int] = []
    i = 0
    while i < len(toks):
        code = types[i]
        hit = False
        if single and code == TypeCode.TOKEN_SINGLE:
            hit = toks[i].lower() == target[0]
        elif not single and code == TypeCode.TOKEN_BEGIN and i + n <= len(toks):
            span = types[i:i + n]
            hit = (
                span[-1] == TypeCode.TOKEN_END
                and all(c == TypeCode.TOKEN_MID for c in span[1:-1])
                and [t.lower() for t in toks[i:i + n]] == target
            )
        if hit:
            out_t.append(NAME_MASK_TOKEN)
            out_c.append(int(TypeCode.TOKEN_SINGLE))
            i += n
        else:
            out_t.append(toks[i])
            out_c.append(code)
            i += 1
    return AsbtSequence(out_t, out_c)


def lowercase_identifiers(seq: AsbtSequence) -> AsbtSequence:
    toks = [t.lower() if c in IDENTIFIER_CODES else t for t, c in zip(seq.tokens, seq.types)]
    return AsbtSequence(toks, list(seq.types))


# ---------------------------------------------------------------------------
# vocabulary


class Vocab:
    """Token <-> id map with five reserved entries at the front."""

    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[:len(RESERVED)]) != RESERVED:
            raise ConfigError("vocabulary must start with the reserved tokens %s" % (RESERVED,))
        self.itos = list(tokens)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ConfigError("duplicate vocabulary entries")

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.itos == other.itos

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(t, UNK) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        """Tokens for ``ids``, dropping PAD/BOS and stopping at EOS."""
        out = []
        for i in ids:
            if i == EOS:
                break
            if i in (PAD, BOS):
                continue
            out.append(self.itos[i])
        return out

    def to_list(self) -> list[str]:
        return list(self.itos)

    def save(self, path):
        Path(path).write_text("\n".join(self.itos) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        return cls(Path(path).read_text(encoding="utf-8").rstrip("\n").split("\n"))


def build_vocab(streams: Iterable[Iterable[str]], cap: int) -> Vocab:
    """Keep the ``cap - 5`` most frequent tokens, ties broken alphabetically."""
    if cap <= len(RESERVED):
        raise ConfigError("vocabulary cap %d leaves no room beside %d reserved tokens" % (cap, len(RESERVED)))
    counts: Counter[str] = Counter()
    for s in streams:
        counts.update(s)
    for r in RESERVED:
        counts.pop(r, None)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocab(list(RESERVED) + [t for t, _ in ranked[:cap - len(RESERVED)]])


def encode_and_pad(tokens: Sequence[str], vocab: Vocab, max_len: int, wrap: bool = False) -> list[int]:
    """Ids for ``tokens`` truncated and right-padded to ``max_len``.

    With ``wrap`` the ids are enclosed in BOS ... EOS before truncation, as
    decoder targets are.
    """
    if max_len < 1:
        raise ConfigError("max_len must be at least 1")
    ids = vocab.encode(tokens)
    if wrap:
        ids = [BOS] + ids + [EOS]
    ids = ids[:max_len]
    return ids + [PAD] * (max_len - len(ids))


# ---------------------------------------------------------------------------
# sample construction and IO


def make_sample(record: dict) -> Sample:
    """Turn one input record (AST, toy source or pre-flattened body) into a Sample."""
    rid = str(record.get("id", ""))
    name = record.get("name")
    if "body_tokens" in record:
        body = AsbtSequence(list(record["body_tokens"]), [int(t) for t in record["body_types"]])
    else:
        if "ast" in record:
            tree = AstNode.from_json(record["ast"])
        elif "source" in record:
            tree = parse_toy(record["source"])
        else:
            raise CorpusError("record %s has neither ast, source nor body_tokens" % rid)
        if name is None:
            name = method_name(tree)
        body = to_asbt(tree)
    if not name:
        raise CorpusError("record %s has no method name" % rid)
    name_tokens = record.get("name_tokens") or split_subtokens(name)
    if "summary_tokens" in record:
        summary_tokens = list(record["summary_tokens"])
    else:
        summary_tokens = tokenize_summary(record.get("summary", ""))
    body = mask_name(lowercase_identifiers(body), name_tokens)
    return Sample(
        id=rid,
        body_tokens=body.tokens,
        body_types=body.types,
        name_tokens=list(name_tokens),
        summary_tokens=summary_tokens,
        informativeness=informativeness_score(name_tokens, summary_tokens),
    )


def read_jsonl(path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusError("%s:%d: malformed JSON (%s)" % (path, lineno, e.msg)) from None
            if not isinstance(obj, dict):
                raise CorpusError("%s:%d: expected a JSON object" % (path, lineno))
            out.append(obj)
    return out


def read_samples(path) -> list[Sample]:
    return [Sample.from_dict(d) for d in read_jsonl(path)]


def write_samples(path, samples: Iterable[Sample]):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in samples:
            fh.write(s.to_json() + "\n")


# ---------------------------------------------------------------------------
# splits and statistics


@dataclass
class SplitSpec:
    train: float = 0.90
    valid: float = 0.05
    test: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if min(self.train, self.valid, self.test) < 0 or abs(self.train + self.valid + self.test - 1.0) > 1e-9:
            raise ConfigError("split fractions must be nonnegative and sum to 1")


def split_corpus(samples: Sequence, split: SplitSpec) -> tuple[list, list, list]:
    """Shuffle with ``split.seed`` and cut into train/valid/test."""
    n = len(samples)
    order = np.random.default_rng(split.seed).permutation(n)
    n_train = int(round(n * split.train))
    n_valid = int(round(n * split.valid))
    n_valid = min(n_valid, n - n_train)
    parts = (order[:n_train], order[n_train:n_train + n_valid], order[n_train + n_valid:])
    return tuple([samples[i] for i in part] for part in parts)


def corpus_stats(samples: Sequence[Sample]) -> dict:
    if not samples:
        raise CorpusError("statistics of an empty corpus")
    name_to_summary = [overlap(s.name_tokens, s.summary_tokens) for s in samples]
    summary_to_name = [overlap(s.summary_tokens, s.name_tokens) if s.summary_tokens else 0.0 for s in samples]
    return {
        "samples": len(samples),
        "mean_name_in_summary": float(np.mean(name_to_summary)),
        "mean_summary_in_name": float(np.mean(summary_to_name)),
        "fully_covered_names": float(np.mean([v == 1.0 for v in name_to_summary])),
    }
