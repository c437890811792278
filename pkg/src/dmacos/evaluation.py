"""Two-pass inference, metric reports and the masked-name experiment."""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

from . import autodiff as ad
from .checkpoint import Checkpoint
from .corpus import UNK_TOKEN, Sample, Vocab
from .metrics import BLEU_SMOOTHING, ROUGE_BETA2, bleu4, meteor_lite, rouge_l
from .model import DMACOS, ModelInput, encode_sample, ids_to_tokens


@dataclass
class Summary:
    id: str
    summary: list[str]
    generated_name: list[str]
    name_score: float | None = None
    gen_score: float | None = None
    fusion: list[float] | None = None


def summarize_input(model: DMACOS, inp: ModelInput, summary_vocab: Vocab, variant: str = "full") -> Summary:
    """Greedy name first, then greedy summary conditioned on it."""
    with ad.no_grad():
        res = model.forward(inp, variant, tasks=("cos",), greedy=True)
    dec = res.summary_decode
    return Summary(
        id=inp.id,
        summary=ids_to_tokens(dec.token_ids, summary_vocab, inp.oov),
        generated_name=ids_to_tokens(res.generated_name or [], summary_vocab, inp.oov),
        name_score=None if res.name_score is None else res.name_score.item(),
        gen_score=None if res.gen_score is None else res.gen_score.item(),
        fusion=None if res.fusion is None else [float(v) for v in res.fusion.values],
    )


def summarize(ckpt: Checkpoint, sample: Sample, model: DMACOS | None = None) -> Summary:
    model = model or ckpt.model()
    inp = encode_sample(sample, ckpt.body_vocab, ckpt.summary_vocab, ckpt.model_config)
    return summarize_input(model, inp, ckpt.summary_vocab, ckpt.train_config.get("ablation", "full"))


def config_hash(ckpt: Checkpoint) -> str:
    blob = json.dumps({"model": ckpt.model_config.to_dict(), "train": ckpt.train_config}, sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


@dataclass
class MetricReport:
    bleu4: float
    rouge_l: float
    meteor_lite: float
    tag: str
    config_hash: str
    rows: list[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, ensure_ascii=False, indent=1)

    def to_table(self) -> str:
        lines = [
            "experiment   %s" % self.tag,
            "config       %s" % self.config_hash,
            "samples      %d" % len(self.rows),
            "%-12s %8s %8s" % ("metric", "[0,1]", "x100"),
        ]
        for key in ("bleu4", "rouge_l", "meteor_lite"):
            v = getattr(self, key)
            lines.append("%-12s %8.4f %8.2f" % (key, v, 100 * v))
        lines.append("bleu smoothing: %s" % self.meta.get("bleu_smoothing", ""))
        return "\n".join(lines) + "\n"

    def to_tsv(self) -> str:
        head = "id\treference\tcandidate\tgenerated_name\tname_score\tgen_score\tfusion"
        out = [head]
        for r in self.rows:
            out.append("\t".join([
                r["id"],
                " ".join(r["reference"]),
                " ".join(r["candidate"]),
                " ".join(r["generated_name"]),
                "" if r["name_score"] is None else repr(r["name_score"]),
                "" if r["gen_score"] is None else repr(r["gen_score"]),
                "" if r["fusion"] is None else " ".join(repr(v) for v in r["fusion"]),
            ]))
        return "\n".join(out) + "\n"


def evaluate(ckpt: Checkpoint, samples: Sequence[Sample], tag: str = "standard", jobs: int = 1) -> MetricReport:
    if not samples:
        raise ad.ContractError("evaluation needs at least one sample")
    model = ckpt.model()

    def one(s):
        return summarize(ckpt, s, model)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outs = list(pool.map(one, samples))
    else:
        outs = [one(s) for s in samples]
    refs = [s.summary_tokens for s in samples]
    cands = [o.summary for o in outs]
    rows = []
    for s, o in zip(samples, outs):
        rows.append({
            "id": s.id,
            "reference": s.summary_tokens,
            "candidate": o.summary,
            "generated_name": o.generated_name,
            "name_score": o.name_score,
            "gen_score": o.gen_score,
            "fusion": o.fusion,
            "rouge_l": rouge_l(s.summary_tokens, o.summary) if s.summary_tokens else 0.0,
            "meteor_lite": meteor_lite(s.summary_tokens, o.summary) if s.summary_tokens else 0.0,
        })
    n = len(rows)
    return MetricReport(
        bleu4=bleu4(refs, cands),
        rouge_l=sum(r["rouge_l"] for r in rows) / n,
        meteor_lite=sum(r["meteor_lite"] for r in rows) / n,
        tag=tag,
        config_hash=config_hash(ckpt),
        rows=rows,
        meta={"bleu_smoothing": BLEU_SMOOTHING, "bleu_aggregation": "corpus", "rouge_beta2": ROUGE_BETA2},
    )


def mask_names(sample: Sample) -> Sample:
    """The sample as seen with an uninformative name: a single UNK token."""
    return replace(sample, name_tokens=[UNK_TOKEN])


def mask_eval(ckpt: Checkpoint, samples: Sequence[Sample], jobs: int = 1) -> dict:
    """Evaluate with the real names and again with every name replaced by UNK."""
    standard = evaluate(ckpt, samples, "standard", jobs)
    masked = evaluate(ckpt, [mask_names(s) for s in samples], "name_masked", jobs)
    delta = {k: getattr(masked, k) - getattr(standard, k) for k in ("bleu4", "rouge_l", "meteor_lite")}
    return {"standard": standard, "name_masked": masked, "delta": delta}
