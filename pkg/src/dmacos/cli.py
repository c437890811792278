"""Command-line entry point: prep, pretrain, train, eval, summarize."""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

from .asbt import AstNode, ToySyntaxError, method_name, parse_toy
from .checkpoint import Checkpoint, CheckpointError
from .corpus import (
    PROFILES,
    ConfigError,
    CorpusError,
    SplitSpec,
    Vocab,
    build_vocab,
    corpus_stats,
    make_sample,
    read_jsonl,
    read_samples,
    split_corpus,
    write_samples,
)
from .evaluation import evaluate, mask_eval, summarize
from .model import ModelConfig
from .training import TrainConfig, TrainingDiverged, initial_checkpoint, pretrain, train

log = logging.getLogger("dmacos")

SPLITS = ("train", "valid", "test")
MODEL_KEYS = ("hidden", "body_emb", "summary_emb", "type_emb")
TRAIN_KEYS = ("alpha", "beta", "lr", "batch_size", "max_epochs", "seed", "ablation", "max_grad_norm",
              "eval_every", "target_bleu", "log_fusion")


def git_blob_hash(data: bytes) -> str:
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def corpus_hash(corpus_dir) -> str:
    h = hashlib.sha1()
    for split in SPLITS:
        p = Path(corpus_dir) / ("%s.jsonl" % split)
        if p.exists():
            h.update(("%s %s\n" % (split, git_blob_hash(p.read_bytes()))).encode())
    return h.hexdigest()


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


class Run:
    """Collects the manifest for one command and writes it on exit."""

    def __init__(self, command: str, path, config: dict, seed: int):
        self.path = Path(path) if path else None
        self.manifest = {
            "command": command,
            "config": config,
            "seed": seed,
            "corpus_hashes": {},
            "started": _now(),
            "finished": None,
            "artifacts": [],
            "status": "running",
        }

    def artifact(self, path):
        self.manifest["artifacts"].append(str(path))

    def finish(self, status="ok", error=None):
        self.manifest["finished"] = _now()
        self.manifest["status"] = status
        if error:
            self.manifest["error"] = error
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text(json.dumps(self.manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def resolve_seed(args) -> int:
    if getattr(args, "seed", None) is not None:
        return int(args.seed)
    return int(os.environ.get("DMACOS_SEED", 0))


def merged_config(args, keys, profile_defaults: dict | None = None) -> dict:
    """CLI flag, then config file, then profile/default value."""
    file_cfg = {}
    if getattr(args, "config", None):
        file_cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
    out = dict(profile_defaults or {})
    for k in keys:
        if k in file_cfg:
            out[k] = file_cfg[k]
        v = getattr(args, k, None)
        if v is not None:
            out[k] = v
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_prep(args) -> int:
    seed = resolve_seed(args)
    profile = PROFILES[args.lang_profile]
    cfg = merged_config(args, ("name_len", "body_len", "summary_len", "body_vocab", "summary_vocab"),
                        dict(profile.__dict__))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    run = Run("prep", out / "manifest.json", {"lang_profile": args.lang_profile, **cfg}, seed)
    try:
        records = read_jsonl(args.input)
        samples = []
        for i, rec in enumerate(records, 1):
            rec.setdefault("id", "%06d" % i)
            try:
                samples.append(make_sample(rec))
            except (ValueError, KeyError) as e:
                raise CorpusError("%s: record %d: %s" % (args.input, i, e)) from None
        train_s, valid_s, test_s = split_corpus(samples, SplitSpec(seed=seed))
        for name, part in zip(SPLITS, (train_s, valid_s, test_s)):
            write_samples(out / ("%s.jsonl" % name), part)
            run.artifact(out / ("%s.jsonl" % name))
        bv = build_vocab((s.body_tokens for s in train_s), cfg["body_vocab"])
        sv = build_vocab((s.name_tokens + s.summary_tokens for s in train_s), cfg["summary_vocab"])
        bv.save(out / "body_vocab.txt")
        sv.save(out / "summary_vocab.txt")
        stats = {split: corpus_stats(part) for split, part in zip(SPLITS, (train_s, valid_s, test_s)) if part}
        stats["all"] = corpus_stats(samples)
        (out / "stats.json").write_text(json.dumps(stats, indent=1, sort_keys=True) + "\n", encoding="utf-8")
        (out / "prep.json").write_text(json.dumps({"lang_profile": args.lang_profile, **cfg}, indent=1,
                                                  sort_keys=True) + "\n", encoding="utf-8")
        for f in ("body_vocab.txt", "summary_vocab.txt", "stats.json", "prep.json"):
            run.artifact(out / f)
        run.manifest["corpus_hashes"]["output"] = corpus_hash(out)
        print("split %d/%d/%d  body vocab %d  summary vocab %d" % (
            len(train_s), len(valid_s), len(test_s), len(bv), len(sv)))
        print("mean name words in summary %.3f" % stats["all"]["mean_name_in_summary"])
    except Exception as e:
        run.finish("failed", str(e))
        raise
    run.finish()
    return 0


def _load_corpus(corpus_dir):
    d = Path(corpus_dir)
    if not d.is_dir() or not (d / "train.jsonl").exists():
        raise CorpusError("corpus directory %s not found or not prepared (run `dmacos prep`)" % d)
    prep = json.loads((d / "prep.json").read_text(encoding="utf-8"))
    splits = {s: read_samples(d / ("%s.jsonl" % s)) if (d / ("%s.jsonl" % s)).exists() else [] for s in SPLITS}
    return prep, splits, Vocab.load(d / "body_vocab.txt"), Vocab.load(d / "summary_vocab.txt")


def _start_checkpoint(args, prep, bv, sv, seed) -> Checkpoint:
    if getattr(args, "init", None):
        ckpt = Checkpoint.load(args.init)
        if ckpt.body_vocab != bv or ckpt.summary_vocab != sv:
            ckpt = ckpt.extend_vocab(bv, sv, seed=seed)
        return ckpt
    dims = merged_config(args, MODEL_KEYS, {"hidden": 256, "body_emb": 100, "summary_emb": 100, "type_emb": 28})
    cfg = ModelConfig(body_vocab=len(bv), summary_vocab=len(sv), name_len=prep["name_len"],
                      body_len=prep["body_len"], summary_len=prep["summary_len"], **dims)
    return initial_checkpoint(cfg, bv, sv, seed)


def _train_config(args, seed, **defaults) -> TrainConfig:
    cfg = merged_config(args, TRAIN_KEYS, defaults)
    cfg["seed"] = seed
    return TrainConfig(**cfg)


def cmd_pretrain(args) -> int:
    seed = resolve_seed(args)
    out = Path(args.out)
    tcfg = _train_config(args, seed)
    run = Run("pretrain", str(out) + ".manifest.json", tcfg.to_dict(), seed)
    try:
        prep, splits, bv, sv = _load_corpus(args.corpus)
        run.manifest["corpus_hashes"]["pretrain"] = corpus_hash(args.corpus)
        init = _start_checkpoint(args, prep, bv, sv, seed)
        res = pretrain(splits["train"], tcfg, init, on_epoch=lambda r: print(json.dumps(r)))
        res.checkpoint.extra["pretrain_corpus_hash"] = run.manifest["corpus_hashes"]["pretrain"]
        out.parent.mkdir(parents=True, exist_ok=True)
        res.checkpoint.save(out)
        hist = Path(str(out) + ".history.json")
        hist.write_text(json.dumps(res.history, indent=1) + "\n", encoding="utf-8")
        run.artifact(out)
        run.artifact(hist)
    except Exception as e:
        run.finish("failed", str(e))
        raise
    run.finish()
    return 0


def cmd_train(args) -> int:
    seed = resolve_seed(args)
    out = Path(args.out)
    tcfg = _train_config(args, seed)
    run = Run("train", str(out) + ".manifest.json", tcfg.to_dict(), seed)
    try:
        prep, splits, bv, sv = _load_corpus(args.corpus)
        run.manifest["corpus_hashes"]["train"] = corpus_hash(args.corpus)
        init = _start_checkpoint(args, prep, bv, sv, seed)
        if "pretrain_corpus_hash" in init.extra:
            run.manifest["corpus_hashes"]["pretrain"] = init.extra["pretrain_corpus_hash"]
        if args.init:
            run.manifest["init"] = str(args.init)
        valid = splits["valid"] or splits["train"]
        res = train(splits["train"], valid, tcfg, init, on_epoch=lambda r: print(json.dumps(r)))
        out.parent.mkdir(parents=True, exist_ok=True)
        res.checkpoint.save(out)
        hist = Path(str(out) + ".history.json")
        hist.write_text(json.dumps({"epochs": res.history, "steps": res.step_log}, indent=1) + "\n",
                        encoding="utf-8")
        run.artifact(out)
        run.artifact(hist)
        run.manifest["best_epoch"] = res.checkpoint.epoch
        run.manifest["best_valid_bleu4"] = res.checkpoint.metric
    except TrainingDiverged as e:
        run.finish("failed", str(e))
        raise
    except Exception as e:
        run.finish("failed", str(e))
        raise
    run.finish()
    return 0


def _write_report(rep, out: Path, run: Run):
    stem = out / rep.tag
    for suffix, text in ((".json", rep.to_json() + "\n"), (".txt", rep.to_table()), (".tsv", rep.to_tsv())):
        p = Path(str(stem) + suffix)
        p.write_text(text, encoding="utf-8")
        run.artifact(p)


def cmd_eval(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    run = Run("eval", out / "manifest.json", {"split": args.split, "masked": args.masked, "jobs": args.jobs},
              resolve_seed(args))
    try:
        ckpt = Checkpoint.load(args.ckpt)
        _, splits, bv, sv = _load_corpus(args.corpus)
        missing = [t for t in bv.itos if t not in ckpt.body_vocab] + [t for t in sv.itos if t not in ckpt.summary_vocab]
        if missing:
            raise ConfigError("corpus vocabulary has %d tokens unknown to the checkpoint (e.g. %r)"
                              % (len(missing), missing[0]))
        samples = splits[args.split]
        run.manifest["corpus_hashes"]["eval"] = corpus_hash(args.corpus)
        if args.masked:
            res = mask_eval(ckpt, samples, jobs=args.jobs)
            reports = [res["standard"], res["name_masked"]]
            delta = out / "delta.json"
            delta.write_text(json.dumps(res["delta"], indent=1, sort_keys=True) + "\n", encoding="utf-8")
            run.artifact(delta)
        else:
            reports = [evaluate(ckpt, samples, "standard", jobs=args.jobs)]
        for rep in reports:
            _write_report(rep, out, run)
            print(rep.to_table())
    except Exception as e:
        run.finish("failed", str(e))
        raise
    run.finish()
    return 0


def cmd_summarize(args) -> int:
    ckpt = Checkpoint.load(args.ckpt)
    if args.ast:
        try:
            tree = AstNode.from_json(Path(args.ast).read_text(encoding="utf-8"))
        except ValueError as e:
            raise ConfigError("bad AST file %s: %s" % (args.ast, e)) from e
    else:
        src = sys.stdin.read() if args.source in (None, "-") else args.source
        tree = parse_toy(src)
    name = args.name or method_name(tree)
    if not name:
        raise ConfigError("no method name: pass --name or a MethodDecl tree")
    sample = make_sample({"id": "input", "ast": tree.to_json(), "name": name, "summary": ""})
    s = summarize(ckpt, sample)
    print("generated name: %s" % " ".join(s.generated_name))
    if s.name_score is not None:
        print("informativeness: human %.4f  generated %.4f" % (s.name_score, s.gen_score))
    if s.fusion is not None:
        print("fusion weights: human %.4f  generated %.4f  (sum %.6f)" % (s.fusion[0], s.fusion[1], sum(s.fusion)))
    print("summary: %s" % " ".join(s.summary))
    if args.manifest:
        run = Run("summarize", args.manifest, {"ckpt": str(args.ckpt)}, resolve_seed(args))
        run.manifest["output"] = {"generated_name": s.generated_name, "summary": s.summary, "fusion": s.fusion}
        run.finish()
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_model_flags(p):
    p.add_argument("--hidden", type=int)
    p.add_argument("--body-emb", dest="body_emb", type=int)
    p.add_argument("--summary-emb", dest="summary_emb", type=int)
    p.add_argument("--type-emb", dest="type_emb", type=int)


def _add_train_flags(p):
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--max-grad-norm", dest="max_grad_norm", type=float)
    p.add_argument("--eval-every", dest="eval_every", type=int)
    p.add_argument("--target-bleu", dest="target_bleu", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="JSON file of defaults; flags override it")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dmacos", description="Two-pass code summarization with method names.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prep", help="build splits, vocabularies and statistics from JSONL")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lang-profile", dest="lang_profile", choices=sorted(PROFILES), default="toy")
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    for flag in ("name-len", "body-len", "summary-len", "body-vocab", "summary-vocab"):
        p.add_argument("--" + flag, dest=flag.replace("-", "_"), type=int)
    p.set_defaults(func=cmd_prep)

    p = sub.add_parser("pretrain", help="pre-train the name generator and informativeness scorer")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--init")
    _add_model_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="joint multi-task training")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--init")
    p.add_argument("--ablation", choices=("full", "no_mtl", "no_two_pass", "no_mnip"))
    p.add_argument("--log-fusion", dest="log_fusion", action="store_true", default=None)
    _add_model_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a prepared split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=SPLITS, default="test")
    p.add_argument("--masked", action="store_true", help="also evaluate with every method name replaced by UNK")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("summarize", help="generate a name and summary for one method")
    p.add_argument("--ckpt", required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--ast", help="neutral-format AST JSON file")
    g.add_argument("--source", help="demonstration-language source, or - for stdin")
    p.add_argument("--name", help="method name when the tree has no MethodDecl")
    p.add_argument("--manifest")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_summarize)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except ToySyntaxError as e:
        print("syntax error: %s" % e, file=sys.stderr)
    except (ConfigError, CorpusError, CheckpointError, TrainingDiverged, FileNotFoundError) as e:
        print("error: %s" % e, file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
