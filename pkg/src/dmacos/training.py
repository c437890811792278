"""Losses, optimisation, pre-training and multi-task training."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import Checkpoint
from .corpus import ConfigError, Sample, Vocab
from .rng import rng_stream
from .model import DMACOS, SUMMARY_ONLY_PARAMS, VARIANTS, ModelConfig, ModelInput, encode_sample

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    alpha: float = 0.1
    beta: float = 0.1
    lr: float = 0.001
    batch_size: int = 8
    max_epochs: int = 10
    seed: int = 0
    ablation: str = "full"
    max_grad_norm: float | None = None
    eval_every: int = 1
    # stop once validation BLEU-4 reaches this value
    target_bleu: float | None = None
    log_fusion: bool = False

    def __post_init__(self):
        if self.ablation not in VARIANTS:
            raise ConfigError("unknown ablation %r (expected one of %s)" % (self.ablation, ", ".join(VARIANTS)))
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("alpha and beta must be nonnegative")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch size must be at least 1")

    def to_dict(self) -> dict:
        return asdict(self)


class TrainingDiverged(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# losses


def sequence_nll(dists: Sequence[Tensor], targets: Sequence[int]) -> Tensor:
    """-sum_t log p_t[target_t], with log clamped at 1e-12."""
    total = None
    for d, t in zip(dists, targets):
        term = ad.log(ad.take(d, int(t)))
        total = term if total is None else total + term
    return -total


@dataclass
class BatchLosses:
    cos: Tensor | None = None
    mng: Tensor | None = None
    mnip: Tensor | None = None
    cos_tokens: int = 0
    mng_tokens: int = 0
    fusion: list[list[float]] = field(default_factory=list)

    def per_token(self) -> dict:
        out = {}
        if self.cos is not None:
            out["cos"] = self.cos.item() / max(self.cos_tokens, 1)
        if self.mng is not None:
            out["mng"] = self.mng.item() / max(self.mng_tokens, 1)
        return out


def _sum(terms):
    total = None
    for t in terms:
        total = t if total is None else total + t
    return total


def batch_losses(model: DMACOS, batch: Sequence[ModelInput], variant: str = "full", tasks=("cos", "mng", "mnip")) -> BatchLosses:
    """Summed NLLs and mean squared score error over ``batch``, from one forward pass per sample."""
    if not batch:
        raise ad.ContractError("empty batch")
    out = BatchLosses()
    cos, mng, mnip = [], [], []
    for inp in batch:
        res = model.forward(inp, variant, tasks)
        if res.summary_decode is not None:
            cos.append(sequence_nll(res.summary_decode.step_distributions, inp.summary_target))
            out.cos_tokens += len(inp.summary_target)
        if res.name_decode is not None:
            mng.append(sequence_nll(res.name_decode.step_distributions, inp.name_target))
            out.mng_tokens += len(inp.name_target)
        if "mnip" in tasks and res.name_score is not None:
            diff = res.name_score - inp.golden
            mnip.append(diff * diff)
        if res.fusion is not None:
            out.fusion.append([float(v) for v in res.fusion.values])
    out.cos = _sum(cos)
    out.mng = _sum(mng)
    if mnip:
        out.mnip = ad.scale(_sum(mnip), 1.0 / len(mnip))
    return out


def loss_cos(model: DMACOS, batch: Sequence[ModelInput], variant: str = "full") -> Tensor:
    return batch_losses(model, batch, variant, ("cos",)).cos


def loss_mng(model: DMACOS, batch: Sequence[ModelInput]) -> Tensor:
    return batch_losses(model, batch, "full", ("mng",)).mng


def loss_mnip(model: DMACOS, batch: Sequence[ModelInput]) -> Tensor:
    return batch_losses(model, batch, "full", ("mnip",)).mnip


def variant_tasks(cfg: TrainConfig) -> tuple[tuple[str, ...], float, float]:
    """Tasks to run and the effective (alpha, beta) for the configured ablation."""
    if cfg.ablation == "no_mtl":
        return ("cos",), 0.0, 0.0
    if cfg.ablation in ("no_two_pass", "no_mnip"):
        return ("cos", "mng"), cfg.alpha, 0.0
    return ("cos", "mng", "mnip"), cfg.alpha, cfg.beta


def combine(losses: BatchLosses, alpha: float, beta: float) -> Tensor:
    total = losses.cos
    if losses.mng is not None and alpha:
        total = total + ad.scale(losses.mng, alpha)
    if losses.mnip is not None and beta:
        total = total + ad.scale(losses.mnip, beta)
    return total


def joint_loss(model: DMACOS, batch: Sequence[ModelInput], cfg: TrainConfig) -> Tensor:
    """loss_cos + alpha * loss_mng + beta * loss_mnip, shaped by the ablation."""
    tasks, alpha, beta = variant_tasks(cfg)
    return combine(batch_losses(model, batch, cfg.ablation, tasks), alpha, beta)


# ---------------------------------------------------------------------------
# optimiser


class Adam:
    """Adam over a named parameter dict; tensors with no gradient are skipped."""

    def __init__(self, params: dict[str, Tensor], lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(p.values) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.values) for k, p in params.items()}
        self.t = {k: 0 for k in params}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            self.t[k] += 1
            t = self.t[k]
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            m_hat = m / (1 - self.beta1 ** t)
            v_hat = v / (1 - self.beta2 ** t)
            p.values -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def clip_grad_norm(params: dict[str, Tensor], max_norm: float) -> float:
    grads = [p.grad for p in params.values() if p.grad is not None]
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if norm > max_norm:
        for g in grads:
            g *= max_norm / norm
    return norm


# ---------------------------------------------------------------------------
# loops


def make_batches(inputs: Sequence[ModelInput], batch_size: int, rng: np.random.Generator) -> list[list[ModelInput]]:
    """Shuffle, sort pools of a few batches by body length, then shuffle the batches."""
    order = rng.permutation(len(inputs))
    pool = batch_size * 4
    batches = []
    for lo in range(0, len(order), pool):
        chunk = sorted(order[lo:lo + pool], key=lambda i: (len(inputs[i].body_ids), i))
        for b in range(0, len(chunk), batch_size):
            batches.append([inputs[i] for i in chunk[b:b + batch_size]])
    perm = rng.permutation(len(batches))
    return [batches[i] for i in perm]


def _finite_or_raise(value: float, what: str, epoch: int, batch: Sequence[ModelInput]):
    if not math.isfinite(value):
        ids = ", ".join(inp.id for inp in batch[:5])
        raise TrainingDiverged("non-finite %s at epoch %d (batch starting with %s)" % (what, epoch, ids))


def _check_params(params: dict[str, Tensor], epoch: int):
    for k, p in params.items():
        if not np.all(np.isfinite(p.values)):
            raise TrainingDiverged("parameter %s became non-finite at epoch %d" % (k, epoch))


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[dict]
    step_log: list[dict] = field(default_factory=list)


def encode_all(samples: Sequence[Sample], ckpt: Checkpoint) -> list[ModelInput]:
    return [encode_sample(s, ckpt.body_vocab, ckpt.summary_vocab, ckpt.model_config) for s in samples]


def initial_checkpoint(model_cfg: ModelConfig, body_vocab: Vocab, summary_vocab: Vocab, seed: int) -> Checkpoint:
    if model_cfg.body_vocab != len(body_vocab) or model_cfg.summary_vocab != len(summary_vocab):
        raise ConfigError("model config vocabulary sizes do not match the vocabularies")
    return Checkpoint.from_model(DMACOS(model_cfg, seed=seed), body_vocab, summary_vocab)


def pretrain(
    samples: Sequence[Sample],
    cfg: TrainConfig,
    init: Checkpoint,
    on_epoch: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Optimise only the name-generation and informativeness parameters.

    The objective is loss_mng + beta * loss_mnip.  Parameters read only by the
    summary decoder are not handed to the optimiser and stay as they were.
    """
    if not samples:
        raise ad.ContractError("pre-training needs a nonempty corpus")
    model = init.model()
    trainable = {k: p for k, p in model.params.items() if k not in SUMMARY_ONLY_PARAMS}
    opt = Adam(trainable, lr=cfg.lr)
    inputs = encode_all(samples, init)
    rng = rng_stream(cfg.seed, "batches")
    history = []
    for epoch in range(1, cfg.max_epochs + 1):
        tot_mng = tot_mnip = 0.0
        tokens = 0
        for batch in make_batches(inputs, cfg.batch_size, rng):
            opt.zero_grad()
            losses = batch_losses(model, batch, "full", ("mng", "mnip"))
            loss = losses.mng + ad.scale(losses.mnip, cfg.beta) if cfg.beta else losses.mng
            _finite_or_raise(loss.item(), "pre-training loss", epoch, batch)
            ad.backward(loss)
            if cfg.max_grad_norm:
                clip_grad_norm(trainable, cfg.max_grad_norm)
            opt.step()
            tot_mng += losses.mng.item()
            tot_mnip += losses.mnip.item() * len(batch)
            tokens += losses.mng_tokens
        _check_params(model.params, epoch)
        row = {"epoch": epoch, "loss_mng": tot_mng, "loss_mng_per_token": tot_mng / max(tokens, 1),
               "loss_mnip": tot_mnip / len(inputs)}
        history.append(row)
        log.info("pretrain epoch %d: %s", epoch, row)
        if on_epoch:
            on_epoch(row)
    ckpt = Checkpoint.from_model(
        model, init.body_vocab, init.summary_vocab,
        train_config={**cfg.to_dict(), "stage": "pretrain"}, epoch=cfg.max_epochs,
    )
    return TrainResult(ckpt, history)


def epoch_losses(model: DMACOS, inputs: Sequence[ModelInput], cfg: TrainConfig) -> dict:
    """Loss components over ``inputs`` at the current parameters (no update)."""
    tasks, alpha, beta = variant_tasks(cfg)
    with ad.no_grad():
        losses = batch_losses(model, inputs, cfg.ablation, tasks)
    out = {"loss_cos": losses.cos.item()}
    if losses.mng is not None:
        out["loss_mng"] = losses.mng.item()
    if losses.mnip is not None:
        out["loss_mnip"] = losses.mnip.item()
    out["loss"] = combine(losses, alpha, beta).item()
    return out


def train(
    train_samples: Sequence[Sample],
    valid_samples: Sequence[Sample],
    cfg: TrainConfig,
    init: Checkpoint,
    on_epoch: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Joint multi-task training with validation-based model selection.

    Each epoch runs shuffled minibatches through the two-pass forward, steps
    Adam on the joint loss, then scores BLEU-4 on ``valid_samples``.  The
    returned checkpoint is the epoch with the best validation BLEU-4 (the
    earliest on ties); with no epochs it is ``init`` itself.
    """
    from .evaluation import evaluate

    model = init.model()
    tasks, alpha, beta = variant_tasks(cfg)
    opt = Adam(model.params, lr=cfg.lr)
    inputs = encode_all(train_samples, init)
    rng = rng_stream(cfg.seed, "batches")
    meta = {**cfg.to_dict(), "stage": "train"}
    best = Checkpoint.from_model(model, init.body_vocab, init.summary_vocab, train_config=meta, epoch=0,
                                 extra=dict(init.extra))
    best_bleu = -1.0
    history, step_log = [], []
    step = 0
    for epoch in range(1, cfg.max_epochs + 1):
        ad.reset_clamp_events()
        sums = {"loss": 0.0, "loss_cos": 0.0, "loss_mng": 0.0, "loss_mnip": 0.0}
        for batch in make_batches(inputs, cfg.batch_size, rng):
            opt.zero_grad()
            losses = batch_losses(model, batch, cfg.ablation, tasks)
            loss = combine(losses, alpha, beta)
            _finite_or_raise(loss.item(), "training loss", epoch, batch)
            ad.backward(loss)
            if cfg.max_grad_norm:
                clip_grad_norm(model.params, cfg.max_grad_norm)
            opt.step()
            step += 1
            sums["loss"] += loss.item()
            sums["loss_cos"] += losses.cos.item()
            if losses.mng is not None:
                sums["loss_mng"] += losses.mng.item()
            if losses.mnip is not None:
                sums["loss_mnip"] += losses.mnip.item() * len(batch)
            if cfg.log_fusion:
                step_log.append({"step": step, "epoch": epoch, "fusion": losses.fusion})
        _check_params(model.params, epoch)
        row = {"epoch": epoch, **sums, "clamp_events": ad.reset_clamp_events()}
        row["loss_mnip"] /= len(inputs)
        snapshot = None
        if valid_samples and (epoch % cfg.eval_every == 0 or epoch == cfg.max_epochs):
            snapshot = Checkpoint.from_model(model, init.body_vocab, init.summary_vocab, train_config=meta,
                                             epoch=epoch, extra=dict(init.extra))
            row["valid_bleu4"] = evaluate(snapshot, valid_samples).bleu4
        elif not valid_samples:
            snapshot = Checkpoint.from_model(model, init.body_vocab, init.summary_vocab, train_config=meta,
                                             epoch=epoch, extra=dict(init.extra))
            row["valid_bleu4"] = None
        history.append(row)
        log.info("epoch %d: %s", epoch, row)
        if on_epoch:
            on_epoch(row)
        if snapshot is not None:
            score = row["valid_bleu4"]
            if score is None or score > best_bleu:
                best_bleu = -1.0 if score is None else score
                snapshot.metric = score
                best = snapshot
            if score is not None and cfg.target_bleu is not None and score >= cfg.target_bleu:
                break
    return TrainResult(best, history, step_log)
