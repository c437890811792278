"""Two-pass deliberation multi-task code summarization.

A first pass generates a method name from the aSBT-flattened body; a second
pass writes the summary while attending to the body, the human-written name
and the generated name, weighted by predicted name informativeness.
"""

from .asbt import AstNode, AsbtSequence, parse_toy, split_subtokens, to_asbt, to_sbt
from .checkpoint import Checkpoint
from .corpus import Sample, Vocab, build_vocab, informativeness_score, make_sample
from .evaluation import evaluate, mask_eval, summarize
from .metrics import bleu4, meteor_lite, rouge_l
from .model import DMACOS, ModelConfig
from .training import TrainConfig, pretrain, train

__all__ = [
    "AstNode", "AsbtSequence", "parse_toy", "split_subtokens", "to_asbt", "to_sbt",
    "Checkpoint",
    "Sample", "Vocab", "build_vocab", "informativeness_score", "make_sample",
    "evaluate", "mask_eval", "summarize",
    "bleu4", "meteor_lite", "rouge_l",
    "DMACOS", "ModelConfig",
    "TrainConfig", "pretrain", "train",
]

__version__ = "0.1.0"
