"""Train a small model on the toy corpus and look inside one two-pass decode.

Shows the generated name from the first pass, the informativeness scores of
both names, the fusion weights and the per-step copy gate of the second pass.
"""

import sys

from dmacos import corpus, toy
from dmacos.evaluation import evaluate, mask_eval, summarize
from dmacos.model import ModelConfig
from dmacos.training import TrainConfig, initial_checkpoint, train

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 40

samples = [corpus.make_sample(r) for r in toy.toy_corpus(16, seed=0)]
bv = corpus.build_vocab([s.body_tokens for s in samples], 5000)
sv = corpus.build_vocab([s.name_tokens + s.summary_tokens for s in samples], 5000)
cfg = ModelConfig(len(bv), len(sv), hidden=32, body_emb=16, summary_emb=16, type_emb=4, body_len=80, summary_len=12)
init = initial_checkpoint(cfg, bv, sv, seed=0)


def show(row):
    if row["epoch"] % 10 == 0:
        print("epoch %3d  loss %.2f  cos %.2f  mng %.2f  mnip %.4f  bleu %.3f" % (
            row["epoch"], row["loss"], row["loss_cos"], row["loss_mng"], row["loss_mnip"], row["valid_bleu4"]))


res = train(samples, samples, TrainConfig(max_epochs=epochs, lr=0.005, batch_size=4, eval_every=10), init, show)
ckpt = res.checkpoint
print("\nkept epoch %d (training BLEU-4 %.3f)" % (ckpt.epoch, ckpt.metric))

s = samples[3]
out = summarize(ckpt, s)
print("\nhuman name     :", " ".join(s.name_tokens))
print("generated name :", " ".join(out.generated_name))
print("informativeness: human %.3f  generated %.3f" % (out.name_score, out.gen_score))
print("fusion weights : %.3f / %.3f" % tuple(out.fusion))
print("reference      :", " ".join(s.summary_tokens))
print("summary        :", " ".join(out.summary))

rep = evaluate(ckpt, samples)
print("\n" + rep.to_table())
delta = mask_eval(ckpt, samples)["delta"]
print("replacing every name by <unk> changes BLEU-4 by %+.3f" % delta["bleu4"])
