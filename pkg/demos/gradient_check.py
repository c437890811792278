"""Check the hand-written backward rules of a full DMACOS joint loss against finite differences."""

from dmacos import autodiff as ad
from dmacos import corpus, toy
from dmacos.model import DMACOS, ModelConfig, encode_sample
from dmacos.training import TrainConfig, joint_loss

samples = [corpus.make_sample(r) for r in toy.toy_corpus(2, seed=0)]
bv = corpus.build_vocab([s.body_tokens for s in samples], 100)
sv = corpus.build_vocab([s.name_tokens + s.summary_tokens for s in samples], 100)
cfg = ModelConfig(len(bv), len(sv), hidden=16, body_emb=16, summary_emb=16, type_emb=4,
                  body_len=40, summary_len=12, name_len=6)
model = DMACOS(cfg, seed=0)
inputs = [encode_sample(s, bv, sv, cfg) for s in samples]

loss = joint_loss(model, inputs, TrainConfig())
print("joint loss: %.4f  (graph of %d nodes)" % (loss.item(), len(ad.Tape.from_loss(loss))))

report = ad.grad_check(lambda: joint_loss(model, inputs, TrainConfig()), model.params, eps=1e-4, max_components=16)
for name, err in sorted(report.items(), key=lambda kv: -kv[1]):
    print("  %-20s worst relative error %.2e" % (name, err))
