"""The two-pass deliberation network.

Pass one encodes the (name-masked) aSBT body and greedily decodes a method
name.  Pass two encodes both the human-written and the generated name with
one shared GRU, scores how informative each is, fuses their attention
contexts by the normalised scores, and decodes the summary with a mixture of
generation and copying from body, human name and generated name.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import autodiff as ad
from .asbt import NUM_TYPE_CODES
from .autodiff import ContractError, Tensor
from .rng import rng_stream
from .corpus import BOS, EOS, PAD, UNK, ConfigError, Sample, Vocab

VARIANTS = ("full", "no_mtl", "no_two_pass", "no_mnip")
B_F_INIT = 2.0


@dataclass
class ModelConfig:
    body_vocab: int
    summary_vocab: int
    hidden: int = 256
    body_emb: int = 100
    summary_emb: int = 100
    type_emb: int = 28
    name_len: int = 10
    body_len: int = 300
    summary_len: int = 13

    def to_dict(self) -> dict:
        return dict(self.__dict__)


class GruWeights(NamedTuple):
    Wz: Tensor
    Wr: Tensor
    Wh: Tensor


@dataclass
class EncoderStates:
    h: Tensor  # len x hidden
    last: Tensor

    def __len__(self):
        return self.h.shape[0]


@dataclass
class DecodeResult:
    token_ids: list[int]
    step_distributions: list[Tensor]
    step_attention: list[dict[str, Tensor]] = field(default_factory=list)
    gates: list[Tensor] = field(default_factory=list)


@dataclass
class ModelInput:
    """A sample turned into id sequences for one vocabulary pair."""

    id: str
    body_ids: list[int]
    type_ids: list[int]
    body_tokens: list[str]
    name_ids: list[int]
    name_tokens: list[str]
    name_target: list[int]
    summary_target: list[int]  # may hold extended ids >= len(summary vocab)
    oov: list[str]
    body_copy: list[int]  # extended id of each body position
    name_copy: list[int]  # extended id of each human-name position
    golden: float


def gru_step(x: Tensor, h_prev: Tensor, w: GruWeights) -> Tensor:
    """One GRU update: gates read the concatenation [h_prev, x]; no biases."""
    if h_prev.shape[0] + x.shape[0] != w.Wz.shape[0]:
        raise ad.DimensionError(
            "gru_step: [h %s, x %s] does not fit weights %s" % (h_prev.shape, x.shape, w.Wz.shape)
        )
    hx = ad.concat([h_prev, x])
    z = ad.sigmoid(hx @ w.Wz)
    r = ad.sigmoid(hx @ w.Wr)
    cand = ad.tanh(ad.concat([r * h_prev, x]) @ w.Wh)
    return h_prev + z * (cand - h_prev)


def run_gru(inputs: Sequence[Tensor], w: GruWeights, h0: Tensor) -> EncoderStates:
    h = h0
    states = []
    for x in inputs:
        h = gru_step(x, h, w)
        states.append(h)
    return EncoderStates(ad.stack(states), h)


def attention(query: Tensor, keys: Tensor, values: Tensor, weight: Tensor, form: str = "bilinear"):
    """Softmax-weighted sum of ``values``.

    ``bilinear`` scores key i as ``k_i W q``; ``Wa`` scores it as ``q W k_i``.
    Returns ``(context, weights)``.
    """
    if keys.shape[0] == 0:
        raise ContractError("attention over no keys")
    if keys.shape[0] != values.shape[0]:
        raise ContractError("attention: %d keys but %d values" % (keys.shape[0], values.shape[0]))
    if form == "bilinear":
        proj = weight @ query
    elif form == "Wa":
        proj = query @ weight
    else:
        raise ContractError("unknown attention form %r" % form)
    weights = ad.softmax(keys @ proj)
    return weights @ values, weights


def fusion_weights(w_n: Tensor, w_gn: Tensor) -> Tensor:
    return ad.softmax(ad.concat([w_n, w_gn]))


def fuse_names(c_n: Tensor, c_gn: Tensor, w_n: Tensor, w_gn: Tensor):
    """Blend two name contexts by the softmax of their scores.

    Returns ``(fused, normalised_weights)``.
    """
    wts = fusion_weights(w_n, w_gn)
    return wts @ ad.stack([c_n, c_gn]), wts


def greedy_pick(dist: Tensor) -> int:
    """Argmax that never returns PAD or BOS."""
    v = dist.values.copy()
    v[[PAD, BOS]] = -np.inf
    return int(np.argmax(v))


def scatter(weights: Tensor, index: Sequence[int], size: int) -> Tensor:
    """Add ``weights[i]`` into slot ``index[i]`` of a zero vector of ``size``."""
    idx = np.asarray(index, dtype=np.intp)
    out = np.zeros(size)
    np.add.at(out, idx, weights.values)

    def bw(g):
        ad._accum(weights, g[idx])

    return ad._result(out, (weights,), bw)


class DMACOS:
    """All learnable tensors plus the forward passes that use them."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, params: dict[str, Tensor] | None = None):
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg, seed)
        p = self.params
        self.body_gru = GruWeights(p["body_gru.Wz"], p["body_gru.Wr"], p["body_gru.Wh"])
        # one instance serves as name encoder and name decoder
        self.name_gru = GruWeights(p["name_gru.Wz"], p["name_gru.Wr"], p["name_gru.Wh"])
        self.summary_gru = GruWeights(p["summary_gru.Wz"], p["summary_gru.Wr"], p["summary_gru.Wh"])

    @property
    def name_encoder_weights(self) -> GruWeights:
        return self.name_gru

    @property
    def name_decoder_weights(self) -> GruWeights:
        return self.name_gru

    # -- pass one -----------------------------------------------------------

    def encode_body(self, body_ids: Sequence[int], type_ids: Sequence[int]) -> EncoderStates:
        pairs = [(b, t) for b, t in zip(body_ids, type_ids) if b != PAD]
        if len(body_ids) != len(type_ids):
            raise ContractError("body ids and type ids differ in length")
        if not pairs:
            raise ContractError("body has no tokens after removing padding")
        E_b, E_t = self.params["E_body"], self.params["E_type"]
        ids = [b for b, _ in pairs]
        types = [t for _, t in pairs]
        xb = ad.take_rows(E_b, ids)
        xt = ad.take_rows(E_t, types)
        inputs = [ad.concat([ad.row(xb, i), ad.row(xt, i)]) for i in range(len(ids))]
        h0 = ad.zeros(self.cfg.hidden)
        return run_gru(inputs, self.body_gru, h0)

    def _name_step(self, prev_id: int, s: Tensor, body: EncoderStates):
        p = self.params
        x = ad.row(ad.take_rows(p["E_summary"], [prev_id]), 0)
        s = gru_step(x, s, self.name_gru)
        ctx, att = attention(s, body.h, body.h, p["W_a"], form="Wa")
        hidden = ad.tanh(ad.concat([s, ctx]) @ p["name_out.Wt"])
        dist = ad.softmax(hidden @ p["name_out.Ws"])
        return s, dist, att

    def decode_name(self, body: EncoderStates, targets: Sequence[int] | None = None) -> DecodeResult:
        """Teacher-forced over ``targets`` if given, greedy otherwise.

        Greedy decoding runs at most ``name_len - 1`` steps and stops at EOS;
        the returned ids exclude EOS.
        """
        s = body.last
        dists, atts, out = [], [], []
        if targets is not None:
            prev = BOS
            for tgt in targets:
                s, dist, att = self._name_step(prev, s, body)
                dists.append(dist)
                atts.append({"body": att})
                out.append(int(tgt))
                prev = int(tgt)
            return DecodeResult(out, dists, atts)
        prev = BOS
        for _ in range(max(self.cfg.name_len - 1, 1)):
            s, dist, att = self._name_step(prev, s, body)
            dists.append(dist)
            atts.append({"body": att})
            nxt = greedy_pick(dist)
            if nxt == EOS:
                break
            out.append(nxt)
            prev = nxt
        return DecodeResult(out, dists, atts)

    # -- pass two -----------------------------------------------------------

    def encode_name(self, name_ids: Sequence[int]) -> EncoderStates:
        ids = [i for i in name_ids if i != PAD]
        if not ids:
            raise ContractError("cannot encode an empty name")
        xs = ad.take_rows(self.params["E_summary"], ids)
        inputs = [ad.row(xs, i) for i in range(len(ids))]
        return run_gru(inputs, self.name_gru, ad.zeros(self.cfg.hidden))

    def score_name(self, body: EncoderStates, name: EncoderStates) -> Tensor:
        """Informativeness in (0, 1) from the two final states."""
        return ad.sigmoid(ad.concat([body.last, name.last]) @ self.params["W_p"])

    def decode_summary(
        self,
        body: EncoderStates,
        name: EncoderStates | None,
        gen_name: EncoderStates | None,
        fusion: Tensor | None,
        copy_index: dict[str, Sequence[int]],
        ext_size: int,
        targets: Sequence[int] | None = None,
    ) -> DecodeResult:
        """Second-pass decoder with multi-source copying.

        ``name``/``gen_name`` may be None to drop that source (ablations).
        ``fusion`` holds the two normalised name weights when both names are
        present.  ``copy_index`` maps each source ("body", "name", "gen") to
        the extended-vocabulary id of every source position.
        """
        p = self.params
        cfg = self.cfg
        V = cfg.summary_vocab
        sources = {"body": body}
        if name is not None:
            sources["name"] = name
        if gen_name is not None:
            sources["gen"] = gen_name
        if gen_name is not None and (name is None or fusion is None):
            raise ContractError("a generated name needs the human name and fusion weights")
        k = len(sources)
        s = body.last
        prev = BOS
        steps = len(targets) if targets is not None else max(cfg.summary_len - 1, 1)
        out, dists, atts, gates = [], [], [], []
        for t in range(steps):
            x = ad.row(ad.take_rows(p["E_summary"], [prev if prev < V else UNK]), 0)
            s = gru_step(x, s, self.summary_gru)
            ctx, weights = {}, {}
            for key, enc in sources.items():
                ctx[key], weights[key] = attention(s, enc.h, enc.h, p["W_bi"], form="bilinear")
            if gen_name is not None:
                c_fn = fusion @ ad.stack([ctx["name"], ctx["gen"]])
            elif name is not None:
                c_fn = ctx["name"]
            else:
                c_fn = ad.zeros(cfg.hidden)
            feats = ad.concat([s, ctx["body"], c_fn])
            p_cos = ad.softmax(ad.tanh(feats @ p["summary_out.Wt"]) @ p["summary_out.Ws"])
            gamma = ad.sigmoid(ad.add(feats @ p["W_f"], p["b_f"]))
            copied = None
            for key in sources:
                c = scatter(weights[key], copy_index[key], ext_size)
                copied = c if copied is None else copied + c
            dist = ad.scale_by(ad.pad_right(p_cos, ext_size - V), gamma) + ad.scale_by(
                copied, ad.scale(1.0 - gamma, 1.0 / k)
            )
            dists.append(dist)
            atts.append(weights)
            gates.append(gamma)
            if targets is not None:
                prev = int(targets[t])
                out.append(prev)
            else:
                prev = greedy_pick(dist)
                if prev == EOS:
                    break
                out.append(prev)
        return DecodeResult(out, dists, atts, gates)

    # -- whole sample ---------------------------------------------------------

    def forward(
        self, inp: ModelInput, variant: str = "full", tasks=("cos", "mng", "mnip"), greedy: bool = False
    ) -> "ForwardOutput":
        """Run the passes needed for ``tasks`` under ablation ``variant``.

        The generated name is decoded greedily without recording gradients;
        only its encoding is differentiated.  With ``greedy`` the summary is
        decoded greedily instead of teacher-forced.
        """
        if variant not in VARIANTS:
            raise ConfigError("unknown ablation %r" % variant)
        res = ForwardOutput()
        body = self.encode_body(inp.body_ids, inp.type_ids)
        use_names = variant != "no_mtl"
        if "mng" in tasks and use_names:
            res.name_decode = self.decode_name(body, inp.name_target)
        name = gen = None
        if use_names and ("cos" in tasks or "mnip" in tasks):
            name = self.encode_name(inp.name_ids or [UNK])
        if "mnip" in tasks and use_names:
            res.name_score = self.score_name(body, name)
        if "cos" not in tasks:
            return res
        fusion = None
        if variant in ("full", "no_mnip"):
            with ad.no_grad():
                first = self.decode_name(body)
            res.generated_name = first.token_ids or [UNK]
            gen = self.encode_name(res.generated_name)
            if variant == "full":
                if res.name_score is None:
                    res.name_score = self.score_name(body, name)
                res.gen_score = self.score_name(body, gen)
                fusion = fusion_weights(res.name_score, res.gen_score)
            else:
                fusion = ad.constant([0.5, 0.5])
            res.fusion = fusion
        copy_index, ext = self.copy_index(inp, res.generated_name if gen is not None else None, name is not None)
        res.summary_decode = self.decode_summary(
            body, name, gen, fusion, copy_index, ext, targets=None if greedy else inp.summary_target
        )
        return res

    def copy_index(self, inp: ModelInput, generated: Sequence[int] | None, with_name: bool):
        """Extended-vocabulary ids of every copyable source position."""
        V = self.cfg.summary_vocab
        idx = {"body": inp.body_copy}
        if with_name:
            idx["name"] = inp.name_copy or [UNK]
        if generated is not None:
            idx["gen"] = list(generated) or [UNK]
        return idx, V + len(inp.oov)


@dataclass
class ForwardOutput:
    name_decode: DecodeResult | None = None
    summary_decode: DecodeResult | None = None
    name_score: Tensor | None = None
    gen_score: Tensor | None = None
    fusion: Tensor | None = None
    generated_name: list[int] | None = None


# ---------------------------------------------------------------------------
# parameters

# parameters that only the name tasks read; the single-task ablation leaves them alone
NAME_TASK_PARAMS = (
    "name_gru.Wz", "name_gru.Wr", "name_gru.Wh", "W_a", "name_out.Wt", "name_out.Ws", "W_p",
)
# parameters that only the summary decoder reads
SUMMARY_ONLY_PARAMS = (
    "summary_gru.Wz", "summary_gru.Wr", "summary_gru.Wh", "W_bi", "summary_out.Wt", "summary_out.Ws", "W_f", "b_f",
)


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    H = cfg.hidden
    d_body = cfg.body_emb + cfg.type_emb
    shapes = {
        "E_body": (cfg.body_vocab, cfg.body_emb),
        "E_type": (NUM_TYPE_CODES, cfg.type_emb),
        "E_summary": (cfg.summary_vocab, cfg.summary_emb),
    }
    for prefix, d_in in (("body_gru", d_body), ("name_gru", cfg.summary_emb), ("summary_gru", cfg.summary_emb)):
        for gate in ("Wz", "Wr", "Wh"):
            shapes["%s.%s" % (prefix, gate)] = (H + d_in, H)
    shapes.update({
        "W_a": (H, H),
        "name_out.Wt": (2 * H, H),
        "name_out.Ws": (H, cfg.summary_vocab),
        "W_bi": (H, H),
        "summary_out.Wt": (3 * H, H),
        "summary_out.Ws": (H, cfg.summary_vocab),
        "W_p": (2 * H, 1),
        "W_f": (3 * H, 1),
        "b_f": (1,),
    })
    return shapes


def init_params(cfg: ModelConfig, seed: int) -> dict[str, Tensor]:
    rng = rng_stream(seed, "init")
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.startswith("E_"):
            vals = rng.normal(0.0, 0.1, size=shape)
        elif name == "b_f":
            # gate starts near pure generation; copying is learned where it pays off
            vals = np.full(shape, B_F_INIT)
        else:
            bound = 1.0 / np.sqrt(shape[0])
            vals = rng.uniform(-bound, bound, size=shape)
        params[name] = Tensor(vals, requires_grad=True, name=name)
    return params


# ---------------------------------------------------------------------------
# sample encoding


def encode_sample(sample: Sample, body_vocab: Vocab, summary_vocab: Vocab, cfg: ModelConfig) -> ModelInput:
    body_tokens = sample.body_tokens[:cfg.body_len]
    body_types = sample.body_types[:cfg.body_len]
    name_tokens = sample.name_tokens[:cfg.name_len]
    oov: list[str] = []
    for t in body_tokens + name_tokens:
        if t not in summary_vocab and t not in oov:
            oov.append(t)
    V = len(summary_vocab)

    def target_ids(tokens, allow_ext):
        wrapped = [BOS] + [summary_vocab.id(t) for t in tokens] + [EOS]
        if allow_ext:
            raw = [None] + list(tokens) + [None]
            for i, t in enumerate(raw):
                if t is not None and wrapped[i] == UNK and t in oov:
                    wrapped[i] = V + oov.index(t)
        return wrapped

    name_wrapped = target_ids(sample.name_tokens, False)[:cfg.name_len]
    summ_wrapped = target_ids(sample.summary_tokens, True)[:cfg.summary_len]
    def copy_ids(tokens):
        return [summary_vocab.stoi[t] if t in summary_vocab else V + oov.index(t) for t in tokens]

    return ModelInput(
        id=sample.id,
        body_ids=body_vocab.encode(body_tokens),
        type_ids=list(body_types),
        body_tokens=body_tokens,
        name_ids=summary_vocab.encode(name_tokens),
        name_tokens=name_tokens,
        name_target=name_wrapped[1:],
        summary_target=summ_wrapped[1:],
        oov=oov,
        body_copy=copy_ids(body_tokens),
        name_copy=copy_ids(name_tokens),
        golden=sample.informativeness,
    )


def ids_to_tokens(ids: Sequence[int], summary_vocab: Vocab, oov: Sequence[str]) -> list[str]:
    V = len(summary_vocab)
    return [summary_vocab.itos[i] if i < V else oov[i - V] for i in ids if i not in (PAD, BOS, EOS)]
