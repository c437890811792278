"""Binary checkpoints.

Layout (all integers little-endian)::

    7 bytes   magic "DMACOS1"
    uint32    number of tensors N
    N times:
      uint32  name length L, then L bytes of UTF-8 name
      uint32  rank R, then R uint32 dimensions
      float64 values, row-major, prod(dims) of them
    uint64    length J of the trailer, then J bytes of UTF-8 JSON holding
              format_version, model_config, train_config, body_vocab,
              summary_vocab, epoch, metric and extra

Tensors are written in name order and the JSON with sorted keys, so equal
checkpoints serialise to equal bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .corpus import ConfigError, Vocab
from .model import DMACOS, ModelConfig, init_params

MAGIC = b"DMACOS1"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    model_config: ModelConfig
    body_vocab: Vocab
    summary_vocab: Vocab
    train_config: dict = field(default_factory=dict)
    epoch: int = 0
    metric: float | None = None
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: DMACOS, body_vocab: Vocab, summary_vocab: Vocab, **kw) -> "Checkpoint":
        params = {k: v.values.copy() for k, v in model.params.items()}
        return cls(params, model.cfg, body_vocab, summary_vocab, **kw)

    def model(self) -> DMACOS:
        tensors = {k: Tensor(v.copy(), requires_grad=True, name=k) for k, v in self.params.items()}
        return DMACOS(self.model_config, params=tensors)

    def check_vocab(self, body_vocab: Vocab | None, summary_vocab: Vocab | None):
        if body_vocab is not None and body_vocab != self.body_vocab:
            raise ConfigError("body vocabulary does not match the checkpoint")
        if summary_vocab is not None and summary_vocab != self.summary_vocab:
            raise ConfigError("summary vocabulary does not match the checkpoint")

    def to_bytes(self) -> bytes:
        out = [MAGIC, struct.pack("<I", len(self.params))]
        for name in sorted(self.params):
            arr = np.ascontiguousarray(self.params[name], dtype="<f8")
            raw = name.encode("utf-8")
            out.append(struct.pack("<I", len(raw)) + raw)
            out.append(struct.pack("<I", arr.ndim) + struct.pack("<%dI" % arr.ndim, *arr.shape))
            out.append(arr.tobytes())
        trailer = json.dumps(
            {
                "format_version": FORMAT_VERSION,
                "model_config": self.model_config.to_dict(),
                "train_config": self.train_config,
                "body_vocab": self.body_vocab.to_list(),
                "summary_vocab": self.summary_vocab.to_list(),
                "epoch": self.epoch,
                "metric": self.metric,
                "extra": self.extra,
            },
            sort_keys=True,
            ensure_ascii=False,
        ).encode("utf-8")
        out.append(struct.pack("<Q", len(trailer)) + trailer)
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        if not data.startswith(MAGIC):
            raise CheckpointError("not a checkpoint (bad magic)")
        pos = len(MAGIC)

        def read(fmt):
            nonlocal pos
            size = struct.calcsize(fmt)
            if pos + size > len(data):
                raise CheckpointError("truncated checkpoint")
            vals = struct.unpack_from(fmt, data, pos)
            pos += size
            return vals

        (count,) = read("<I")
        params = {}
        for _ in range(count):
            (n,) = read("<I")
            name = data[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = read("<I")
            shape = read("<%dI" % rank)
            size = int(np.prod(shape)) * 8
            if pos + size > len(data):
                raise CheckpointError("truncated tensor %s" % name)
            params[name] = np.frombuffer(data, dtype="<f8", count=size // 8, offset=pos).reshape(shape).astype(np.float64)
            pos += size
        (jlen,) = read("<Q")
        meta = json.loads(data[pos:pos + jlen].decode("utf-8"))
        if meta.get("format_version") != FORMAT_VERSION:
            raise CheckpointError("unsupported checkpoint version %r" % meta.get("format_version"))
        return cls(
            params=params,
            model_config=ModelConfig(**meta["model_config"]),
            body_vocab=Vocab(meta["body_vocab"]),
            summary_vocab=Vocab(meta["summary_vocab"]),
            train_config=meta["train_config"],
            epoch=meta["epoch"],
            metric=meta["metric"],
            extra=meta["extra"],
        )

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())

    def extend_vocab(self, body_vocab: Vocab, summary_vocab: Vocab, seed: int = 0) -> "Checkpoint":
        """A copy whose vocabularies also cover the given ones.

        Existing ids keep their rows; new tokens are appended in the order of
        the given vocabularies and their embedding rows / output columns are
        freshly initialised.  Used to fine-tune on a corpus whose words differ
        from the pre-training corpus.
        """
        new_body = Vocab(self.body_vocab.to_list() + [t for t in body_vocab.itos if t not in self.body_vocab])
        new_sum = Vocab(self.summary_vocab.to_list() + [t for t in summary_vocab.itos if t not in self.summary_vocab])
        cfg = ModelConfig(**{**self.model_config.to_dict(), "body_vocab": len(new_body), "summary_vocab": len(new_sum)})
        fresh = init_params(cfg, seed)
        params = {}
        for name, old in self.params.items():
            arr = fresh[name].values.copy()
            arr[tuple(slice(0, d) for d in old.shape)] = old
            params[name] = arr
        return Checkpoint(params, cfg, new_body, new_sum, dict(self.train_config), self.epoch, self.metric, dict(self.extra))


def param_diff(a: Checkpoint, b: Checkpoint) -> dict[str, float]:
    """Largest absolute difference per tensor (inf on shape mismatch)."""
    out = {}
    for name in sorted(set(a.params) | set(b.params)):
        x, y = a.params.get(name), b.params.get(name)
        if x is None or y is None or x.shape != y.shape:
            out[name] = float("inf")
        else:
            out[name] = float(np.max(np.abs(x - y))) if x.size else 0.0
    return out
