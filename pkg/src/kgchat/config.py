"""Run configuration with JSON round-trip.

Defaults follow the reference hyperparameter setting; fixtures and tests
override the dimensions downward to stay fast on a CPU.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path


@dataclass
class Config:
    seed: int = 13

    # model dimensions
    ent_dim: int = 128
    ctx_dim: int = 768
    att_dim: int = 128          # self-attentive pooling projection width
    mlp_hidden: int = 256       # relation-classifier hidden width (2 * ent_dim)
    rgcn_layers: int = 1
    enc_layers: int = 2
    dec_layers: int = 2
    n_heads: int = 4
    ffn_dim: int = 512
    max_ctx_len: int = 256
    max_gen_len: int = 40
    vocab_size: int = 30000
    encoder: str = "tiny"       # context encoder flavour; only "tiny" trains offline

    # latent subgraph
    k_tail: int = 40
    tau: float = 0.5

    # loss weights
    alpha: float = 0.1
    beta: float = 1.0
    gamma: float = 10.0
    lambda_: float = 0.0025
    clamp_eps: float = 1e-10

    # optimization
    lr_encoder: float = 1e-5
    lr_rgcn: float = 5e-4
    lr_other: float = 1e-3
    noam_factor: float = 0.5
    warmup_steps: int = 2000
    epochs_pretrain: int = 3
    epochs_rec: int = 3
    epochs_gen: int = 3
    grad_clip: float = 5.0
    beam_width: int = 1

    # data
    kg_path: str = ""
    kg_format: str = "triple_tsv"
    dialogues_path: str = ""
    eval_path: str = ""
    workdir: str = "runs/default"

    # JSON uses the bare key; the attribute carries a trailing underscore
    # because of the Python keyword.
    _KEY_ALIASES = {"lambda": "lambda_"}

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            key = "lambda" if f.name == "lambda_" else f.name
            out[key] = getattr(self, f.name)
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "Config":
        known = {f.name for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in raw.items():
            name = cls._KEY_ALIASES.get(key, key)
            if name not in known:
                raise ValueError(f"unknown config key: {key!r}")
            kwargs[name] = value
        return cls(**kwargs)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Config":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def validate(self) -> None:
        if self.ent_dim <= 0 or self.ctx_dim <= 0:
            raise ValueError("dimensions must be positive")
        if self.ctx_dim % self.n_heads != 0:
            raise ValueError("ctx_dim must be divisible by n_heads")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.k_tail <= 0:
            raise ValueError("k_tail must be positive")
