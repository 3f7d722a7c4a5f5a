from kgchat.nn import autodiff
from kgchat.nn.autodiff import Tensor
from kgchat.nn.layers import (
    Embedding,
    FeedForward,
    LayerNorm,
    Linear,
    Module,
    MultiHeadAttention,
    TransformerEncoderLayer,
    causal_mask,
    uniform_param,
    xavier_param,
)
from kgchat.nn.optim import Adam, NoamSchedule

__all__ = [
    "Adam",
    "Embedding",
    "FeedForward",
    "LayerNorm",
    "Linear",
    "Module",
    "MultiHeadAttention",
    "NoamSchedule",
    "Tensor",
    "TransformerEncoderLayer",
    "autodiff",
    "causal_mask",
    "uniform_param",
    "xavier_param",
]
