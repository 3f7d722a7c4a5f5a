"""Parameter containers and standard transformer building blocks."""

from __future__ import annotations

import numpy as np

from kgchat.nn import autodiff as ad
from kgchat.nn.autodiff import Tensor


class Module:
    """Minimal parameter container with recursive name-based traversal."""

    def named_parameters(self, prefix=""):
        # Every Tensor attribute is a parameter; frozen ones stay enumerable
        # so checkpoints and fingerprints cover them.
        for key, value in vars(self).items():
            if isinstance(value, Tensor):
                yield prefix + key, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{key}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{key}.{i}.")
                    elif isinstance(item, Tensor):
                        yield f"{prefix}{key}.{i}", item

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def state_dict(self, prefix=""):
        return {name: p.data.copy() for name, p in self.named_parameters(prefix)}

    def load_state_dict(self, state, prefix=""):
        for name, p in self.named_parameters(prefix):
            if name not in state:
                raise KeyError(f"missing parameter in state dict: {name}")
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ValueError(
                    f"shape mismatch for {name}: checkpoint {arr.shape}, model {p.data.shape}"
                )
            p.data = arr.copy()

    def freeze(self):
        for p in self.parameters():
            p.requires_grad = False

    def param_fingerprint(self) -> str:
        """Order-stable hash of all parameter values (freeze contract checks)."""
        import hashlib

        h = hashlib.sha256()
        for name, p in sorted(self.named_parameters()):
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()


def uniform_param(rng, shape, scale):
    return Tensor(rng.uniform(-scale, scale, size=shape), requires_grad=True)


def xavier_param(rng, d_in, d_out):
    scale = np.sqrt(6.0 / (d_in + d_out))
    return Tensor(rng.uniform(-scale, scale, size=(d_in, d_out)), requires_grad=True)


class Linear(Module):
    def __init__(self, d_in, d_out, rng, bias=True):
        self.weight = xavier_param(rng, d_in, d_out)
        self.bias = Tensor(np.zeros(d_out), requires_grad=True) if bias else None

    def __call__(self, x):
        squeeze = x.ndim == 1
        if squeeze:
            x = ad.reshape(x, (1, -1))
        out = ad.matmul(x, self.weight)
        if self.bias is not None:
            out = ad.add(out, self.bias)
        if squeeze:
            out = ad.reshape(out, (-1,))
        return out


class Embedding(Module):
    def __init__(self, n, d, rng):
        self.table = uniform_param(rng, (n, d), 1.0 / np.sqrt(d))

    def __call__(self, ids):
        return ad.gather_rows(self.table, ids)


class LayerNorm(Module):
    def __init__(self, d):
        self.gain = Tensor(np.ones(d), requires_grad=True)
        self.shift = Tensor(np.zeros(d), requires_grad=True)

    def __call__(self, x):
        return ad.layer_norm(x, self.gain, self.shift)


class FeedForward(Module):
    def __init__(self, d_model, d_ff, rng):
        self.lin1 = Linear(d_model, d_ff, rng)
        self.lin2 = Linear(d_ff, d_model, rng)

    def __call__(self, x):
        return self.lin2(ad.relu(self.lin1(x)))


class MultiHeadAttention(Module):
    """Multi-head scaled dot-product attention over unbatched (T, d) inputs."""

    def __init__(self, d_model, n_heads, rng, kv_dim=None):
        if d_model % n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        kv_dim = kv_dim if kv_dim is not None else d_model
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.wq = Linear(d_model, d_model, rng)
        self.wk = Linear(kv_dim, d_model, rng)
        self.wv = Linear(kv_dim, d_model, rng)
        self.wo = Linear(d_model, d_model, rng)

    def __call__(self, query, keys_values, mask=None):
        t = query.shape[0]
        s = keys_values.shape[0]
        h, dh = self.n_heads, self.d_head

        def split(x, length):
            return ad.transpose(ad.reshape(x, (length, h, dh)), (1, 0, 2))

        q = split(self.wq(query), t)
        k = split(self.wk(keys_values), s)
        v = split(self.wv(keys_values), s)
        scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 2, 1))), 1.0 / np.sqrt(dh))
        if mask is not None:
            scores = ad.add(scores, mask)
        ctx = ad.matmul(ad.softmax(scores, axis=-1), v)
        ctx = ad.reshape(ad.transpose(ctx, (1, 0, 2)), (t, h * dh))
        return self.wo(ctx)


def causal_mask(t):
    """Additive mask forbidding attention to future positions."""
    m = np.triu(np.full((t, t), -1e9), k=1)
    return Tensor(m)


class TransformerEncoderLayer(Module):
    """Pre-norm self-attention + feed-forward block."""

    def __init__(self, d_model, n_heads, d_ff, rng):
        self.ln1 = LayerNorm(d_model)
        self.attn = MultiHeadAttention(d_model, n_heads, rng)
        self.ln2 = LayerNorm(d_model)
        self.ffn = FeedForward(d_model, d_ff, rng)

    def __call__(self, x):
        normed = self.ln1(x)
        x = ad.add(x, self.attn(normed, normed))
        return ad.add(x, self.ffn(self.ln2(x)))
