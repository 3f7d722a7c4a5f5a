"""Adam optimizer with named parameter groups and a warm-up schedule."""

from __future__ import annotations

import numpy as np


class Adam:
    """Adam over groups of (name, tensor) pairs, one learning rate per group.

    State is keyed by parameter name so checkpoints restore exactly and a
    resumed run is bit-identical to an uninterrupted one.
    """

    def __init__(self, groups, betas=(0.9, 0.999), eps=1e-8):
        self.groups = [dict(g) for g in groups]
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self._m = {}
        self._v = {}
        for group in self.groups:
            for name, _ in group["params"]:
                if name in self._m:
                    raise ValueError(f"duplicate parameter name: {name}")
                self._m[name] = None
                self._v[name] = None

    def zero_grad(self):
        for group in self.groups:
            for _, p in group["params"]:
                p.grad = None

    def step(self):
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for group in self.groups:
            lr = group["lr"]
            if lr == 0.0:
                continue
            for name, p in group["params"]:
                if p.grad is None or not p.requires_grad:
                    continue
                g = p.grad
                if self._m[name] is None:
                    self._m[name] = np.zeros_like(p.data)
                    self._v[name] = np.zeros_like(p.data)
                m = self._m[name]
                v = self._v[name]
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * g * g
                p.data = p.data - lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def set_lr(self, group_name, lr):
        for group in self.groups:
            if group.get("name") == group_name:
                group["lr"] = lr
                return
        raise KeyError(group_name)

    def state_dict(self):
        return {
            "step_count": self.step_count,
            "m": {k: (None if v is None else v.copy()) for k, v in self._m.items()},
            "v": {k: (None if v is None else v.copy()) for k, v in self._v.items()},
        }

    def load_state_dict(self, state):
        self.step_count = int(state["step_count"])
        for key in self._m:
            m = state["m"].get(key)
            v = state["v"].get(key)
            self._m[key] = None if m is None else np.asarray(m, dtype=np.float64).copy()
            self._v[key] = None if v is None else np.asarray(v, dtype=np.float64).copy()


class NoamSchedule:
    """Inverse-square-root warm-up; peaks exactly at the warm-up step."""

    def __init__(self, factor, d_model, warmup_steps):
        self.factor = factor
        self.d_model = d_model
        self.warmup_steps = warmup_steps

    def __call__(self, step):
        step = max(1, step)
        return (
            self.factor
            * self.d_model**-0.5
            * min(step**-0.5, step * self.warmup_steps**-1.5)
        )
