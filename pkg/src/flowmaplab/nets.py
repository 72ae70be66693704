"""Flow-map network, dynamic loss-weighting head, low-rank adapters,
discriminator, and sinusoidal time embeddings.

All networks are plain MLPs over the autodiff engine.  The flow-map trunk
consumes ``concat(x, embed(s), embed(t), cond_embedding)`` and returns an
average-velocity estimate with the same shape as ``x``; evaluating on the
diagonal s == t gives the instantaneous velocity.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

COND_POSITIVE = 0
COND_NEGATIVE = 1
COND_NULL = 2
COND_NAMES = {"positive": COND_POSITIVE, "negative": COND_NEGATIVE, "null": COND_NULL}


def embed_frequencies(dim: int) -> np.ndarray:
    """Geometric frequencies for a sinusoidal encoding of a time in [0, 1]."""
    if dim % 2 != 0:
        raise ValueError("embedding dim must be even")
    k = dim // 2
    if k == 1:
        return np.array([1.0])
    return np.exp(np.linspace(0.0, math.log(1000.0), k))


def time_embed(t, dim: int) -> Tensor:
    """Sinusoidal features [sin(w_k t), cos(w_k t)] as a length-``dim`` vector.

    ``t`` may be a float or a scalar Tensor (so forward-mode tangents in the
    time argument flow through the trig ops).
    """
    freqs = Tensor(embed_frequencies(dim))
    ts = ad.as_tensor(t)
    phase = ad.mul(ad.broadcast_to(ts, freqs.shape) if ts.shape == () else ts, freqs)
    return ad.concat([ad.sin(phase), ad.cos(phase)], axis=0)


def _linear_init(rng: np.random.Generator, fan_in: int, fan_out: int):
    scale = 1.0 / math.sqrt(fan_in)
    w = rng.uniform(-scale, scale, size=(fan_in, fan_out))
    b = np.zeros(fan_out)
    return w, b


class LowRankAdapter:
    """Additive low-rank weight delta: W_eff = W + gamma * B @ A.

    B is (fan_in, r) with a small random init, A is (r, fan_out) and starts
    at zero so the effective weight equals the base weight exactly.
    """

    def __init__(self, fan_in: int, fan_out: int, rank: int, rng: np.random.Generator):
        self.rank = rank
        self.B = Tensor(rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(fan_in, rank)),
                        requires_grad=True)
        self.A = Tensor(np.zeros((rank, fan_out)), requires_grad=True)


def lora_effective_weight(W: Tensor, adapter: LowRankAdapter, gamma: float) -> Tensor:
    """W + gamma * B @ A.  gamma = 0 recovers the base weight bit-exactly."""
    if adapter.B.shape[0] != W.shape[0] or adapter.A.shape[1] != W.shape[1]:
        raise ValueError("adapter factors do not conform to the base weight")
    if adapter.B.shape[1] != adapter.A.shape[0]:
        raise ValueError("adapter rank mismatch")
    if gamma == 0.0:
        return W
    return ad.add(W, ad.mul(ad.matmul(adapter.B, adapter.A), gamma))


class FlowMapModel:
    """MLP parameterization of the conditional average velocity u_{s,t}(x|c).

    The final layer is zero-initialized, so a fresh model is the zero field.
    ``eval_count`` instruments every forward call; loss code uses it to audit
    how many extra evaluations each training target costs.
    """

    def __init__(self, state_dim: int, hidden: int = 256, depth: int = 4,
                 time_dim: int = 32, cond_dim: int = 16,
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.state_dim = state_dim
        self.hidden = hidden
        self.depth = depth
        self.time_dim = time_dim
        self.cond_dim = cond_dim
        self.eval_count = 0
        self.lora = None
        self.lora_train_scale = 1.0

        in_dim = state_dim + 2 * time_dim + cond_dim
        dims = [in_dim] + [hidden] * depth + [state_dim]
        self.params: dict[str, Tensor] = {}
        for i, (fi, fo) in enumerate(zip(dims[:-1], dims[1:])):
            w, b = _linear_init(rng, fi, fo)
            if i == depth:  # zero-init the output layer
                w = np.zeros_like(w)
            self.params[f"layer{i}.W"] = Tensor(w, requires_grad=True)
            self.params[f"layer{i}.b"] = Tensor(b, requires_grad=True)
        self.params["cond.table"] = Tensor(
            rng.normal(0.0, 0.1, size=(3, cond_dim)), requires_grad=True)

    # -- adapters ---------------------------------------------------------

    def attach_lora(self, rank: int, rng: np.random.Generator):
        """One adapter per trunk linear layer."""
        self.lora = {}
        for i in range(self.depth + 1):
            W = self.params[f"layer{i}.W"]
            self.lora[i] = LowRankAdapter(W.shape[0], W.shape[1], rank, rng)

    def lora_params(self) -> dict[str, Tensor]:
        if self.lora is None:
            return {}
        out = {}
        for i, a in self.lora.items():
            out[f"layer{i}.lora.B"] = a.B
            out[f"layer{i}.lora.A"] = a.A
        return out

    def trainable_params(self) -> dict[str, Tensor]:
        named = {k: v for k, v in self.params.items() if v.requires_grad}
        named.update({k: v for k, v in self.lora_params().items() if v.requires_grad})
        return named

    def set_trunk_trainable(self, flag: bool):
        for v in self.params.values():
            v.requires_grad = flag

    # -- forward ----------------------------------------------------------

    def forward(self, x, s, t, cond: int, lora_scale: float | None = None) -> Tensor:
        """u_{s,t}(x | cond) for a batch x of shape (n, state_dim).

        ``s`` and ``t`` may be floats or scalar Tensors carrying tangents.
        Requires s <= t.
        """
        sv = s.item() if isinstance(s, Tensor) else float(s)
        tv = t.item() if isinstance(t, Tensor) else float(t)
        if sv > tv + 1e-12:
            raise ValueError(f"need s <= t, got s={sv}, t={tv}")
        x = ad.as_tensor(x)
        if x.shape[-1] != self.state_dim:
            raise ValueError(f"state dim {x.shape[-1]} != {self.state_dim}")
        self.eval_count += 1

        n = x.shape[0]
        es = ad.broadcast_to(time_embed(s, self.time_dim), (n, self.time_dim))
        et = ad.broadcast_to(time_embed(t, self.time_dim), (n, self.time_dim))
        ce = ad.broadcast_to(self.params["cond.table"][cond], (n, self.cond_dim))
        h = ad.concat([x, es, et, ce], axis=1)

        gamma = self.lora_train_scale if lora_scale is None else lora_scale
        for i in range(self.depth + 1):
            W = self.params[f"layer{i}.W"]
            if self.lora is not None:
                W = lora_effective_weight(W, self.lora[i], gamma)
            h = ad.add(ad.matmul(h, W), self.params[f"layer{i}.b"])
            if i < self.depth:
                h = ad.silu(h)
        return h

    __call__ = forward


class WeightNet:
    """Learned scalar loss weight lambda_{s,t}.

    Two-layer head over concatenated time embeddings; the output layer is
    zero-initialized so the weight starts at 0 (and exp(-0) = 1) everywhere.
    """

    def __init__(self, time_dim: int = 32, hidden: int = 16,
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.time_dim = time_dim
        w1, b1 = _linear_init(rng, 2 * time_dim, hidden)
        self.params = {
            "w1": Tensor(w1, requires_grad=True),
            "b1": Tensor(b1, requires_grad=True),
            "w2": Tensor(np.zeros((hidden, 1)), requires_grad=True),
            "b2": Tensor(np.zeros(1), requires_grad=True),
        }

    def forward(self, s: float, t: float) -> Tensor:
        if not 0.0 <= s <= t <= 1.0:
            raise ValueError(f"need 0 <= s <= t <= 1, got ({s}, {t})")
        e = ad.concat([time_embed(s, self.time_dim), time_embed(t, self.time_dim)], axis=0)
        row = ad.broadcast_to(e, (1, 2 * self.time_dim))
        h = ad.silu(ad.add(ad.matmul(row, self.params["w1"]), self.params["b1"]))
        out = ad.add(ad.matmul(h, self.params["w2"]), self.params["b2"])
        return ad.sum_(out)

    __call__ = forward

    def trainable_params(self) -> dict[str, Tensor]:
        return dict(self.params)


class Discriminator:
    """Scalar score head on flattened states (3-layer MLP)."""

    def __init__(self, state_dim: int, hidden: int = 128,
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.state_dim = state_dim
        dims = [state_dim, hidden, hidden, 1]
        self.params = {}
        for i, (fi, fo) in enumerate(zip(dims[:-1], dims[1:])):
            w, b = _linear_init(rng, fi, fo)
            self.params[f"layer{i}.W"] = Tensor(w, requires_grad=True)
            self.params[f"layer{i}.b"] = Tensor(b, requires_grad=True)

    def forward(self, z) -> Tensor:
        """Per-sample scores, shape (n, 1)."""
        z = ad.as_tensor(z)
        if z.shape[-1] != self.state_dim:
            raise ValueError(f"input dim {z.shape[-1]} != {self.state_dim}")
        h = z
        for i in range(3):
            h = ad.add(ad.matmul(h, self.params[f"layer{i}.W"]), self.params[f"layer{i}.b"])
            if i < 2:
                h = ad.silu(h)
        return h

    __call__ = forward

    def trainable_params(self) -> dict[str, Tensor]:
        return dict(self.params)
