"""
Parameter containers and the dense building blocks of the transformer.

Every parameter carries its full dotted name (``blocks.0.attn.q.weight``); the
name is what the freeze mask, the optimizer state and the checkpoint manifest
key on. Initial values come from a stream forked by that name, so adding a
module never shifts the initialization of another.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterator

import numpy as np

from ..exceptions import DimensionError
from ..numerics import functional as F
from ..numerics.rng import SplitMix64
from ..numerics.tensor import Parameter, Tensor
from .lora import LoraAdapter, lora_apply

logger = logging.getLogger(__name__)


class Module:
    """Container of named parameters and child modules."""

    def __init__(self, prefix: str = ""):
        self.prefix = prefix
        self._parameters: dict[str, Parameter] = {}
        self._modules: dict[str, Module] = {}

    def sub(self, local: str) -> str:
        """Full name of a local attribute."""
        return f"{self.prefix}.{local}" if self.prefix else local

    def add_parameter(self, local: str, data: np.ndarray, frozen: bool = False) -> Parameter:
        param = Parameter(self.sub(local), data, frozen=frozen)
        self._parameters[local] = param
        return param

    def add_module(self, local: str, module: Module) -> Module:
        self._modules[local] = module
        return module

    def extra_parameters(self) -> Iterator[Parameter]:
        """Parameters owned outside the regular namespace (adapters)."""
        return iter(())

    def named_parameters(self) -> dict[str, Parameter]:
        """All parameters of this module and its children, in registration order."""
        out: dict[str, Parameter] = {}
        for param in self._parameters.values():
            out[param.name] = param
        for param in self.extra_parameters():
            out[param.name] = param
        for module in self._modules.values():
            out.update(module.named_parameters())
        return out

    def modules(self) -> Iterator[Module]:
        yield self
        for module in self._modules.values():
            yield from module.modules()


class Linear(Module):
    """Affine projection y = x W^T + b with W stored as (out, in)."""

    def __init__(
        self,
        prefix: str,
        d_in: int,
        d_out: int,
        rng: SplitMix64,
        std: float = 0.02,
        bias: bool = True,
    ):
        super().__init__(prefix)
        self.d_in = d_in
        self.d_out = d_out
        self.weight = self.add_parameter(
            "weight", rng.fork(self.sub("weight")).normal((d_out, d_in), std=std)
        )
        self.bias = self.add_parameter("bias", np.zeros(d_out)) if bias else None
        self.adapter: LoraAdapter | None = None

    def extra_parameters(self) -> Iterator[Parameter]:
        if self.adapter is not None:
            yield from self.adapter.parameters()

    def __call__(self, x: Tensor, training: bool = False, rng: SplitMix64 | None = None) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.d_in:
            raise DimensionError(
                f"{self.prefix}: expected input of width {self.d_in}, got shape {x.shape}"
            )
        if self.adapter is not None:
            y = lora_apply(self.weight, self.adapter, x, training=training, rng=rng)
        else:
            y = F.matmul(x, F.transpose(self.weight))
        if self.bias is not None:
            y = F.add(y, self.bias)
        return y


class LayerNorm(Module):
    """Layer normalization over the feature dimension."""

    def __init__(self, prefix: str, d: int, eps: float = 1e-5):
        super().__init__(prefix)
        self.eps = eps
        self.gamma = self.add_parameter("gamma", np.ones(d))
        self.beta = self.add_parameter("beta", np.zeros(d))

    def __call__(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.gamma, self.beta, self.eps)


class FeedForward(Module):
    """
    Two-layer perceptron with one SiLU nonlinearity.

    With ``bypass`` the input is added to the output, which needs a square
    mapping; the static FFN, the experts and the visual projector all share
    this form.
    """

    def __init__(
        self,
        prefix: str,
        d_in: int,
        hidden: int,
        d_out: int,
        rng: SplitMix64,
        std: float = 0.02,
        bypass: bool = False,
    ):
        super().__init__(prefix)
        if bypass and d_in != d_out:
            raise DimensionError(f"{prefix}: bypass needs d_in == d_out, got {d_in} != {d_out}")
        self.bypass = bypass
        self.fc1 = self.add_module("fc1", Linear(self.sub("fc1"), d_in, hidden, rng, std))
        self.fc2 = self.add_module("fc2", Linear(self.sub("fc2"), hidden, d_out, rng, std))

    def __call__(self, x: Tensor, training: bool = False, rng: SplitMix64 | None = None) -> Tensor:
        h = F.silu(self.fc1(x, training, rng.fork("fc1") if rng else None))
        y = self.fc2(h, training, rng.fork("fc2") if rng else None)
        if self.bypass:
            y = F.add(y, x)
        return y


class MultiHeadAttention(Module):
    """Causal multi-head self-attention over one sequence."""

    def __init__(self, prefix: str, d: int, heads: int, rng: SplitMix64, std: float = 0.02):
        super().__init__(prefix)
        if d % heads != 0:
            raise DimensionError(f"{prefix}: width {d} not divisible by {heads} heads")
        self.d = d
        self.heads = heads
        self.head_dim = d // heads
        self.q = self.add_module("q", Linear(self.sub("q"), d, d, rng, std))
        self.k = self.add_module("k", Linear(self.sub("k"), d, d, rng, std))
        self.v = self.add_module("v", Linear(self.sub("v"), d, d, rng, std))
        self.o = self.add_module("o", Linear(self.sub("o"), d, d, rng, std))

    def projections(self) -> dict[str, Linear]:
        return {"q": self.q, "k": self.k, "v": self.v, "o": self.o}

    def __call__(self, x: Tensor, training: bool = False, rng: SplitMix64 | None = None) -> Tensor:
        def stream(name: str) -> SplitMix64 | None:
            return rng.fork(name) if rng else None

        q = self.q(x, training, stream("q"))
        k = self.k(x, training, stream("k"))
        v = self.v(x, training, stream("v"))
        scale = 1.0 / math.sqrt(self.head_dim)
        heads = []
        for h in range(self.heads):
            lo, hi = h * self.head_dim, (h + 1) * self.head_dim
            qh, kh, vh = F.slice_cols(q, lo, hi), F.slice_cols(k, lo, hi), F.slice_cols(v, lo, hi)
            scores = F.mul(F.matmul(qh, F.transpose(kh)), scale)
            heads.append(F.matmul(F.causal_softmax(scores), vh))
        merged = heads[0] if len(heads) == 1 else F.concat_cols(heads)
        return self.o(merged, training, stream("o"))
