"""
Dual-path Mixture-of-Experts feed-forward layer.

Each token passes through a frozen static FFN and, in parallel, through a shared
expert plus its top-k routed experts:

    Y = alpha * FFN(X) + (1 - alpha) * (lambda * S(X) + sum_i g_i * E_i(X))

Routed experts only see the rows whose top-k set contains them. Gates are a
softmax over the selected logits; the full softmax over all experts feeds the
mean gating probability G of the balancing loss.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from ..exceptions import ConfigurationError, ContractError, DimensionError
from ..numerics import functional as F
from ..numerics.rng import SplitMix64
from ..numerics.tensor import Tensor
from .layers import FeedForward, Linear, Module

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RoutingDecision:
    """Per-token routing outcome of one MoE layer."""

    experts: np.ndarray  # (tokens, k) selected expert indices, best first
    gates: Tensor  # (tokens, k) softmax over the selected logits
    probs: Tensor  # (tokens, E) softmax over all logits

    @property
    def num_tokens(self) -> int:
        return int(self.experts.shape[0])

    @property
    def k(self) -> int:
        return int(self.experts.shape[1])

    @property
    def num_experts(self) -> int:
        return int(self.probs.shape[1])

    @classmethod
    def concat(cls, decisions: Sequence[RoutingDecision]) -> RoutingDecision:
        """Stack decisions of several sequences into one batch decision."""
        if not decisions:
            raise ContractError("no routing decisions to concatenate")
        if len(decisions) == 1:
            return decisions[0]
        return cls(
            experts=np.concatenate([d.experts for d in decisions]),
            gates=F.concat_rows([d.gates for d in decisions]),
            probs=F.concat_rows([d.probs for d in decisions]),
        )


@dataclass(frozen=True)
class DispatchStats:
    """Dispatch ratios and mean gating probabilities over a batch of tokens."""

    F: np.ndarray  # (E,) fraction of tokens routed to each expert; constant
    G: Tensor  # (E,) mean full-softmax probability; differentiable
    F_image: np.ndarray
    F_text: np.ndarray
    k: int
    n_tokens: int
    n_image: int
    n_text: int

    @property
    def G_values(self) -> np.ndarray:
        return self.G.numpy()

    @property
    def num_experts(self) -> int:
        return int(self.F.shape[0])


class DualPathMoEParams(Module):
    """
    Weights of one Dual-path MoE layer.

    ``alpha_override`` and ``lambda_override`` replace the learned mixing scalars
    with constants; the base stage and the endpoint tests use them.
    """

    def __init__(
        self,
        prefix: str,
        d: int,
        ffn_hidden: int,
        expert_hidden: int,
        shared_hidden: int,
        num_experts: int,
        rng: SplitMix64,
        std: float = 0.02,
        use_shared_expert: bool = True,
    ):
        super().__init__(prefix)
        if num_experts < 1:
            raise ConfigurationError(f"{prefix}: need at least one expert, got {num_experts}")
        self.d = d
        self.num_experts = num_experts
        self.use_shared_expert = use_shared_expert
        self.static_ffn = self.add_module(
            "static_ffn", FeedForward(self.sub("static_ffn"), d, ffn_hidden, d, rng, std)
        )
        self.shared = self.add_module(
            "shared", FeedForward(self.sub("shared"), d, shared_hidden, d, rng, std)
        )
        self.experts = [
            self.add_module(
                f"experts.{e}",
                FeedForward(self.sub(f"experts.{e}"), d, expert_hidden, d, rng, std),
            )
            for e in range(num_experts)
        ]
        self.router = self.add_module(
            "router", Linear(self.sub("router"), d, num_experts, rng, std, bias=False)
        )
        self.alpha_raw = self.add_parameter("alpha_raw", np.zeros(()))
        self.lambda_raw = self.add_parameter("lambda_raw", np.zeros(()))
        self.alpha_override: float | None = None
        self.lambda_override: float | None = None

    def alpha(self) -> Tensor:
        if self.alpha_override is not None:
            return Tensor(float(self.alpha_override))
        return F.sigmoid(self.alpha_raw)

    def lam(self) -> Tensor:
        if self.lambda_override is not None:
            return Tensor(float(self.lambda_override))
        return F.sigmoid(self.lambda_raw)


def route_topk(logits: Tensor, k: int) -> RoutingDecision:
    """
    Select the k largest logits per token.

    Ties go to the lowest expert index. Gates renormalize over the selected
    logits only; ``probs`` is the softmax over all experts.

    Raises:
        ConfigurationError: If k is outside [1, E]
    """
    if logits.ndim != 2:
        raise DimensionError(f"route_topk: expected (tokens, E) logits, got {logits.shape}")
    num_experts = logits.shape[1]
    if not 1 <= k <= num_experts:
        raise ConfigurationError(f"top-k {k} must lie in [1, {num_experts}]")
    # stable sort of negated logits keeps the lower index first among equals
    order = np.argsort(-logits.data, axis=1, kind="stable")[:, :k]
    gates = F.softmax(F.take_along(logits, order), axis=1)
    probs = F.softmax(logits, axis=1)
    return RoutingDecision(experts=order, gates=gates, probs=probs)


def moe_layer(
    X: Tensor,
    params: DualPathMoEParams,
    k: int,
) -> tuple[Tensor, RoutingDecision]:
    """Dual-path output and the routing decision it was computed from."""
    if X.ndim != 2 or X.shape[1] != params.d:
        raise DimensionError(f"moe: expected (tokens, {params.d}) input, got {X.shape}")
    n_tokens = X.shape[0]
    decision = route_topk(params.router(X), k)

    static_out = params.static_ffn(X)
    routed: Tensor | None = None
    for e, expert in enumerate(params.experts):
        rows, slots = np.nonzero(decision.experts == e)
        if rows.size == 0:
            continue
        gate = F.reshape(F.take_along(F.gather_rows(decision.gates, rows), slots[:, None]), (-1,))
        out = F.scale_rows(expert(F.gather_rows(X, rows)), gate)
        part = F.scatter_rows(out, rows, n_tokens)
        routed = part if routed is None else F.add(routed, part)
    if routed is None:
        routed = Tensor(np.zeros((n_tokens, params.d)))

    if params.use_shared_expert:
        mix = F.add(F.mul(params.lam(), params.shared(X)), routed)
    else:
        mix = routed
    alpha = params.alpha()
    Y = F.add(F.mul(alpha, static_out), F.mul(F.sub(1.0, alpha), mix))
    return Y, decision


def dispatch_stats(
    decision: RoutingDecision,
    modality: np.ndarray | None = None,
) -> DispatchStats:
    """
    Dispatch ratio F and mean gating probability G over the decision's tokens.

    Args:
        decision: Routing decision of one layer over a batch of tokens
        modality: Boolean mask marking image tokens; None means all text

    Raises:
        ContractError: If the batch is empty
    """
    n = decision.num_tokens
    if n == 0:
        raise ContractError("dispatch_stats: empty batch")
    num_experts = decision.num_experts
    is_image = (
        np.zeros(n, dtype=bool)
        if modality is None
        else np.asarray(modality, dtype=bool).reshape(-1)
    )
    if is_image.size != n:
        raise DimensionError(f"dispatch_stats: {is_image.size} modality tags for {n} tokens")

    def ratios(mask: np.ndarray) -> np.ndarray:
        count = int(mask.sum())
        if count == 0:
            return np.zeros(num_experts)
        hits = np.bincount(decision.experts[mask].reshape(-1), minlength=num_experts)
        return hits.astype(np.float64) / count

    return DispatchStats(
        F=ratios(np.ones(n, dtype=bool)),
        G=F.mean(decision.probs, axis=0),
        F_image=ratios(is_image),
        F_text=ratios(~is_image),
        k=decision.k,
        n_tokens=n,
        n_image=int(is_image.sum()),
        n_text=int((~is_image).sum()),
    )


def balance_loss(stats: DispatchStats) -> Tensor:
    """Sum over experts of F_e * G_e; F is a constant, gradients flow through G."""
    return F.sum(F.mul(Tensor(stats.F), stats.G))


def moe_forward(
    X: Tensor,
    params: DualPathMoEParams,
    k: int,
    modality: np.ndarray | None = None,
) -> tuple[Tensor, DispatchStats]:
    """Dual-path MoE output together with the dispatch statistics of the same pass."""
    Y, decision = moe_layer(X, params, k)
    return Y, dispatch_stats(decision, modality)
