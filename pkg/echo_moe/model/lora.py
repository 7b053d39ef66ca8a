"""
Low-rank adapters for Stage II fine-tuning.

For a base projection W0 of shape (d, d') (output width d, input width d') the
adapter holds A: (d, r) and B: (d', r), so that dW = A B^T conforms with W0.
The factored path y = x W0^T + s * (drop(x) B) A^T never materializes dW;
:func:`lora_merge` folds s * A B^T into the base weight for deployment.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..exceptions import ConfigurationError, DimensionError
from ..numerics import functional as F
from ..numerics.rng import SplitMix64
from ..numerics.tensor import Parameter, Tensor

logger = logging.getLogger(__name__)

LORA_NAMESPACE = "lora"


@dataclass
class LoraAdapter:
    """Trainable low-rank update attached to one base projection."""

    A: Parameter
    B: Parameter
    rank: int
    alpha: float
    dropout_p: float = 0.0

    @property
    def scale(self) -> float:
        """Effective scaling s = alpha / r."""
        return self.alpha / self.rank

    @property
    def out_features(self) -> int:
        return self.A.shape[0]

    @property
    def in_features(self) -> int:
        return self.B.shape[0]

    def parameters(self) -> list[Parameter]:
        return [self.A, self.B]

    def num_parameters(self) -> int:
        """r * (d + d')."""
        return self.rank * (self.out_features + self.in_features)

    def delta(self) -> np.ndarray:
        """Dense s * A B^T, for merging and tests only."""
        return self.scale * (self.A.data @ self.B.data.T)


def _check_rank(rank: int, d_out: int, d_in: int, site: str) -> None:
    if rank < 1 or rank > min(d_out, d_in):
        raise ConfigurationError(
            f"LoRA rank {rank} at {site} must lie in [1, min({d_out}, {d_in})]"
        )


def create_adapter(
    site: str,
    d_out: int,
    d_in: int,
    rank: int,
    alpha: float,
    dropout_p: float,
    rng: SplitMix64,
    init_std: float = 0.02,
) -> LoraAdapter:
    """
    Build an adapter for the projection named ``site``.

    A is drawn from N(0, init_std^2) and B starts at zero, so the update is zero
    at attach time.

    Raises:
        ConfigurationError: If the rank exceeds min(d, d')
    """
    _check_rank(rank, d_out, d_in, site)
    a_name = f"{LORA_NAMESPACE}.{site}.A"
    b_name = f"{LORA_NAMESPACE}.{site}.B"
    A = Parameter(a_name, rng.fork(a_name).normal((d_out, rank), std=init_std))
    B = Parameter(b_name, np.zeros((d_in, rank)))
    return LoraAdapter(A=A, B=B, rank=rank, alpha=alpha, dropout_p=dropout_p)


def lora_apply(
    W0: Tensor,
    adapter: LoraAdapter,
    x: Tensor,
    training: bool = False,
    rng: SplitMix64 | None = None,
) -> Tensor:
    """
    Adapted projection y = x W0^T + s * (drop(x) B) A^T.

    Args:
        W0: Base weight of shape (d, d'); usually frozen
        adapter: Adapter conforming with W0
        x: Input rows of width d'
        training: Enables adapter dropout
        rng: Stream for the dropout mask, required when dropout is active

    Raises:
        ConfigurationError: If the adapter rank exceeds min(d, d')
        DimensionError: If the shapes do not conform
    """
    d_out, d_in = W0.shape
    _check_rank(adapter.rank, d_out, d_in, adapter.A.name)
    if adapter.A.shape != (d_out, adapter.rank) or adapter.B.shape != (d_in, adapter.rank):
        raise DimensionError(
            f"adapter factors {adapter.A.shape}, {adapter.B.shape} do not conform with {W0.shape}"
        )
    base = F.matmul(x, F.transpose(W0))
    dropped = F.dropout(x, adapter.dropout_p, rng, training)
    low = F.matmul(F.matmul(dropped, adapter.B), F.transpose(adapter.A))
    return F.add(base, F.mul(adapter.scale, low))


def lora_merge(W0: Tensor | np.ndarray, adapter: LoraAdapter) -> np.ndarray:
    """W = W0 + s * A B^T."""
    w0 = W0.data if isinstance(W0, Tensor) else np.asarray(W0, dtype=np.float64)
    if w0.shape != (adapter.out_features, adapter.in_features):
        raise DimensionError(
            f"cannot merge adapter of shape {(adapter.out_features, adapter.in_features)} "
            f"into weight {w0.shape}"
        )
    return w0 + adapter.delta()


def lora_parameter_count(adapters: dict[str, LoraAdapter]) -> int:
    """Sum over sites of r * (d + d')."""
    return sum(a.num_parameters() for a in adapters.values())
